"""Run configuration: one YAML file per experiment stage.

Schema (all sections except ``name`` and ``stage`` are optional)::

    name: str
    stage: baseline | blackbox_es | distill_same | distill_smaller | distill_symbolic | llm_proposal
    algorithm: lpo | open_ff | no_features      # which component is meta-learned
    seeds: [int, ...]                           # meta-learning seeds (first one is used)
    output_dir: path                            # relative paths resolve against the config file
    n_workers: int                              # parallelism; never changes results
    train_env: {kind: grid_id | grid_ood | cartpole, ...EnvDistribution fields}
    eval:
      env_seed: int                             # picks the evaluation environment instances
      seeds: int | [int, ...]                   # training seeds per evaluation environment
      envs: [{dist: {...}, tag: in_dist | out_dist, n_instances: int}, ...]
    ppo: {PpoConfig fields}
    rule: {kind: sgd | adam, lr: float, ...}    # update rule paired with a meta-learned drift
    es: {EsConfig fields}
    es_select: mean | best                      # which ES vector becomes the artifact
    distill: {DistillConfig fields}
    symbolic: {SymDistillConfig fields}
    symbolic_rl_eval: bool                      # score each round's champion with RL
    synthetic: {SyntheticInputSpec fields except kind}
    teacher: path to an algorithm JSON file     # distillation stages
    llm: {endpoint: {...}, mock_script: path, budget: int, max_size: int, rl_eval_seeds: int}
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .envs import EnvConfigError, EnvDistribution
from .metadistill import DistillConfig, SymDistillConfig, SyntheticInputSpec
from .metaes import EsConfig
from .metallm import LlmEndpoint
from .rltrain import PpoConfig

STAGES = ("baseline", "blackbox_es", "distill_same", "distill_smaller", "distill_symbolic", "llm_proposal")
ALGORITHMS = ("lpo", "open_ff", "no_features")


class ConfigError(ValueError):
    """Schema violation; ``path`` is the dotted location of the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _build(cls, data: Any, path: str, exclude: tuple[str, ...] = ()):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown field")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _env(data: Any, path: str) -> EnvDistribution:
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError(path, "expected a mapping with a 'kind' field")
    names = {f.name for f in dataclasses.fields(EnvDistribution)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown field")
    try:
        dist = EnvDistribution.from_dict(data)
        dist.validate()
    except (EnvConfigError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc
    return dist


@dataclass(frozen=True)
class EvalEnv:
    dist: EnvDistribution
    tag: str = "in_dist"
    n_instances: int = 1


@dataclass(frozen=True)
class EvalConfig:
    env_seed: int = 1234
    seeds: tuple[int, ...] = tuple(range(16))
    envs: tuple[EvalEnv, ...] = ()


@dataclass(frozen=True)
class LlmConfig:
    endpoint: LlmEndpoint = field(default_factory=LlmEndpoint)
    mock_script: Optional[Path] = None
    budget: int = 8
    max_size: int = 40
    rl_eval_seeds: int = 2


@dataclass(frozen=True)
class RunConfig:
    name: str
    stage: str
    algorithm: str = "lpo"
    seeds: tuple[int, ...] = (0,)
    output_dir: Path = Path("runs")
    n_workers: int = 1
    train_env: EnvDistribution = field(default_factory=EnvDistribution.grid_id)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    rule: dict = field(default_factory=lambda: {"kind": "sgd", "lr": 1.0})
    es: EsConfig = field(default_factory=EsConfig)
    es_select: str = "mean"
    distill: DistillConfig = field(default_factory=DistillConfig)
    symbolic: SymDistillConfig = field(default_factory=SymDistillConfig)
    symbolic_rl_eval: bool = False
    synthetic: dict = field(default_factory=dict)
    teacher: Optional[Path] = None
    llm: LlmConfig = field(default_factory=LlmConfig)
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def synthetic_spec(self, kind: str) -> SyntheticInputSpec:
        spec = _build(SyntheticInputSpec, self.synthetic, "synthetic", exclude=("kind",))
        return dataclasses.replace(spec, kind=kind, eps=self.ppo.clip_eps)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


_TOP_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"raw"}


def parse_config(data: Any, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("", "config must be a mapping")
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown field")
    for key in ("name", "stage"):
        if key not in data:
            raise ConfigError(key, "required field missing")
    stage = data["stage"]
    if stage not in STAGES:
        raise ConfigError("stage", f"must be one of {', '.join(STAGES)}")
    algorithm = data.get("algorithm", "lpo")
    if algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"must be one of {', '.join(ALGORITHMS)}")
    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "must be a nonempty list of integers")
    n_workers = data.get("n_workers", 1)
    if not isinstance(n_workers, int) or n_workers < 1:
        raise ConfigError("n_workers", "must be a positive integer")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (base_dir / p)

    train_env = _env(data.get("train_env", {"kind": "grid_id"}), "train_env")
    eval_cfg = _parse_eval(data.get("eval", {}), train_env)
    ppo = _build(PpoConfig, data.get("ppo"), "ppo")
    rule = data.get("rule", {"kind": "sgd", "lr": 1.0})
    if not isinstance(rule, dict) or rule.get("kind") not in ("sgd", "adam"):
        raise ConfigError("rule.kind", "must be sgd or adam")
    es = _build(EsConfig, data.get("es"), "es")
    es = dataclasses.replace(es, n_workers=n_workers)
    es_select = data.get("es_select", "mean")
    if es_select not in ("mean", "best"):
        raise ConfigError("es_select", "must be mean or best")
    distill = _build(DistillConfig, data.get("distill"), "distill")
    if stage == "distill_smaller":
        distill = dataclasses.replace(distill, student="smaller")
    elif stage == "distill_same":
        distill = dataclasses.replace(distill, student="same")
    symbolic = _build(SymDistillConfig, data.get("symbolic"), "symbolic")
    synthetic = data.get("synthetic", {}) or {}
    _build(SyntheticInputSpec, synthetic, "synthetic", exclude=("kind",))
    teacher = resolve(data["teacher"]) if data.get("teacher") else None
    if stage.startswith("distill"):
        if teacher is None:
            raise ConfigError("teacher", f"required for stage {stage}")
        if not teacher.exists():
            raise ConfigError("teacher", f"file not found: {teacher}")
    llm = _parse_llm(data.get("llm", {}), resolve)
    cfg = RunConfig(
        name=str(data["name"]), stage=stage, algorithm=algorithm, seeds=tuple(seeds),
        output_dir=resolve(data.get("output_dir", Path("runs") / str(data["name"]))),
        n_workers=n_workers, train_env=train_env, eval=eval_cfg, ppo=ppo, rule=dict(rule),
        es=es, es_select=es_select, distill=distill, symbolic=symbolic,
        symbolic_rl_eval=bool(data.get("symbolic_rl_eval", False)), synthetic=dict(synthetic),
        teacher=teacher, llm=llm, raw=data,
    )
    return cfg


def _parse_eval(data: Any, train_env: EnvDistribution) -> EvalConfig:
    if not isinstance(data, dict):
        raise ConfigError("eval", "expected a mapping")
    for key in data:
        if key not in ("env_seed", "seeds", "envs"):
            raise ConfigError(f"eval.{key}", "unknown field")
    seeds = data.get("seeds", 16)
    if isinstance(seeds, int):
        if seeds < 2:
            raise ConfigError("eval.seeds", "need at least 2 seeds for bootstrap intervals")
        seeds = list(range(seeds))
    if not isinstance(seeds, list) or len(seeds) < 2 or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("eval.seeds", "must be an integer >= 2 or a list of at least 2 integers")
    envs = []
    raw_envs = data.get("envs", [{"dist": None, "tag": "in_dist", "n_instances": 1}])
    if not isinstance(raw_envs, list) or not raw_envs:
        raise ConfigError("eval.envs", "must be a nonempty list")
    for i, item in enumerate(raw_envs):
        path = f"eval.envs[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(path, "expected a mapping")
        for key in item:
            if key not in ("dist", "tag", "n_instances"):
                raise ConfigError(f"{path}.{key}", "unknown field")
        dist = train_env if item.get("dist") is None else _env(item["dist"], f"{path}.dist")
        tag = item.get("tag", "in_dist")
        if tag not in ("in_dist", "out_dist"):
            raise ConfigError(f"{path}.tag", "must be in_dist or out_dist")
        n = item.get("n_instances", 1)
        if not isinstance(n, int) or n < 1:
            raise ConfigError(f"{path}.n_instances", "must be a positive integer")
        envs.append(EvalEnv(dist, tag, n))
    return EvalConfig(int(data.get("env_seed", 1234)), tuple(seeds), tuple(envs))


def _parse_llm(data: Any, resolve) -> LlmConfig:
    if not isinstance(data, dict):
        raise ConfigError("llm", "expected a mapping")
    for key in data:
        if key not in ("endpoint", "mock_script", "budget", "max_size", "rl_eval_seeds"):
            raise ConfigError(f"llm.{key}", "unknown field")
    ep = data.get("endpoint", {}) or {}
    if "api_key" in ep:
        raise ConfigError("llm.endpoint.api_key", "API keys must come from the environment")
    endpoint = _build(LlmEndpoint, ep, "llm.endpoint")
    mock = resolve(data["mock_script"]) if data.get("mock_script") else None
    if mock is not None and not mock.exists():
        raise ConfigError("llm.mock_script", f"file not found: {mock}")
    out = LlmConfig(endpoint, mock, int(data.get("budget", 8)), int(data.get("max_size", 40)),
                    int(data.get("rl_eval_seeds", 2)))
    if out.budget < 1 or out.rl_eval_seeds < 1:
        raise ConfigError("llm", "budget and rl_eval_seeds must be positive")
    return out


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path}: invalid YAML: {exc}") from exc
    return parse_config(data, path.parent)
