"""Stage execution behind ``metarl run``: meta-learn (or load) an algorithm, evaluate it, write artifacts.

Every stage writes into its output directory:

- ``algorithm.json``: the produced drift function or update rule
- ``records.csv``: one evaluation run per row, byte-identical across reruns
- ``timings.csv``: wall time per evaluation run
- ``manifest.json``: config hash, code version, seeds and environment-step counters
- stage logs (``curves.csv``, ``es_history.csv``, ``distill_log.csv``, ``symbolic_history.csv``,
  ``transcript.json``)
"""

from __future__ import annotations

import json
import platform
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .config import RunConfig
from .envs import EnvDistribution, sample_env
from .evalreport import RunRecord, write_records
from .learnedalgos import (
    LEARNED_OPT_SPEC,
    DriftFunction,
    UpdateRule,
    init_lpo_near_ppo,
    load_algorithm,
    save_algorithm,
)
from .metadistill import (
    distill_blackbox,
    distill_symbolic,
    drift_teacher,
    expr_teacher,
    optimizer_teacher,
)
from .metaes import RlFitnessTask, meta_train_es, parallel_map, write_history_csv
from .metallm import (
    PPO_WARM_START_CODE,
    SGD_WARM_START_CODE,
    MockClient,
    OpenAIChatClient,
    ProposalRecord,
    propose_loop,
)
from .numcore import MlpParams, RngStream, derive_id, init_mlp
from .rltrain import PpoConfig, train_agent, write_curve_csv
from .symdsl import DRIFT_SIGNATURE, NO_FEATURES_SIGNATURE, OPEN_SIGNATURE, Signature, parse

STAGE_METHOD = {
    "baseline": "handcrafted_baseline",
    "blackbox_es": "blackbox_es",
    "distill_same": "distill_same",
    "distill_smaller": "distill_smaller",
    "distill_symbolic": "distill_symbolic",
    "llm_proposal": "llm_proposal",
}


class StageError(RuntimeError):
    pass


def base_rule(cfg: RunConfig) -> UpdateRule:
    r = dict(cfg.rule)
    kind = r.pop("kind")
    return UpdateRule.sgd(**r) if kind == "sgd" else UpdateRule.adam(**r)


def signature_for(algorithm: str) -> Signature:
    return {"lpo": DRIFT_SIGNATURE, "open_ff": OPEN_SIGNATURE, "no_features": NO_FEATURES_SIGNATURE}[algorithm]


def pair_for(cfg: RunConfig, algo) -> tuple[DriftFunction, UpdateRule]:
    """The (drift, update rule) pair under which a produced algorithm is trained."""
    if isinstance(algo, DriftFunction):
        return algo, base_rule(cfg)
    return DriftFunction.ppo(cfg.ppo.clip_eps), algo


def mean_return(ppo: PpoConfig, env: EnvDistribution, drift, rule, seeds) -> float:
    """Mean final return over seeds; any divergence scores ``-inf``."""
    total = 0.0
    for s in seeds:
        res = train_agent(ppo, env, drift, rule, s)
        if res.diverged:
            return float("-inf")
        total += res.final_return
    return total / len(seeds)


def steps_per_run(ppo: PpoConfig) -> int:
    return ppo.n_updates * ppo.batch_size


# --- evaluation ----------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalJob:
    env_id: str
    tag: str
    env: object
    seed: int


def eval_jobs(cfg: RunConfig) -> list[EvalJob]:
    """Environment instances are drawn from ``eval.env_seed`` so all stages share them."""
    jobs = []
    root = RngStream(cfg.eval.env_seed)
    for item in cfg.eval.envs:
        for k in range(item.n_instances):
            env = sample_env(item.dist, root.child("eval_env", item.tag, item.dist.kind, k).generator())
            env_id = f"{item.tag}/{item.dist.kind}/{k}"
            jobs.extend(EvalJob(env_id, item.tag, env, s) for s in cfg.eval.seeds)
    return jobs


def _eval_one(args):
    ppo, job, drift, rule = args
    t0 = time.perf_counter()
    res = train_agent(ppo, job.env, drift, rule, job.seed)
    if res.diverged:
        # the last logged return before divergence, or 0 when none was logged
        ret = res.return_curve[-1][1] if res.return_curve else 0.0
    else:
        ret = res.final_return
    return ret, res.return_curve, res.diverged, time.perf_counter() - t0


def evaluate(cfg: RunConfig, method: str, drift, rule):
    jobs = eval_jobs(cfg)
    outs = parallel_map(_eval_one, [(cfg.ppo, j, drift, rule) for j in jobs], cfg.n_workers)
    n_steps = steps_per_run(cfg.ppo)
    records = [RunRecord(method, j.env_id, j.tag, j.seed, float(o[0]), n_steps, o[3])
               for j, o in zip(jobs, outs)]
    curves = [(j.seed, o[1]) for j, o in zip(jobs, outs)]
    n_div = sum(1 for o in outs if o[2])
    return records, curves, n_div


# --- stages --------------------------------------------------------------------------------


@dataclass
class StageOutput:
    algorithm: object
    meta_env_steps: int
    extra: dict


def _meta_stream(cfg: RunConfig, *keys) -> RngStream:
    return RngStream(cfg.seeds[0]).child(cfg.stage, *keys)


def _eval_seeds(cfg: RunConfig, label: str, n: int) -> list[int]:
    return [derive_id(cfg.seeds[0], label, k) & 0x7FFFFFFF for k in range(n)]


def stage_baseline(cfg: RunConfig, out: Path) -> StageOutput:
    return StageOutput(DriftFunction.ppo(cfg.ppo.clip_eps), 0, {})


def _init_vector(cfg: RunConfig) -> MlpParams:
    g = _meta_stream(cfg, "init").generator()
    if cfg.algorithm == "lpo":
        return init_lpo_near_ppo(g, cfg.ppo.clip_eps)
    return init_mlp(LEARNED_OPT_SPEC[cfg.algorithm], g, bias_enabled=True)


def stage_es(cfg: RunConfig, out: Path) -> StageOutput:
    template = _init_vector(cfg)
    task = RlFitnessTask(cfg.algorithm, template, cfg.ppo, cfg.train_env, base_rule(cfg),
                         cfg.es.fitness_seeds_per_member, cfg.seeds[0])
    res = meta_train_es(cfg.es, template.values, task, _meta_stream(cfg, "es"),
                        steps_per_fitness=task.steps_per_fitness)
    write_history_csv(out / "es_history.csv", res.history)
    vec = res.final_mean if cfg.es_select == "mean" or res.best_params is None else res.best_params
    drift, rule = task.build(vec)
    algo = drift if cfg.algorithm == "lpo" else rule
    return StageOutput(algo, res.env_steps, {"es_best_fitness": res.best_fitness})


def _load_teacher(cfg: RunConfig):
    algo = load_algorithm(cfg.teacher)
    want_drift = cfg.algorithm == "lpo"
    if isinstance(algo, DriftFunction) != want_drift:
        raise StageError(f"teacher {cfg.teacher} does not match algorithm {cfg.algorithm}")
    return algo


def stage_distill(cfg: RunConfig, out: Path) -> StageOutput:
    teacher = _load_teacher(cfg)
    if teacher.kind not in ("blackbox", "learned_blackbox"):
        raise StageError("black-box distillation needs a network teacher")
    kind = "drift" if cfg.algorithm == "lpo" else cfg.algorithm
    seeds = _eval_seeds(cfg, "distill_eval", cfg.distill.rl_eval_seeds)

    def wrap(params: MlpParams):
        if cfg.algorithm == "lpo":
            return DriftFunction.blackbox(params, teacher.eps)
        return UpdateRule.learned(params, teacher.feature_set, teacher.output_scale, teacher.noise_scale)

    def rl_eval(params: MlpParams) -> float:
        drift, rule = pair_for(cfg, wrap(params))
        return mean_return(cfg.ppo, cfg.train_env, drift, rule, seeds)

    res = distill_blackbox(teacher.params, cfg.synthetic_spec(kind), cfg.distill, rl_eval,
                           _meta_stream(cfg, "distill").generator())
    res.write_log(out / "distill_log.csv")
    if res.student is None:
        raise StageError("every learning-rate arm diverged")
    steps = res.n_rl_evals * len(seeds) * steps_per_run(cfg.ppo)
    held = res.checkpoints[res.selected].held_out_mse
    return StageOutput(wrap(res.student), steps, {"held_out_mse": held, "abandoned_arms": res.abandoned_arms})


def stage_symbolic(cfg: RunConfig, out: Path) -> StageOutput:
    teacher = _load_teacher(cfg)
    kind = "drift" if cfg.algorithm == "lpo" else cfg.algorithm
    spec = cfg.synthetic_spec(kind)
    if teacher.kind in ("blackbox",):
        teacher_fn = drift_teacher(teacher.params)
    elif teacher.kind == "learned_blackbox":
        teacher_fn = optimizer_teacher(teacher.params, teacher.output_scale)
    elif teacher.kind == "symbolic":
        teacher_fn = expr_teacher(teacher.expr)
    else:
        raise StageError(f"cannot distil a {teacher.kind} teacher")

    def wrap(expr):
        if cfg.algorithm == "lpo":
            return DriftFunction.symbolic(expr, cfg.ppo.clip_eps)
        return UpdateRule.symbolic(expr, spec.base_lr, cfg.algorithm)

    seeds = _eval_seeds(cfg, "symbolic_eval", cfg.distill.rl_eval_seeds)
    rl_eval = None
    if cfg.symbolic_rl_eval:
        def rl_eval(expr) -> float:
            drift, rule = pair_for(cfg, wrap(expr))
            return mean_return(cfg.ppo, cfg.train_env, drift, rule, seeds)

    res = distill_symbolic(teacher_fn, spec, cfg.symbolic, signature_for(cfg.algorithm),
                           _meta_stream(cfg, "symbolic").generator(), rl_eval)
    res.write_history(out / "symbolic_history.csv")
    steps = res.n_rl_evals * len(seeds) * steps_per_run(cfg.ppo)
    return StageOutput(wrap(res.best), steps, {"best_mse": res.best_mse})


def stage_llm(cfg: RunConfig, out: Path) -> StageOutput:
    sig = signature_for(cfg.algorithm)
    kind = "drift" if cfg.algorithm == "lpo" else "optimizer_ff"
    client = (MockClient.from_file(cfg.llm.mock_script) if cfg.llm.mock_script
              else OpenAIChatClient(cfg.llm.endpoint))
    seeds = _eval_seeds(cfg, "llm_eval", cfg.llm.rl_eval_seeds)
    lr = float(cfg.rule.get("lr", 1e-3))

    def wrap(expr):
        if cfg.algorithm == "lpo":
            return DriftFunction.symbolic(expr, cfg.ppo.clip_eps)
        return UpdateRule.symbolic(expr, lr, cfg.algorithm)

    def fitness(expr) -> float:
        drift, rule = pair_for(cfg, wrap(expr))
        return mean_return(cfg.ppo, cfg.train_env, drift, rule, seeds)

    code = PPO_WARM_START_CODE if cfg.algorithm == "lpo" else SGD_WARM_START_CODE
    expr = parse(code, sig)
    warm = ProposalRecord("warm start", "handcrafted baseline", code, expr, fitness(expr))
    res = propose_loop(client, kind, sig, warm, fitness, cfg.llm.budget, cfg.llm.max_size,
                       cfg.ppo.clip_eps, len(seeds), steps_per_run(cfg.ppo))
    res.save(out / "transcript.json")
    return StageOutput(wrap(res.best.expr), res.env_steps,
                       {"n_evaluated": res.n_evaluated, "aborted": res.aborted, "rl_runs": res.rl_runs})


STAGES: dict[str, Callable[[RunConfig, Path], StageOutput]] = {
    "baseline": stage_baseline,
    "blackbox_es": stage_es,
    "distill_same": stage_distill,
    "distill_smaller": stage_distill,
    "distill_symbolic": stage_symbolic,
    "llm_proposal": stage_llm,
}


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=10)
        if rev.returncode == 0:
            return f"{__version__}+{rev.stdout.strip()[:12]}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def run_stage(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    produced = STAGES[cfg.stage](cfg, out)
    train_s = time.perf_counter() - t0
    save_algorithm(out / "algorithm.json", produced.algorithm)
    drift, rule = pair_for(cfg, produced.algorithm)
    t1 = time.perf_counter()
    method = STAGE_METHOD[cfg.stage]
    records, curves, n_div = evaluate(cfg, method, drift, rule)
    test_s = time.perf_counter() - t1
    write_records(out / "records.csv", records, out / "timings.csv")
    write_curve_csv(out / "curves.csv", curves)
    manifest = {
        "name": cfg.name,
        "stage": cfg.stage,
        "method": method,
        "algorithm": cfg.algorithm,
        "config": cfg.raw,
        "config_hash": cfg.config_hash(),
        "code_version": code_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seeds": list(cfg.seeds),
        "eval_env_seed": cfg.eval.env_seed,
        "eval_seeds": list(cfg.eval.seeds),
        "meta_env_steps": produced.meta_env_steps,
        "eval_env_steps": sum(r.env_steps for r in records),
        "train_wall_time": train_s,
        "test_wall_time": test_s,
        "n_diverged_eval_runs": n_div,
        "stage_info": produced.extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    return out
