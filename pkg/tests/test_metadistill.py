import numpy as np
import pytest

from metarl.learnedalgos import LPO_SPEC
from metarl.metadistill import (
    DistillConfig,
    SymDistillConfig,
    SyntheticInputSpec,
    distill_blackbox,
    distill_symbolic,
    expr_teacher,
    generate_synthetic_inputs,
    init_student,
    select_best_checkpoint,
    select_lowest_mse,
    student_spec,
)
from metarl.numcore import MlpSpec, init_mlp
from metarl.symdsl import DRIFT_SIGNATURE, OPEN_SIGNATURE, complexity, parse


def test_synthetic_inputs_shapes():
    b = generate_synthetic_inputs(SyntheticInputSpec("drift"), 100, 0)
    assert b.features.shape == (100, 7) and np.all(b.bindings["r"] > 0)
    b = generate_synthetic_inputs(SyntheticInputSpec("open_ff"), 50, 0)
    assert b.features.shape == (50, 19) and set(OPEN_SIGNATURE.names) <= set(b.bindings)
    assert generate_synthetic_inputs(SyntheticInputSpec("no_features"), 10, 0).features.shape == (10, 15)


def test_synthetic_inputs_deterministic():
    a = generate_synthetic_inputs(SyntheticInputSpec("open_ff"), 20, 4)
    b = generate_synthetic_inputs(SyntheticInputSpec("open_ff"), 20, 4)
    assert np.array_equal(a.features, b.features)


def test_selection_rules():
    assert select_best_checkpoint([1.0, 3.0, 3.0, 2.0]) == 1
    with pytest.raises(ValueError):
        select_best_checkpoint([])
    a, b = parse("r"), parse("r * 1")
    assert select_lowest_mse([b, a], [0.5, 0.5]) == a


def test_student_specs():
    teacher = init_mlp(LPO_SPEC, 0, bias_enabled=False)
    assert student_spec(teacher, "same") == LPO_SPEC
    assert student_spec(teacher, "smaller").layer_widths == (7, 64, 1)
    s = init_student(LPO_SPEC, False, 0)
    assert np.all(s.layers()[-1][0] >= 0)


def test_config_validation():
    with pytest.raises(ValueError):
        DistillConfig(n_regression_steps=1000, eval_every=300)
    with pytest.raises(ValueError):
        SymDistillConfig(elitism=16, population_size=16)


def test_blackbox_distillation_reduces_error_without_env_steps():
    teacher = init_mlp(LPO_SPEC, 1, bias_enabled=False)
    cfg = DistillConfig(lr_sweep=(0.003,), n_regression_steps=200, eval_every=100, batch_size=256,
                        held_out_size=512)
    calls = []
    res = distill_blackbox(teacher, SyntheticInputSpec("drift"), cfg, lambda p: calls.append(1) or 0.0, 0)
    assert len(res.checkpoints) == 2 and len(calls) == 2 and res.n_rl_evals == 2
    assert res.checkpoints[-1].held_out_mse < res.checkpoints[0].held_out_mse * 1.5


def test_divergent_arm_abandoned():
    teacher = init_mlp(MlpSpec((7, 16, 1), "tanh", "identity"), 1)
    cfg = DistillConfig(lr_sweep=(1e3,), n_regression_steps=100, eval_every=50, batch_size=64, held_out_size=64)
    res = distill_blackbox(teacher, SyntheticInputSpec("drift"), cfg, lambda p: 0.0, 0)
    assert res.abandoned_arms == [0]


def test_symbolic_champion_mse_non_increasing():
    cfg = SymDistillConfig(n_populations=3, population_size=8, iterations_per_round=2, rounds=5,
                           batch_size=200, max_size=15)
    planted = parse("(1 - r) * A", DRIFT_SIGNATURE)
    res = distill_symbolic(expr_teacher(planted), SyntheticInputSpec("drift"), cfg, DRIFT_SIGNATURE, 0)
    mses = [h.champion_mse for h in res.history]
    assert all(b <= a for a, b in zip(mses, mses[1:]))
    assert complexity(res.best) <= 15


def test_symbolic_seed_expression_is_kept():
    cfg = SymDistillConfig(n_populations=2, population_size=6, iterations_per_round=1, rounds=2, batch_size=100)
    planted = parse("(1 - r) * A", DRIFT_SIGNATURE)
    res = distill_symbolic(expr_teacher(planted), SyntheticInputSpec("drift"), cfg, DRIFT_SIGNATURE, 0,
                           seed_exprs=[planted])
    assert res.best_mse == 0.0
