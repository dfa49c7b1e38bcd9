import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metarl.learnedalgos import (
    LEARNED_OPT_SPEC,
    LPO_SPEC,
    DivergenceError,
    DriftDomainError,
    DriftFunction,
    OptState,
    UpdateContext,
    UpdateRule,
    apply_update_rule,
    compute_update,
    dormancy_scores,
    drift_and_grad_r,
    drift_eval,
    drift_values,
    from_dict,
    layer_proportions,
    load_algorithm,
    lpo_featurize,
    no_features_featurize,
    open_featurize,
    save_algorithm,
    to_dict,
    update_momenta,
)
from metarl.numcore import MlpSpec, init_mlp
from oracles import central_fd


def test_ppo_drift_examples():
    d = DriftFunction.ppo(0.2)
    assert drift_eval(d, np.array([1.3]), np.array([1.0]))[0] == pytest.approx(0.1, abs=1e-15)
    assert drift_eval(d, np.array([0.9]), np.array([-2.0]))[0] == 0.0
    assert drift_eval(d, np.array([1.0]), np.array([5.0]))[0] == 0.0


def test_nonpositive_ratio_rejected():
    with pytest.raises(DriftDomainError):
        drift_eval(DriftFunction.ppo(), np.array([0.0]), np.array([1.0]))


def test_lpo_features_at_one_vanish_except_none():
    f = lpo_featurize(np.ones(5), np.linspace(-2, 2, 5))
    assert f.shape == (5, 7)
    assert np.array_equal(f, np.zeros((5, 7)))


def test_blackbox_validation():
    with pytest.raises(ValueError):
        DriftFunction.blackbox(init_mlp(LPO_SPEC, 0, bias_enabled=True))
    with pytest.raises(ValueError):
        DriftFunction.blackbox(init_mlp(MlpSpec((7, 4, 1), "relu", "identity"), 0, bias_enabled=False))


@given(st.integers(0, 50))
@settings(max_examples=20, deadline=None)
def test_blackbox_mirror_conditions(seed):
    d = DriftFunction.blackbox(init_mlp(LPO_SPEC, seed, bias_enabled=False))
    g = np.random.default_rng(seed)
    r, A = np.exp(g.normal(0, 0.5, 500)), g.normal(0, 2, 500)
    assert np.all(drift_eval(d, r, A) >= 0)
    assert np.all(drift_eval(d, np.ones(50), g.normal(0, 2, 50)) == 0)
    _, dD = drift_and_grad_r(d, np.ones(50), g.normal(0, 2, 50))
    assert np.allclose(dD, 0)


def test_symbolic_clamp_and_flag():
    d = DriftFunction.symbolic("(r - 1) * A")
    vals, violated = drift_values(d, np.array([2.0, 0.5]), np.array([1.0, 1.0]))
    assert violated and np.array_equal(vals, [1.0, 0.0])
    vals, violated = drift_values(DriftFunction.symbolic("square(r - 1)"), np.array([2.0]), np.array([1.0]))
    assert not violated


def test_symbolic_rejects_foreign_variables():
    from metarl.symdsl import Var

    with pytest.raises(ValueError):
        DriftFunction("symbolic", expr=Var("g"))


@pytest.mark.parametrize("kind", ["ppo", "blackbox", "symbolic"])
def test_grad_r_matches_fd(kind):
    g = np.random.default_rng(0)
    if kind == "ppo":
        d = DriftFunction.ppo(0.2)
        r = np.concatenate([g.uniform(0.5, 0.75, 20), g.uniform(0.85, 1.15, 20), g.uniform(1.25, 2, 20)])
    elif kind == "blackbox":
        d = DriftFunction.blackbox(init_mlp(LPO_SPEC, 1, bias_enabled=False))
        r = g.uniform(0.5, 2, 60)
    else:
        d = DriftFunction.symbolic("square(r - 1) * exp(A)")
        r = g.uniform(0.5, 2, 60)
    A = g.uniform(-2, 2, r.size)
    _, dD = drift_and_grad_r(d, r, A)
    for i in range(r.size):
        fd = central_fd(lambda x: float(drift_eval(d, x, A[i : i + 1])[0]), r[i : i + 1])[0]
        assert dD[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_lpo_init_near_ppo(lpo_near_ppo):
    d = DriftFunction.blackbox(lpo_near_ppo)
    R, A = np.meshgrid(np.linspace(0.5, 1.8, 40), np.linspace(-3, 3, 40))
    err = np.abs(drift_eval(d, R.ravel(), A.ravel()) - drift_eval(DriftFunction.ppo(), R.ravel(), A.ravel()))
    assert err.max() < 0.05


# --- update rules ------------------------------------------------------------------


def test_sgd_and_annealing():
    rule = UpdateRule.sgd(0.5)
    p, g = np.array([1.0, 2.0]), np.array([0.2, -0.4])
    new, st_ = apply_update_rule(rule, OptState.zeros(2), p, g, UpdateContext(t_p=0.5))
    assert np.allclose(new, p - 0.25 * g)
    assert st_.iteration == 1


def test_adam_first_step_is_sign_times_lr():
    rule = UpdateRule.adam(1e-2, anneal=False)
    g = np.array([3.0, -0.01, 1e-4])
    delta, _ = compute_update(rule, OptState.zeros(3), np.zeros(3), g, UpdateContext())
    assert np.allclose(delta, 1e-2 * np.sign(g), rtol=1e-3)


def test_momenta_formula():
    m = np.arange(12.0).reshape(6, 2)
    g = np.array([1.0, -1.0])
    out = update_momenta(m, g)
    for i, b in enumerate((0.1, 0.5, 0.9, 0.99, 0.999, 0.9999)):
        assert np.allclose(out[i], b * g + (1 - b) * m[i])


def test_feature_widths_and_order():
    n = 5
    g = np.random.default_rng(0)
    p, gr, m = g.normal(size=n), g.normal(size=n), g.normal(size=(6, n))
    ctx = UpdateContext(0.3, 0.6, np.full(n, 0.5), np.full(n, 1.5))
    f = open_featurize(p, gr, m, ctx)
    assert f.shape == (n, 19)
    assert np.array_equal(f[:, 0], p)
    assert np.allclose(f[:, 1], np.log(np.abs(gr) + 1e-8))
    assert np.array_equal(f[:, 2], np.sign(gr))
    assert np.array_equal(no_features_featurize(p, gr, m), f[:, :15])
    assert np.allclose(f[:, 15:], [[0.3, 0.6, 1.5, 0.5]] * n)


def test_dormancy_scores():
    h = np.array([[1.0, 0.0, 2.0], [1.0, 0.0, 2.0]])
    assert np.allclose(dormancy_scores(h), [1.0, 0.0, 2.0])
    assert np.array_equal(dormancy_scores(np.zeros((3, 4))), np.zeros(4))


def test_layer_proportions():
    spec = MlpSpec((2, 3, 1), "tanh", "identity")
    lp = layer_proportions(spec, True)
    assert np.array_equal(lp, [0.0] * 9 + [1.0] * 4)


def test_learned_rule_output_scale():
    params = init_mlp(LEARNED_OPT_SPEC["open_ff"], 0)
    rule = UpdateRule.learned(params, "open_ff", output_scale=1e-3, noise_scale=0.0)
    delta, _ = compute_update(rule, OptState.zeros(4), np.ones(4), np.ones(4), UpdateContext())
    assert np.all(np.abs(delta) < 1.0)


def test_symbolic_rule_matches_sgd():
    sym = UpdateRule.symbolic("g * lr", 0.1)
    sgd = UpdateRule.sgd(0.1)
    g = np.random.default_rng(0).normal(size=6)
    ctx = UpdateContext(0.25, 0.0, np.zeros(6), np.zeros(6), np.zeros(6))
    a, _ = compute_update(sym, OptState.zeros(6), np.zeros(6), g, ctx)
    b, _ = compute_update(sgd, OptState.zeros(6), np.zeros(6), g, ctx)
    assert np.allclose(a, b)


def test_divergence_raises():
    with pytest.raises(DivergenceError):
        apply_update_rule(UpdateRule.sgd(1e308), OptState.zeros(1), np.zeros(1), np.array([1e308]),
                          UpdateContext())


# --- containers ------------------------------------------------------------------


@pytest.mark.parametrize("algo", [
    DriftFunction.ppo(0.3),
    DriftFunction.symbolic("relu((r - clip(r, 1 - eps, 1 + eps)) * A)"),
    DriftFunction.blackbox(init_mlp(LPO_SPEC, 0, bias_enabled=False)),
    UpdateRule.sgd(0.5),
    UpdateRule.adam(1e-3),
    UpdateRule.symbolic("m_0_9 * lr", 1e-3),
    UpdateRule.learned(init_mlp(LEARNED_OPT_SPEC["no_features"], 0), "no_features"),
])
def test_container_round_trip(tmp_path, algo):
    back = from_dict(to_dict(algo))
    assert to_dict(back) == to_dict(algo)
    save_algorithm(tmp_path / "a.json", algo)
    assert to_dict(load_algorithm(tmp_path / "a.json")) == to_dict(algo)
