import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metarl.evalreport import (
    CostLog,
    ReportError,
    RunRecord,
    aggregate,
    cost_accounting,
    drift_surface,
    iqm,
    normalize_returns,
    read_records,
    stratified_bootstrap_ci,
    write_records,
    write_report,
)
from metarl.learnedalgos import LPO_SPEC, DriftFunction, drift_eval
from metarl.numcore import init_mlp
from oracles import sort_and_trim_iqm


def rec(method, env, ret, seed=0, tag="in_dist"):
    return RunRecord(method, env, tag, seed, ret, 100)


def test_iqm_examples():
    assert iqm([1, 2, 3, 4]) == 2.5
    assert iqm([7.0] * 9) == 7.0
    assert iqm([5.0]) == 5.0
    with pytest.raises(ReportError):
        iqm([])


def test_iqm_fractional_trim_n5():
    # trim 1.25 from each end: weights 0.75 on x2 and x4, 1 on x3, total 2.5
    assert iqm([1, 2, 3, 4, 100]) == pytest.approx((0.75 * 2 + 3 + 0.75 * 4) / 2.5)


def test_iqm_matches_oracle_n16():
    g = np.random.default_rng(0)
    for _ in range(200):
        x = g.normal(size=16)
        assert abs(iqm(x) - sort_and_trim_iqm(list(x))) <= 1e-12


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.randoms(use_true_random=False))
def test_iqm_permutation_invariant(x, rnd):
    y = list(x)
    rnd.shuffle(y)
    assert iqm(x) == pytest.approx(iqm(y), rel=1e-12, abs=1e-9)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.integers(0, 39), st.floats(0, 1e6))
def test_iqm_monotone(x, i, bump):
    i %= len(x)
    y = list(x)
    y[i] += bump
    assert iqm(y) >= iqm(x) - 1e-9 * (1 + max(abs(v) for v in y))


def test_normalize_examples():
    records = [rec("handcrafted_baseline", "e1", 2.0, 0), rec("handcrafted_baseline", "e1", 4.0, 1),
               rec("blackbox_es", "e1", 6.0), rec("handcrafted_baseline", "e2", 10.0),
               rec("blackbox_es", "e2", 5.0)]
    out, excluded = normalize_returns(records, "handcrafted_baseline")
    table = {(r.method, r.env_id, r.seed): r.final_return for r in out}
    assert table == {("handcrafted_baseline", "e1", 0): 2 / 3, ("handcrafted_baseline", "e1", 1): 4 / 3,
                     ("blackbox_es", "e1", 0): 2.0, ("handcrafted_baseline", "e2", 0): 1.0,
                     ("blackbox_es", "e2", 0): 0.5}
    assert excluded == []


def test_normalize_missing_and_zero_baseline():
    with pytest.raises(ReportError, match="e9"):
        normalize_returns([rec("blackbox_es", "e9", 1.0)], "handcrafted_baseline")
    out, excluded = normalize_returns([rec("handcrafted_baseline", "z", 0.0), rec("blackbox_es", "z", 1.0)],
                                      "handcrafted_baseline")
    assert out == [] and excluded == ["z"]


def test_baseline_normalizes_to_one():
    g = np.random.default_rng(1)
    records = [rec("handcrafted_baseline", f"e{e}", float(g.uniform(1, 5)), s) for e in range(3) for s in range(4)]
    out, _ = normalize_returns(records, "handcrafted_baseline")
    for e in range(3):
        vals = [r.final_return for r in out if r.env_id == f"e{e}"]
        assert np.mean(vals) == pytest.approx(1.0, abs=1e-12)


def test_bootstrap_zero_variance_and_determinism():
    groups = {"a": [2.0] * 5, "b": [2.0] * 5}
    assert stratified_bootstrap_ci(groups, 200, rng=0) == (2.0, 2.0)
    g = {"a": [1.0, 2.0, 5.0], "b": [0.0, 3.0, 3.5]}
    assert stratified_bootstrap_ci(g, 500, rng=3) == stratified_bootstrap_ci(g, 500, rng=3)
    with pytest.raises(ReportError):
        stratified_bootstrap_ci({"a": [1.0]}, 10)


def test_bootstrap_contains_point_on_random_fixtures():
    g = np.random.default_rng(2)
    for i in range(100):
        groups = {f"e{k}": g.normal(k, 1, 16) for k in range(3)}
        lo, hi = stratified_bootstrap_ci(groups, 500, rng=i)
        point = iqm(np.concatenate(list(groups.values())))
        assert lo <= point <= hi


def test_bootstrap_width_shrinks_with_seeds():
    g = np.random.default_rng(3)
    widths = []
    for n in (4, 64):
        lo, hi = stratified_bootstrap_ci({"a": g.normal(0, 1, n), "b": g.normal(1, 1, n)}, 1000, rng=0)
        widths.append(hi - lo)
    assert widths[1] < widths[0]


def test_aggregate_partitions_and_orders():
    records = [rec(m, f"e{e}", float(s + e + 1), s, tag) for m in ("blackbox_es", "handcrafted_baseline")
               for tag in ("in_dist", "out_dist") for e in range(2) for s in range(4)]
    rows = aggregate(records, n_boot=200)
    assert len(rows) == 4
    assert sum(r.n_runs for r in rows) == len(records)
    for r in rows:
        assert r.ci_lo <= r.iqm <= r.ci_hi


def test_cost_accounting():
    logs = [CostLog("blackbox_es", 64 * 10 * 500, 12.0, 3.0), CostLog("distill_same", 0, 1.0, 2.0),
            CostLog("blackbox_es", 100, 1.0, 0.0)]
    out = cost_accounting(logs)
    assert out["blackbox_es"].samples == 64 * 10 * 500 + 100
    assert out["distill_same"].samples == 0
    with pytest.raises(ReportError):
        cost_accounting([CostLog("llm_proposal", None, 1.0)])


def test_drift_surface_ppo_derivative():
    r = np.array([0.85, 0.95, 1.1, 1.19, 1.25, 1.5])
    t = drift_surface(DriftFunction.ppo(0.2), r, np.array([1.0]))
    assert np.allclose(t[:, 3], [0, 0, 0, 0, 1, 1], atol=1e-4)


def test_drift_surface_consistency_and_nonneg():
    d = DriftFunction.blackbox(init_mlp(LPO_SPEC, 0, bias_enabled=False))
    r, A = np.linspace(0.5, 2, 11), np.linspace(-3, 3, 7)
    t = drift_surface(d, r, A)
    assert np.all(t[:, 2] >= 0)
    assert np.array_equal(t[:, 2], drift_eval(d, t[:, 0], t[:, 1]))
    with pytest.raises(ReportError):
        drift_surface(d, np.array([0.0, 1.0]), A)


def test_records_round_trip(tmp_path):
    records = [RunRecord("llm_proposal", "e", "out_dist", 3, 0.1 + 0.2, 10, 1.25)]
    write_records(tmp_path / "r.csv", records, tmp_path / "t.csv")
    assert "wall" not in (tmp_path / "r.csv").read_text()
    assert read_records(tmp_path / "r.csv", tmp_path / "t.csv") == records
    with pytest.raises(ReportError):
        RunRecord("nope", "e", "in_dist", 0, 1.0, 1)


def test_write_report(tmp_path):
    rows = aggregate([rec("blackbox_es", "e", float(s), s) for s in range(4)], n_boot=100)
    write_report(tmp_path, rows, [])
    assert (tmp_path / "aggregate.csv").read_text().startswith("method,dist_tag,iqm,ci_lo,ci_hi")
