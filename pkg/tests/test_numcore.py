import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metarl.numcore import (
    CacheMismatchError,
    MlpParams,
    MlpSpec,
    RngStream,
    ShapeError,
    clip_global_norm,
    halved_spec,
    init_mlp,
    load_params,
    mlp_backward,
    mlp_forward,
    params_from_bytes,
    params_to_bytes,
    save_params,
)
from oracles import central_fd, grads_close


def random_params(g, widths, hidden="tanh", out="identity", bias=True):
    spec = MlpSpec(tuple(widths), hidden, out)
    return MlpParams(spec, g.normal(0, 0.7, spec.n_params(bias)), bias)


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((3,), "relu", "identity")
    with pytest.raises(ValueError):
        MlpSpec((3, 0, 1), "relu", "identity")


def test_param_count_mismatch():
    spec = MlpSpec((2, 3, 1), "relu", "identity")
    with pytest.raises(ShapeError):
        MlpParams(spec, np.zeros(5))
    assert len(MlpParams(spec, np.zeros(13))) == 13
    assert len(MlpParams(spec, np.zeros(9), bias_enabled=False)) == 9


def test_zero_input_bias_free_gives_zero():
    g = np.random.default_rng(0)
    p = random_params(g, (4, 8, 8, 2), hidden="relu", bias=False)
    out, _ = mlp_forward(p, np.zeros(4))
    assert np.array_equal(out, np.zeros(2))


def test_identity_single_layer():
    spec = MlpSpec((3, 3), "relu", "identity")
    p = MlpParams(spec, np.eye(3).ravel(), bias_enabled=False)
    x = np.array([1.5, -2.0, 0.25])
    assert np.array_equal(mlp_forward(p, x)[0], x)


def test_hand_computed_2_2_1():
    # W1 = [[1, -1], [2, 0.5]] (input-major), b1 = [0.1, -0.2], W2 = [[1], [-2]], b2 = [0.3]
    spec = MlpSpec((2, 2, 1), "relu", "identity")
    values = [1, -1, 2, 0.5, 0.1, -0.2, 1, -2, 0.3]
    p = MlpParams(spec, np.array(values, dtype=float))
    x = np.array([1.0, 2.0])
    # hidden pre = [1*1 + 2*2 + 0.1, 1*-1 + 2*0.5 - 0.2] = [5.1, -0.2] -> relu [5.1, 0]
    assert mlp_forward(p, x)[0][0] == pytest.approx(5.1 - 0 + 0.3, abs=1e-12)


def test_shape_error_names_layer():
    p = random_params(np.random.default_rng(0), (3, 2))
    with pytest.raises(ShapeError, match="layer 0"):
        mlp_forward(p, np.zeros(4))


def test_backward_zero_upstream_and_linear_case():
    g = np.random.default_rng(1)
    p = random_params(g, (3, 4, 2))
    _, cache = mlp_forward(p, g.normal(size=3))
    pg, ig = mlp_backward(p, cache, np.zeros(2))
    assert not pg.any() and not ig.any()
    lin = random_params(g, (3, 2), bias=False)
    _, cache = mlp_forward(lin, g.normal(size=3))
    up = g.normal(size=2)
    W = lin.layers()[0][0]
    assert np.allclose(mlp_backward(lin, cache, up)[1], W @ up)


def test_backward_rejects_stale_cache():
    g = np.random.default_rng(2)
    p = random_params(g, (3, 4, 2))
    q = p.with_values(p.values + 1)
    _, cache = mlp_forward(p, g.normal(size=3))
    with pytest.raises(CacheMismatchError):
        mlp_backward(q, cache, np.ones(2))


def _check_fd(g, widths, hidden, out, bias):
    p = random_params(g, widths, hidden, out, bias)
    x = g.normal(size=widths[0])
    up = g.normal(size=widths[-1])
    _, cache = mlp_forward(p, x)
    pg, ig = mlp_backward(p, cache, up)
    f_theta = lambda v: float(up @ mlp_forward(p.with_values(v), x)[0])
    f_x = lambda xx: float(up @ mlp_forward(p, xx)[0])
    return grads_close(pg, central_fd(f_theta, p.values)) and grads_close(ig, central_fd(f_x, x))


def test_gradients_match_finite_differences_3_4_2():
    g = np.random.default_rng(3)
    for _ in range(10):
        assert _check_fd(g, (3, 4, 2), "tanh", "identity", True)


def test_clip_global_norm_examples():
    v = np.array([0.3, 0.0])
    assert np.array_equal(clip_global_norm(v, 0.5), v)
    v = np.array([0.6, 0.8])
    assert np.allclose(clip_global_norm(v, 0.5), v / 2)
    assert np.array_equal(clip_global_norm(np.zeros(3), 0.5), np.zeros(3))
    with pytest.raises(ValueError):
        clip_global_norm(np.array([np.nan]), 1.0)
    with pytest.raises(ValueError):
        clip_global_norm(v, 0.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(1e-3, 10))
def test_clip_norm_bound_and_direction(vals, max_norm):
    v = np.array(vals)
    c = clip_global_norm(v, max_norm)
    assert np.linalg.norm(c) <= max_norm * (1 + 1e-12) or np.allclose(c, v)
    if np.linalg.norm(v) > 0:
        assert np.dot(c, v) >= 0


@given(st.integers(0, 2**63), st.integers(0, 2**63), st.integers(0, 1000))
@settings(max_examples=30)
def test_rng_stream_determinism(seed, sid, counter):
    a = RngStream(seed, sid, counter).generator().random(8)
    b = RngStream(seed, sid, counter).generator().random(8)
    assert np.array_equal(a, b)


def test_rng_children_differ():
    s = RngStream(7)
    assert not np.array_equal(s.child("a").generator().random(4), s.child("b").generator().random(4))


@given(st.integers(0, 1000), st.sampled_from(["relu", "tanh"]))
@settings(max_examples=30)
def test_bias_free_zero_propagation(seed, hidden):
    p = init_mlp(MlpSpec((5, 7, 3), hidden, "identity"), seed, bias_enabled=False)
    assert np.array_equal(mlp_forward(p, np.zeros(5))[0], np.zeros(3))


def test_checkpoint_round_trip(tmp_path):
    p = init_mlp(MlpSpec((7, 128, 1), "relu", "relu"), 0, bias_enabled=False)
    q = params_from_bytes(params_to_bytes(p))
    assert q.spec == p.spec and q.bias_enabled == p.bias_enabled
    assert np.array_equal(q.values, p.values)
    save_params(tmp_path / "p.bin", p)
    assert np.array_equal(load_params(tmp_path / "p.bin").values, p.values)
    with pytest.raises(ValueError):
        params_from_bytes(b"garbage!" + bytes(8))


def test_halved_spec():
    assert halved_spec(MlpSpec((7, 128, 1), "relu", "relu")).layer_widths == (7, 64, 1)
    assert halved_spec(MlpSpec((19, 16, 15, 1), "relu", "identity")).layer_widths == (19, 8, 8, 1)
