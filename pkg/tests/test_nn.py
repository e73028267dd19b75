import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgvae.nn import (
    AdamState,
    MlpParams,
    MlpSpec,
    NonFiniteError,
    ShapeError,
    adam_step,
    finite_diff_gradcheck,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from pgvae.rng import Rng, derive_seed


def linear(w, b):
    return MlpParams([np.asarray(w, float)], [np.asarray(b, float)])


# --- rng -----------------------------------------------------------------

def test_rng_same_seed_same_stream():
    assert np.array_equal(Rng(5).normal(10), Rng(5).normal(10))


def test_rng_children_are_independent_of_parent_draws():
    a = Rng(5)
    a.normal(100)
    assert np.array_equal(a.child("x").normal(4), Rng(5).child("x").normal(4))
    assert not np.array_equal(Rng(5).child("x").normal(4), Rng(5).child("y").normal(4))


def test_rng_golden_stream():
    # frozen so a change of generator or sub-seeding scheme is caught
    np.testing.assert_array_equal(
        Rng(5).normal(3), [-0.8019314252534474, -1.324358995628145, -0.24836162209524854]
    )
    np.testing.assert_array_equal(Rng(5).child("a").normal(2), [-1.3116118183116963, -0.9824081352265265])
    assert derive_seed(5, "a") == Rng(5).child("a").seed


# --- layer shapes ----------------------------------------------------------------

@pytest.mark.parametrize("dims, slope", [((3,), 0.01), ((3, 0, 2), 0.01), ((2, 2), 0.0), ((2, 2), 1.0)])
def test_mlp_spec_rejects_invalid(dims, slope):
    with pytest.raises(ValueError):
        MlpSpec(dims, slope)


def test_init_is_glorot_uniform_with_zero_bias(rng):
    spec = MlpSpec((30, 50, 4))
    p = init_mlp(spec, rng)
    for w, (fi, fo) in zip(p.weights, [(30, 50), (50, 4)]):
        bound = np.sqrt(6 / (fi + fo))
        assert w.shape == (fi, fo) and np.abs(w).max() <= bound
    assert all(np.all(b == 0) for b in p.biases)


# --- forward -------------------------------------------------------------

def test_forward_identity_layer():
    out, _ = mlp_forward(linear(np.eye(2), [0, 0]), MlpSpec((2, 2)), np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(out, [[1.0, 2.0]])


def test_forward_leaky_relu_on_negative_hidden_unit():
    spec = MlpSpec((1, 1, 1), slope=0.01)
    p = MlpParams([np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    out, cache = mlp_forward(p, spec, np.array([[-1.0]]))
    assert cache.pre[0][0, 0] == -1.0
    assert out[0, 0] == pytest.approx(-0.01, abs=1e-15)


def test_forward_golden_two_layer_net():
    spec = MlpSpec((3, 4, 2))
    p = init_mlp(spec, Rng(7))
    out, _ = mlp_forward(p, spec, np.array([[0.5, -1.0, 2.0]]))
    np.testing.assert_allclose(out, [[-0.34375498721207537, 0.06762585745364799]], rtol=1e-13)


def test_forward_shape_error_names_layer():
    spec = MlpSpec((3, 4, 2))
    p = init_mlp(spec, Rng(0))
    with pytest.raises(ShapeError, match="layer 0"):
        mlp_forward(p, spec, np.ones((2, 5)))
    p.weights[1] = np.ones((3, 2))
    with pytest.raises(ShapeError, match="layer 1"):
        mlp_forward(p, spec, np.ones((2, 3)))


# --- backward ------------------------------------------------------------

def test_backward_linear_layer_is_outer_product():
    spec = MlpSpec((3, 2))
    x = np.array([[1.0, -2.0, 0.5]])
    up = np.array([[0.3, -1.0]])
    p = linear(np.ones((3, 2)), np.zeros(2))
    _, cache = mlp_forward(p, spec, x)
    g, gx = mlp_backward(p, spec, cache, up)
    np.testing.assert_array_equal(g.weights[0], np.outer(x[0], up[0]))
    np.testing.assert_array_equal(g.biases[0], up[0])
    np.testing.assert_allclose(gx, up @ p.weights[0].T)


def test_backward_zero_upstream_gives_zero_grads(rng):
    spec = MlpSpec((3, 5, 5, 2))
    p = init_mlp(spec, rng)
    _, cache = mlp_forward(p, spec, rng.normal((4, 3)))
    g, gx = mlp_backward(p, spec, cache, np.zeros((4, 2)))
    assert all(np.all(a == 0) for a in g.arrays()) and np.all(gx == 0)


def test_backward_shape_mismatch(rng):
    spec = MlpSpec((3, 2))
    p = init_mlp(spec, rng)
    _, cache = mlp_forward(p, spec, np.ones((4, 3)))
    with pytest.raises(ShapeError):
        mlp_backward(p, spec, cache, np.ones((4, 3)))


def _mlp_probe_loss(spec, x, r):
    def loss_fn(params):
        p = MlpParams(list(params[0::2]), list(params[1::2]))
        out, cache = mlp_forward(p, spec, x)
        g, _ = mlp_backward(p, spec, cache, r)
        return float(np.sum(out * r)), g.arrays()

    return loss_fn


def test_backward_matches_finite_differences(rng):
    spec = MlpSpec((3, 6, 5, 2), slope=0.1)
    p = init_mlp(spec, rng)
    for b in p.biases:
        b += 0.1 * rng.normal(b.shape)
    x, r = rng.normal((4, 3)), rng.normal((4, 2))
    res = finite_diff_gradcheck(_mlp_probe_loss(spec, x, r), p.arrays(), eps=1e-5)
    assert res.max_rel_error < 1e-4
    assert len(res.rel_errors) == 6


def test_determinism_forward_backward_update():
    def once():
        r = Rng(99)
        spec = MlpSpec((3, 8, 2))
        p = init_mlp(spec, r.child("init"))
        x = r.child("x").normal((5, 3))
        out, cache = mlp_forward(p, spec, x)
        g, _ = mlp_backward(p, spec, cache, out)
        state = AdamState.fresh(p.arrays())
        adam_step(p.arrays(), g.arrays(), state)
        return out, [a.copy() for a in p.arrays()]

    (o1, p1), (o2, p2) = once(), once()
    assert np.array_equal(o1, o2)
    assert all(np.array_equal(a, b) for a, b in zip(p1, p2))


# --- adam ----------------------------------------------------------------

def test_adam_first_step_is_minus_lr_sign():
    p = [np.zeros(1)]
    state = AdamState.fresh(p, lr=0.001)
    adam_step(p, [np.array([2.0])], state)
    assert p[0][0] == pytest.approx(-0.001, rel=1e-8)
    assert state.step == 1


def test_adam_zero_grad_leaves_params():
    p = [np.array([1.5, -2.0])]
    state = AdamState.fresh(p)
    adam_step(p, [np.zeros(2)], state)
    np.testing.assert_array_equal(p[0], [1.5, -2.0])


def test_adam_two_steps_constant_grad_hand_recurrence():
    # m1 = 0.2, v1 = 0.004 -> m_hat = 2, v_hat = 4; m2 = 0.38, v2 = 0.007996
    # -> m_hat = 0.38 / 0.19 = 2, v_hat = 0.007996 / 0.001999 = 4
    p = [np.zeros(1)]
    state = AdamState.fresh(p, lr=0.001)
    for _ in range(2):
        adam_step(p, [np.array([2.0])], state)
    expected = -2 * 0.001 * 2.0 / (2.0 + 1e-8)
    assert p[0][0] == pytest.approx(expected, rel=1e-12)
    np.testing.assert_allclose(state.m[0], [0.38])
    np.testing.assert_allclose(state.v[0], [0.007996])


def test_adam_non_finite_grad_names_block():
    p = [np.zeros(2), np.zeros(3)]
    state = AdamState.fresh(p)
    with pytest.raises(NonFiniteError, match="block 1"):
        adam_step(p, [np.zeros(2), np.array([0.0, np.nan, 1.0])], state)
    assert state.step == 0


@given(g=st.floats(-1e3, 1e3, allow_nan=False).filter(lambda v: abs(v) > 1e-6), steps=st.integers(1, 30))
def test_adam_constant_grad_update_bounded_by_lr(g, steps):
    p = [np.zeros(1)]
    state = AdamState.fresh(p, lr=0.01)
    prev = 0.0
    for _ in range(steps):
        adam_step(p, [np.array([g])], state)
        assert abs(p[0][0] - prev) <= 0.01 * (1 + 1e-9)
        assert state.v[0][0] >= 0
        prev = p[0][0]


# --- gradcheck -----------------------------------------------------------

def test_gradcheck_exact_for_quadratic(rng):
    params = [rng.normal((3, 2)), rng.normal(4)]

    def loss_fn(ps):
        return 0.5 * sum(float(np.sum(a * a)) for a in ps), [a.copy() for a in ps]

    assert finite_diff_gradcheck(loss_fn, params).max_rel_error < 1e-8


def test_gradcheck_unused_parameter():
    params = [np.array([1.0, 2.0]), np.array([3.0])]

    def loss_fn(ps):
        return float(np.sum(ps[0] ** 2)), [2 * ps[0], np.zeros(1)]

    res = finite_diff_gradcheck(loss_fn, params)
    assert res.max_rel_error < 1e-6
    assert res.rel_errors[1] == 0.0


def test_gradcheck_detects_wrong_gradient():
    params = [np.array([1.0, 2.0])]

    def loss_fn(ps):
        return float(np.sum(ps[0] ** 2)), [3 * ps[0]]

    res = finite_diff_gradcheck(loss_fn, params)
    assert res.max_rel_error > 0.3 and res.worst_block == 0


def test_gradcheck_restores_params():
    params = [np.array([1.0, 2.0])]
    finite_diff_gradcheck(lambda ps: (float(np.sum(ps[0] ** 3)), [3 * ps[0] ** 2]), params)
    np.testing.assert_array_equal(params[0], [1.0, 2.0])


def test_gradcheck_rejects_non_finite_loss_and_bad_eps():
    params = [np.array([1.0])]
    with pytest.raises(NonFiniteError):
        finite_diff_gradcheck(lambda ps: (float("nan"), [np.zeros(1)]), params)
    with pytest.raises(ValueError):
        finite_diff_gradcheck(lambda ps: (0.0, [np.zeros(1)]), params, eps=0.0)
