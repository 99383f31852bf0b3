import gc
import math
import weakref

import numpy as np
import pytest

from smamba import autodiff as ad
from smamba.discretize import zoh
from smamba.errors import DimensionError, TapeStateError
from smamba.numerics import mat_exp
from smamba.ssm import StateSpace


def numeric_grad(f, arrays, i, h=1e-6):
    """Central differences of scalar ``f(*arrays)`` with respect to ``arrays[i]``."""
    x = arrays[i]
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(*arrays)
        x[idx] = old - h
        down = f(*arrays)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def check_primitive(op, arrays, seed=0, tol=1e-6, h=1e-6):
    """Compare the tape gradient of ``sum(op(*xs) * R)`` against central differences."""
    arrays = [np.array(a, dtype=float) for a in arrays]
    out_shape = np.shape(op(*arrays).value)
    R = np.random.default_rng(seed).normal(size=out_shape)

    def scalar(*xs):
        return float(np.sum(op(*xs).value * R))

    tape = ad.GradTape()
    leaves = [tape.param(a.copy(), f"x{i}") for i, a in enumerate(arrays)]
    loss = ad.sum_all(ad.mul(op(*leaves), R))
    grads = tape.backward(loss)
    for i in range(len(arrays)):
        num = numeric_grad(scalar, arrays, i, h)
        err = np.max(np.abs(grads[f"x{i}"] - num)) / max(1.0, np.max(np.abs(num)))
        assert err <= tol, f"operand {i}: relative error {err:.2e}"


rng = np.random.default_rng(42)


# --- tape mechanics --------------------------------------------------------------


def test_tape_single_use():
    tape = ad.GradTape()
    x = tape.param(np.ones(3), "x")
    loss = ad.sum_all(x)
    assert np.array_equal(tape.backward(loss)["x"], np.ones(3))
    with pytest.raises(TapeStateError):
        tape.backward(loss)
    with pytest.raises(TapeStateError):
        ad.sum_all(x)


def test_backward_releases_graph_without_gc():
    gc.disable()
    try:
        tape = ad.GradTape()
        x = tape.param(np.ones(4), "x")
        hidden = ad.exp(ad.mul(x, x))
        probe = weakref.ref(hidden.value)
        loss = ad.sum_all(hidden)
        del hidden
        tape.backward(loss)
        assert probe() is None
    finally:
        gc.enable()


def test_unrecorded_tape_refuses_backward():
    tape = ad.GradTape(record=False)
    loss = ad.sum_all(tape.param(np.ones(2), "x"))
    with pytest.raises(TapeStateError):
        tape.backward(loss)


def test_sum_of_params_has_unit_gradient():
    tape = ad.GradTape()
    a, b = tape.param(rng.normal(size=(2, 3)), "a"), tape.param(rng.normal(size=4), "b")
    grads = tape.backward(ad.add(ad.sum_all(a), ad.sum_all(b)))
    assert np.array_equal(grads["a"], np.ones((2, 3)))
    assert np.array_equal(grads["b"], np.ones(4))


def test_unused_param_gets_zero_gradient():
    tape = ad.GradTape()
    x = tape.param(np.ones(2), "x")
    tape.param(np.ones(3), "unused")
    grads = tape.backward(ad.sum_all(x))
    assert np.array_equal(grads["unused"], np.zeros(3))


def test_fan_out_accumulates():
    tape = ad.GradTape()
    x = tape.param(np.array([2.0]), "x")
    loss = ad.sum_all(ad.mul(x, x))  # x^2
    assert tape.backward(loss)["x"][0] == 4.0


def test_scalar_chain_hand_oracle():
    # abar = exp(delta * a): d/da = delta * abar, d/ddelta = a * abar
    a, delta = -0.7, 0.3
    tape = ad.GradTape()
    av = tape.param(np.array([[a]]), "a")
    dv = tape.param(np.array([[delta]]), "delta")
    out = ad.zoh_diag_abar(dv, av)
    grads = tape.backward(ad.sum_all(out))
    assert abs(grads["a"][0, 0] - delta * math.exp(delta * a)) <= 1e-12
    assert abs(grads["delta"][0, 0] - a * math.exp(delta * a)) <= 1e-12


def test_phi_hand_oracle():
    a, delta = -0.7, 0.3
    tape = ad.GradTape()
    av = tape.param(np.array([[a]]), "a")
    dv = tape.param(np.array([[delta]]), "delta")
    grads = tape.backward(ad.sum_all(ad.zoh_diag_phi(dv, av)))
    e = math.exp(a * delta)
    assert abs(grads["delta"][0, 0] - e) <= 1e-12
    assert abs(grads["a"][0, 0] - (delta * e / a - (e - 1) / a**2)) <= 1e-12


# --- elementwise and shape primitives ----------------------------------------------


@pytest.mark.parametrize(
    "op, shapes",
    [
        (ad.add, [(3, 4), (4,)]),
        (ad.sub, [(3, 4), (3, 1)]),
        (ad.mul, [(2, 3), (2, 3)]),
        (ad.neg, [(5,)]),
        (ad.exp, [(2, 3)]),
        (ad.softplus, [(4, 3)]),
        (ad.silu, [(4, 3)]),
        (lambda x: ad.reshape(x, (6,)), [(2, 3)]),
        (ad.transpose, [(2, 3)]),
        (lambda x: ad.getitem(x, (slice(None), 1)), [(3, 4)]),
        (lambda x: ad.gather(x, [0, 2, 0, 1]), [(3, 2)]),
        (ad.sum_all, [(2, 2)]),
        (ad.linear, [(2, 3, 4), (4, 5)]),
        (ad.rmsnorm, [(2, 3, 6), (6,)]),
    ],
)
def test_elementwise_gradients(op, shapes):
    check_primitive(op, [rng.normal(size=s) for s in shapes])


def test_place_gradient():
    def op(base, values):
        return ad.place(base, values, [1, 2], [0, 2])

    check_primitive(op, [rng.normal(size=(3, 3)), rng.normal(size=(4, 2))])


def test_clamp_negative_gradient_and_value():
    x = np.array([-2.0, -0.5, 0.3, 1.2])
    check_primitive(ad.clamp_negative, [x])
    tape = ad.GradTape()
    v = tape.param(x, "x")
    out = ad.clamp_negative(v)
    assert np.array_equal(out.value, [-2.0, -0.5, -1e-5, -1e-5])
    assert np.array_equal(tape.backward(ad.sum_all(out))["x"], [1.0, 1.0, 0.0, 0.0])


def test_embed_gradient():
    table = rng.normal(size=(5, 3))
    tokens = np.array([[0, 4, 4], [2, 0, 1]])
    check_primitive(lambda t: ad.embed(t, tokens), [table])


def test_cross_entropy_gradient_and_value():
    logits = rng.normal(size=(2, 3, 5))
    targets = np.array([[0, 4, 2], [1, 1, 3]])
    check_primitive(lambda x: ad.cross_entropy(x, targets), [logits])
    uniform = ad.cross_entropy(np.zeros((1, 2, 8)), np.array([[3, 5]]))
    assert float(uniform.value) == pytest.approx(math.log(8), abs=1e-15)
    with pytest.raises(DimensionError):
        ad.cross_entropy(np.zeros((2, 5)), np.zeros(3, dtype=int))


def test_causal_conv_gradient_and_causality():
    u, w, b = rng.normal(size=(2, 6, 3)), rng.normal(size=(3, 4)), rng.normal(size=3)
    check_primitive(ad.causal_conv, [u, w, b])
    v = u.copy()
    v[:, 4] += 1.0
    assert np.array_equal(ad.causal_conv(u, w, b).value[:, :4], ad.causal_conv(v, w, b).value[:, :4])


def test_linear_shape_error():
    with pytest.raises(DimensionError):
        ad.linear(np.zeros((2, 3)), np.zeros((4, 5)))


# --- state-space primitives ---------------------------------------------------------


def test_zoh_diag_gradients():
    delta = rng.uniform(0.05, 1.0, size=(2, 3, 4))
    a = -rng.uniform(0.5, 3.0, size=(4, 5))
    check_primitive(ad.zoh_diag_abar, [delta, a])
    check_primitive(ad.zoh_diag_phi, [delta, a])


def test_zoh_diag_phi_small_a_branch():
    delta = rng.uniform(0.1, 1.0, size=(1, 2, 2))
    a = np.array([[1e-9, -2e-9], [0.0, 3e-10]])
    check_primitive(ad.zoh_diag_phi, [delta, a], tol=1e-5)


def test_phi_da_factor_continuous_at_switch():
    x = np.array([0.999e-3, 1.001e-3, -0.999e-3, -1.001e-3])
    f = ad._phi_da_factor(x)
    assert abs(f[0] - f[1]) <= 1e-6 and abs(f[2] - f[3]) <= 1e-6


def test_expm_delta_matches_mat_exp():
    delta = rng.uniform(0.01, 3.0, size=(2, 3, 2))
    M = rng.normal(size=(2, 4, 4))
    E = ad.expm_delta(delta, M).value
    for b, t, c in np.ndindex(delta.shape):
        ref = mat_exp(delta[b, t, c] * M[c])
        assert np.max(np.abs(E[b, t, c] - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


@pytest.mark.parametrize("scale", [0.1, 4.0])
def test_expm_delta_gradient(scale):
    # scale 4 forces several squaring levels
    delta = rng.uniform(0.05, 1.0, size=(1, 3, 2))
    M = rng.normal(size=(2, 3, 3)) * scale
    check_primitive(ad.expm_delta, [delta, M], tol=1e-6)


def augmented(rng, C, n):
    M = np.zeros((C, n + 1, n + 1))
    M[:, :n, :n] = rng.normal(size=(C, n, n)) - np.eye(n)
    M[:, :n, n] = rng.normal(size=(C, n))
    return M


@pytest.mark.parametrize("euler_b", [False, True])
@pytest.mark.parametrize("delta_scale", [0.3, 5.0])
def test_scan_expm_gradient(euler_b, delta_scale):
    r = np.random.default_rng(7)
    C, n, L = 2, 3, 5
    delta = r.uniform(0.1, 1.0, size=(2, L, C)) * delta_scale
    M = augmented(r, C, n)
    c = r.normal(size=(C, n))
    u = r.normal(size=(2, L, C))
    check_primitive(lambda *xs: ad.scan_expm(*xs, euler_b=euler_b), [delta, M, c, u], tol=1e-6)


def test_scan_expm_matches_zoh_pipeline():
    r = np.random.default_rng(8)
    C, n, L = 2, 3, 6
    delta = r.uniform(0.05, 2.0, size=(1, L, C))
    M = augmented(r, C, n)
    c = r.normal(size=(C, n))
    u = r.normal(size=(1, L, C))
    y = ad.scan_expm(delta, M, c, u).value
    for ch in range(C):
        s = StateSpace(M[ch, :n, :n], M[ch, :n, n:], c[ch][None], [[0.0]])
        h = np.zeros(n)
        for t in range(L):
            d = zoh(s, delta[0, t, ch])
            h = d.Abar @ h + d.Bbar[:, 0] * u[0, t, ch]
            assert abs(y[0, t, ch] - c[ch] @ h) <= 1e-11


def test_scan_expm_shape_error():
    with pytest.raises(DimensionError):
        ad.scan_expm(np.ones((1, 2, 2)), np.zeros((2, 4, 4)), np.zeros((2, 2)), np.ones((1, 2, 2)))


def test_scan_diag_gradient():
    r = np.random.default_rng(9)
    batch, L, C, n = 2, 4, 3, 2
    args = [
        r.uniform(0.2, 0.9, size=(batch, L, C, n)),
        r.normal(size=(batch, L, C, n)),
        r.normal(size=(batch, L, n)),
        r.normal(size=(batch, L, C)),
    ]
    check_primitive(ad.scan_diag, args)


def test_scan_dense_gradient():
    r = np.random.default_rng(10)
    batch, L, C, n = 2, 4, 2, 3
    args = [
        r.normal(size=(batch, L, C, n, n)) * 0.4,
        r.normal(size=(batch, L, C, n)),
        r.normal(size=(C, n)),
        r.normal(size=(batch, L, C)),
    ]
    check_primitive(ad.scan_dense, args)


def test_scan_expm_equals_expm_then_dense():
    r = np.random.default_rng(11)
    C, n, L = 3, 2, 4
    delta = r.uniform(0.1, 1.5, size=(2, L, C))
    M = augmented(r, C, n)
    c = r.normal(size=(C, n))
    u = r.normal(size=(2, L, C))
    E = ad.expm_delta(delta, M).value
    ref = ad.scan_dense(E[..., :n, :n], E[..., :n, n], c, u).value
    assert np.max(np.abs(ad.scan_expm(delta, M, c, u).value - ref)) <= 1e-12
