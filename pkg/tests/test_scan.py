import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smamba.discretize import DiscreteSsm, zoh, zoh_diag_coeffs
from smamba.errors import DimensionError
from smamba.scan import conv_apply, kernel, scan_lti, scan_selective, step
from smamba.ssm import StateSpace


def scalar_system(abar=0.5, bbar=1.0, c=1.0, d=0.0):
    return DiscreteSsm(np.array([[abar]]), np.array([[bbar]]), np.array([[c]]), np.array([[d]]), 1.0)


def random_discrete(rng, n, m=1, p=1, delta=0.1):
    A = rng.normal(size=(n, n)) / np.sqrt(n) - 0.5 * np.eye(n)
    return zoh(StateSpace(A, rng.normal(size=(n, m)), rng.normal(size=(p, n)), rng.normal(size=(p, m))), delta)


def test_step_examples():
    d = scalar_system()
    h, y = step(d, np.zeros(1), np.ones(1))
    assert h[0] == 1.0 and y[0] == 1.0
    h, y = step(d, h, np.zeros(1))
    assert h[0] == 0.5 and y[0] == 0.5
    h, y = step(scalar_system(d=2.0), np.zeros(1), np.ones(1))
    assert y[0] == 3.0


def test_step_dimension_error():
    with pytest.raises(DimensionError):
        step(scalar_system(), np.zeros(2), np.ones(1))


def test_scan_hand_unrolled():
    y = scan_lti(scalar_system(), [1.0, 0.0, 0.0])
    assert y.shape == (1, 3, 1)
    assert np.array_equal(y[0, :, 0], [1.0, 0.5, 0.25])
    assert not np.any(scan_lti(scalar_system(), np.zeros(5)))


def test_kernel_examples():
    assert np.array_equal(kernel(scalar_system(), 3)[:, 0, 0], [1.0, 0.5, 0.25])
    assert not np.any(kernel(scalar_system(c=0.0), 4))
    d = DiscreteSsm(np.eye(2), np.array([[1.0], [2.0]]), np.array([[1.0, 1.0]]), np.zeros((1, 1)), 1.0)
    assert np.array_equal(kernel(d, 4)[:, 0, 0], [3.0] * 4)
    with pytest.raises(DimensionError):
        kernel(d, 0)


def test_kernel_matches_definition():
    d = random_discrete(np.random.default_rng(1), 4)
    taps = kernel(d, 6)
    for i in range(6):
        assert np.allclose(taps[i], d.C @ np.linalg.matrix_power(d.Abar, i) @ d.Bbar, atol=1e-14)


def test_conv_examples():
    assert np.array_equal(conv_apply([1.0, 0.5, 0.25], [1.0, 0.0, 0.0], 0.0)[0, :, 0], [1.0, 0.5, 0.25])
    d = random_discrete(np.random.default_rng(2), 3)
    taps = kernel(d, 5)
    impulse = np.zeros(5)
    impulse[0] = 1.0
    y = conv_apply(taps, impulse, d.D)[0, :, 0]
    expect = taps[:, 0, 0].copy()
    expect[0] += d.D[0, 0]
    assert np.allclose(y, expect, atol=1e-15)
    with pytest.raises(DimensionError):
        conv_apply(taps, np.zeros(4), d.D)


@pytest.mark.parametrize("n", [2, 4, 8])
@pytest.mark.parametrize("delta", [0.05, 0.2])
def test_three_views_agree(n, delta):
    rng = np.random.default_rng(n * 10 + int(delta * 100))
    for _ in range(10):
        d = random_discrete(rng, n, delta=delta)
        u = rng.normal(size=(2, 32, 1))
        assert np.max(np.abs(scan_lti(d, u) - conv_apply(kernel(d, 32), u, d.D))) <= 1e-6


def test_three_views_multi_io():
    rng = np.random.default_rng(5)
    d = random_discrete(rng, 4, m=2, p=3)
    u = rng.normal(size=(1, 16, 2))
    assert np.max(np.abs(scan_lti(d, u) - conv_apply(kernel(d, 16), u, d.D))) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    d = random_discrete(rng, 3)
    u1, u2 = rng.normal(size=(1, 20, 1)), rng.normal(size=(1, 20, 1))
    lhs = scan_lti(d, alpha * u1 + beta * u2)
    rhs = alpha * scan_lti(d, u1) + beta * scan_lti(d, u2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 19))
def test_causality(seed, t):
    rng = np.random.default_rng(seed)
    d = random_discrete(rng, 3)
    u = rng.normal(size=(1, 20, 1))
    v = u.copy()
    v[0, t] += 1.0
    assert np.array_equal(scan_lti(d, u)[:, :t], scan_lti(d, v)[:, :t])


def test_selective_constant_params_match_lti():
    rng = np.random.default_rng(3)
    d = random_discrete(rng, 4)
    L = 12
    u = rng.normal(size=(2, L, 1))
    y = scan_selective(np.repeat(d.Abar[None], L, 0), np.repeat(d.Bbar[None], L, 0), np.repeat(d.C[None], L, 0), d.D, u)
    assert np.max(np.abs(y - scan_lti(d, u))) <= 1e-12


def test_selective_diagonal_constant_matches_lti():
    a = np.array([-1.0, -2.0, -0.5])
    abar, phi = zoh_diag_coeffs(a, 0.1)
    b = np.array([[1.0], [0.5], [-1.0]])
    c = np.array([[1.0, 2.0, 3.0]])
    L = 10
    u = np.random.default_rng(0).normal(size=(1, L, 1))
    y = scan_selective(np.repeat(abar[None], L, 0), np.repeat((phi[:, None] * b)[None], L, 0), np.repeat(c[None], L, 0), 0.0, u)
    d = DiscreteSsm(np.diag(abar), phi[:, None] * b, c, np.zeros((1, 1)), 0.1)
    assert np.max(np.abs(y - scan_lti(d, u))) <= 1e-12


def test_selective_memoryless():
    rng = np.random.default_rng(4)
    L, n = 6, 3
    Bt, Ct = rng.normal(size=(L, n, 1)), rng.normal(size=(L, 1, n))
    u = rng.normal(size=(1, L, 1))
    y = scan_selective(np.zeros((L, n, n)), Bt, Ct, 0.5, u)
    expect = np.einsum("lpn,lnm,blm->blp", Ct, Bt, u) + 0.5 * u
    assert np.allclose(y, expect, atol=1e-14)


def test_selective_large_delta_resets_state():
    L = 5
    delta = np.array([0.1, 0.1, 20.0, 0.1, 0.1])
    abar, phi = zoh_diag_coeffs(np.array([-1.0]), delta[:, None])
    assert abar[2, 0] <= 1e-6
    u = np.array([5.0, -3.0, 1.0, 0.0, 0.0])
    Bt = phi[:, :, None]
    y = scan_selective(abar, Bt, np.ones((L, 1, 1)), 0.0, u)
    assert y[0, 2, 0] == pytest.approx(Bt[2, 0, 0] * u[2], abs=1e-6)


def test_selective_length_mismatch():
    with pytest.raises(DimensionError):
        scan_selective(np.zeros((4, 2, 2)), np.zeros((5, 2, 1)), np.zeros((5, 1, 2)), 0.0, np.zeros(5))


def test_state_bounded_long_sequence():
    rng = np.random.default_rng(6)
    A = -np.eye(4) + 0.3 * rng.normal(size=(4, 4))
    d = zoh(StateSpace(A, np.ones((4, 1)), np.ones((1, 4)), [[0.0]]), 0.1)
    y = scan_lti(d, rng.uniform(-1, 1, size=(1, 10_000, 1)))
    assert np.all(np.isfinite(y)) and np.max(np.abs(y)) < 1e3
