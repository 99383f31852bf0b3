import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smamba.discretize import zoh
from smamba.errors import (
    DimensionError,
    NotControllableError,
    NotObservableError,
    ParseError,
    UnsupportedError,
)
from smamba.numerics import rank
from smamba.scan import kernel
from smamba.ssm import (
    CLAMP_VALUE,
    CcfParam,
    DenseHippo,
    DiagParam,
    DiagStable,
    OcfParam,
    StateSpace,
    char_poly,
    clamp_realized,
    companion,
    eigenvalues,
    format_state_space,
    free_parameter_count,
    hippo_init,
    is_hurwitz,
    observability_matrix,
    parse_state_space,
    reachability_matrix,
    realize_a,
    realize_ccf,
    realize_ocf,
    spectral_radius,
    stabilize_diag,
    to_ccf,
    to_ocf,
)

coeff_vectors = st.integers(1, 8).flatmap(lambda n: st.lists(st.floats(-2, 2), min_size=n, max_size=n))


def det2(M):
    return M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]


# --- hippo -----------------------------------------------------------------------


def test_hippo_small_cases():
    assert np.array_equal(hippo_init(1), [[-1.0]])
    assert np.allclose(hippo_init(2), [[-1.0, 0.0], [-math.sqrt(3), -2.0]], atol=1e-15)
    assert np.allclose(hippo_init(3)[2], [-math.sqrt(5), -math.sqrt(15), -3.0], atol=1e-15)


def test_hippo_lower_triangular():
    H = hippo_init(6)
    assert not np.any(np.triu(H, 1))
    assert np.array_equal(np.diag(H), -np.arange(1.0, 7.0))


def test_hippo_rejects_zero():
    with pytest.raises(DimensionError):
        hippo_init(0)


# --- realisations ------------------------------------------------------------------


def test_ccf_example():
    s = realize_ccf(CcfParam([2, 3], [1, 0]))
    assert np.array_equal(s.A, [[0, 1], [-2, -3]])
    assert np.array_equal(s.B, [[0], [1]])
    assert np.array_equal(s.C, [[1, 0]])
    assert np.array_equal(s.D, [[0]])
    # determinant oracle: det(sI - A) at s = 0.7
    z = 0.7
    assert char_poly(s.A)(z) == pytest.approx(det2(z * np.eye(2) - s.A), abs=1e-14)


def test_ccf_integrator():
    s = realize_ccf(CcfParam([0], [1]))
    assert np.array_equal(s.A, [[0]]) and np.array_equal(s.B, [[1]]) and np.array_equal(s.C, [[1]])


def test_ocf_examples():
    s = realize_ocf(OcfParam([2, 3], [1, 0]))
    assert np.array_equal(s.A, [[0, -2], [1, -3]])
    assert np.array_equal(s.B, [[1], [0]])
    assert np.array_equal(s.C, [[0, 1]])
    s1 = realize_ocf(OcfParam([5], [2]))
    assert np.array_equal(s1.A, [[-5]]) and np.array_equal(s1.B, [[2]]) and np.array_equal(s1.C, [[1]])


def test_empty_coefficients_rejected():
    with pytest.raises(DimensionError):
        CcfParam([], [])
    with pytest.raises(DimensionError):
        CcfParam([1, 2], [1])


@settings(max_examples=100, deadline=None)
@given(coeff_vectors, st.floats(-1, 1))
def test_transpose_duality_bit_exact(a, d):
    b = list(reversed(a))
    c, o = realize_ccf(CcfParam(a, b, d)), realize_ocf(OcfParam(a, b, d))
    assert np.array_equal(o.A, c.A.T)
    assert np.array_equal(o.B, c.C.T)
    assert np.array_equal(o.C, c.B.T)
    assert np.array_equal(o.D, c.D)


@settings(max_examples=100, deadline=None)
@given(coeff_vectors)
def test_canonical_forms_full_rank(a):
    n = len(a)
    b = np.ones(n)
    assert rank(reachability_matrix(realize_ccf(CcfParam(a, b)))) == n
    assert rank(observability_matrix(realize_ocf(OcfParam(a, b)))) == n


@settings(max_examples=100, deadline=None)
@given(coeff_vectors)
def test_companion_char_poly_identity(a):
    assert np.max(np.abs(np.array(char_poly(companion(a)).coeffs) - a)) <= 1e-9


# --- rank matrices ----------------------------------------------------------------


def test_reachability_examples():
    R = reachability_matrix(realize_ccf(CcfParam([2, 3], [1, 0])))
    assert np.array_equal(R, [[0, 1], [1, -3]])
    s0 = StateSpace(np.zeros((2, 2)), [[1], [0]], [[1, 0]], [[0]])
    assert np.array_equal(reachability_matrix(s0), [[1, 0], [0, 0]]) and rank(reachability_matrix(s0)) == 1
    s1 = StateSpace(np.eye(2), [[1], [1]], [[1, 0]], [[0]])
    assert np.array_equal(reachability_matrix(s1), [[1, 1], [1, 1]]) and rank(reachability_matrix(s1)) == 1


def test_observability_examples():
    assert rank(observability_matrix(realize_ocf(OcfParam([2, 3], [1, 0])))) == 2
    s0 = StateSpace(np.eye(2), [[1], [1]], [[0, 0]], [[0]])
    assert not np.any(observability_matrix(s0)) and rank(observability_matrix(s0)) == 0
    s1 = StateSpace(np.eye(2), [[1], [1]], [[1, 0]], [[0]])
    assert rank(observability_matrix(s1)) == 1


def test_state_space_shape_errors():
    with pytest.raises(DimensionError):
        StateSpace(np.zeros((2, 3)), [[1], [0]], [[1, 0]], [[0]])
    with pytest.raises(DimensionError):
        StateSpace(np.eye(2), [[1], [0], [0]], [[1, 0]], [[0]])


# --- char poly / eigenvalues --------------------------------------------------------


def test_char_poly_examples():
    assert char_poly([[0, 1], [-2, -3]]).coeffs == pytest.approx((2.0, 3.0))
    assert char_poly(np.diag([-1.0, -2.0])).coeffs == pytest.approx((2.0, 3.0))
    assert char_poly(np.zeros((3, 3))).coeffs == (0.0, 0.0, 0.0)


def test_hurwitz_examples():
    assert is_hurwitz(np.diag([-1.0, -5.0]))
    assert is_hurwitz([[0, 1], [-2, -3]])
    assert not is_hurwitz([[0, 1], [0, 0]])
    assert not is_hurwitz(np.diag([-1.0, 0.5]))
    assert eigenvalues([[0, 1], [-2, -3]]) == pytest.approx([-2.0, -1.0], abs=1e-12)
    assert spectral_radius(np.diag([0.5, -0.9])) == pytest.approx(0.9)


# --- clamp ---------------------------------------------------------------------------


def test_clamp_examples():
    assert np.array_equal(clamp_realized([-2.0, -0.1]), [-2.0, -0.1])
    assert np.array_equal(clamp_realized([0.0, 3.7]), [CLAMP_VALUE, CLAMP_VALUE])
    p = stabilize_diag(DiagStable([2.0, 0.1, 0.0, -3.7]))
    assert isinstance(p, DiagStable)
    assert np.array_equal(np.diag(realize_a(p)), [-2.0, -0.1, -1e-5, -1e-5])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_clamp_always_hurwitz(a):
    assert is_hurwitz(realize_a(DiagStable(a)))
    assert is_hurwitz(realize_a(stabilize_diag(DiagParam(a))))


def test_free_parameter_counts():
    n = 5
    assert free_parameter_count(CcfParam(np.ones(n), np.ones(n))) == n
    assert free_parameter_count(OcfParam(np.ones(n), np.ones(n))) == n
    assert free_parameter_count(DiagParam(np.ones(n))) == n
    assert free_parameter_count(DiagStable(np.ones(n))) == n
    assert free_parameter_count(DenseHippo(hippo_init(n))) == n * n
    assert np.array_equal(realize_a(DiagParam([1.0, 2.0])), np.diag([-1.0, -2.0]))
    assert np.array_equal(realize_a(OcfParam([2, 3], [0, 0])), companion([2, 3]).T)


# --- conversions ----------------------------------------------------------------------


def random_controllable(rng, n):
    A = rng.normal(size=(n, n)) / math.sqrt(n) - 0.5 * np.eye(n)
    return StateSpace(A, rng.normal(size=(n, 1)), rng.normal(size=(1, n)), rng.normal(size=(1, 1)))


def test_to_ccf_identity_on_canonical():
    p = CcfParam([2.0, 3.0, 0.5], [1.0, -1.0, 0.25], 0.3)
    q = to_ccf(realize_ccf(p))
    assert np.allclose(q.a, p.a, atol=1e-12) and np.allclose(q.b, p.b, atol=1e-12) and q.d == p.d


@pytest.mark.parametrize("seed", range(20))
def test_to_ccf_preserves_kernel(seed):
    s = random_controllable(np.random.default_rng(seed), 3)
    c = realize_ccf(to_ccf(s))
    for L in (8, 16):
        assert np.max(np.abs(kernel(zoh(s, 0.1), L) - kernel(zoh(c, 0.1), L))) <= 1e-7


@pytest.mark.parametrize("seed", range(10))
def test_to_ocf_preserves_kernel(seed):
    s = random_controllable(np.random.default_rng(100 + seed), 4)
    o = realize_ocf(to_ocf(s))
    assert np.max(np.abs(kernel(zoh(s, 0.1), 16) - kernel(zoh(o, 0.1), 16))) <= 1e-7


def test_conversion_errors():
    s = StateSpace(-np.eye(2), np.zeros((2, 1)), [[1.0, 0.0]], [[0.0]])
    with pytest.raises(NotControllableError) as info:
        to_ccf(s)
    assert info.value.rank == 0 and info.value.n == 2
    with pytest.raises(NotObservableError):
        to_ocf(StateSpace(-np.eye(2), [[1.0], [1.0]], [[0.0, 0.0]], [[0.0]]))
    with pytest.raises(UnsupportedError):
        to_ccf(StateSpace(-np.eye(2), np.eye(2), [[1.0, 0.0]], [[0.0, 0.0]]))


# --- text format ------------------------------------------------------------------------


def test_format_parse_round_trip():
    s = random_controllable(np.random.default_rng(3), 3)
    t = parse_state_space(format_state_space(s))
    assert t.allclose(s, atol=0.0)


def test_parse_accepts_comments_and_colons():
    text = "# a system\nn: 2\nm: 1\np: 1\n\nA\n0 1  # companion\n-2 -3\n\nB\n0\n1\n\nC\n1 0\n\nD\n0\n"
    s = parse_state_space(text)
    assert np.array_equal(s.A, [[0, 1], [-2, -3]])


def test_parse_error_reports_line():
    text = "n = 2\nm = 1\np = 1\n\nA\n0 1\n-2 x\n\nB\n0\n1\n\nC\n1 0\n\nD\n0\n"
    with pytest.raises(ParseError) as info:
        parse_state_space(text)
    assert info.value.line == 7
    assert "parse error at line 7" in str(info.value)


def test_parse_error_wrong_row_length():
    text = "n = 2\nm = 1\np = 1\n\nA\n0 1 5\n-2 -3\n\nB\n0\n1\n\nC\n1 0\n\nD\n0\n"
    with pytest.raises(ParseError) as info:
        parse_state_space(text)
    assert info.value.line == 6
