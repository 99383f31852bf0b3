"""Small dense linear algebra kernels.

Matrices are plain 2-D ``float64`` numpy arrays; numpy is used for storage and
elementwise arithmetic only. Factorisations, the matrix exponential, rank and
root finding are written out here so the canonical-form code does not lean on
LAPACK routines it is meant to be checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, NumericalFailure, SingularMatrixError

PIVOT_EPS = 1e-12

# Pade(13) numerator coefficients for exp (Higham 2005).
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)


def as_matrix(data, rows=None, cols=None) -> np.ndarray:
    """Return ``data`` as a finite 2-D float64 array.

    A flat sequence is reshaped to ``(rows, cols)`` when both are given.
    """
    m = np.array(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if m.size != rows * cols:
            raise DimensionError(f"expected {rows * cols} entries, got {m.size}")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise DimensionError(f"matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    return m


def _require_square(m: np.ndarray, what: str = "matrix") -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{what} must be square, got shape {m.shape}")


def norm1(m: np.ndarray) -> float:
    """Maximum absolute column sum."""
    if m.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(m), axis=0)))


def lu_factor(m: np.ndarray):
    """Partial-pivot LU of a square matrix.

    Returns ``(lu, perm)`` where ``lu`` packs unit-lower L below the diagonal
    and U on and above it, and ``perm`` is the row order applied to ``m``.
    Raises :class:`SingularMatrixError` when a pivot falls below 1e-12.
    """
    a = np.array(m, dtype=np.float64)
    _require_square(a)
    n = a.shape[0]
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) < PIVOT_EPS:
            raise SingularMatrixError(f"pivot {a[p, k]:.3e} in column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        a[k + 1 :, k] /= a[k, k]
        a[k + 1 :, k + 1 :] -= np.outer(a[k + 1 :, k], a[k, k + 1 :])
    return a, perm


def lu_solve(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = lu.shape[0]
    x = np.array(rhs, dtype=np.float64)[perm]
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1 :] @ x[i + 1 :]) / lu[i, i]
    return x


def solve(m, rhs) -> np.ndarray:
    """Solve ``m @ X = rhs`` by partial-pivot LU.

    ``rhs`` may be a vector or a matrix with ``m.shape[0]`` rows.
    """
    m = as_matrix(m)
    _require_square(m)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != m.shape[0]:
        raise DimensionError(f"rhs has {rhs.shape[0]} rows, matrix has {m.shape[0]}")
    lu, perm = lu_factor(m)
    return lu_solve(lu, perm, rhs)


def mat_exp(m) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Pade(13) approximant.

    The scaling exponent is chosen so that ``||m / 2**s||_1 <= 0.5``.
    """
    a = np.asarray(m, dtype=np.float64)
    _require_square(a)
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    n = a.shape[0]
    nrm = norm1(a)
    s = 0 if nrm <= 0.5 else int(math.ceil(math.log2(nrm / 0.5)))
    a = a / (2.0**s)
    b = _PADE13
    ident = np.eye(n)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
    r = solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    if not np.all(np.isfinite(r)):
        raise DomainError("matrix exponential overflowed")
    return r


def rank(m, tol=None) -> int:
    """Numerical rank by row reduction with partial pivoting.

    Pivots with magnitude ``<= tol`` count as zero. The default tolerance is
    ``1e-9`` times the largest row 2-norm.
    """
    a = np.array(m, dtype=np.float64)
    if a.size == 0:
        return 0
    if a.ndim != 2:
        raise DimensionError(f"matrix must be 2-D, got shape {a.shape}")
    if tol is None:
        tol = 1e-9 * float(np.max(np.linalg.norm(a, axis=1)))
    rows, cols = a.shape
    r = 0
    for c in range(cols):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[p, c]) <= tol:
            continue
        a[[r, p]] = a[[p, r]]
        a[r + 1 :, c:] -= np.outer(a[r + 1 :, c] / a[r, c], a[r, c:])
        r += 1
    return r


@dataclass(frozen=True)
class Polynomial:
    """Monic polynomial ``s**n + c[n-1] s**(n-1) + ... + c[0]``.

    ``coeffs[i]`` is the coefficient of ``s**i``; the leading 1 is implicit,
    so ``len(coeffs)`` is the degree.
    """

    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def degree(self) -> int:
        return len(self.coeffs)

    def __call__(self, z):
        acc = 1.0
        for c in reversed(self.coeffs):
            acc = acc * z + c
        return acc

    def full(self) -> np.ndarray:
        """Ascending coefficient array including the leading 1."""
        return np.array(self.coeffs + (1.0,))

    def __str__(self) -> str:
        n = self.degree
        terms = ["s^%d" % n if n > 1 else "s"]
        for i in range(n - 1, -1, -1):
            c = self.coeffs[i]
            if c == 0.0:
                continue
            mono = "" if i == 0 else ("s" if i == 1 else "s^%d" % i)
            mag = abs(c)
            coef = repr(mag) if (i == 0 or mag != 1.0) else ""
            sep = "*" if coef and mono else ""
            terms.append(("- " if c < 0 else "+ ") + coef + sep + mono)
        return " ".join(terms)


_EPS = 2.0**-52


def poly_roots(p: Polynomial, max_iter: int = 500, tol: float = 1e-12) -> list[complex]:
    """All roots of a monic polynomial by Durand-Kerner iteration.

    Iterates until the largest update falls below ``tol`` (relative to the
    root magnitude once it exceeds 1), or until every residual ``|p(z)|`` is
    within the rounding-error bound of evaluating ``p``. Roots come back
    sorted by ``(real, imag)``.
    """
    n = p.degree
    if n < 1:
        raise DomainError("polynomial degree must be at least 1")
    coeffs = p.coeffs
    if not all(math.isfinite(c) for c in coeffs):
        raise DomainError("polynomial has non-finite coefficients")
    radius = 1.0 + max(abs(c) for c in coeffs)
    seed = complex(0.4, 0.9)
    z = [radius * seed**k / abs(seed) ** k for k in range(n)]
    abs_coeffs = tuple(abs(c) for c in coeffs)
    for _ in range(max_iter):
        biggest = 0.0
        at_noise_floor = True
        for i in range(n):
            zi = z[i]
            denom = 1.0 + 0j
            for j in range(n):
                if j != i:
                    denom *= zi - z[j]
            if denom == 0:
                denom = complex(1e-300, 0.0)
            value = p(zi)
            # rounding-error bound of Horner evaluation at zi
            floor = 1.0
            for c in reversed(abs_coeffs):
                floor = floor * abs(zi) + c
            if abs(value) > 8 * n * _EPS * floor:
                at_noise_floor = False
            step = value / denom
            z[i] = zi - step
            biggest = max(biggest, abs(step) / max(1.0, abs(z[i])))
        # Clustered roots can keep updates above ``tol`` with pure rounding
        # noise; a residual at the evaluation noise floor also counts.
        if biggest < tol or at_noise_floor:
            # snap imaginary round-off so real roots print and sort as real
            z = [complex(c.real, 0.0) if abs(c.imag) <= tol * max(1.0, abs(c)) else c for c in z]
            return sorted(z, key=lambda c: (c.real, c.imag))
    raise NumericalFailure(
        f"Durand-Kerner did not converge in {max_iter} iterations",
        best=sorted(z, key=lambda c: (c.real, c.imag)),
    )
