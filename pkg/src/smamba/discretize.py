"""Zero-order-hold discretisation of continuous state-space systems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import DomainError, SingularMatrixError
from .ssm import StateSpace

SMALL_A = 1e-8


@dataclass(frozen=True, eq=False)
class DiscreteSsm:
    """Discrete system ``h' = Abar h + Bbar u``, ``y = C h' + D u``.

    ``Abar`` is an ``n x n`` matrix, or a length-``n`` vector when
    ``diagonal`` is set.
    """

    Abar: np.ndarray
    Bbar: np.ndarray
    C: np.ndarray
    D: np.ndarray
    delta: float
    diagonal: bool = False

    @property
    def n(self) -> int:
        return self.Bbar.shape[0]

    @property
    def m(self) -> int:
        return self.Bbar.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def abar_matrix(self) -> np.ndarray:
        return np.diag(self.Abar) if self.diagonal else self.Abar


def _check_delta(delta) -> None:
    if not np.all(np.asarray(delta) > 0.0):
        raise DomainError("step size delta must be positive")


def phi_series(X: np.ndarray, rel_tol: float = 1e-16, max_terms: int = 200) -> np.ndarray:
    """``sum_k X**k / (k+1)!``, equal to ``X^-1 (e^X - I)`` where that exists."""
    n = X.shape[0]
    term = np.eye(n)
    total = term.copy()
    for k in range(1, max_terms):
        term = term @ X / (k + 1)
        total = total + term
        if np.max(np.abs(term)) <= rel_tol * np.max(np.abs(total)):
            break
    return total


def zoh(s: StateSpace, delta: float, euler_b: bool = False) -> DiscreteSsm:
    """Zero-order hold at step ``delta``.

    ``Abar = e^(delta A)`` and ``Bbar = (delta A)^-1 (e^(delta A) - I) delta B``.
    ``Bbar`` is read off the exponential of the augmented matrix
    ``[[delta A, delta B], [0, 0]]``, which equals that expression when
    ``delta A`` is invertible, stays defined when it is singular, and avoids
    the cancellation in ``e^(delta A) - I`` for small eigenvalues.
    ``euler_b`` swaps in ``Bbar = delta B``.
    """
    _check_delta(delta)
    delta = float(delta)
    n, m = s.n, s.m
    Abar = numerics.mat_exp(delta * s.A)
    if euler_b:
        Bbar = delta * s.B
    else:
        aug = np.zeros((n + m, n + m))
        aug[:n, :n] = delta * s.A
        aug[:n, n:] = delta * s.B
        Bbar = numerics.mat_exp(aug)[:n, n:]
    return DiscreteSsm(Abar, Bbar, s.C.copy(), s.D.copy(), delta)


def zoh_solve(s: StateSpace, delta: float) -> np.ndarray:
    """``Bbar`` by the direct formula: LU solve, series when ``delta A`` is singular."""
    _check_delta(delta)
    X = float(delta) * s.A
    try:
        return numerics.solve(X, numerics.mat_exp(X) - np.eye(s.n)) @ (delta * s.B)
    except SingularMatrixError:
        return phi_series(X) @ (delta * s.B)


def zoh_diag_coeffs(a, delta):
    """Elementwise ZOH factors for a diagonal state matrix.

    Returns ``(abar, phi)`` with ``abar = exp(delta a)`` and
    ``phi = (exp(delta a) - 1) / a`` so that ``Bbar = phi * B``. Entries with
    ``|a| < 1e-8`` use ``delta (1 + delta a / 2)`` for ``phi``. ``delta`` and
    ``a`` broadcast against each other.
    """
    a = np.asarray(a, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    _check_delta(delta)
    x = delta * a
    abar = np.exp(x)
    small = np.abs(a) < SMALL_A
    safe_a = np.where(small, 1.0, a)
    phi = np.where(small, delta * (1.0 + 0.5 * x), np.expm1(x) / safe_a)
    return abar, phi


def zoh_diag(a, b, delta: float, C=None, D=None, euler_b: bool = False) -> DiscreteSsm:
    """ZOH for ``A = diag(a)`` (``a`` holds the realised diagonal)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).reshape(a.size, -1)
    abar, phi = zoh_diag_coeffs(a, delta)
    Bbar = float(delta) * b if euler_b else phi[:, None] * b
    C = np.zeros((1, a.size)) if C is None else np.asarray(C, dtype=np.float64).reshape(-1, a.size)
    D = np.zeros((C.shape[0], b.shape[1])) if D is None else np.asarray(D, dtype=np.float64).reshape(C.shape[0], b.shape[1])
    return DiscreteSsm(abar, Bbar, C, D, float(delta), diagonal=True)
