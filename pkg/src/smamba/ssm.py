"""State-space parameterisations and their control-theoretic checks.

Coefficient vectors follow ascending order throughout: ``a[i]`` multiplies
``s**i`` in the denominator ``s**n + a[n-1] s**(n-1) + ... + a[0]`` and
``b[i]`` multiplies ``s**i`` in the numerator. The companion matrix therefore
carries ``[-a[0], ..., -a[n-1]]`` in its last row and ``char_poly`` of it
returns ``a`` back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import (
    DimensionError,
    NotControllableError,
    NotObservableError,
    ParseError,
    UnsupportedError,
)
from .numerics import Polynomial

CLAMP_VALUE = -1e-5
HURWITZ_MARGIN = 1e-12


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Continuous-time system ``x' = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = numerics.as_matrix(self.A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        B = numerics.as_matrix(np.reshape(self.B, (n, -1)) if np.ndim(self.B) < 2 else self.B)
        C = numerics.as_matrix(np.reshape(self.C, (-1, n)) if np.ndim(self.C) < 2 else self.C)
        m, p = B.shape[1], C.shape[0]
        D = numerics.as_matrix(np.reshape(self.D, (p, m)) if np.ndim(self.D) < 2 else self.D)
        if B.shape[0] != n or C.shape[1] != n or D.shape != (p, m):
            raise DimensionError(
                f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape} D{D.shape}"
            )
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def dual(self) -> "StateSpace":
        return StateSpace(self.A.T, self.C.T, self.B.T, self.D.T)

    def allclose(self, other: "StateSpace", atol: float = 0.0) -> bool:
        return all(
            x.shape == y.shape and np.max(np.abs(x - y), initial=0.0) <= atol
            for x, y in zip((self.A, self.B, self.C, self.D), (other.A, other.B, other.C, other.D))
        )


def _vec(values, what):
    arr = tuple(float(v) for v in np.ravel(values))
    if not arr:
        raise DimensionError(f"{what} must not be empty")
    return arr


@dataclass(frozen=True)
class CcfParam:
    """Controllable canonical form: denominator ``a``, numerator ``b``, skip ``d``."""

    a: tuple
    b: tuple
    d: float = 0.0
    tag = "ccf"

    def __post_init__(self):
        a = _vec(self.a, "a")
        b = _vec(self.b, "b")
        if len(b) != len(a):
            raise DimensionError(f"a has {len(a)} entries, b has {len(b)}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "d", float(self.d))

    @property
    def n(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class OcfParam(CcfParam):
    """Observable canonical form; same coefficients, transposed realisation."""

    tag = "ocf"


@dataclass(frozen=True)
class DiagParam:
    """Diagonal state matrix ``A = -diag(a)``."""

    a: tuple
    tag = "diag"

    def __post_init__(self):
        object.__setattr__(self, "a", _vec(self.a, "a"))

    @property
    def n(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class DiagStable(DiagParam):
    """Diagonal parameterisation whose realised entries pass through the clamp."""

    tag = "diag_stable"


@dataclass(frozen=True, eq=False)
class DenseHippo:
    """Dense ``n x n`` state matrix, HiPPO-initialised."""

    A: np.ndarray = field(repr=False)
    tag = "vanilla"

    def __post_init__(self):
        A = numerics.as_matrix(self.A)
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]


SsmParam = DenseHippo | CcfParam | OcfParam | DiagParam | DiagStable


def hippo_init(n: int) -> np.ndarray:
    """HiPPO-LegS state matrix of size ``n``."""
    if n < 1:
        raise DimensionError("state size must be at least 1")
    r = np.arange(n)[:, None]
    c = np.arange(n)[None, :]
    A = -np.sqrt((2.0 * r + 1.0) * (2.0 * c + 1.0))
    A = np.where(r > c, A, 0.0)
    A[np.diag_indices(n)] = -(np.arange(n) + 1.0)
    return A


def companion(a) -> np.ndarray:
    """Companion matrix with superdiagonal ones and last row ``-a``."""
    a = np.asarray(a, dtype=np.float64)
    n = a.size
    if n == 0:
        raise DimensionError("coefficient vector must not be empty")
    A = np.zeros((n, n))
    A[np.arange(n - 1), np.arange(1, n)] = 1.0
    A[n - 1, :] = -a
    return A


def realize_ccf(p: CcfParam) -> StateSpace:
    n = p.n
    B = np.zeros((n, 1))
    B[n - 1, 0] = 1.0
    return StateSpace(companion(p.a), B, np.array([p.b]), np.array([[p.d]]))


def realize_ocf(p: OcfParam) -> StateSpace:
    """Transpose dual of :func:`realize_ccf` built from the same coefficients."""
    ccf = realize_ccf(CcfParam(p.a, p.b, p.d))
    return StateSpace(ccf.A.T.copy(), ccf.C.T.copy(), ccf.B.T.copy(), ccf.D.copy())


def stabilize_diag(p: DiagParam) -> DiagParam:
    """Clamp realised diagonal entries ``-a_i >= 0`` to ``-1e-5``.

    Returns a new parameter of the same kind whose realisation is strictly
    negative on the diagonal.
    """
    realised = clamp_realized(-np.asarray(p.a))
    return type(p)(tuple(-realised))


def clamp_realized(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.where(values < 0.0, values, CLAMP_VALUE)


def realize_a(p: SsmParam) -> np.ndarray:
    """State matrix of any parameterisation (clamp applied for DiagStable)."""
    if isinstance(p, DenseHippo):
        return p.A.copy()
    if isinstance(p, OcfParam):
        return companion(p.a).T.copy()
    if isinstance(p, CcfParam):
        return companion(p.a)
    if isinstance(p, DiagStable):
        return np.diag(clamp_realized(-np.asarray(p.a)))
    if isinstance(p, DiagParam):
        return np.diag(-np.asarray(p.a))
    raise TypeError(f"unknown parameterisation {type(p).__name__}")


def free_parameter_count(p: SsmParam) -> int:
    """Number of free parameters in the state matrix."""
    if isinstance(p, DenseHippo):
        return p.n * p.n
    return p.n


def reachability_matrix(s: StateSpace) -> np.ndarray:
    """``[B, AB, ..., A^(n-1) B]`` as an ``n x (n m)`` matrix."""
    blocks = [s.B]
    for _ in range(s.n - 1):
        blocks.append(s.A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(s: StateSpace) -> np.ndarray:
    """``[C; CA; ...; C A^(n-1)]`` as an ``(n p) x n`` matrix."""
    blocks = [s.C]
    for _ in range(s.n - 1):
        blocks.append(blocks[-1] @ s.A)
    return np.vstack(blocks)


def char_poly(A) -> Polynomial:
    """Monic ``det(sI - A)`` by the Faddeev-LeVerrier recurrence."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A must be square, got {A.shape}")
    n = A.shape[0]
    coeffs = np.zeros(n)
    M = np.zeros((n, n))
    c_prev = 1.0
    for k in range(1, n + 1):
        M = A @ M + c_prev * np.eye(n)
        c_prev = -np.trace(A @ M) / k
        coeffs[n - k] = c_prev
    return Polynomial(coeffs)


def to_ccf(s: StateSpace) -> CcfParam:
    """Coefficients of the controllable canonical form similar to ``s``.

    Uses ``T = R R_c^-1`` where ``R`` and ``R_c`` are the reachability
    matrices of ``s`` and of the companion realisation, so that
    ``C_c = C T`` carries the numerator.
    """
    if s.m != 1 or s.p != 1:
        raise UnsupportedError(f"canonical conversion needs a single-input single-output system, got m={s.m}, p={s.p}")
    R = reachability_matrix(s)
    r = numerics.rank(R)
    if r < s.n:
        raise NotControllableError(f"reachability rank {r}/{s.n}", rank=r, n=s.n)
    a = np.array(char_poly(s.A).coeffs)
    Rc = reachability_matrix(realize_ccf(CcfParam(a, np.zeros(s.n))))
    T = numerics.solve(Rc.T, R.T).T
    b = (s.C @ T).ravel()
    return CcfParam(a, b, float(s.D[0, 0]))


def to_ocf(s: StateSpace) -> OcfParam:
    """Coefficients of the observable canonical form similar to ``s``."""
    if s.m != 1 or s.p != 1:
        raise UnsupportedError(f"canonical conversion needs a single-input single-output system, got m={s.m}, p={s.p}")
    try:
        p = to_ccf(s.dual())
    except NotControllableError as exc:
        raise NotObservableError(f"observability rank {exc.rank}/{exc.n}", rank=exc.rank, n=exc.n) from None
    return OcfParam(p.a, p.b, p.d)


def _is_triangular(A: np.ndarray) -> bool:
    return not np.any(np.triu(A, 1)) or not np.any(np.tril(A, -1))


def eigenvalues(A) -> list[complex]:
    """Eigenvalues as roots of the characteristic polynomial of ``A - mu I``.

    ``mu`` is the mean eigenvalue ``trace(A) / n``, added back afterwards.

    Triangular matrices (diagonal ones included) read them off the diagonal:
    exact, and immune to the spread Durand-Kerner shows on the repeated
    roots the clamp produces.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A must be square, got {A.shape}")
    if A.shape[0] == 0:
        return []
    if _is_triangular(A):
        return sorted((complex(v) for v in np.diag(A)), key=lambda c: (c.real, c.imag))
    # Centre the spectrum first: clustered eigenvalues far from the origin
    # (e.g. exp(delta A) near I) make the unshifted polynomial ill-conditioned.
    mu = float(np.trace(A)) / A.shape[0]
    roots = numerics.poly_roots(char_poly(A - mu * np.eye(A.shape[0])))
    return sorted((complex(z.real + mu, z.imag) for z in roots), key=lambda c: (c.real, c.imag))


def is_hurwitz(A) -> bool:
    """True when every eigenvalue has a strictly negative real part.

    Eigenvalues found iteratively must sit at or below ``-1e-12`` to absorb
    root-finder round-off; triangular matrices have exact eigenvalues on the
    diagonal, which only need to be negative.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 2 and A.shape[0] == A.shape[1] and _is_triangular(A):
        return bool(np.all(np.diag(A) < 0.0))
    return all(ev.real <= -HURWITZ_MARGIN for ev in eigenvalues(A))


def spectral_radius(A) -> float:
    return max((abs(ev) for ev in eigenvalues(A)), default=0.0)


# --- text format -------------------------------------------------------------

_BLOCKS = ("A", "B", "C", "D")


def format_state_space(s: StateSpace) -> str:
    """Serialise to the key-value / matrix-block text format."""
    lines = [f"n = {s.n}", f"m = {s.m}", f"p = {s.p}"]
    for name in _BLOCKS:
        lines.append("")
        lines.append(name)
        for row in getattr(s, name):
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_state_space(text: str) -> StateSpace:
    """Parse the text format written by :func:`format_state_space`.

    ``#`` starts a comment. The header holds ``n``, ``m``, ``p`` as
    ``key = value`` lines; four matrix blocks follow in the order A, B, C, D,
    separated by blank lines, each optionally preceded by its name on a line
    of its own.
    """
    header: dict[str, int] = {}
    blocks: list[list[tuple[int, list[float]]]] = []
    current: list[tuple[int, list[float]]] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            current = None
            continue
        if "=" in line or ":" in line:
            key, _, value = line.replace(":", "=", 1).partition("=")
            key = key.strip()
            if key not in ("n", "m", "p"):
                raise ParseError(f"unknown key {key!r}", lineno)
            if blocks:
                raise ParseError(f"header key {key!r} after matrix data", lineno)
            try:
                header[key] = int(value.strip())
            except ValueError:
                raise ParseError(f"{key} must be an integer, got {value.strip()!r}", lineno) from None
            continue
        if line in _BLOCKS:
            if len(blocks) >= 4 or line != _BLOCKS[len(blocks)]:
                raise ParseError(f"unexpected block label {line!r}", lineno)
            current = []
            blocks.append(current)
            continue
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError:
            raise ParseError(f"malformed matrix row {line!r}", lineno) from None
        if not all(np.isfinite(row)):
            raise ParseError("non-finite matrix entry", lineno)
        if current is None:
            current = []
            blocks.append(current)
        current.append((lineno, row))
    missing = [k for k in ("n", "m", "p") if k not in header]
    if missing:
        raise ParseError(f"missing header keys {missing}", len(text.splitlines()) or 1)
    if len(blocks) != 4:
        raise ParseError(f"expected 4 matrix blocks, found {len(blocks)}", len(text.splitlines()) or 1)
    n, m, p = header["n"], header["m"], header["p"]
    shapes = {"A": (n, n), "B": (n, m), "C": (p, n), "D": (p, m)}
    mats = {}
    for name, rows in zip(_BLOCKS, blocks):
        r, c = shapes[name]
        if len(rows) != r:
            at = rows[-1][0] if rows else 1
            raise ParseError(f"{name} needs {r} rows, got {len(rows)}", at)
        for lineno, row in rows:
            if len(row) != c:
                raise ParseError(f"{name} rows need {c} entries, got {len(row)}", lineno)
        mats[name] = np.array([row for _, row in rows], dtype=np.float64).reshape(r, c)
    return StateSpace(mats["A"], mats["B"], mats["C"], mats["D"])
