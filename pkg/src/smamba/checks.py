"""Self-test suites run by ``smamba check``.

Each suite returns a list of :class:`SuiteResult` rows; a row passes when
its measured error is within its tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .config import Config
from .discretize import zoh, zoh_diag
from .gradcheck import GRADCHECK_CONFIG, gradcheck_suite
from .scan import conv_apply, kernel, scan_lti
from .ssm import (
    CcfParam,
    DiagStable,
    OcfParam,
    StateSpace,
    char_poly,
    is_hurwitz,
    observability_matrix,
    reachability_matrix,
    realize_a,
    realize_ccf,
    realize_ocf,
)

SUITES = ("grad", "views", "canonical")


@dataclass(frozen=True)
class SuiteResult:
    suite: str
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)

    def line(self) -> str:
        return f"{self.suite}\t{self.name}\t{self.error:.3e}\t{self.tol:.0e}\t{'ok' if self.passed else 'FAIL'}"


def grad_suite(seed: int, config: Config | None = None) -> list[SuiteResult]:
    report = gradcheck_suite(config or GRADCHECK_CONFIG, seed)
    rows = [SuiteResult("grad", f"{g.tag}/{g.group}", g.max_rel_err, report.tol) for g in report.groups]
    for tag, _, g, dl in report.clamp:
        rows.append(SuiteResult("grad", f"{tag}/clamped", max(g, dl), 0.0))
    return rows


def random_system(rng, n: int, m: int = 1, p: int = 1) -> StateSpace:
    """A random stable-ish system: shifted Gaussian ``A`` scaled by ``1/sqrt(n)``."""
    A = rng.normal(size=(n, n)) / np.sqrt(n) - 0.5 * np.eye(n)
    return StateSpace(A, rng.normal(size=(n, m)), rng.normal(size=(p, n)), rng.normal(size=(p, m)))


def views_suite(seed: int, draws: int = 100, L: int = 32) -> list[SuiteResult]:
    """Recurrent scan against causal convolution with the Krylov kernel."""
    rng = np.random.default_rng(seed)
    worst = worst_diag = 0.0
    for _ in range(draws):
        n = int(rng.integers(1, 9))
        s = random_system(rng, n)
        d = zoh(s, float(rng.uniform(0.01, 0.5)))
        u = rng.normal(size=(1, L, 1))
        worst = max(worst, float(np.max(np.abs(scan_lti(d, u) - conv_apply(kernel(d, L), u, d.D)))))
        a = rng.uniform(0.1, 3.0, n)
        b, c = rng.normal(size=n), rng.normal(size=(1, n))
        delta = float(rng.uniform(0.01, 0.5))
        fast = zoh_diag(-a, b, delta, C=c)
        slow = zoh(StateSpace(-np.diag(a), b[:, None], c, np.zeros((1, 1))), delta)
        worst_diag = max(worst_diag, float(np.max(np.abs(scan_lti(fast, u) - scan_lti(slow, u)))))
    return [SuiteResult("views", "scan_vs_conv", worst, 1e-6), SuiteResult("views", "diag_vs_dense", worst_diag, 1e-10)]


def canonical_suite(seed: int, draws: int = 100) -> list[SuiteResult]:
    """Rank guarantees, transpose duality, companion identity, clamp stability."""
    rng = np.random.default_rng(seed)
    rank_def = dual_err = poly_err = 0.0
    for n in (2, 4, 8):
        for _ in range(draws):
            a, b = rng.normal(size=n), rng.normal(size=n)
            if numerics.rank(reachability_matrix(realize_ccf(CcfParam(a, b)))) != n:
                rank_def += 1
            if numerics.rank(observability_matrix(realize_ocf(OcfParam(a, b)))) != n:
                rank_def += 1
    for _ in range(draws):
        n = int(rng.integers(2, 9))
        a, b = rng.normal(size=n), rng.normal(size=n)
        sc, so = realize_ccf(CcfParam(a, b)), realize_ocf(OcfParam(a, b))
        if not (np.array_equal(so.A, sc.A.T) and np.array_equal(so.B, sc.C.T) and np.array_equal(so.C, sc.B.T)):
            dual_err += 1
        poly_err = max(poly_err, float(np.max(np.abs(np.array(char_poly(sc.A).coeffs) - a))))
    unstable = 0
    for _ in range(10 * draws):
        n = int(rng.integers(1, 9))
        if not is_hurwitz(realize_a(DiagStable(rng.uniform(-3, 3, n)))):
            unstable += 1
    return [
        SuiteResult("canonical", "rank_deficient_draws", rank_def, 0.0),
        SuiteResult("canonical", "transpose_mismatches", dual_err, 0.0),
        SuiteResult("canonical", "char_poly", poly_err, 1e-9),
        SuiteResult("canonical", "clamp_not_hurwitz", unstable, 0.0),
    ]


def run_suites(names, seed: int) -> list[SuiteResult]:
    rows: list[SuiteResult] = []
    for name in names:
        if name == "grad":
            rows += grad_suite(seed)
        elif name == "views":
            rows += views_suite(seed)
        elif name == "canonical":
            rows += canonical_suite(seed)
        else:
            raise ValueError(f"unknown suite {name!r}")
    return rows
