"""Finite-difference gradient checks of the full language model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import CORE_TAGS, Config
from .model import LmModel, init_params, param_specs

GROUPS = {
    "embedding": "embeddings",
    "delta_proj": "delta_proj",
    "a_part": "a_params",
    "bc_proj": "bc",
    "bc_coeff": "bc",
    "d_skip": "d_skip",
    "norm": "norms",
    "projection": "projections",
    "conv": "conv",
}

GRADCHECK_CONFIG = Config(
    d_model=16, n_layers=2, d_inner=32, n_state=4, share_group=8, seq_len=8, batch=2, dt_min=0.05, dt_max=0.5
)


@dataclass(frozen=True)
class GroupResult:
    tag: str
    group: str
    checked: int
    max_rel_err: float


@dataclass
class GradcheckReport:
    tol: float
    groups: list = field(default_factory=list)
    clamp: list = field(default_factory=list)  # (tag, entries, max |grad|, max |loss change|)

    @property
    def failures(self) -> list[str]:
        bad = [f"{g.tag}/{g.group}" for g in self.groups if not g.max_rel_err <= self.tol]
        bad += [f"{tag}/clamp" for tag, _, g, dl in self.clamp if g != 0.0 or dl != 0.0]
        return bad

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_rel_err(self) -> float:
        return max((g.max_rel_err for g in self.groups), default=0.0)

    def lines(self) -> list[str]:
        out = [f"{g.tag}\t{g.group}\t{g.checked}\t{g.max_rel_err:.3e}" for g in self.groups]
        out += [f"{tag}\tclamped\t{k}\tgrad={g!r} dloss={dl!r}" for tag, k, g, dl in self.clamp]
        return out


def rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _loss(model: LmModel, x, y) -> float:
    return float(ad.cross_entropy(model.forward(x), y).value)


def _clamp_entries(cfg: Config, params: dict, rng) -> list[tuple[str, tuple]]:
    """Push a few ``a`` entries to the wrong sign so the clamp engages."""
    name = "layers.0.a"
    G, n = params[name].shape
    picks = [(int(g), int(j)) for g, j in zip(rng.integers(0, G, 3), rng.integers(0, n, 3))]
    for g, j in picks:
        params[name][g, j] = -rng.uniform(0.2, 1.0)  # realised A = -a > 0
    return [(name, p) for p in dict.fromkeys(picks)]


def check_model(cfg: Config, seed: int = 0, samples: int = 200, h: float = 1e-5, tol: float = 1e-4, report=None):
    """Gradcheck one configuration; appends to (and returns) ``report``."""
    report = report or GradcheckReport(tol)
    rng = np.random.default_rng((seed, CORE_TAGS.index(cfg.core)))
    params = init_params(cfg, seed)
    clamped = _clamp_entries(cfg, params, rng) if cfg.core == "diag_stable" else []
    model = LmModel(cfg, params)
    data = rng.integers(0, 256, size=(cfg.batch, cfg.seq_len + 1))
    x, y = data[:, :-1], data[:, 1:]

    tape = ad.GradTape()
    loss = ad.cross_entropy(model.forward(x, tape), y)
    grads = tape.backward(loss)

    by_group: dict[str, list] = {}
    for spec in param_specs(cfg):
        by_group.setdefault(GROUPS[spec.role], []).append(spec)
    quota = -(-samples // len(by_group))
    for group, specs in by_group.items():
        coords = [(s.name, idx) for s in specs for idx in np.ndindex(*s.shape)]
        chosen = rng.choice(len(coords), size=min(quota, len(coords)), replace=False)
        worst = 0.0
        for k in sorted(chosen):
            name, idx = coords[k]
            p = params[name]
            orig = p[idx]
            p[idx] = orig + h
            up = _loss(model, x, y)
            p[idx] = orig - h
            down = _loss(model, x, y)
            p[idx] = orig
            worst = max(worst, rel_err(float(grads[name][idx]), (up - down) / (2 * h)))
        report.groups.append(GroupResult(cfg.core, group, len(chosen), worst))

    if clamped:
        base = _loss(model, x, y)
        gmax = dmax = 0.0
        for name, idx in clamped:
            gmax = max(gmax, abs(float(grads[name][idx])))
            orig = params[name][idx]
            for step in (1e-6, -1e-6):
                params[name][idx] = orig + step
                dmax = max(dmax, abs(_loss(model, x, y) - base))
            params[name][idx] = orig
        report.clamp.append((cfg.core, len(clamped), gmax, dmax))
    return report


def gradcheck_suite(config: Config | None = None, seed: int = 0, tags=CORE_TAGS, samples: int = 200, h: float = 1e-5, tol: float = 1e-4) -> GradcheckReport:
    """Run :func:`check_model` for every core tag on a small model.

    ``config`` supplies everything except the core tag; the default is
    ``d_model=16, n=4, L=8``.
    """
    base = config or GRADCHECK_CONFIG
    report = GradcheckReport(tol)
    for tag in tags:
        check_model(base.replace(core=tag), seed, samples, h, tol, report)
    return report
