"""Byte-level language model built from S-Mamba blocks.

Parameters live in one ordered ``dict[str, ndarray]``; the order of that
dict is the census order used by checkpoints. Forward passes run on a
:class:`~smamba.autodiff.GradTape` so the same code serves training and
evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import Config
from .errors import DimensionError, InputError
from .ssm import hippo_init

VOCAB = 256

ROLES = {
    "embed": "embedding",
    "norm": "norm",
    "final_norm": "norm",
    "in_proj": "projection",
    "out_proj": "projection",
    "conv_w": "conv",
    "conv_b": "conv",
    "delta_w": "delta_proj",
    "delta_b": "delta_proj",
    "a_log": "a_part",
    "a": "a_part",
    "b_proj": "bc_proj",
    "c_proj": "bc_proj",
    "b": "bc_coeff",
    "d_skip": "d_skip",
}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    role: str
    layer: int | None

    @property
    def count(self) -> int:
        return int(np.prod(self.shape))


def param_specs(cfg: Config) -> list[ParamSpec]:
    """Names, shapes and roles of every tensor, in census order."""
    d, di, n, G = cfg.d_model, cfg.inner, cfg.n_state, cfg.groups
    specs = [ParamSpec("embed", (VOCAB, d), "embedding", None)]
    for i in range(cfg.n_layers):
        shapes = [("norm", (d,)), ("in_proj", (d, 2 * di))]
        if cfg.conv_width:
            shapes += [("conv_w", (di, cfg.conv_width)), ("conv_b", (di,))]
        shapes += [("delta_w", (di, di)), ("delta_b", (di,))]
        if cfg.core == "vanilla":
            shapes += [("a_log", (di, n)), ("b_proj", (di, n)), ("c_proj", (di, n))]
        elif cfg.core in ("diag", "diag_stable"):
            shapes += [("a", (G, n)), ("b_proj", (di, n)), ("c_proj", (di, n))]
        elif cfg.core == "ccf":
            shapes += [("a", (G, n)), ("b", (G, n))]
        else:  # ocf: numerator enters through the per-channel input column
            shapes += [("a", (G, n)), ("b", (di, n))]
        shapes += [("d_skip", (di,)), ("out_proj", (di, d))]
        specs += [ParamSpec(f"layers.{i}.{k}", s, ROLES[k], i) for k, s in shapes]
    specs.append(ParamSpec("final_norm", (d,), "norm", None))
    return specs


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


def init_params(cfg: Config, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d, di, n, G = cfg.d_model, cfg.inner, cfg.n_state, cfg.groups
    params: dict[str, np.ndarray] = {}
    for spec in param_specs(cfg):
        key = spec.name.rsplit(".", 1)[-1]
        shape = spec.shape
        if key == "embed":
            v = rng.normal(0.0, 0.05, shape)
        elif key in ("norm", "final_norm"):
            v = np.ones(shape)
        elif key == "in_proj":
            v = rng.normal(0.0, d**-0.5, shape)
        elif key == "conv_w":
            v = rng.normal(0.0, cfg.conv_width**-0.5, shape)
        elif key == "conv_b":
            v = np.zeros(shape)
        elif key == "delta_w":
            v = rng.normal(0.0, 0.1 * di**-0.5, shape)
        elif key == "delta_b":
            dt = np.exp(rng.uniform(np.log(cfg.dt_min), np.log(cfg.dt_max), shape))
            v = _inv_softplus(dt)
        elif key == "a_log":
            # diagonal of the HiPPO matrix, one copy per channel
            v = np.tile(np.log(-np.diag(hippo_init(n))), (di, 1))
        elif key == "a":
            lo, hi = (0.5, 1.5) if cfg.core in ("ccf", "ocf") else (1.0, 16.0)
            v = rng.uniform(lo, hi, shape)
        elif key in ("b_proj", "c_proj"):
            v = rng.normal(0.0, di**-0.5, shape)
        elif key == "b":
            v = rng.normal(0.0, n**-0.5, shape)
        elif key == "d_skip":
            v = np.zeros(shape) if cfg.core in ("ccf", "ocf") else np.ones(shape)
        elif key == "out_proj":
            v = rng.normal(0.0, (di * 2 * cfg.n_layers) ** -0.5, shape)
        else:  # pragma: no cover - every spec key is handled above
            raise KeyError(key)
        params[spec.name] = np.asarray(v, dtype=np.float64)
    return params


def _dense_template(n: int, core: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed entries of the augmented ``[[A, B], [0, 0]]`` matrix and where ``-a`` goes."""
    q = n + 1
    T = np.zeros((q, q))
    idx = np.arange(n - 1)
    if core == "ccf":
        T[idx, idx + 1] = 1.0
        T[n - 1, n] = 1.0  # B = e_n
        rows, cols = np.full(n, n - 1), np.arange(n)
    else:
        T[idx + 1, idx] = 1.0
        rows, cols = np.arange(n), np.full(n, n - 1)
    return T, rows, cols


class SMambaBlock:
    """One sequence-mixing layer; a view onto the owning model's parameters."""

    def __init__(self, cfg: Config, prefix: str):
        self.cfg = cfg
        self.prefix = prefix
        self.group_index = np.arange(cfg.inner) // cfg.share_group
        if cfg.core in ("ccf", "ocf"):
            self.template, self.a_rows, self.a_cols = _dense_template(cfg.n_state, cfg.core)

    def realized_a(self, p):
        """Realised continuous-time state matrix entries for diagonal cores, ``(C, n)``."""
        core = self.cfg.core
        if core == "vanilla":
            return ad.neg(ad.exp(p("a_log")))
        A = ad.neg(ad.gather(p("a"), self.group_index))
        return ad.clamp_negative(A) if core == "diag_stable" else A

    def augmented(self, p):
        """Per-channel ``[[A, B], [0, 0]]`` for canonical cores, ``(C, n+1, n+1)``."""
        n = self.cfg.n_state
        M = ad.place(self.template, ad.neg(p("a")), self.a_rows, self.a_cols)
        M = ad.gather(M, self.group_index)
        if self.cfg.core == "ocf":
            M = ad.place(M, p("b"), np.arange(n), np.full(n, n))
        return M

    def forward(self, p, x, trace: dict | None = None):
        """Map ``x`` ``(batch, L, d_model)`` to a same-shaped output.

        ``p(key)`` returns this block's parameter ``key`` as a tape variable.
        """
        cfg = self.cfg
        di, n = cfg.inner, cfg.n_state
        xv = ad._val(x)
        if xv.ndim != 3 or xv.shape[-1] != cfg.d_model:
            raise DimensionError(f"block input must be (batch, L, {cfg.d_model}), got {xv.shape}")
        uz = ad.linear(x, p("in_proj"))
        u = ad.getitem(uz, (Ellipsis, slice(0, di)))
        z = ad.getitem(uz, (Ellipsis, slice(di, 2 * di)))
        if cfg.conv_width:
            u = ad.silu(ad.causal_conv(u, p("conv_w"), p("conv_b")))
        delta = ad.softplus(ad.add(ad.linear(u, p("delta_w")), p("delta_b")))
        batch, L = xv.shape[:2]
        if cfg.core in ("ccf", "ocf"):
            M = self.augmented(p)
            if cfg.core == "ccf":
                c = ad.gather(p("b"), self.group_index)
            else:
                c = np.zeros((di, n))
                c[:, n - 1] = 1.0
            y = ad.scan_expm(delta, M, c, u, euler_b=cfg.euler_b)
            abar = bbar = M
        else:
            A = self.realized_a(p)
            abar = ad.zoh_diag_abar(delta, A)
            if cfg.euler_b:
                phi = ad.reshape(delta, (batch, L, di, 1))
            else:
                phi = ad.zoh_diag_phi(delta, A)
            b_t = ad.linear(u, p("b_proj"))
            c_t = ad.linear(u, p("c_proj"))
            bbar = ad.mul(phi, ad.reshape(b_t, (batch, L, 1, n)))
            y = ad.scan_diag(abar, bbar, c_t, u)
        y = ad.add(y, ad.mul(u, p("d_skip")))
        out = ad.linear(ad.mul(y, ad.silu(z)), p("out_proj"))
        if trace is not None:
            trace.update(u=u, z=z, delta=delta, abar=abar, bbar=bbar, y=y)
        return out


class LmModel:
    """Embedding, pre-norm residual stack of blocks, final norm, tied head."""

    def __init__(self, cfg: Config, params: dict[str, np.ndarray] | None = None, seed: int | None = None):
        self.cfg = cfg
        self.specs = param_specs(cfg)
        if params is None:
            params = init_params(cfg, cfg.seed if seed is None else seed)
        expected = [(s.name, s.shape) for s in self.specs]
        got = [(k, v.shape) for k, v in params.items()]
        if expected != got:
            raise DimensionError("parameter set does not match the configuration")
        self.params = params
        self.blocks = [SMambaBlock(cfg, f"layers.{i}.") for i in range(cfg.n_layers)]

    def leaves(self, tape: ad.GradTape) -> dict[str, ad.Var]:
        return {k: tape.param(v, k) for k, v in self.params.items()}

    def forward(self, tokens, tape: ad.GradTape | None = None, leaves=None, traces=None):
        """Logits ``(batch, L, 256)`` as a tape variable."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        if tokens.ndim != 2:
            raise InputError(f"tokens must be (batch, L), got shape {tokens.shape}")
        if not np.issubdtype(tokens.dtype, np.integer) or tokens.size and (tokens.min() < 0 or tokens.max() >= VOCAB):
            raise InputError("token values must be integers in [0, 255]")
        tape = tape or ad.GradTape(record=False)
        P = leaves if leaves is not None else self.leaves(tape)
        x = ad.embed(P["embed"], tokens)
        for i, blk in enumerate(self.blocks):
            trace = {} if traces is not None else None
            h = blk.forward(lambda k, pre=blk.prefix: P[pre + k], ad.rmsnorm(x, P[blk.prefix + "norm"]), trace)
            x = ad.add(x, h)
            if traces is not None:
                traces.append(trace)
        x = ad.rmsnorm(x, P["final_norm"])
        return ad.linear(x, ad.transpose(P["embed"]))

    def loss(self, tokens, targets, tape: ad.GradTape | None = None):
        return ad.cross_entropy(self.forward(tokens, tape), targets)


def lm_forward(model: LmModel, tokens) -> np.ndarray:
    return model.forward(tokens).value


@dataclass(frozen=True)
class Census:
    rows: tuple  # (name, shape, count, role, layer)
    total: int

    def by_role(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for _, _, count, role, _ in self.rows:
            out[role] = out.get(role, 0) + count
        return out

    def by_layer(self) -> dict:
        out: dict = {}
        for _, _, count, _, layer in self.rows:
            out[layer] = out.get(layer, 0) + count
        return out

    def a_part(self, layer: int) -> int:
        return sum(c for _, _, c, role, lyr in self.rows if role == "a_part" and lyr == layer)


def param_census(model_or_cfg) -> Census:
    """Exact per-tensor parameter counts; depends on structure only."""
    cfg = model_or_cfg.cfg if isinstance(model_or_cfg, LmModel) else model_or_cfg
    rows = tuple((s.name, s.shape, s.count, s.role, s.layer) for s in param_specs(cfg))
    return Census(rows, sum(r[2] for r in rows))


def a_part_per_group(cfg: Config) -> int:
    """Free state-matrix parameters per head group (``n`` for shared cores)."""
    census = param_census(cfg)
    per_layer = census.a_part(0)
    return per_layer // cfg.groups if cfg.core != "vanilla" else per_layer // cfg.inner * cfg.share_group
