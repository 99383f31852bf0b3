"""Corpus handling, Adam, evaluation and the training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .config import Config
from .errors import InputError, TrainingDivergence
from .model import LmModel, init_params

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.tsv"
CHECKPOINT_FILE = "checkpoint.smb"
METRICS_HEADER = "step\tsplit\tnll\tppl\telapsed_ms"


@dataclass(frozen=True)
class Corpus:
    """A byte string with a train/validation boundary at ``split``."""

    data: np.ndarray
    split: float = 0.9

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.uint8).reshape(-1)
        object.__setattr__(self, "data", data)
        if data.size == 0:
            raise InputError("corpus is empty")
        if not 0.0 < self.split < 1.0:
            raise InputError(f"split must lie in (0, 1), got {self.split}")
        if self.boundary < 1 or self.boundary >= data.size:
            raise InputError("corpus too short to hold both a training and a validation slice")

    @classmethod
    def from_bytes(cls, raw: bytes, split: float = 0.9) -> "Corpus":
        return cls(np.frombuffer(raw, dtype=np.uint8), split)

    @classmethod
    def from_file(cls, path, split: float = 0.9) -> "Corpus":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise InputError(f"cannot read corpus {path}: {exc.strerror}") from None
        return cls.from_bytes(raw, split)

    @property
    def boundary(self) -> int:
        return int(self.data.size * self.split)

    @property
    def train(self) -> np.ndarray:
        return self.data[: self.boundary]

    @property
    def val(self) -> np.ndarray:
        return self.data[self.boundary :]

    def order0_entropy(self) -> float:
        """Entropy of the byte histogram of the whole corpus, in nats."""
        counts = np.bincount(self.data, minlength=256).astype(np.float64)
        p = counts[counts > 0] / self.data.size
        return float(-np.sum(p * np.log(p)))


def _windows(data: np.ndarray, starts: np.ndarray, L: int):
    idx = starts[:, None] + np.arange(L + 1)
    w = data[idx].astype(np.int64)
    return w[:, :-1], w[:, 1:]


def batch_iter(corpus, L: int, batch: int, seed: int, start_step: int = 0, split: str = "train"):
    """Endless stream of ``(inputs, targets)`` windows, each ``(batch, L)``.

    Window starts are uniform over the slice. Step ``k`` draws from a
    generator keyed on ``(seed, k)``, so a stream can be resumed at any step.
    """
    data = corpus if isinstance(corpus, np.ndarray) else (corpus.train if split == "train" else corpus.val)
    if L < 1 or batch < 1:
        raise InputError("window length and batch must be positive")
    if data.size < L + 1:
        raise InputError(f"corpus slice of {data.size} bytes is too short for windows of {L + 1}")

    def gen():
        step = start_step
        while True:
            rng = np.random.default_rng((seed, step))
            yield _windows(data, rng.integers(0, data.size - L, size=batch), L)
            step += 1

    return gen()


def cross_entropy(logits, targets) -> float:
    """Mean negative log-likelihood in nats."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise InputError(f"logits {logits.shape} and targets {targets.shape} do not agree")
    lp = ad.log_softmax_np(logits)
    return float(-np.mean(np.take_along_axis(lp, targets[..., None], axis=-1)))


def perplexity(nll: float) -> float:
    return float(np.exp(nll))


@dataclass
class TrainState:
    params: dict
    m: dict
    v: dict
    step: int
    seed: int
    config: Config

    @classmethod
    def fresh(cls, config: Config, seed: int | None = None) -> "TrainState":
        seed = config.seed if seed is None else seed
        params = init_params(config, seed)
        zeros = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(params, zeros, {k: z.copy() for k, z in zeros.items()}, 0, seed, config.replace(seed=seed))

    def model(self) -> LmModel:
        return LmModel(self.config, self.params)


def adam_step(ts: TrainState, grads: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> TrainState:
    """Bias-corrected Adam; returns a new state and leaves ``ts`` untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient for {name} at step {ts.step}")
    t = ts.step + 1
    c1, c2 = 1.0 - beta1**t, 1.0 - beta2**t
    params, m, v = {}, {}, {}
    for name, p in ts.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InputError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m[name] = beta1 * ts.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * ts.v[name] + (1.0 - beta2) * g * g
        params[name] = p - lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)
    return replace(ts, params=params, m=m, v=v, step=t)


def clip_global_norm(grads: dict, max_norm: float) -> dict:
    if max_norm <= 0:
        return grads
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= max_norm:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


def loss_and_grads(model: LmModel, x, y):
    tape = ad.GradTape()
    leaves = model.leaves(tape)
    loss = ad.cross_entropy(model.forward(x, tape, leaves), y)
    return float(loss.value), tape.backward(loss)


def eval_windows(corpus: Corpus, L: int, count: int):
    """Deterministic, evenly spaced validation windows."""
    data = corpus.val
    if data.size < L + 1:
        raise InputError(f"validation slice of {data.size} bytes is too short for windows of {L + 1}")
    last = data.size - L - 1
    count = max(1, min(count, last + 1))
    starts = np.unique(np.linspace(0, last, count).round().astype(np.int64))
    return _windows(data, starts, L)


def evaluate(model: LmModel, corpus: Corpus, L: int | None = None, count: int | None = None, batch: int | None = None) -> float:
    """Mean validation NLL (nats) over :func:`eval_windows`."""
    cfg = model.cfg
    x, y = eval_windows(corpus, L or cfg.seq_len, count or cfg.eval_windows)
    batch = batch or cfg.batch
    total = 0.0
    for i in range(0, x.shape[0], batch):
        lp = ad.log_softmax_np(model.forward(x[i : i + batch]).value)
        total += float(-np.sum(np.take_along_axis(lp, y[i : i + batch, :, None], axis=-1)))
    return total / y.size


def learning_rate(cfg: Config, step: int) -> float:
    """Linear warmup over ``cfg.warmup`` steps, then constant."""
    if cfg.warmup <= 0:
        return cfg.lr
    return cfg.lr * min(1.0, (step + 1) / cfg.warmup)


def format_metric(step: int, split: str, nll: float, elapsed_ms: int) -> str:
    return f"{step}\t{split}\t{nll!r}\t{perplexity(nll)!r}\t{elapsed_ms}"


@dataclass
class TrainResult:
    state: TrainState
    lines: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)

    @property
    def final_val_nll(self) -> float:
        return self.val_nll[-1] if self.val_nll else float("nan")


def train_run(config: Config, corpus, out_dir=None, state: TrainState | None = None, steps: int | None = None, progress=None) -> TrainResult:
    """Train for ``epochs * steps_per_epoch`` steps (or ``steps``).

    Every step appends a ``train`` line to the metrics log; every epoch end
    (and the final step) appends a ``val`` line. With ``out_dir`` the log and
    a final checkpoint are written there. On a non-finite loss or gradient
    the last good state is checkpointed and :class:`TrainingDivergence` is
    raised.
    """
    if not isinstance(corpus, Corpus):
        corpus = Corpus.from_file(corpus, 1.0 - config.val_fraction)
    state = state or TrainState.fresh(config)
    cfg = state.config
    total = steps if steps is not None else cfg.epochs * cfg.steps_per_epoch
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = open(out / METRICS_FILE, "w", encoding="utf-8")
        metrics.write(METRICS_HEADER + "\n")
    result = TrainResult(state)
    stream = batch_iter(corpus, cfg.seq_len, cfg.batch, state.seed, start_step=state.step)
    t0 = time.perf_counter()

    def emit(line):
        result.lines.append(line)
        if out is not None:
            metrics.write(line + "\n")
            metrics.flush()

    try:
        for _ in range(total):
            x, y = next(stream)
            model = state.model()
            loss, grads = loss_and_grads(model, x, y)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"loss became {loss} at step {state.step + 1}")
            grads = clip_global_norm(grads, cfg.grad_clip)
            state = adam_step(state, grads, learning_rate(cfg, state.step), cfg.beta1, cfg.beta2, cfg.adam_eps)
            result.state = state
            elapsed = int((time.perf_counter() - t0) * 1000)
            emit(format_metric(state.step, "train", loss, elapsed))
            if state.step % cfg.steps_per_epoch == 0 or _ == total - 1:
                nll = evaluate(state.model(), corpus)
                result.val_nll.append(nll)
                emit(format_metric(state.step, "val", nll, int((time.perf_counter() - t0) * 1000)))
                if progress is not None:
                    progress(state.step, nll)
    except TrainingDivergence:
        if out is not None:
            save_checkpoint(out / CHECKPOINT_FILE, result.state)
        raise
    finally:
        if out is not None:
            metrics.close()
    if out is not None:
        save_checkpoint(out / CHECKPOINT_FILE, state)
    return result


def read_metrics(path) -> list[tuple]:
    """Parse a metrics log into ``(step, split, nll, ppl, elapsed_ms)`` tuples."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line == METRICS_HEADER:
                continue
            step, split, nll, ppl, ms = line.split("\t")
            rows.append((int(step), split, float(nll), float(ppl), int(ms)))
    return rows


from .gradcheck import gradcheck_suite  # noqa: E402  (re-export)

__all__ = [
    "Corpus",
    "TrainState",
    "TrainResult",
    "adam_step",
    "batch_iter",
    "cross_entropy",
    "evaluate",
    "gradcheck_suite",
    "perplexity",
    "train_run",
]
