"""Recurrent, scan and convolution views of a discrete state-space system.

Sequences are arrays shaped ``(batch, L, channels)``. All views start from a
zero hidden state.
"""

from __future__ import annotations

import numpy as np

from .discretize import DiscreteSsm
from .errors import DimensionError


def _as_sequence(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[None, :, None]
    elif u.ndim == 2:
        u = u[None]
    if u.ndim != 3:
        raise DimensionError(f"sequence must be (batch, L, channels), got {u.shape}")
    return u


def _apply_a(abar, h, diagonal):
    if diagonal:
        return abar * h
    return np.einsum("...ij,...j->...i", abar, h)


def step(d: DiscreteSsm, h, u_t):
    """One recurrence step; returns ``(h_next, y)``."""
    h = np.asarray(h, dtype=np.float64)
    u_t = np.asarray(u_t, dtype=np.float64)
    if h.shape[-1] != d.n or u_t.shape[-1] != d.m:
        raise DimensionError(f"state {h.shape} / input {u_t.shape} do not match n={d.n}, m={d.m}")
    h_next = _apply_a(d.Abar, h, d.diagonal) + u_t @ d.Bbar.T
    y = h_next @ d.C.T + u_t @ d.D.T
    return h_next, y


def scan_lti(d: DiscreteSsm, u) -> np.ndarray:
    """Fold :func:`step` over time."""
    u = _as_sequence(u)
    if u.shape[-1] != d.m:
        raise DimensionError(f"input has {u.shape[-1]} channels, system takes {d.m}")
    batch, L, _ = u.shape
    h = np.zeros((batch, d.n))
    y = np.empty((batch, L, d.p))
    for t in range(L):
        h, y[:, t] = step(d, h, u[:, t])
    return y


def kernel(d: DiscreteSsm, L: int) -> np.ndarray:
    """Impulse-response taps ``C Abar^i Bbar`` for ``i < L``, shape ``(L, p, m)``."""
    if L < 1:
        raise DimensionError("kernel length must be at least 1")
    taps = np.empty((L, d.p, d.m))
    x = d.Bbar.copy()
    for i in range(L):
        taps[i] = d.C @ x
        x = d.Abar[:, None] * x if d.diagonal else d.Abar @ x
    return taps


def conv_apply(taps, u, D) -> np.ndarray:
    """Causal convolution ``y_t = sum_{i<=t} taps[i] u_{t-i} + D u_t``."""
    taps = np.asarray(taps, dtype=np.float64)
    if taps.ndim == 1:
        taps = taps[:, None, None]
    u = _as_sequence(u)
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    L = u.shape[1]
    if taps.shape[0] != L:
        raise DimensionError(f"kernel has {taps.shape[0]} taps, sequence has length {L}")
    if taps.shape[2] != u.shape[2]:
        raise DimensionError(f"kernel takes {taps.shape[2]} channels, input has {u.shape[2]}")
    y = np.einsum("blm,pm->blp", u, D)
    for t in range(L):
        # taps[0..t] against u[t..0]
        y[:, t] += np.einsum("ipm,bim->bp", taps[: t + 1], u[:, t::-1])
    return y


def scan_selective(Abar_t, Bbar_t, C_t, D, u) -> np.ndarray:
    """Time-varying recurrence with per-step parameters.

    ``Abar_t`` is ``(L, n, n)`` or, for diagonal systems, ``(L, n)``;
    ``Bbar_t`` is ``(L, n, m)``; ``C_t`` is ``(L, p, n)``. Each may carry an
    extra leading batch axis.
    """
    u = _as_sequence(u)
    batch, L, m = u.shape
    Bbar_t = np.asarray(Bbar_t, dtype=np.float64)
    Abar_t = np.asarray(Abar_t, dtype=np.float64)
    C_t = np.asarray(C_t, dtype=np.float64)
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    diagonal = Abar_t.ndim == Bbar_t.ndim - 1
    for name, arr in (("Abar_t", Abar_t), ("Bbar_t", Bbar_t), ("C_t", C_t)):
        time_axis = arr.ndim - (2 if not (name == "Abar_t" and diagonal) else 1) - 1
        if arr.shape[time_axis] != L:
            raise DimensionError(f"{name} has {arr.shape[time_axis]} steps, sequence has {L}")
    n = Bbar_t.shape[-2]
    Bb = np.broadcast_to(Bbar_t, (batch, L, n, m))
    Cb = np.broadcast_to(C_t, (batch, L) + C_t.shape[-2:])
    Ab = np.broadcast_to(Abar_t, (batch, L) + Abar_t.shape[-(1 if diagonal else 2):])
    h = np.zeros((batch, n))
    y = np.empty((batch, L, Cb.shape[-2]))
    for t in range(L):
        h = _apply_a(Ab[:, t], h, diagonal) + np.einsum("bnm,bm->bn", Bb[:, t], u[:, t])
        y[:, t] = np.einsum("bpn,bn->bp", Cb[:, t], h) + u[:, t] @ D.T
    return y
