"""Checkpoint container.

Layout::

    smamba-checkpoint 1
    step = <int>
    seed = <int>
    [config]
    <key = value lines>
    [tensors]
    <name> <dim,dim,...>
    ...
    end
    <raw little-endian float64 payloads, in the order listed>
    <8-byte BLAKE2b digest of the payload bytes>

Parameters come first in census order, then the Adam first moments
(``adam.m.<name>``) and second moments (``adam.v.<name>``).
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .config import Config, parse_config

MAGIC = "smamba-checkpoint"
VERSION = 1
DIGEST_BYTES = 8
_END = b"\nend\n"


class CheckpointError(ValueError):
    """The file is not a readable checkpoint."""


def _digest(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=DIGEST_BYTES).digest()


def save_checkpoint(path, state) -> None:
    """Write a :class:`~smamba.train.TrainState` to ``path``."""
    tensors = list(state.params.items())
    tensors += [(f"adam.m.{k}", v) for k, v in state.m.items()]
    tensors += [(f"adam.v.{k}", v) for k, v in state.v.items()]
    lines = [f"{MAGIC} {VERSION}", f"step = {state.step}", f"seed = {state.seed}", "[config]"]
    lines += state.config.to_text().splitlines()
    lines.append("[tensors]")
    for name, arr in tensors:
        lines.append(f"{name} {','.join(str(s) for s in arr.shape)}")
    header = ("\n".join(lines) + "\nend\n").encode("ascii")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors)
    Path(path).write_bytes(header + payload + _digest(payload))


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`."""
    from .train import TrainState

    raw = Path(path).read_bytes()
    cut = raw.find(_END)
    if not raw.startswith(MAGIC.encode()) or cut < 0:
        raise CheckpointError(f"{path}: not a checkpoint file")
    header = raw[:cut].decode("ascii").split("\n")
    body = raw[cut + len(_END):]
    magic, _, version = header[0].partition(" ")
    if version.strip() != str(VERSION):
        raise CheckpointError(f"{path}: unsupported checkpoint version {version!r}")
    try:
        step = int(header[1].split("=", 1)[1])
        seed = int(header[2].split("=", 1)[1])
        i_cfg, i_ten = header.index("[config]"), header.index("[tensors]")
    except (IndexError, ValueError):
        raise CheckpointError(f"{path}: malformed header") from None
    config = parse_config("\n".join(header[i_cfg + 1 : i_ten]))
    specs = []
    for line in header[i_ten + 1 :]:
        name, _, dims = line.partition(" ")
        shape = tuple(int(s) for s in dims.split(",")) if dims else ()
        specs.append((name, shape))
    total = sum(int(np.prod(s)) for _, s in specs) * 8
    if len(body) != total + DIGEST_BYTES:
        raise CheckpointError(f"{path}: payload is {len(body) - DIGEST_BYTES} bytes, header implies {total}")
    payload, digest = body[:total], body[total:]
    if _digest(payload) != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    params, m, v = {}, {}, {}
    offset = 0
    for name, shape in specs:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += count * 8
        if name.startswith("adam.m."):
            m[name[7:]] = arr
        elif name.startswith("adam.v."):
            v[name[7:]] = arr
        else:
            params[name] = arr
    return TrainState(params=params, m=m, v=v, step=step, seed=seed, config=config)


def checkpoint_config(path) -> Config:
    return load_checkpoint(path).config
