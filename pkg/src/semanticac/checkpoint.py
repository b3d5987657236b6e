"""Binary checkpoint format.

Layout (little-endian)::

    b"SACK" | version u32 | crc32(payload) u32 | payload length u64 | payload

    payload = config block | meta block | tensor table
    block   = length u32 | UTF-8 bytes          (config is key = value text,
                                                 meta is JSON)
    table   = count u32 | entries
    entry   = name length u16 | name | dtype tag u8 | rank u8 | extents u32*rank | values
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, parse_config

MAGIC = b"SACK"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAGS = {v.str: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, np.ndarray]
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    labels: list[str] = field(default_factory=list)
    loss_log: list[float] = field(default_factory=list)
    version: int = VERSION


def _block(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def _table(tensors: dict[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tag = _TAGS.get(le.dtype.str)
        if tag is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        key = name.encode("utf-8")
        out.write(struct.pack("<H", len(key)) + key)
        out.write(struct.pack("<BB", tag, arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(le).tobytes())
    return out.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "labels": list(ckpt.labels),
        "loss_log": [float(x) for x in ckpt.loss_log],
    }
    tensors = dict(ckpt.params)
    tensors.update({f"opt/{k}": v for k, v in ckpt.opt_state.items()})
    payload = (
        _block(ckpt.config.to_text().encode("utf-8"))
        + _block(json.dumps(meta, sort_keys=True).encode("utf-8"))
        + _table(tensors)
    )
    header = MAGIC + struct.pack("<IIQ", ckpt.version, zlib.crc32(payload), len(payload))
    Path(path).write_bytes(header + payload)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ChecksumError("payload ends early")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expect: TrainConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expect`` the stored geometry must match it."""
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, crc, length = struct.unpack_from("<IIQ", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    payload = data[20:]
    if len(payload) != length or zlib.crc32(payload) != crc:
        raise ChecksumError(f"{path}: checksum mismatch (file truncated or corrupt)")
    r = _Reader(payload)
    (n,) = r.unpack("<I")
    config = parse_config(r.take(n).decode("utf-8"))
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n).decode("utf-8"))
    (count,) = r.unpack("<I")
    params, opt = {}, {}
    for _ in range(count):
        (klen,) = r.unpack("<H")
        name = r.take(klen).decode("utf-8")
        tag, rank = r.unpack("<BB")
        shape = r.unpack(f"<{rank}I") if rank else ()
        dt = _DTYPES[tag]
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(size * dt.itemsize), dtype=dt).reshape(shape).copy()
        if name.startswith("opt/"):
            opt[name[4:]] = arr
        else:
            params[name] = arr
    ckpt = Checkpoint(
        config=config,
        params=params,
        opt_state=opt,
        epoch=meta["epoch"],
        rng_state=meta["rng_state"],
        labels=meta["labels"],
        loss_log=meta["loss_log"],
        version=version,
    )
    if expect is not None:
        check_compatible(ckpt.config, expect)
    return ckpt


_GEOMETRY = (
    "embed_dim", "head", "mel.n_mels", "mel.frames", "audio.patch", "audio.window",
    "audio.depths", "audio.widths", "audio.heads", "text.width", "text.layers",
    "text.heads", "text.max_len", "text.vocab_size", "cscm.reduction",
    "cscm.spatial_kernel", "cscm.channels",
)  # fmt: skip


def _get(cfg, key):
    for part in key.split("."):
        cfg = getattr(cfg, part)
    return cfg


def check_compatible(stored: TrainConfig, expect: TrainConfig) -> None:
    diffs = [
        f"{k}: checkpoint {_get(stored, k)!r} vs expected {_get(expect, k)!r}"
        for k in _GEOMETRY
        if _get(stored, k) != _get(expect, k)
    ]
    if diffs:
        raise CheckpointError("incompatible checkpoint: " + "; ".join(diffs))
