"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"BVAR"  u32 version  u32 section_count
    section*: u16 name_len, name, u8 kind (0 json, 1 tensor), u64 payload_len, payload
        tensor payload: u32 ndim, u32 dims[ndim], float64 data (C order)
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .layers import Prior
from .network import BayesianNetwork, NetworkSpec

MAGIC = b"BVAR"
VERSION = 1
_JSON, _TENSOR = 0, 1


@dataclass
class Checkpoint:
    model: BayesianNetwork
    training_config: dict = field(default_factory=dict)
    seed: int | None = None
    split_seed: int | None = None
    extra: dict = field(default_factory=dict)


def _encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8", order="C")
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _section(name: str, kind: int, payload: bytes) -> bytes:
    raw = name.encode()
    return struct.pack("<H", len(raw)) + raw + struct.pack("<BQ", kind, len(payload)) + payload


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    model = ckpt.model
    prior = model.prior
    meta = {
        "spec": model.spec.to_dict(),
        "prior": {"kind": prior.kind, "sigma": prior.sigma, "pi": prior.pi, "sigma1": prior.sigma1, "sigma2": prior.sigma2},
        "training_config": ckpt.training_config,
        "seed": ckpt.seed,
        "split_seed": ckpt.split_seed,
        "extra": ckpt.extra,
    }
    sections = [_section("meta", _JSON, json.dumps(meta, sort_keys=True).encode())]
    for name, t in model.named_parameters():
        sections.append(_section(name, _TENSOR, _encode_tensor(t.data)))
    body = MAGIC + struct.pack("<II", VERSION, len(sections)) + b"".join(sections)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointError("bad magic header: not a BVAR checkpoint")
    if len(buf) < 16:
        raise CheckpointError("truncated checkpoint: header incomplete")
    r = _Reader(buf[:-4])
    r.take(4, "magic")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    meta = None
    tensors = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"section {i} name length")
        name = r.take(name_len, f"section {i} name").decode()
        kind, size = r.unpack("<BQ", f"section {name} header")
        payload = r.take(size, f"section {name} payload")
        if kind == _JSON:
            meta = json.loads(payload)
        elif kind == _TENSOR:
            pr = _Reader(payload)
            (ndim,) = pr.unpack("<I", f"{name} rank")
            shape = pr.unpack(f"<{ndim}I", f"{name} shape")
            data = pr.take(8 * int(np.prod(shape, dtype=np.int64)), f"{name} data")
            tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
        else:
            raise CheckpointError(f"unknown section kind {kind} in {name}")
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after last section")
    (crc,) = struct.unpack("<I", buf[-4:])
    if crc != zlib.crc32(buf[:-4]):
        raise CheckpointError("CRC32 mismatch: checkpoint is corrupted")
    if meta is None:
        raise CheckpointError("checkpoint has no metadata section")
    spec = NetworkSpec.from_dict(meta["spec"])
    model = BayesianNetwork(spec, Prior(**meta["prior"]), rng=np.random.default_rng(0))
    try:
        model.load_state_arrays(tensors)
    except Exception as exc:
        raise CheckpointError(f"parameters do not match the stored network: {exc}") from None
    return Checkpoint(model, meta.get("training_config", {}), meta.get("seed"), meta.get("split_seed"), meta.get("extra", {}))
