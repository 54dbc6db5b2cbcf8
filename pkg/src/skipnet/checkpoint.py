"""Binary checkpoint format.

Layout::

    b"SKPM" | version: u32 LE | header length: u64 LE | header JSON (UTF-8)
    | raw little-endian float64 payloads in directory order

The header's ``tensors`` directory lists name, dtype, shape and byte offset
(relative to the payload start) of every array.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError
from .layers import AdamState

MAGIC = b"SKPM"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    config: dict
    mean: np.ndarray
    std: np.ndarray
    schema_fingerprint: str
    track_ids: list[str]
    tensors: dict[str, np.ndarray]
    optimizer: AdamState | None = None
    seed: int = 0
    step: int = 0
    extra: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def _directory(arrays: dict[str, np.ndarray]):
    entries, offset = [], 0
    for name, arr in arrays.items():
        entries.append({"name": name, "dtype": "<f8", "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    return entries, offset


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays: dict[str, np.ndarray] = {"stats.mean": ckpt.mean, "stats.std": ckpt.std}
    arrays.update({f"param/{k}": v for k, v in ckpt.tensors.items()})
    optimizer = None
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        optimizer = {"beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t}
        arrays.update({f"adam.m/{k}": v for k, v in opt.m.items()})
        arrays.update({f"adam.v/{k}": v for k, v in opt.v.items()})
    arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in arrays.items()}
    directory, payload_bytes = _directory(arrays)
    header = {
        "config": ckpt.config,
        "schema_fingerprint": ckpt.schema_fingerprint,
        "track_ids": list(ckpt.track_ids),
        "optimizer": optimizer,
        "seed": ckpt.seed,
        "step": ckpt.step,
        "extra": ckpt.extra,
        "payload_bytes": payload_bytes,
        "tensors": directory,
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(arr.tobytes(order="C"))


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CorruptCheckpointError(f"{path}: truncated before header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported version {version}")
    start = _PREFIX.size + header_len
    if len(raw) < start:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from None
    payload = raw[start:]
    if len(payload) != header.get("payload_bytes"):
        raise CorruptCheckpointError(
            f"{path}: payload has {len(payload)} bytes, header declares {header.get('payload_bytes')}"
        )

    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        offset = entry["offset"]
        if entry["dtype"] != "<f8" or offset + count * 8 > len(payload):
            raise CorruptCheckpointError(f"{path}: bad directory entry {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).copy()

    optimizer = None
    if header.get("optimizer") is not None:
        opt = header["optimizer"]
        optimizer = AdamState(
            beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"], t=opt["t"],
            m={k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")},
            v={k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")},
        )
    try:
        return Checkpoint(
            config=header["config"],
            mean=arrays["stats.mean"],
            std=arrays["stats.std"],
            schema_fingerprint=header["schema_fingerprint"],
            track_ids=header["track_ids"],
            tensors={k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")},
            optimizer=optimizer,
            seed=header["seed"],
            step=header["step"],
            extra=header.get("extra", {}),
            format_version=version,
        )
    except KeyError as exc:
        raise CorruptCheckpointError(f"{path}: header lacks {exc}") from None
