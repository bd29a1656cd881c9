"""Single-file checkpoints: a JSON manifest followed by a float32 payload.

Layout::

    MAGIC (16 bytes) | manifest length (uint64 LE) | manifest JSON | payload

The manifest lists every tensor's name, shape, byte offset and byte length
inside the payload, plus the encoder-config digest. It is validated in full
before any payload byte is interpreted.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from molalign import nn

MAGIC = b"MOLALIGN-CKPT\x00\x00\x01"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class DigestMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    trainable: dict[str, bool]
    config: dict
    config_digest: str
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_store(cls, store: nn.ParameterStore, config: dict, config_digest: str, metadata: Optional[dict] = None):
        return cls(
            {k: p.value.astype(_DTYPE) for k, p in store.items()},
            {k: p.trainable for k, p in store.items()},
            config,
            config_digest,
            dict(metadata or {}),
        )

    @classmethod
    def from_snapshot(cls, snapshot: dict[str, np.ndarray], store: nn.ParameterStore, config: dict, config_digest: str, metadata=None):
        return cls(
            {k: np.asarray(v).astype(_DTYPE) for k, v in snapshot.items()},
            {k: store[k].trainable for k in snapshot},
            config,
            config_digest,
            dict(metadata or {}),
        )

    def to_store(self) -> nn.ParameterStore:
        store = nn.ParameterStore()
        for name, value in self.tensors.items():
            store.add(name, value.astype(np.float64), self.trainable.get(name, True))
        return store

    def require_digest(self, expected: str) -> None:
        if self.config_digest != expected:
            raise DigestMismatchError(
                f"checkpoint was written for encoder config {self.config_digest[:12]}, "
                f"current config is {expected[:12]}"
            )


def _manifest(ckpt: Checkpoint) -> tuple[dict, list[bytes]]:
    entries, chunks = [], []
    offset = 0
    for name, value in ckpt.tensors.items():
        raw = np.ascontiguousarray(value, dtype=_DTYPE).tobytes()
        entries.append({
            "name": name,
            "shape": list(value.shape),
            "offset": offset,
            "nbytes": len(raw),
            "trainable": bool(ckpt.trainable.get(name, True)),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_digest": ckpt.config_digest,
        "config": ckpt.config,
        "metadata": ckpt.metadata,
        "dtype": "float32-le",
        "payload_bytes": offset,
        "tensors": entries,
    }
    return manifest, chunks


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    manifest, chunks = _manifest(ckpt)
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = checkpoint_bytes(ckpt)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def _validate_manifest(manifest: dict, payload_len: int) -> list[dict]:
    if not isinstance(manifest, dict):
        raise CheckpointError("manifest is not a JSON object")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version!r} (expected {FORMAT_VERSION})")
    if manifest.get("dtype") != "float32-le":
        raise CheckpointError(f"unsupported payload dtype {manifest.get('dtype')!r}")
    declared = manifest.get("payload_bytes")
    if not isinstance(declared, int) or declared < 0:
        raise CheckpointError("manifest lacks a valid payload_bytes")
    if payload_len < declared:
        raise CheckpointError(f"truncated payload: {payload_len} of {declared} bytes present")
    if payload_len > declared:
        raise CheckpointError(f"{payload_len - declared} unexpected trailing bytes after payload")
    entries = manifest.get("tensors")
    if not isinstance(entries, list):
        raise CheckpointError("manifest lacks a tensor list")
    names = set()
    expected_offset = 0
    for e in sorted(entries, key=lambda e: e.get("offset", -1)):
        name, shape, offset, nbytes = e.get("name"), e.get("shape"), e.get("offset"), e.get("nbytes")
        if not isinstance(name, str) or name in names:
            raise CheckpointError(f"bad or duplicate tensor name {name!r}")
        names.add(name)
        if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 0 for d in shape):
            raise CheckpointError(f"bad shape for {name}")
        if nbytes != int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize:
            raise CheckpointError(f"byte length of {name} does not match its shape")
        if offset != expected_offset:
            kind = "overlaps" if offset < expected_offset else "leaves a gap before"
            raise CheckpointError(f"tensor {name} {kind} the previous tensor (offset {offset}, expected {expected_offset})")
        expected_offset += nbytes
    if expected_offset != declared:
        raise CheckpointError("tensors do not cover the payload")
    return entries


def parse_checkpoint(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    header_end = len(MAGIC) + 8
    if len(data) < header_end:
        raise CheckpointError("truncated header")
    (mlen,) = struct.unpack("<Q", data[len(MAGIC):header_end])
    if len(data) < header_end + mlen:
        raise CheckpointError("truncated manifest")
    try:
        manifest = json.loads(data[header_end:header_end + mlen].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from None
    payload = data[header_end + mlen:]
    entries = _validate_manifest(manifest, len(payload))
    tensors, trainable = {}, {}
    for e in entries:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(raw, dtype=_DTYPE).reshape(e["shape"]).copy()
        trainable[e["name"]] = bool(e.get("trainable", True))
    return Checkpoint(tensors, trainable, manifest.get("config", {}), manifest["config_digest"], manifest.get("metadata", {}))


def load_checkpoint(path: str | Path, expected_digest: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    ckpt = parse_checkpoint(data)
    if expected_digest is not None:
        ckpt.require_digest(expected_digest)
    return ckpt
