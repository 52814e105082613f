"""Versioned binary checkpoints for trained policies and critics.

Layout: 8-byte magic, little-endian u32 format version, a
length-prefixed canonical-JSON architecture descriptor, the named
parameter tensors in sorted-name order (length-prefixed name, rank,
extents, float64 payload), and a trailing 64-bit FNV-1a checksum over
everything that precedes it. Sorted names and canonical JSON make
save -> load -> save reproduce the byte stream exactly.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import nets, rng as rngmod
from .nets import EncoderConfig

MAGIC = b"IDADCKPT"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed, corrupted, or unsupported checkpoint file."""


@dataclass
class Checkpoint:
    descriptor: dict
    tensors: dict[str, np.ndarray]
    version: int = VERSION


def _canonical_descriptor(descriptor: dict) -> bytes:
    return json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    desc = _canonical_descriptor(ckpt.descriptor)
    parts = [MAGIC, struct.pack("<I", ckpt.version)]
    parts.append(struct.pack("<Q", len(desc)))
    parts.append(desc)
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", rngmod._fnv1a_64(body))


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    data = checkpoint_bytes(ckpt)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.data[self.pos: self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 + 8:
        raise CheckpointError("truncated checkpoint: shorter than fixed header")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    body, trailer = raw[:-8], raw[-8:]
    expected = struct.unpack("<Q", trailer)[0]
    actual = rngmod._fnv1a_64(body)
    if actual != expected:
        raise CheckpointError(
            f"checksum mismatch: stored {expected:#018x}, computed {actual:#018x}"
        )
    reader = _Reader(body)
    reader.take(len(MAGIC), "magic")
    version = reader.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}; this reader supports {VERSION}")
    desc_len = reader.u64("descriptor length")
    descriptor = json.loads(reader.take(desc_len, "descriptor").decode("utf-8"))
    count = reader.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.u32("tensor name length")
        name = reader.take(name_len, "tensor name").decode("utf-8")
        rank = reader.u32(f"rank of '{name}'")
        shape = tuple(
            struct.unpack(f"<{rank}Q", reader.take(8 * rank, f"extents of '{name}'"))
        ) if rank else ()
        size = int(np.prod(shape)) if shape else 1
        payload = reader.take(8 * size, f"data of '{name}'")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if reader.pos != len(body):
        raise CheckpointError("trailing bytes after last tensor record")
    return Checkpoint(descriptor=descriptor, tensors=tensors, version=version)


# ---------------------------------------------------------------------------
# Bridging trained artifacts and checkpoints


def from_training(train_config, policy, critic, trace, policy_kind: str = "network",
                  ) -> Checkpoint:
    tensors = {name: t.data.copy() for name, t in policy.params().items()}
    if critic is not None:
        tensors.update({name: t.data.copy() for name, t in critic.params().items()})
    descriptor = {
        "format": "idad-checkpoint",
        "model_id": train_config.model_id,
        "model_kwargs": train_config.model_kwargs,
        "policy_kind": policy_kind,
        "objective": train_config.objective,
        "T": train_config.T,
        "encoder": train_config.encoder.to_dict(),
        "train_config": train_config.to_dict(),
        "has_critic": critic is not None,
        "final_objective": float(np.mean(trace.objective[-50:])) if len(trace) else None,
    }
    if policy_kind == "static":
        descriptor["static_transform"] = policy.transform
    return Checkpoint(descriptor=descriptor, tensors=tensors)


def restore_networks(ckpt: Checkpoint):
    """Rebuild (policy, critic-or-None) from a checkpoint."""
    from .train import StaticDesignPolicy  # local import to avoid a cycle

    desc = ckpt.descriptor
    encoder = EncoderConfig.from_dict(desc["encoder"])
    init = rngmod.stream(0, "restore")
    if desc["policy_kind"] == "static":
        raw = ckpt.tensors["static.designs"]
        transform = desc.get("static_transform")
        transform = tuple(transform) if transform is not None else None
        policy = StaticDesignPolicy(raw.shape[0], raw.shape[1], init, transform)
        policy.raw.data = raw.copy()
    else:
        policy = nets.PolicyNet(encoder, init)
        nets.set_params(policy, ckpt.tensors)
    critic = None
    if desc.get("has_critic"):
        critic = nets.CriticNet(encoder, init)
        nets.set_params(critic, ckpt.tensors)
    return policy, critic
