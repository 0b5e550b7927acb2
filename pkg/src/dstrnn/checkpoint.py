"""Versioned binary checkpoint container.

Layout (little endian)::

    magic    8 bytes  b"DSTRNNCK"
    version  u32
    hlen     u32, then hlen bytes of JSON header (config, vocabularies, meta)
    count    u32
    count x  [u16 name length][name utf-8][u8 ndim][u32 * ndim dims][float32 data]
    sha256   32 bytes over everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SLOTS, SlotVocab, Vocabulary
from .features import DatabaseTable
from .models import ModelConfig, TrackerModel

MAGIC = b"DSTRNNCK"
FORMAT_VERSION = 1
_DIGEST = 32


class CheckpointError(Exception):
    pass


class VersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict
    config: dict
    vocab: list
    slot_vocabs: dict
    database: list = field(default_factory=list)
    triples: list | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: TrackerModel, meta: dict | None = None) -> "Checkpoint":
        return cls(
            tensors={k: v.data.astype("<f4") for k, v in model.params.items()},
            config=model.describe(),
            vocab=list(model.vocab.words[2:]),
            slot_vocabs={s: list(model.slot_vocabs[s].values[2:]) for s in SLOTS},
            database=model.database.to_records(),
            triples=[list(t) for t in model.triples] if model.triples is not None else None,
            meta=dict(meta or {}),
        )

    def build_model(self) -> TrackerModel:
        config = ModelConfig(**self.config)
        slot_vocabs = {s: SlotVocab(s, self.slot_vocabs[s]) for s in SLOTS}
        model = TrackerModel(config, Vocabulary(self.vocab), slot_vocabs,
                             DatabaseTable(self.database), self.triples)
        model.load_state_dict(self.tensors)
        return model

    def header(self) -> dict:
        return {
            "config": self.config,
            "vocab": self.vocab,
            "slot_vocabs": self.slot_vocabs,
            "database": self.database,
            "triples": self.triples,
            "meta": self.meta,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head,
                 struct.pack("<I", len(self.tensors))]
        for name, arr in self.tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            bname = name.encode("utf-8")
            parts.append(struct.pack("<H", len(bname)) + bname)
            parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes())
        body = b"".join(parts)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if len(blob) < len(MAGIC) + 8 + _DIGEST or not blob.startswith(MAGIC):
            raise CheckpointError("not a checkpoint file (bad magic or truncated)")
        body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
        pos = len(MAGIC)
        version, hlen = struct.unpack_from("<II", body, pos)
        if version != FORMAT_VERSION:
            raise VersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
        if hashlib.sha256(body).digest() != digest:
            raise CheckpointError("checksum mismatch (file truncated or corrupted)")
        pos += 8
        try:
            header = json.loads(body[pos:pos + hlen].decode("utf-8"))
            pos += hlen
            (count,) = struct.unpack_from("<I", body, pos)
            pos += 4
            tensors = {}
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", body, pos)
                pos += 2
                name = body[pos:pos + nlen].decode("utf-8")
                pos += nlen
                (ndim,) = struct.unpack_from("<B", body, pos)
                pos += 1
                shape = struct.unpack_from(f"<{ndim}I", body, pos)
                pos += 4 * ndim
                n = int(np.prod(shape)) if ndim else 1
                tensors[name] = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
                pos += 4 * n
        except (struct.error, ValueError, UnicodeDecodeError) as e:
            raise CheckpointError(f"malformed checkpoint: {e}") from e
        if pos != len(body):
            raise CheckpointError("trailing bytes after tensor records")
        return cls(tensors=tensors, config=header["config"], vocab=header["vocab"],
                   slot_vocabs=header["slot_vocabs"], database=header.get("database", []),
                   triples=header.get("triples"), meta=header.get("meta", {}))


def save_checkpoint(model: TrackerModel, meta: dict | None, path) -> Checkpoint:
    ckpt = Checkpoint.from_model(model, meta)
    Path(path).write_bytes(ckpt.to_bytes())
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def load_model(path) -> TrackerModel:
    return load_checkpoint(path).build_model()

