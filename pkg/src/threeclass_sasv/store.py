"""Embedding storage and the ``SASVEMB1`` binary container.

Layout: 8-byte magic ``SASVEMB1``, uint32 row count, uint32 dimension, then
row-major little-endian float32 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

MAGIC = b"SASVEMB1"
_HEADER = struct.Struct("<8sII")


@dataclass(frozen=True, eq=False)
class EmbeddingStore:
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] < 1:
            raise ValidationError(f"embedding store must be an n x D matrix, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValidationError("embedding store contains non-finite values")
        rows = rows.copy()
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def get(self, ref: int, utt_id: str = "?") -> np.ndarray:
        if not 0 <= ref < len(self):
            raise ValidationError(f"utterance {utt_id!r}: embedding_ref {ref} not in store of size {len(self)}")
        return self.rows[ref]

    def to_bytes(self) -> bytes:
        n, d = self.rows.shape
        return _HEADER.pack(MAGIC, n, d) + self.rows.astype("<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EmbeddingStore":
        if len(blob) < _HEADER.size:
            raise ValidationError("embedding file too short for header")
        magic, n, d = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise ValidationError(f"bad embedding file magic {magic!r}")
        expected = _HEADER.size + 4 * n * d
        if len(blob) != expected:
            raise ValidationError(f"embedding file has {len(blob)} bytes, expected {expected}")
        data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(n, d)
        return cls(data.astype(np.float64))
