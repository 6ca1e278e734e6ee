"""Binary embedding persistence and corpus alignment.

File format (version 1, all integers little-endian):

    magic   6 bytes   b"DPEB1\\0"
    version u32       1
    count   u32       number of rows
    dim     u32       embedding dimension
    dtype   u8        1 = 32-bit float
    fprint  16 bytes  corpus fingerprint (128-bit hash over newline-joined ids)
    data    count*dim little-endian float32, row-major

The format is deliberately trivial so external encoders in any language can
produce it byte-exactly.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus
from .errors import AlignmentError, BadMagicError, CorpusError, PayloadSizeError, TruncatedFileError

MAGIC = b"DPEB1\x00"
VERSION = 1
DTYPE_F32 = 1
_HEADER = struct.Struct("<IIIB")


def corpus_fingerprint(ids: Sequence[str]) -> bytes:
    """128-bit order-sensitive fingerprint of record ids."""
    return hashlib.md5("\n".join(ids).encode("utf-8")).digest()


@dataclass
class EmbeddingMatrix:
    data: np.ndarray
    corpus_fingerprint: bytes

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise CorpusError(f"embedding data must be 2-d, got shape {self.data.shape}")
        if len(self.corpus_fingerprint) != 16:
            raise CorpusError("corpus fingerprint must be 16 bytes")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise CorpusError("embedding matrix contains non-finite values")

    @classmethod
    def from_corpus(cls, data: np.ndarray, corpus: Corpus) -> "EmbeddingMatrix":
        m = cls(data=np.asarray(data, dtype=np.float32), corpus_fingerprint=corpus_fingerprint(corpus.ids()))
        if m.count != len(corpus):
            raise AlignmentError(f"expected {len(corpus)} rows, got {m.count}")
        return m


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    matrix.validate()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, matrix.count, matrix.dim, DTYPE_F32))
        fh.write(matrix.corpus_fingerprint)
        fh.write(matrix.data.astype("<f4", copy=False).tobytes())


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not an embedding file (bad magic)")
    off = len(MAGIC)
    if len(blob) < off + _HEADER.size + 16:
        raise TruncatedFileError(f"{path}: header truncated")
    version, count, dim, dtype = _HEADER.unpack_from(blob, off)
    off += _HEADER.size
    if version != VERSION:
        raise PayloadSizeError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise PayloadSizeError(f"{path}: unsupported dtype tag {dtype}")
    fprint = blob[off : off + 16]
    off += 16
    expected = count * dim * 4
    payload = blob[off:]
    if len(payload) < expected:
        raise TruncatedFileError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise PayloadSizeError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(count, dim) if expected else np.zeros((count, dim), dtype=np.float32)
    return EmbeddingMatrix(data=data.copy(), corpus_fingerprint=fprint)


def validate_alignment(matrix: EmbeddingMatrix, corpus: Corpus) -> None:
    """Check row count and order-sensitive id fingerprint against a corpus."""
    if matrix.count != len(corpus):
        raise AlignmentError(f"row count mismatch: matrix has {matrix.count}, corpus has {len(corpus)}")
    found = corpus_fingerprint(corpus.ids())
    if matrix.corpus_fingerprint != found:
        raise AlignmentError(
            f"fingerprint mismatch: matrix carries {matrix.corpus_fingerprint.hex()}, corpus ids hash to {found.hex()}"
        )
