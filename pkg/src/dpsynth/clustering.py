"""Exact k-means over embedding vectors and nearest-centroid assignment.

Lloyd iterations start from k-means++ seeding.  Distances accumulate in
float64 over float32 inputs and all reductions run in fixed index order, so a
fit is reproducible for a given seed.  Fitted models are immutable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import ConfigError, CorpusError
from .rng import SplitMix64, derive_seed

_MODEL_MAGIC = b"DPKM1\x00"
_MODEL_HEADER = struct.Struct("<IIIQBI")
_MODEL_VERSION = 1


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (k, dim) float32
    assignments: np.ndarray  # (m,) int64, synthetic index -> cluster index
    inertia: float
    seed: int
    normalized: bool

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float32)
        self.assignments = np.ascontiguousarray(self.assignments, dtype=np.int64)
        if not np.all(np.isfinite(self.centroids)):
            raise CorpusError("cluster centroids contain non-finite values")
        if len(self.assignments) and (self.assignments.min() < 0 or self.assignments.max() >= self.k):
            raise CorpusError("cluster assignments out of range")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _as_array(embeddings) -> np.ndarray:
    if isinstance(embeddings, EmbeddingMatrix):
        return embeddings.data
    return np.asarray(embeddings)


def _prepare(x: np.ndarray, normalized: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if normalized:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = np.where(norms > 0, x / np.where(norms == 0, 1.0, norms), x)
    return x


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared euclidean distances, expanded form, clipped at zero."""
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ centroids.T) + (centroids * centroids).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: SplitMix64) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(1, n)[0])
    centroids[0] = x[first]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(1, n)[0])
        else:
            u = rng.uniforms(1)[0] * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            idx = min(idx, n - 1)
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans_fit(
    embeddings,
    k: int,
    seed: int,
    max_iters: int = 100,
    rel_tol: float = 1e-4,
    normalized: bool = False,
) -> ClusterModel:
    """Lloyd iterations from k-means++ seeding until the relative inertia
    improvement drops below rel_tol or max_iters is reached.

    Empty clusters are repaired by reseeding them with the point currently
    farthest from its assigned centroid.
    """
    x32 = _as_array(embeddings)
    n = x32.shape[0]
    if k < 1:
        raise ConfigError(f"cluster count must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"cluster count {k} exceeds point count {n}")
    if max_iters < 1:
        raise ConfigError(f"max_iters must be >= 1, got {max_iters}")
    x = _prepare(x32, normalized)
    rng = SplitMix64(derive_seed(seed, "kmeans"))
    centroids = _kmeans_pp_init(x, k, rng)

    prev_inertia = np.inf
    labels = np.zeros(n, dtype=np.int64)
    repaired_last = False
    for _ in range(max_iters):
        d2 = _sq_distances(x, centroids)
        labels = d2.argmin(axis=1)
        inertia = d2[np.arange(n), labels].sum()

        counts = np.bincount(labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        repaired = len(empties) > 0
        if repaired:
            residuals = d2[np.arange(n), labels].copy()
            for e in empties:
                far = int(residuals.argmax())
                labels[far] = e
                residuals[far] = -1.0
            counts = np.bincount(labels, minlength=k)
            inertia = _sq_distances(x, centroids)[np.arange(n), labels].sum()

        if not repaired and not repaired_last:
            # Lloyd guarantee: alternating assignment/update never increases inertia
            assert inertia <= prev_inertia * (1 + 1e-9) + 1e-9, "inertia increased"
        repaired_last = repaired

        sums = np.zeros((k, x.shape[1]), dtype=np.float64)
        np.add.at(sums, labels, x)
        centroids = sums / counts[:, None]

        improved = prev_inertia - inertia
        if np.isfinite(prev_inertia) and 0 <= improved <= rel_tol * max(prev_inertia, np.finfo(float).tiny):
            prev_inertia = inertia
            break
        prev_inertia = inertia

    final_centroids = centroids.astype(np.float32)
    d2 = _sq_distances(x, final_centroids.astype(np.float64))
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), labels].sum())
    return ClusterModel(
        centroids=final_centroids,
        assignments=labels,
        inertia=inertia,
        seed=seed,
        normalized=normalized,
    )


def assign_nearest(model: ClusterModel, embedding: np.ndarray) -> int:
    """Index of the nearest centroid; ties break toward the lowest index."""
    v = np.asarray(embedding, dtype=np.float64).reshape(-1)
    if v.shape[0] != model.dim:
        raise ConfigError(f"embedding has dim {v.shape[0]}, model expects {model.dim}")
    if model.normalized:
        norm = np.linalg.norm(v)
        if norm > 0:
            v = v / norm
    d2 = ((model.centroids.astype(np.float64) - v) ** 2).sum(axis=1)
    return int(d2.argmin())


def assign_many(model: ClusterModel, embeddings) -> np.ndarray:
    """Vectorized nearest-centroid assignment for a matrix of embeddings."""
    x32 = _as_array(embeddings)
    if x32.shape[1] != model.dim:
        raise ConfigError(f"embeddings have dim {x32.shape[1]}, model expects {model.dim}")
    x = _prepare(x32, model.normalized)
    d2 = _sq_distances(x, model.centroids.astype(np.float64))
    return d2.argmin(axis=1).astype(np.int64)


def group_sizes(model: ClusterModel) -> np.ndarray:
    """Per-cluster synthetic pool sizes; sums to the assignment count."""
    return np.bincount(model.assignments, minlength=model.k).astype(np.int64)


def save_cluster_model(model: ClusterModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(
            _MODEL_HEADER.pack(
                _MODEL_VERSION, model.k, model.dim, model.seed & (2**64 - 1), int(model.normalized), len(model.assignments)
            )
        )
        fh.write(model.centroids.astype("<f4", copy=False).tobytes())
        fh.write(model.assignments.astype("<u4").tobytes())
        fh.write(struct.pack("<d", model.inertia))


def load_cluster_model(path: str | Path) -> ClusterModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MODEL_MAGIC)] != _MODEL_MAGIC:
        raise CorpusError(f"{path}: not a cluster model file")
    off = len(_MODEL_MAGIC)
    version, k, dim, seed, normalized, count = _MODEL_HEADER.unpack_from(blob, off)
    if version != _MODEL_VERSION:
        raise CorpusError(f"{path}: unsupported cluster model version {version}")
    off += _MODEL_HEADER.size
    need = k * dim * 4 + count * 4 + 8
    if len(blob) - off != need:
        raise CorpusError(f"{path}: cluster model payload has {len(blob)-off} bytes, expected {need}")
    centroids = np.frombuffer(blob, dtype="<f4", count=k * dim, offset=off).reshape(k, dim).copy()
    off += k * dim * 4
    assignments = np.frombuffer(blob, dtype="<u4", count=count, offset=off).astype(np.int64)
    off += count * 4
    (inertia,) = struct.unpack_from("<d", blob, off)
    return ClusterModel(centroids=centroids, assignments=assignments, inertia=inertia, seed=seed, normalized=bool(normalized))
