"""Cluster-vote histogram over real embeddings and its Gaussian privatization.

Each real embedding votes for its nearest synthetic-cluster centroid, so
adding or removing one real record changes exactly one bin by exactly one:
the released histogram has L2 sensitivity 1.  The synthetic pool enters only
through the fitted centroids, which are post-processing of the private
generator and carry no extra privacy cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import ClusterModel, assign_many
from .errors import ConfigError, CorpusError
from .rng import derive_seed, gaussian_noise


@dataclass
class PrivateHistogram:
    raw_counts: np.ndarray  # (k,) int64 votes
    noised_counts: np.ndarray  # (k,) float64, raw + N(0, sigma^2) per bin
    sigma: float
    n_real: int
    seed: int

    def __post_init__(self):
        self.raw_counts = np.ascontiguousarray(self.raw_counts, dtype=np.int64)
        self.noised_counts = np.ascontiguousarray(self.noised_counts, dtype=np.float64)
        if self.raw_counts.shape != self.noised_counts.shape:
            raise CorpusError("raw and noised count vectors differ in length")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if int(self.raw_counts.sum()) != self.n_real:
            raise CorpusError(f"votes sum to {int(self.raw_counts.sum())}, expected n_real={self.n_real}")

    @property
    def k(self) -> int:
        return len(self.raw_counts)

    @property
    def densities(self) -> np.ndarray:
        """Noised counts divided by the real corpus size; may be negative."""
        if self.n_real == 0:
            return np.zeros_like(self.noised_counts)
        return self.noised_counts / self.n_real


def build_histogram(model: ClusterModel, real_embeddings) -> np.ndarray:
    """Vote vector: bin j counts the real points whose nearest centroid is j."""
    votes = assign_many(model, real_embeddings)
    return np.bincount(votes, minlength=model.k).astype(np.int64)


def privatize(raw: np.ndarray, sigma: float, seed: int) -> PrivateHistogram:
    """Add seeded i.i.d. N(0, sigma^2) noise per bin.

    Noised counts are kept unrounded and may go negative; downstream
    selection clamps per-cluster targets at zero instead.
    """
    raw = np.ascontiguousarray(raw, dtype=np.int64)
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    noise = gaussian_noise(derive_seed(seed, "histogram-noise"), len(raw), sigma)
    return PrivateHistogram(
        raw_counts=raw,
        noised_counts=raw.astype(np.float64) + noise,
        sigma=float(sigma),
        n_real=int(raw.sum()),
        seed=seed,
    )


def save_histogram(hist: PrivateHistogram, path: str | Path) -> None:
    obj = {
        "k": hist.k,
        "sigma": hist.sigma,
        "seed": hist.seed,
        "n_real": hist.n_real,
        "raw": [int(v) for v in hist.raw_counts],
        "noised": [float(v) for v in hist.noised_counts],
        "densities": [float(v) for v in hist.densities],
    }
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def load_histogram(path: str | Path) -> PrivateHistogram:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return PrivateHistogram(
        raw_counts=np.array(obj["raw"], dtype=np.int64),
        noised_counts=np.array(obj["noised"], dtype=np.float64),
        sigma=obj["sigma"],
        n_real=obj["n_real"],
        seed=obj["seed"],
    )
