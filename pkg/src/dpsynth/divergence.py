"""Distribution-closeness scoring between two corpora via divergence frontiers.

Two histogram representations are supported: unigram token frequencies over
the union vocabulary, and cluster occupancy after a joint k-means
quantization of both embedding sets.  The score is the area under the
frontier of paired soft divergences against mixtures R = lambda P + (1-lambda) Q,
anchored at (0, 1) and (1, 0) so identical distributions score exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import kmeans_fit
from .corpus import Corpus, Tokenizer, simple_tokenizer
from .embeddings import EmbeddingMatrix
from .errors import ConfigError, CorpusError

UNIGRAM = "unigram"
EMBEDDING_CLUSTER = "embedding_cluster"

DEFAULT_BINS = 500
DEFAULT_LAMBDA_GRID = 500
DEFAULT_SMOOTHING = 1e-9
DEFAULT_C_UNIGRAM = 5.0
DEFAULT_C_EMBEDDING = 10.0


@dataclass
class DistributionHistogram:
    masses: np.ndarray
    representation: str
    smoothing_epsilon: float = 0.0
    labels: list[str] | None = None

    def __post_init__(self):
        self.masses = np.ascontiguousarray(self.masses, dtype=np.float64)
        if (self.masses < 0).any():
            raise CorpusError("histogram masses must be non-negative")
        total = self.masses.sum()
        if abs(total - 1.0) > 1e-12 * max(1.0, total):
            raise CorpusError(f"histogram masses must sum to 1, got {total!r}")

    @property
    def bins(self) -> int:
        return len(self.masses)


@dataclass
class MauveReport:
    score: float
    c: float
    lambda_grid: int
    frontier: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "c": self.c,
            "lambda_grid": self.lambda_grid,
            "frontier": [[float(x), float(y)] for x, y in self.frontier],
        }


def unigram_histogram(corpus: Corpus, tokenizer: Tokenizer, vocabulary: list[str]) -> DistributionHistogram:
    """Token-frequency histogram over an explicit vocabulary."""
    if len(corpus) == 0:
        raise CorpusError("cannot build a unigram histogram of an empty corpus")
    index = {tok: i for i, tok in enumerate(vocabulary)}
    counts = np.zeros(len(vocabulary), dtype=np.float64)
    for text in corpus.texts():
        for tok in tokenizer(text):
            if tok in index:
                counts[index[tok]] += 1.0
    total = counts.sum()
    if total == 0:
        raise CorpusError("corpus has no tokens inside the vocabulary")
    return DistributionHistogram(masses=counts / total, representation=UNIGRAM, labels=list(vocabulary))


def unigram_histograms(
    corpus_p: Corpus, corpus_q: Corpus, tokenizer: Tokenizer = simple_tokenizer
) -> tuple[DistributionHistogram, DistributionHistogram]:
    """Aligned unigram histograms over the union vocabulary of both corpora."""
    vocab = sorted({tok for c in (corpus_p, corpus_q) for text in c.texts() for tok in tokenizer(text)})
    return (
        unigram_histogram(corpus_p, tokenizer, vocab),
        unigram_histogram(corpus_q, tokenizer, vocab),
    )


def cluster_histograms(
    p_embeds,
    q_embeds,
    bins: int = DEFAULT_BINS,
    seed: int = 0,
    max_iters: int = 100,
) -> tuple[DistributionHistogram, DistributionHistogram]:
    """Joint k-means quantization of both embedding sets, one histogram each."""
    p = p_embeds.data if isinstance(p_embeds, EmbeddingMatrix) else np.asarray(p_embeds, dtype=np.float32)
    q = q_embeds.data if isinstance(q_embeds, EmbeddingMatrix) else np.asarray(q_embeds, dtype=np.float32)
    if p.shape[1] != q.shape[1]:
        raise ConfigError(f"embedding dims differ: {p.shape[1]} vs {q.shape[1]}")
    total = len(p) + len(q)
    if bins > total:
        raise ConfigError(f"bins={bins} exceeds total point count {total}")
    model = kmeans_fit(np.vstack([p, q]), bins, seed=seed, max_iters=max_iters)
    labels = model.assignments
    counts_p = np.bincount(labels[: len(p)], minlength=bins).astype(np.float64)
    counts_q = np.bincount(labels[len(p) :], minlength=bins).astype(np.float64)
    return (
        DistributionHistogram(masses=counts_p / counts_p.sum(), representation=EMBEDDING_CLUSTER),
        DistributionHistogram(masses=counts_q / counts_q.sum(), representation=EMBEDDING_CLUSTER),
    )


def _smooth(masses: np.ndarray, eps: float) -> np.ndarray:
    if eps < 0:
        raise ConfigError("smoothing epsilon must be >= 0")
    if eps == 0:
        return masses
    out = masses + eps
    return out / out.sum()


def _kl(a: np.ndarray, b: np.ndarray) -> float:
    """KL(a || b) in nats with 0 log 0 = 0; inputs strictly positive after smoothing."""
    mask = a > 0
    return float(np.sum(a[mask] * np.log(a[mask] / b[mask])))


def mauve_score(
    p: DistributionHistogram,
    q: DistributionHistogram,
    c: float = DEFAULT_C_UNIGRAM,
    lambda_grid: int = DEFAULT_LAMBDA_GRID,
    smoothing_epsilon: float = DEFAULT_SMOOTHING,
) -> MauveReport:
    """Area under the divergence frontier of P and Q.

    For each lambda on a uniform open grid in (0, 1) plus the analytic
    endpoints, the frontier point is
    (exp(-c KL(Q || R)), exp(-c KL(P || R))) with R = lambda P + (1-lambda) Q.
    The curve is anchored at (0, 1) and (1, 0) and integrated by the
    trapezoidal rule over x.
    """
    if p.bins != q.bins:
        raise ConfigError(f"histograms have different bin counts: {p.bins} vs {q.bins}")
    if c <= 0:
        raise ConfigError("scaling constant c must be > 0")
    if lambda_grid < 1:
        raise ConfigError("lambda grid must have at least one point")
    pm = _smooth(p.masses, smoothing_epsilon)
    qm = _smooth(q.masses, smoothing_epsilon)
    if (pm <= 0).any() or (qm <= 0).any():
        raise ConfigError("histograms contain empty bins; use a positive smoothing epsilon")

    lambdas = np.arange(1, lambda_grid + 1) / (lambda_grid + 1)
    frontier: list[tuple[float, float]] = []
    # analytic lambda -> 0 and lambda -> 1 endpoints
    frontier.append((1.0, float(np.exp(-c * _kl(pm, qm)))))
    for lam in lambdas:
        r = lam * pm + (1.0 - lam) * qm
        frontier.append((float(np.exp(-c * _kl(qm, r))), float(np.exp(-c * _kl(pm, r)))))
    frontier.append((float(np.exp(-c * _kl(qm, pm))), 1.0))

    xs = np.array([pt[0] for pt in frontier] + [0.0, 1.0])
    ys = np.array([pt[1] for pt in frontier] + [1.0, 0.0])
    order = np.argsort(xs, kind="stable")
    score = float(np.trapezoid(ys[order], xs[order]))
    return MauveReport(score=score, c=c, lambda_grid=lambda_grid, frontier=frontier)
