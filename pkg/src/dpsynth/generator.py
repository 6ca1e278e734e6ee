"""Byte-level next-token generator trained with per-example clipping and noise.

The model is a learned neural bigram: byte embedding, one tanh hidden layer
applied per position, linear projection to byte logits.  Conditioning on only
the previous token keeps per-example gradients exact and cheap, which is the
point: every optimizer step clips each example's whole gradient to norm C,
sums, adds N(0, sigma^2 C^2 I) noise, and divides by the nominal batch size
before the Adam update.

Sequence loss is the sum of token cross-entropies divided by the model's
maximum length (a global constant), not by the sequence's own length, so
longer sequences carry proportionally larger gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, InstructionRecord
from .errors import ConfigError, CorpusError
from .rng import SplitMix64, derive_seed, gaussian_noise, stream_uniforms_at

BOS = 256
EOS = 257
PAD = 258
VOCAB = 259

_CKPT_MAGIC = b"DPTG1\x00"
_CKPT_HEADER = struct.Struct("<IIIII")
_CKPT_VERSION = 1


@dataclass
class DpAdamConfig:
    clip_threshold: float = 0.5
    noise_multiplier: float = 0.0
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.clip_threshold <= 0:
            raise ConfigError("clip threshold must be > 0")
        if self.noise_multiplier < 0:
            raise ConfigError("noise multiplier must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass
class SamplingConfig:
    top_p: float = 0.95
    temperature: float = 1.0
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.top_p <= 1:
            raise ConfigError("top_p must be in (0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")


class ToyLanguageModel:
    """Parameters are float64 in memory; checkpoints store float32."""

    def __init__(self, embed: np.ndarray, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray, max_len: int):
        self.embed = np.asarray(embed, dtype=np.float64)
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.max_len = int(max_len)
        if self.embed.shape[0] != VOCAB or self.w2.shape[1] != VOCAB:
            raise ConfigError("parameter shapes do not match the byte vocabulary")

    @classmethod
    def initialize(cls, seed: int, embed_dim: int = 32, hidden_dim: int = 64, max_len: int = 64) -> "ToyLanguageModel":
        rng = SplitMix64(derive_seed(seed, "init"))
        embed = rng.gaussians(VOCAB * embed_dim).reshape(VOCAB, embed_dim) * 0.1
        w1 = rng.gaussians(embed_dim * hidden_dim).reshape(embed_dim, hidden_dim) / np.sqrt(embed_dim)
        b1 = np.zeros(hidden_dim)
        w2 = rng.gaussians(hidden_dim * VOCAB).reshape(hidden_dim, VOCAB) / np.sqrt(hidden_dim)
        b2 = np.zeros(VOCAB)
        return cls(embed, w1, b1, w2, b2, max_len)

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def param_count(self) -> int:
        return self.embed.size + self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in (self.embed, self.w1, self.b1, self.w2, self.b2)])

    def load_flat(self, vec: np.ndarray) -> None:
        if vec.shape != (self.param_count(),):
            raise ConfigError("flat parameter vector has the wrong length")
        off = 0
        for p in (self.embed, self.w1, self.b1, self.w2, self.b2):
            p[...] = vec[off : off + p.size].reshape(p.shape)
            off += p.size

    def encode(self, text: str) -> np.ndarray:
        data = text.encode("utf-8")[: self.max_len - 2]
        return np.array([BOS, *data, EOS], dtype=np.int64)

    def decode(self, tokens) -> str:
        return bytes(int(t) for t in tokens if 0 <= int(t) < 256).decode("utf-8", errors="replace")

    def next_logits(self, prev_tokens: np.ndarray) -> np.ndarray:
        """Logits over the vocabulary given each previous token; (n, VOCAB)."""
        x = self.embed[prev_tokens]
        h = np.tanh(x @ self.w1 + self.b1)
        return h @ self.w2 + self.b2

    def sequence_loss(self, tokens: np.ndarray) -> float:
        return float(loss_many(self, [tokens])[0])


def _pad_batch(sequences: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad to a common length; returns (inputs, targets, mask)."""
    if not sequences:
        raise ConfigError("batch must be non-empty")
    width = max(len(s) for s in sequences) - 1
    b = len(sequences)
    inputs = np.full((b, width), PAD, dtype=np.int64)
    targets = np.full((b, width), PAD, dtype=np.int64)
    mask = np.zeros((b, width), dtype=np.float64)
    for i, seq in enumerate(sequences):
        n = len(seq) - 1
        if n < 1:
            raise CorpusError("sequences must contain at least two tokens")
        inputs[i, :n] = seq[:-1]
        targets[i, :n] = seq[1:]
        mask[i, :n] = 1.0
    return inputs, targets, mask


def _forward(model: ToyLanguageModel, inputs: np.ndarray):
    x = model.embed[inputs]  # (b, t, de)
    a = x @ model.w1 + model.b1
    h = np.tanh(a)
    z = h @ model.w2 + model.b2  # (b, t, V)
    zmax = z.max(axis=2, keepdims=True)
    logsum = np.log(np.exp(z - zmax).sum(axis=2, keepdims=True)) + zmax
    logp = z - logsum
    return x, h, logp


def loss_many(model: ToyLanguageModel, sequences: list[np.ndarray]) -> np.ndarray:
    """Per-sequence loss, vectorized over a padded batch."""
    inputs, targets, mask = _pad_batch(sequences)
    _, _, logp = _forward(model, inputs)
    picked = np.take_along_axis(logp, targets[:, :, None], axis=2)[:, :, 0]
    return -(picked * mask).sum(axis=1) / model.max_len


def per_example_gradients(model: ToyLanguageModel, sequences: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of each sequence's loss w.r.t. all parameters; ((b, P), losses)."""
    inputs, targets, mask = _pad_batch(sequences)
    b, width = inputs.shape
    x, h, logp = _forward(model, inputs)
    picked = np.take_along_axis(logp, targets[:, :, None], axis=2)[:, :, 0]
    losses = -(picked * mask).sum(axis=1) / model.max_len

    dz = np.exp(logp)
    np.put_along_axis(dz, targets[:, :, None], np.take_along_axis(dz, targets[:, :, None], axis=2) - 1.0, axis=2)
    dz *= mask[:, :, None] / model.max_len

    g_w2 = np.einsum("bth,btv->bhv", h, dz)
    g_b2 = dz.sum(axis=1)
    dh = dz @ model.w2.T
    da = dh * (1.0 - h * h)
    g_w1 = np.einsum("btd,bth->bdh", x, da)
    g_b1 = da.sum(axis=1)
    dx = da @ model.w1.T  # (b, t, de)
    g_embed = np.zeros((b, VOCAB, model.embed_dim))
    for i in range(b):
        live = mask[i] > 0
        np.add.at(g_embed[i], inputs[i, live], dx[i, live])

    flat = np.concatenate(
        [
            g_embed.reshape(b, -1),
            g_w1.reshape(b, -1),
            g_b1.reshape(b, -1),
            g_w2.reshape(b, -1),
            g_b2.reshape(b, -1),
        ],
        axis=1,
    )
    return flat, losses


def per_example_gradient(model: ToyLanguageModel, sequence: np.ndarray) -> np.ndarray:
    """Flat gradient of one sequence's loss."""
    if len(sequence) - 1 > model.max_len:
        raise ConfigError(f"sequence length {len(sequence)} exceeds model max_len {model.max_len}")
    bad = [int(t) for t in sequence if not 0 <= int(t) < VOCAB]
    if bad:
        raise CorpusError(f"unknown token ids {bad[:5]}")
    flat, _ = per_example_gradients(model, [np.asarray(sequence, dtype=np.int64)])
    return flat[0]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def dp_adam_step(
    model: ToyLanguageModel,
    batch: list[np.ndarray],
    config: DpAdamConfig,
    state: AdamState,
    step_index: int,
) -> dict:
    """One private step: clip per-example gradients, sum, noise, average, Adam.

    The sum is divided by the configured batch size even if the final batch of
    an epoch is smaller, matching the fixed-batch accounting convention.
    """
    grads, losses = per_example_gradients(model, batch)
    norms = np.linalg.norm(grads, axis=1)
    c = config.clip_threshold
    scale = np.minimum(1.0, c / np.where(norms > 0, norms, 1.0))
    clipped_norms = norms * scale
    assert (clipped_norms <= c * (1 + 1e-12)).all(), "clipped contribution exceeded the threshold"
    total = grads.T @ scale
    if config.noise_multiplier > 0:
        total = total + gaussian_noise(
            derive_seed(config.seed, "noise", step_index), len(total), config.noise_multiplier * c
        )
    g = total / config.batch_size

    state.t += 1
    state.m = config.beta1 * state.m + (1 - config.beta1) * g
    state.v = config.beta2 * state.v + (1 - config.beta2) * g * g
    mhat = state.m / (1 - config.beta1**state.t)
    vhat = state.v / (1 - config.beta2**state.t)
    theta = model.flatten()
    theta -= config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_epsilon)
    model.load_flat(theta)
    return {
        "step": step_index,
        "mean_loss": float(losses.mean()),
        "max_contribution_norm": float(clipped_norms.max()),
        "clip_fraction": float((scale < 1.0).mean()),
    }


@dataclass
class TrainResult:
    model: ToyLanguageModel
    loss_trace: list[float]
    metrics: list[dict]
    sigma: float
    sampling_rate: float
    steps: int

    def accountant_inputs(self) -> tuple[float, float, int]:
        return (self.sigma, self.sampling_rate, self.steps)


def train(model: ToyLanguageModel, corpus: Corpus, config: DpAdamConfig) -> TrainResult:
    """Epochs of seeded shuffled fixed-size batches; emits accountant inputs."""
    if len(corpus) == 0:
        raise CorpusError("cannot train on an empty corpus")
    sequences = [model.encode(text) for text in corpus.texts()]
    n = len(sequences)
    b = config.batch_size
    steps_per_epoch = (n + b - 1) // b
    metrics: list[dict] = []
    step = 0
    state = AdamState.zeros(model.param_count())
    for epoch in range(config.epochs):
        perm = SplitMix64(derive_seed(config.seed, "shuffle", epoch)).permutation(n)
        for start in range(0, n, b):
            batch = [sequences[i] for i in perm[start : start + b]]
            metrics.append(dp_adam_step(model, batch, config, state, step))
            step += 1
    return TrainResult(
        model=model,
        loss_trace=[m["mean_loss"] for m in metrics],
        metrics=metrics,
        sigma=config.noise_multiplier,
        sampling_rate=b / n,
        steps=config.epochs * steps_per_epoch,
    )


# cumulative mass within one rounding error of top_p counts as having reached it
_TOP_P_SLOP = 1e-12


def _sample_step(model: ToyLanguageModel, prev: np.ndarray, config: SamplingConfig, u: np.ndarray) -> np.ndarray:
    """Nucleus-sample one token per row given previous tokens and uniforms."""
    logits = model.next_logits(prev)
    logits[:, BOS] = -np.inf
    logits[:, PAD] = -np.inf
    z = logits / config.temperature
    z -= z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    order = np.argsort(-probs, axis=1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=1)
    csum = np.cumsum(sorted_p, axis=1)
    cut = (csum < config.top_p - _TOP_P_SLOP).sum(axis=1)  # nucleus is sorted prefix [0, cut]
    mass = np.take_along_axis(csum, cut[:, None], axis=1)[:, 0]
    target = u * mass
    chosen = (csum < target[:, None]).sum(axis=1)
    chosen = np.minimum(chosen, cut)
    return np.take_along_axis(order, chosen[:, None], axis=1)[:, 0]


def sample(model: ToyLanguageModel, config: SamplingConfig, count: int, chunk_size: int = 4096) -> Corpus:
    """Draw count independent sequences with nucleus sampling.

    Each sequence consumes its own derived stream (one uniform per position),
    so results do not depend on chunking.
    """
    records: list[InstructionRecord] = []
    for start in range(0, count, chunk_size):
        size = min(chunk_size, count - start)
        seeds = np.array(
            [derive_seed(config.seed, "sequence", start + i) for i in range(size)], dtype=np.uint64
        )
        prev = np.full(size, BOS, dtype=np.int64)
        out = np.full((size, config.max_len), PAD, dtype=np.int64)
        active = np.arange(size)
        for t in range(config.max_len):
            u = stream_uniforms_at(seeds[active], t + 1)
            tok = _sample_step(model, prev[active], config, u)
            out[active, t] = tok
            prev[active] = tok
            active = active[tok != EOS]
            if len(active) == 0:
                break
        for i in range(size):
            toks = out[i]
            toks = toks[toks != PAD]
            if len(toks) and toks[-1] == EOS:
                toks = toks[:-1]
            records.append(InstructionRecord(id=f"synth-{start + i:07d}", text=model.decode(toks)))
    return Corpus(records=records, role="synthetic")


def greedy_complete(model: ToyLanguageModel, prefix: str, max_new: int | None = None) -> str:
    """Deterministic argmax continuation of a text prefix."""
    tokens = [BOS, *prefix.encode("utf-8")]
    limit = max_new if max_new is not None else model.max_len
    generated: list[int] = []
    prev = tokens[-1]
    for _ in range(limit):
        logits = model.next_logits(np.array([prev]))[0]
        logits[BOS] = -np.inf
        logits[PAD] = -np.inf
        tok = int(logits.argmax())
        if tok == EOS:
            break
        generated.append(tok)
        prev = tok
    return model.decode(generated)


def save_model(model: ToyLanguageModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(_CKPT_HEADER.pack(_CKPT_VERSION, VOCAB, model.embed_dim, model.hidden_dim, model.max_len))
        for p in (model.embed, model.w1, model.b1, model.w2, model.b2):
            fh.write(p.astype("<f4").tobytes())


def load_model(path: str | Path) -> ToyLanguageModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CorpusError(f"{path}: not a model checkpoint")
    version, vocab, embed_dim, hidden_dim, max_len = _CKPT_HEADER.unpack_from(blob, len(_CKPT_MAGIC))
    if version != _CKPT_VERSION or vocab != VOCAB:
        raise CorpusError(f"{path}: unsupported checkpoint (version {version}, vocab {vocab})")
    off = len(_CKPT_MAGIC) + _CKPT_HEADER.size
    shapes = [(VOCAB, embed_dim), (embed_dim, hidden_dim), (hidden_dim,), (hidden_dim, VOCAB), (VOCAB,)]
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float64))
        off += n * 4
    if off != len(blob):
        raise CorpusError(f"{path}: unexpected trailing bytes")
    return ToyLanguageModel(*arrays, max_len=max_len)
