"""Canary injection and empirical memorization measurement.

A canary is a templated record carrying a known secret.  Exposure is measured
three ways: the rank of the canary's loss among same-format alternative
secrets, substring presence in unprompted generations, and greedy completion
of the template prefix.  Alternative secrets preserve the byte length and
character classes of the true secret, so loss comparisons are length-fair.
"""

from __future__ import annotations

from dataclasses import dataclass


from .corpus import Corpus, InstructionRecord
from .errors import ConfigError
from .generator import SamplingConfig, ToyLanguageModel, greedy_complete, loss_many, sample
from .rng import SplitMix64, derive_seed

PLACEHOLDER = "{SECRET}"

# assorted street-flavoured words, grouped by length on demand
_ADDRESS_WORDS = (
    "Oak Elm Ash Ivy Fox Bay Gum Koa "
    "Pine Hill Lake Glen Park Rose Fern Wolf Dove Moss Sage Reed "
    "Maple Cedar Birch Brook Creek Ridge Stone Heath Aspen Olive Hazel Laurel "
    "Willow Walnut Poplar Meadow Spring Summit Valley Canyon Harbor Juniper "
    "Hickory Orchard Prairie Thicket Bramble Foxglove Homestead Thornbrook"
).split()


@dataclass
class CanarySpec:
    template: str
    secret: str
    repetitions: int = 1
    candidate_pool_size: int = 10000

    def __post_init__(self):
        if self.template.count(PLACEHOLDER) != 1:
            raise ConfigError(f"template must contain exactly one {PLACEHOLDER} placeholder")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.candidate_pool_size < 2:
            raise ConfigError("candidate pool must hold at least the canary and one alternative")
        if not self.secret:
            raise ConfigError("secret must be non-empty")
        if self.secret in self.prefix():
            raise ConfigError("secret appears in the template prefix; the prompt would leak it")

    def prefix(self) -> str:
        return self.template.split(PLACEHOLDER, 1)[0]

    def filled(self, secret: str | None = None) -> str:
        return self.template.replace(PLACEHOLDER, self.secret if secret is None else secret)


@dataclass
class LeakageReport:
    loss_rank: int
    leaked_unprompted: bool
    leaked_prompted: bool

    def to_dict(self) -> dict:
        return {
            "loss_rank": self.loss_rank,
            "leaked_unprompted": self.leaked_unprompted,
            "leaked_prompted": self.leaked_prompted,
        }


def inject(corpus: Corpus, spec: CanarySpec, seed: int) -> Corpus:
    """Append repetition copies of the filled template, then reshuffle.

    Injection must happen after deduplication; exact dedup would collapse the
    copies back to one.
    """
    records = list(corpus.records)
    for i in range(spec.repetitions):
        records.append(InstructionRecord(id=f"canary-{i:05d}", text=spec.filled()))
    perm = SplitMix64(derive_seed(seed, "canary-shuffle")).permutation(len(records))
    return Corpus(records=[records[i] for i in perm], role=corpus.role)


def alternative_secret(secret: str, rng: SplitMix64) -> str:
    """Same-shape secret: digits stay digits, alpha runs become same-length words.

    Byte length and character classes are preserved exactly.
    """
    out: list[str] = []
    i = 0
    by_len: dict[int, list[str]] = {}
    for w in _ADDRESS_WORDS:
        by_len.setdefault(len(w), []).append(w)
    while i < len(secret):
        ch = secret[i]
        if ch.isdigit():
            out.append(str(int(rng.integers(1, 10)[0])))
            i += 1
        elif ch.isalpha():
            j = i
            while j < len(secret) and secret[j].isalpha():
                j += 1
            run = secret[i:j]
            pool = by_len.get(len(run), [])
            if pool:
                word = pool[int(rng.integers(1, len(pool))[0])]
            else:
                letters = "abcdefghijklmnopqrstuvwxyz"
                word = "".join(letters[int(v)] for v in rng.integers(len(run), 26))
            if run[0].isupper():
                word = word[0].upper() + word[1:]
            else:
                word = word.lower()
            out.append(word)
            i = j
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def alternative_secrets(secret: str, count: int, seed: int) -> list[str]:
    rng = SplitMix64(derive_seed(seed, "alternatives"))
    alts: list[str] = []
    while len(alts) < count:
        cand = alternative_secret(secret, rng)
        if cand != secret:
            alts.append(cand)
    return alts


def loss_rank(model: ToyLanguageModel, spec: CanarySpec, seed: int, batch_size: int = 2048) -> int:
    """1-based rank of the canary's loss among same-template alternatives.

    Ties count in the canary's favour: rank = 1 + number of alternatives with
    strictly lower loss.
    """
    alts = alternative_secrets(spec.secret, spec.candidate_pool_size - 1, seed)
    canary_loss = float(loss_many(model, [model.encode(spec.filled())])[0])
    lower = 0
    for start in range(0, len(alts), batch_size):
        seqs = [model.encode(spec.filled(a)) for a in alts[start : start + batch_size]]
        losses = loss_many(model, seqs)
        lower += int((losses < canary_loss).sum())
    return 1 + lower


def scan_unprompted(
    model: ToyLanguageModel,
    secrets: list[str],
    sampling: SamplingConfig,
    count: int = 100000,
) -> dict[str, bool]:
    """Secret presence flags over count unprompted generations."""
    flags = {s: False for s in secrets}
    if count <= 0:
        return flags
    corpus = sample(model, sampling, count)
    for text in corpus.texts():
        for s in secrets:
            if not flags[s] and s in text:
                flags[s] = True
        if all(flags.values()):
            break
    return flags


def scan_prompted(model: ToyLanguageModel, spec: CanarySpec, max_new: int | None = None) -> bool:
    """Greedy completion of the template prefix; true iff it contains the secret."""
    completion = greedy_complete(model, spec.prefix(), max_new=max_new)
    return spec.secret in completion


def evaluate_canary(
    model: ToyLanguageModel,
    spec: CanarySpec,
    sampling: SamplingConfig,
    seed: int,
    scan_count: int = 100000,
) -> LeakageReport:
    return LeakageReport(
        loss_rank=loss_rank(model, spec, seed),
        leaked_unprompted=scan_unprompted(model, [spec.secret], sampling, scan_count)[spec.secret],
        leaked_prompted=scan_prompted(model, spec),
    )


def evaluate_canaries(
    model: ToyLanguageModel,
    specs: list[CanarySpec],
    sampling: SamplingConfig,
    seed: int,
    scan_count: int = 100000,
) -> dict:
    """Per-spec reports plus the minimum loss rank across canary types."""
    reports = [evaluate_canary(model, spec, sampling, derive_seed(seed, i), scan_count) for i, spec in enumerate(specs)]
    return {
        "reports": [r.to_dict() for r in reports],
        "min_loss_rank": min(r.loss_rank for r in reports) if reports else None,
    }


def random_digit_secret(length: int, seed: int) -> str:
    """Random digit-string secret, e.g. a fake 10-digit phone number."""
    rng = SplitMix64(derive_seed(seed, "digits"))
    return "".join(str(int(v)) for v in rng.integers(length, 10))


def random_address_secret(seed: int) -> str:
    """Street-address-shaped secret from the bundled word list."""
    rng = SplitMix64(derive_seed(seed, "address"))
    number = 100 + int(rng.integers(1, 900)[0])
    words = [w for w in _ADDRESS_WORDS if 4 <= len(w) <= 9]
    name = words[int(rng.integers(1, len(words))[0])]
    kind = ("Road", "Street", "Lane", "Court", "Drive")[int(rng.integers(1, 5)[0])]
    return f"{number} {name} {kind}"
