"""Instruction corpus representation and preprocessing.

A corpus is an ordered list of records; the order is the alignment contract
for embedding matrices, so every preprocessing operation preserves the
relative order of kept records.  All operations are pure and idempotent.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .errors import ConfigError, CorpusError

Tokenizer = Callable[[str], list[str]]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

ROLES = ("real", "synthetic", "selected")


def simple_tokenizer(text: str) -> list[str]:
    """Lowercased whitespace-plus-punctuation split; words and punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class InstructionRecord:
    id: str
    text: str
    meta: Mapping[str, str] | None = None


@dataclass
class Corpus:
    records: list[InstructionRecord] = field(default_factory=list)
    role: str = "real"

    def __post_init__(self):
        if self.role not in ROLES:
            raise CorpusError(f"unknown corpus role {self.role!r}; expected one of {ROLES}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[InstructionRecord]:
        return iter(self.records)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def texts(self) -> list[str]:
        return [r.text for r in self.records]

    def validate(self) -> None:
        seen: set[str] = set()
        for r in self.records:
            if r.id in seen:
                raise CorpusError(f"duplicate record id {r.id!r}")
            seen.add(r.id)
            if not r.text:
                raise CorpusError(f"record {r.id!r} has empty text")

    def replaced(self, records: Iterable[InstructionRecord], role: str | None = None) -> "Corpus":
        return Corpus(records=list(records), role=role if role is not None else self.role)


def load_corpus(path: str | Path, role: str = "real") -> Corpus:
    """Read a line-delimited corpus file: one JSON object per line, order significant."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid record: {exc}") from exc
            if "id" not in obj or "text" not in obj:
                raise CorpusError(f"{path}:{lineno}: record must carry 'id' and 'text'")
            records.append(InstructionRecord(id=str(obj["id"]), text=obj["text"], meta=obj.get("meta")))
    return Corpus(records=records, role=role)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.records:
            obj: dict = {"id": r.id, "text": r.text}
            if r.meta:
                obj["meta"] = dict(r.meta)
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def dedup_exact(corpus: Corpus) -> Corpus:
    """Keep the first occurrence of each exact text, preserving order."""
    seen: set[str] = set()
    kept = []
    for r in corpus.records:
        if r.text in seen:
            continue
        seen.add(r.text)
        kept.append(r)
    return corpus.replaced(kept)


def _ngrams(tokens: Sequence[str], n: int) -> Iterator[tuple[str, ...]]:
    for i in range(len(tokens) - n + 1):
        yield tuple(tokens[i : i + n])


def dedup_ngram(corpus: Corpus, n: int = 10, tokenizer: Tokenizer = simple_tokenizer) -> Corpus:
    """Drop a record iff any of its n-grams already occurred in a kept record.

    Scanning is in corpus order, so of any group of records sharing an n-gram
    only the first is kept.  Records with fewer than n tokens have no n-grams
    and are always kept.
    """
    if n < 1:
        raise ConfigError(f"n-gram size must be >= 1, got {n}")
    seen: set[tuple[str, ...]] = set()
    kept = []
    for r in corpus.records:
        grams = list(_ngrams(tokenizer(r.text), n))
        if any(g in seen for g in grams):
            continue
        seen.update(grams)
        kept.append(r)
    return corpus.replaced(kept)


def filter_min_tokens(corpus: Corpus, min_tokens: int, tokenizer: Tokenizer = simple_tokenizer) -> Corpus:
    """Keep records with strictly more than min_tokens tokens."""
    if min_tokens < 0:
        raise ConfigError(f"min_tokens must be >= 0, got {min_tokens}")
    return corpus.replaced(r for r in corpus.records if len(tokenizer(r.text)) > min_tokens)


def compile_pattern(pattern: str) -> re.Pattern:
    """Compile a wildcard template (literal text, '*' matches any gap) to a regex."""
    segments = pattern.split("*")
    if not any(seg.strip() for seg in segments):
        raise ConfigError(f"pattern has no literal content: {pattern!r}")
    return re.compile(".*".join(re.escape(seg) for seg in segments), flags=re.DOTALL)


def filter_patterns(corpus: Corpus, patterns: Sequence[str]) -> Corpus:
    """Drop records whose full text matches any wildcard template."""
    compiled = [compile_pattern(p) for p in patterns]
    if not compiled:
        return corpus.replaced(corpus.records)
    kept = [r for r in corpus.records if not any(c.fullmatch(r.text.strip()) for c in compiled)]
    return corpus.replaced(kept)


def filter_meta(corpus: Corpus, key: str, allowed: Sequence[str], keep_missing: bool = False) -> Corpus:
    """Keep records whose meta[key] is in allowed; missing keys per keep_missing."""
    allowed_set = set(allowed)

    def ok(r: InstructionRecord) -> bool:
        if r.meta is None or key not in r.meta:
            return keep_missing
        return r.meta[key] in allowed_set

    return corpus.replaced(r for r in corpus.records if ok(r))
