"""LLM-prompted screening client for personally identifiable text pieces.

The client speaks to any chat-completion-compatible HTTP endpoint; model
name, base URL and key come from configuration so tests can point it at a
mock transport.  Six categories are flagged: full names, unique identifiers,
locations, organisations, occupational titles, and specific times.  Repeated
mentions within one record are counted once.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .corpus import Corpus, InstructionRecord
from .errors import ConfigError, ExternalServiceError

CATEGORIES = {
    "a": "full_names",
    "b": "unique_identifiers",
    "c": "locations",
    "d": "organisations",
    "e": "occupational_titles",
    "f": "times",
}

# response lines look like: [[c]]: Berlin
_FINDING_RE = re.compile(r"^\s*\[\[\s*([a-zA-Z])\s*\]\]\s*:\s*(.*\S)\s*$")

_PROMPT_SCAFFOLD = """1. For the given instruction from a user (denoted by INSTRUCTION), identify the following personally identifiable information.

\ta. The full names of real individuals.

\tb. Number or code that identifies entities in real word, such as phone number, email address, personal or organization website.

\tc. Specific places and locations, such as: cities, areas, named infrastructures (bus stops, bridges, etc.).

\td. Names of organisations, such as companies, schools, universities.

\te. Occupational titles, such as job names, position names.

\tf. Description of a specific time, such as October 3, 2018 or 13th June.

2. List the answer in the following format: [[catergory]]: personally identifiable information.

3. If a personally identifiable information is mentioned multiple times, only count it once.

4. Do not include personally identifiable information in public articles (such as news) or fiction stories.
"""


@dataclass(frozen=True)
class PiiFinding:
    category: str  # letter a..f
    span_text: str
    record_id: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ConfigError(f"unknown category {self.category!r}")
        if not self.span_text:
            raise ConfigError("span text must be non-empty")


@dataclass
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "DPSYNTH_API_KEY"
    max_concurrency: int = 4
    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_max: float = 8.0
    timeout: float = 30.0

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env)


@dataclass
class ScreenReport:
    findings: dict[str, list[PiiFinding]] = field(default_factory=dict)  # record id -> findings
    warnings: dict[str, list[str]] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def category_counts(self) -> dict[str, int]:
        counts = {letter: 0 for letter in CATEGORIES}
        for items in self.findings.values():
            for f in items:
                counts[f.category] += 1
        return counts

    def instructions_with_findings(self) -> int:
        return sum(1 for items in self.findings.values() if items)

    def completed_ids(self) -> set[str]:
        return set(self.findings) | set(self.errors)

    def to_dict(self) -> dict:
        return {
            "category_counts": self.category_counts(),
            "category_names": CATEGORIES,
            "instructions_with_findings": self.instructions_with_findings(),
            "records_screened": len(self.findings),
            "records_failed": len(self.errors),
            "findings": {
                rid: [{"category": f.category, "span_text": f.span_text} for f in items]
                for rid, items in self.findings.items()
            },
            "warnings": self.warnings,
            "errors": self.errors,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def build_prompt(record: InstructionRecord, demonstrations: str = "") -> str:
    """Screening prompt for one record; the instruction text is JSON-quoted so
    delimiters inside it cannot break the scaffold."""
    parts = [_PROMPT_SCAFFOLD]
    if demonstrations.strip():
        parts.append(f"\nDEMONSTRATIONS: {demonstrations.strip()}\n")
    parts.append(f"\nINSTRUCTION = {json.dumps(record.text, ensure_ascii=False)}\n")
    parts.append("\nRESULT:\n")
    return "".join(parts)


def parse_response(text: str, record_id: str = "") -> tuple[list[PiiFinding], list[str]]:
    """Lenient parse: well-formed category lines become findings, anything else
    bracket-shaped becomes a warning."""
    findings: list[PiiFinding] = []
    warnings: list[str] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _FINDING_RE.match(line)
        if m:
            letter = m.group(1).lower()
            if letter in CATEGORIES:
                findings.append(PiiFinding(category=letter, span_text=m.group(2), record_id=record_id))
            else:
                warnings.append(f"unknown category in line: {line.strip()}")
        elif "[[" in line:
            warnings.append(f"unparseable line: {line.strip()}")
    return findings, warnings


def format_findings(findings: list[PiiFinding]) -> str:
    """Serialize findings in the response line format; parse_response inverts this."""
    return "\n".join(f"[[{f.category}]]: {f.span_text}" for f in findings)


def _dedupe(findings: list[PiiFinding]) -> list[PiiFinding]:
    seen: set[tuple[str, str]] = set()
    out = []
    for f in findings:
        key = (f.category, f.span_text.strip().lower())
        if key in seen:
            continue
        seen.add(key)
        out.append(f)
    return out


def _request_once(client: httpx.Client, config: EndpointConfig, prompt: str) -> str:
    headers = {"Content-Type": "application/json"}
    key = config.api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    resp = client.post(
        config.base_url,
        json={"model": config.model, "messages": [{"role": "user", "content": prompt}]},
        headers=headers,
        timeout=config.timeout,
    )
    if resp.status_code in (401, 403):
        raise ExternalServiceError(f"authentication failed ({resp.status_code})")
    if resp.status_code == 429 or resp.status_code >= 500:
        raise _Transient(f"status {resp.status_code}")
    if resp.status_code != 200:
        raise ExternalServiceError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
    body = resp.json()
    try:
        return body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ExternalServiceError(f"malformed completion payload: {exc}") from exc


class _Transient(Exception):
    pass


def _screen_one(client: httpx.Client, config: EndpointConfig, record: InstructionRecord, demonstrations: str) -> tuple[list[PiiFinding], list[str]]:
    prompt = build_prompt(record, demonstrations)
    delay = config.backoff_base
    last: Exception | None = None
    for attempt in range(config.max_retries + 1):
        try:
            content = _request_once(client, config, prompt)
            findings, warnings = parse_response(content, record.id)
            return _dedupe(findings), warnings
        except _Transient as exc:
            last = exc
            if attempt < config.max_retries:
                time.sleep(min(delay, config.backoff_max))
                delay *= 2
        except httpx.HTTPError as exc:
            last = exc
            if attempt < config.max_retries:
                time.sleep(min(delay, config.backoff_max))
                delay *= 2
    raise ExternalServiceError(f"persistent transport failure: {last}")


def screen_corpus(
    corpus: Corpus,
    config: EndpointConfig,
    demonstrations: str = "",
    client: httpx.Client | None = None,
    resume: ScreenReport | None = None,
) -> ScreenReport:
    """One request per record with bounded concurrency and retry; failures are
    recorded per record and never abort the run.  Passing a previous report as
    resume skips records it already covers, so a partial run plus a re-run
    screens every record exactly once."""
    report = resume if resume is not None else ScreenReport()
    todo = [r for r in corpus.records if r.id not in report.completed_ids()]
    if not todo:
        return report
    own_client = client is None
    if own_client:
        client = httpx.Client()
    lock = threading.Lock()

    def work(record: InstructionRecord) -> None:
        try:
            findings, warnings = _screen_one(client, config, record, demonstrations)
            with lock:
                report.findings[record.id] = findings
                if warnings:
                    report.warnings[record.id] = warnings
        except ExternalServiceError as exc:
            with lock:
                report.errors[record.id] = str(exc)

    try:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max(1, config.max_concurrency)) as pool:
            list(pool.map(work, todo))
    finally:
        if own_client:
            client.close()
    return report
