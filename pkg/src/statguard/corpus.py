"""Corpus ingestion: cleaning, filtering, excerpting, dedup, balanced sampling.

A word is a maximal non-whitespace run; a sentence boundary is one of . ! ?
followed by whitespace. Filtering drops texts of 20 words or fewer and texts
whose word-trigram repetition exceeds 0.4. Overlong texts are replaced by a
random run of 7-8 consecutive sentences before any duplicate check.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CorpusParseError, InsufficientDomain, TooShortForTrigrams

DEFAULT_MIN_WORDS = 21          # keep iff word_count >= this
DEFAULT_TRIGRAM_MAX = 0.4       # drop iff repetition statistic > this
DEFAULT_MAX_WORDS = 400         # excerpt texts longer than this
DEFAULT_SPECIAL_MARKERS = (
    "<|endoftext|>", "<bos>", "<eos>", "<pad>", "<unk>", "<s>", "</s>",
)

_WS_RUN = re.compile(r"\s+")
_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+")


class Domain(str, Enum):
    ACADEMIA = "Academia"
    FINANCE = "Finance"
    GOVERNMENT = "Government"
    KNOWLEDGE = "Knowledge"
    LEGISLATION = "Legislation"
    MEDICINE = "Medicine"
    NEWS = "News"
    USER_REVIEWS = "UserReviews"

    def __str__(self) -> str:
        return self.value


#: Sentinel for the conservative cross-domain rule; not a corpus domain.
GENERAL = "General"


class Origin(str, Enum):
    HUMAN = "Human"
    LLM = "LLM"

    def __str__(self) -> str:
        return self.value


def parse_domain(name: str) -> Domain:
    key = str(name).replace("_", "").replace(" ", "").lower()
    for domain in Domain:
        if domain.value.lower() == key:
            return domain
    raise ValueError(f"unknown domain {name!r}")


def parse_origin(name: str) -> Origin:
    key = str(name).lower()
    for origin in Origin:
        if origin.value.lower() == key:
            return origin
    raise ValueError(f"unknown origin {name!r}")


@dataclass
class TextSample:
    """One labeled text; the unit all downstream stages consume."""

    id: str
    text: str
    domain: Domain
    origin: Origin
    tokens: list[int] = field(default_factory=list)

    @property
    def word_count(self) -> int:
        return len(self.text.split())


class FilterReason(str, Enum):
    TOO_SHORT = "TooShort"
    REPETITIVE = "Repetitive"
    DUPLICATE = "Duplicate"
    EMPTY = "Empty"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class FilterReport:
    kept: bool
    reasons: tuple[FilterReason, ...]
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        assert self.kept == (len(self.reasons) == 0)


# ── cleaning ──────────────────────────────────────────────────────────────

def clean_text(raw: str, markers: Sequence[str] = DEFAULT_SPECIAL_MARKERS) -> str:
    """Normalize whitespace, strip control characters and sentinel markers.

    Control characters become spaces (so they still separate words); any
    whitespace run containing a newline collapses to a single newline and
    every other run to a single space. Idempotent.
    """
    text = raw
    for marker in markers:
        text = text.replace(marker, " ")
    text = "".join(
        ch if ch == "\n" else (" " if unicodedata.category(ch) == "Cc" else ch)
        for ch in text
    )
    text = _WS_RUN.sub(lambda m: "\n" if "\n" in m.group(0) else " ", text)
    return text.strip()


# ── filtering ─────────────────────────────────────────────────────────────

def trigram_repetition(text: str) -> float:
    """1 - (#distinct word trigrams / #total word trigrams), in [0, 1]."""
    words = text.split()
    if len(words) < 3:
        raise TooShortForTrigrams(f"{len(words)} words, need >= 3")
    trigrams = list(zip(words, words[1:], words[2:]))
    return 1.0 - len(set(trigrams)) / len(trigrams)


def filter_sample(
    sample: TextSample,
    min_words: int = DEFAULT_MIN_WORDS,
    trigram_max: float = DEFAULT_TRIGRAM_MAX,
) -> FilterReport:
    """Apply the retention rules to one cleaned sample."""
    reasons: list[FilterReason] = []
    if sample.text == "":
        reasons.append(FilterReason.EMPTY)
    if sample.word_count < min_words:
        reasons.append(FilterReason.TOO_SHORT)
    if sample.word_count >= 3 and trigram_repetition(sample.text) > trigram_max:
        reasons.append(FilterReason.REPETITIVE)
    return FilterReport(kept=not reasons, reasons=tuple(reasons))


# ── excerpting ────────────────────────────────────────────────────────────

def split_sentences(text: str) -> list[str]:
    return [piece for piece in _SENTENCE_BOUNDARY.split(text) if piece.strip()]


def excerpt_long(text: str, max_words: int, rng: np.random.Generator) -> str:
    """Replace an overlong text by a run of 7-8 consecutive sentences.

    Texts of at most max_words words pass through unchanged. Without sentence
    boundaries the first max_words words are kept instead (the caller records
    that fallback). The run length is drawn uniformly from {7, 8}, clamped to
    the sentence count, and the start position uniformly over valid offsets.
    """
    if len(text.split()) <= max_words:
        return text
    sentences = split_sentences(text)
    if len(sentences) < 2:
        return " ".join(text.split()[:max_words])
    k = min(int(rng.integers(7, 9)), len(sentences))
    start = int(rng.integers(0, len(sentences) - k + 1))
    return " ".join(sentences[start:start + k])


# ── dedup and sampling ────────────────────────────────────────────────────

def dedupe(corpus: Sequence[TextSample]) -> list[TextSample]:
    """Drop exact-text duplicates (case-sensitive), keeping first occurrences."""
    seen: set[str] = set()
    out: list[TextSample] = []
    for sample in corpus:
        if sample.text not in seen:
            seen.add(sample.text)
            out.append(sample)
    return out


def balanced_sample(
    corpora_by_domain: Mapping[Domain, Sequence[TextSample]],
    n_per_domain: int,
    rng: np.random.Generator,
) -> list[TextSample]:
    """Sample exactly n_per_domain texts per domain, without replacement."""
    out: list[TextSample] = []
    for domain in sorted(corpora_by_domain, key=lambda d: d.value):
        pool = corpora_by_domain[domain]
        if len(pool) < n_per_domain:
            raise InsufficientDomain(domain, len(pool), n_per_domain)
        picked = rng.choice(len(pool), size=n_per_domain, replace=False)
        out.extend(pool[i] for i in sorted(int(i) for i in picked))
    return out


# ── on-disk format ────────────────────────────────────────────────────────

_RECORD_KEYS = {"id", "text", "domain", "origin"}


def save_corpus(path: str | Path, samples: Iterable[TextSample]) -> None:
    """Write one JSON record per line with keys {id, text, domain, origin}."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            record = {
                "id": s.id,
                "text": s.text,
                "domain": s.domain.value,
                "origin": s.origin.value,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> list[TextSample]:
    samples: list[TextSample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(lineno, f"not valid JSON ({exc.msg})") from exc
            if not isinstance(record, dict) or set(record) != _RECORD_KEYS:
                raise CorpusParseError(lineno, "expected exactly keys {id, text, domain, origin}")
            try:
                samples.append(TextSample(
                    id=str(record["id"]),
                    text=record["text"],
                    domain=parse_domain(record["domain"]),
                    origin=parse_origin(record["origin"]),
                ))
            except ValueError as exc:
                raise CorpusParseError(lineno, str(exc)) from exc
    return samples


# ── end-to-end pass ───────────────────────────────────────────────────────

def preprocess_corpus(
    samples: Sequence[TextSample],
    *,
    min_words: int = DEFAULT_MIN_WORDS,
    trigram_max: float = DEFAULT_TRIGRAM_MAX,
    max_words: int = DEFAULT_MAX_WORDS,
    markers: Sequence[str] = DEFAULT_SPECIAL_MARKERS,
    rng: np.random.Generator,
) -> tuple[list[TextSample], dict[str, FilterReport]]:
    """Clean, excerpt, filter, and dedupe a raw corpus.

    Returns the retained samples (cleaned text) and a per-id FilterReport.
    """
    reports: dict[str, FilterReport] = {}
    survivors: list[TextSample] = []
    for sample in samples:
        text = clean_text(sample.text, markers)
        notes: tuple[str, ...] = ()
        if len(text.split()) > max_words:
            if len(split_sentences(text)) < 2:
                notes = ("NoSentenceBoundaries",)
            text = excerpt_long(text, max_words, rng)
        cleaned = replace(sample, text=text)
        report = filter_sample(cleaned, min_words=min_words, trigram_max=trigram_max)
        reports[sample.id] = FilterReport(report.kept, report.reasons, notes)
        if report.kept:
            survivors.append(cleaned)

    kept = dedupe(survivors)
    kept_ids = {s.id for s in kept}
    for sample in survivors:
        if sample.id not in kept_ids:
            old = reports[sample.id]
            reports[sample.id] = FilterReport(
                False, old.reasons + (FilterReason.DUPLICATE,), old.notes
            )
    return kept, reports
