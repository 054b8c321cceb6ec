"""Scoring models the bridge can serve.

The built-in "char-tiny" model is a 30-symbol character bigram table, enough
to exercise both wire modes end to end. Real checkpoints plug in through the
same interface: ids in, one log-prob row per position out. A model file path
may also be given as the model id; it must hold {"alphabet": str,
"logits": [[...]]} with a square table over the alphabet.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

REFERENCE_MODEL_ID = "char-tiny"
REFERENCE_ALPHABET = "abcdefghijklmnopqrstuvwxyz .,'"


class ModelLoadError(Exception):
    """The requested model id cannot be loaded."""


class TokenizationError(Exception):
    """The text contains symbols outside the model's alphabet."""


@dataclass(frozen=True)
class CharBigramLM:
    """Next-character log-probs conditioned on the previous character."""

    alphabet: str
    logits: np.ndarray  # (V, V), row = previous char

    def __post_init__(self):
        table = np.asarray(self.logits, dtype=np.float64)
        V = len(self.alphabet)
        if table.shape != (V, V):
            raise ModelLoadError(f"logit table {table.shape} does not match vocab {V}")
        if len(set(self.alphabet)) != V:
            raise ModelLoadError("alphabet has repeated symbols")
        object.__setattr__(self, "logits", table)

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    def encode(self, text: str) -> list[int]:
        index = {ch: i for i, ch in enumerate(self.alphabet)}
        ids = []
        for ch in text.lower():
            if ch == "\n" or ch == "\t":
                ch = " "
            if ch not in index:
                raise TokenizationError(f"symbol {ch!r} is outside the model alphabet")
            ids.append(index[ch])
        return ids

    def log_prob_rows(self, ids: list[int]) -> np.ndarray:
        """(T, V) rows; position t conditions on token t-1, space starts."""
        start = self.alphabet.index(" ")
        contexts = [start] + list(ids[:-1])
        rows = self.logits[np.asarray(contexts, dtype=np.int64)]
        return rows - _logsumexp_rows(rows)[:, None]


def _logsumexp_rows(rows: np.ndarray) -> np.ndarray:
    peak = rows.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(rows - peak).sum(axis=1, keepdims=True)))[:, 0]


def reference_model() -> CharBigramLM:
    """Deterministic bigram table: mild jitter plus a few linguistic leanings."""
    rng = np.random.default_rng(2024)
    V = len(REFERENCE_ALPHABET)
    table = rng.normal(0.0, 0.8, size=(V, V))
    vowels = [REFERENCE_ALPHABET.index(ch) for ch in "aeiou"]
    space = REFERENCE_ALPHABET.index(" ")
    for prev in range(V):
        if prev not in vowels and prev != space:
            table[prev, vowels] += 1.5  # consonants prefer a vowel next
        table[prev, space] += 0.5
    table[space, vowels] += 0.5
    return CharBigramLM(REFERENCE_ALPHABET, table)


def load_model(model_id: str) -> CharBigramLM:
    if model_id == REFERENCE_MODEL_ID:
        return reference_model()
    path = Path(model_id)
    if path.suffix == ".json" and path.exists():
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            return CharBigramLM(
                payload["alphabet"], np.asarray(payload["logits"], dtype=np.float64)
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ModelLoadError(f"cannot load model file {model_id!r}: {exc}") from exc
    raise ModelLoadError(f"unknown model id {model_id!r}")
