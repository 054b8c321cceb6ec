"""Next-token distribution providers: analytic n-gram toy models with temperature.

A ToyLM of order k conditions on the previous k-1 tokens through an explicit
logit table, so every conditional distribution is exactly enumerable. That is
the property the statistic, training, and calibration layers lean on: all
expectations and variances over the vocabulary are computed by direct summation,
never by sampling.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    NonPositiveTemperature,
    NormalizationViolation,
    UnknownToken,
)

MAX_VOCAB = 64
LOGSUMEXP_TOL = 1e-9

SGLC_MAGIC = b"SGLC"
SGLC_VERSION = 1


# ── softmax ───────────────────────────────────────────────────────────────

def softmax_with_temperature(logit_row: Sequence[float], tau: float) -> np.ndarray:
    """exp(l_i/tau) / sum_j exp(l_j/tau), computed with max-subtraction."""
    if tau <= 0:
        raise NonPositiveTemperature(f"temperature {tau} must be > 0")
    row = np.asarray(logit_row, dtype=np.float64)
    if not np.all(np.isfinite(row)):
        raise ValueError("logit row must be finite")
    scaled = row / tau
    scaled = scaled - scaled.max()
    probs = np.exp(scaled)
    return probs / probs.sum()


def log_softmax_with_temperature(logit_rows: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise log softmax at temperature tau; accepts (V,) or (T, V)."""
    if tau <= 0:
        raise NonPositiveTemperature(f"temperature {tau} must be > 0")
    rows = np.asarray(logit_rows, dtype=np.float64)
    if not np.all(np.isfinite(rows)):
        raise ValueError("logit rows must be finite")
    scaled = rows / tau
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    return scaled - np.log(np.exp(scaled).sum(axis=-1, keepdims=True))


# ── per-position distributions ────────────────────────────────────────────

class DistMode(str, Enum):
    FULL_VECTOR = "FullVector"
    MOMENT_TRIPLE = "MomentTriple"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, eq=False)
class TokenDistribution:
    """One position's predictive distribution, exact or provider-summarized.

    FullVector carries the whole log-prob row. MomentTriple carries the witness
    value at the observed token plus the mean and variance of the witness under
    the row, computed provider-side; witness_fingerprint records which witness
    those moments belong to.
    """

    mode: DistMode
    log_probs: np.ndarray | None = None
    observed_logprob: float | None = None
    witness_mean: float | None = None
    witness_var: float | None = None
    witness_fingerprint: str | None = None

    @classmethod
    def full_vector(cls, log_probs: Sequence[float]) -> "TokenDistribution":
        row = np.asarray(log_probs, dtype=np.float64)
        lse = float(np.logaddexp.reduce(row))
        if abs(lse) > LOGSUMEXP_TOL:
            raise NormalizationViolation(f"log-sum-exp {lse:.3e} exceeds {LOGSUMEXP_TOL}")
        return cls(mode=DistMode.FULL_VECTOR, log_probs=row)

    @classmethod
    def moment_triple(
        cls,
        observed_logprob: float,
        witness_mean: float,
        witness_var: float,
        witness_fingerprint: str | None = None,
    ) -> "TokenDistribution":
        if witness_var < 0:
            raise ValueError(f"witness_var {witness_var} must be >= 0")
        return cls(
            mode=DistMode.MOMENT_TRIPLE,
            observed_logprob=float(observed_logprob),
            witness_mean=float(witness_mean),
            witness_var=float(witness_var),
            witness_fingerprint=witness_fingerprint,
        )


# ── toy language models ───────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ToyLM:
    """Order-k n-gram model over a small vocabulary with explicit logits.

    The logit table has one row per context tuple of length order-1, indexed
    row-major (leftmost context position most significant). Positions with
    fewer than order-1 preceding tokens left-pad the context with token 0.
    """

    vocab_size: int
    order: int
    logits: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        if not (1 <= self.vocab_size <= MAX_VOCAB):
            raise ValueError(f"vocab_size {self.vocab_size} outside [1, {MAX_VOCAB}]")
        if self.order not in (1, 2, 3):
            raise ValueError(f"order {self.order} must be 1, 2, or 3")
        if self.temperature <= 0:
            raise NonPositiveTemperature(f"temperature {self.temperature} must be > 0")
        table = np.asarray(self.logits, dtype=np.float64)
        expected = (self.vocab_size ** (self.order - 1), self.vocab_size)
        if table.shape != expected:
            raise ValueError(f"logit table shape {table.shape}, expected {expected}")
        if not np.all(np.isfinite(table)):
            raise ValueError("logit table must be finite")
        object.__setattr__(self, "logits", table)

    @property
    def n_contexts(self) -> int:
        return self.vocab_size ** (self.order - 1)

    @cached_property
    def log_prob_matrix(self) -> np.ndarray:
        """(n_contexts, V) log-probabilities at the model temperature."""
        mat = log_softmax_with_temperature(self.logits, self.temperature)
        mat.setflags(write=False)
        return mat

    @cached_property
    def prob_matrix(self) -> np.ndarray:
        mat = np.exp(self.log_prob_matrix)
        mat.setflags(write=False)
        return mat

    def _check_tokens(self, tokens: np.ndarray) -> None:
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            bad = tokens[(tokens < 0) | (tokens >= self.vocab_size)][0]
            raise UnknownToken(f"token {int(bad)} outside vocabulary of size {self.vocab_size}")

    def context_ids(self, tokens: Sequence[int]) -> np.ndarray:
        """Row index of the conditioning context at every position."""
        toks = np.asarray(tokens, dtype=np.int64)
        self._check_tokens(toks)
        T = toks.size
        ids = np.zeros(T, dtype=np.int64)
        if self.order > 1:
            padded = np.concatenate([np.zeros(self.order - 1, dtype=np.int64), toks])
            for j in range(self.order - 1):
                ids = ids * self.vocab_size + padded[j:j + T]
        return ids

    def batch_context_ids(self, sequences: np.ndarray) -> np.ndarray:
        """context_ids for an (n, T) batch of token sequences."""
        seqs = np.asarray(sequences, dtype=np.int64)
        self._check_tokens(seqs.reshape(-1))
        n, T = seqs.shape
        ids = np.zeros((n, T), dtype=np.int64)
        if self.order > 1:
            pad = np.zeros((n, self.order - 1), dtype=np.int64)
            padded = np.hstack([pad, seqs])
            for j in range(self.order - 1):
                ids = ids * self.vocab_size + padded[:, j:j + T]
        return ids

    def logits_for_tokens(self, tokens: Sequence[int]) -> np.ndarray:
        """(T, V) raw logit rows conditioning on the running prefix."""
        return self.logits[self.context_ids(tokens)]

    def log_probs_for_tokens(self, tokens: Sequence[int]) -> np.ndarray:
        """(T, V) log-probability rows conditioning on the running prefix."""
        return self.log_prob_matrix[self.context_ids(tokens)]

    # construction and identity

    @classmethod
    def random(
        cls,
        vocab_size: int,
        order: int,
        rng: np.random.Generator,
        scale: float = 1.0,
        temperature: float = 1.0,
    ) -> "ToyLM":
        table = rng.normal(0.0, scale, size=(vocab_size ** (order - 1), vocab_size))
        return cls(vocab_size=vocab_size, order=order, logits=table, temperature=temperature)

    def to_json(self) -> str:
        payload = {
            "vocab_size": self.vocab_size,
            "order": self.order,
            "temperature": self.temperature,
            "logits": [[float(x) for x in row] for row in self.logits],
        }
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ToyLM":
        payload = json.loads(text)
        return cls(
            vocab_size=payload["vocab_size"],
            order=payload["order"],
            logits=np.asarray(payload["logits"], dtype=np.float64),
            temperature=payload["temperature"],
        )

    @property
    def provider_id(self) -> str:
        return "toy:" + hashlib.sha1(self.to_json().encode()).hexdigest()[:16]


def score_text(model: ToyLM, tokens: Sequence[int]) -> list[TokenDistribution]:
    """Per-position next-token distributions for an explicit token sequence."""
    if len(tokens) == 0:
        return []
    rows = model.log_probs_for_tokens(tokens)
    return [TokenDistribution(mode=DistMode.FULL_VECTOR, log_probs=row) for row in rows]


def sample_sequence(model: ToyLM, T: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sample of length T from the model."""
    if T < 1:
        raise ValueError(f"T={T} must be >= 1")
    return sample_sequences(model, 1, T, rng)[0]


def sample_sequences(model: ToyLM, n: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """(n, T) ancestral samples, vectorized across sequences via inverse CDF."""
    if T < 1 or n < 1:
        raise ValueError("n and T must be >= 1")
    V = model.vocab_size
    cum = np.cumsum(model.prob_matrix, axis=1)
    ids = np.zeros(n, dtype=np.int64)
    out = np.empty((n, T), dtype=np.int64)
    ctx_mod = V ** max(model.order - 2, 0)
    for t in range(T):
        u = rng.random(n)
        toks = (cum[ids] < u[:, None]).sum(axis=1)
        np.clip(toks, 0, V - 1, out=toks)
        out[:, t] = toks
        if model.order > 1:
            ids = (ids % ctx_mod) * V + toks
    return out


# ── desk-scale tokenizers ─────────────────────────────────────────────────

@dataclass(frozen=True)
class CharTokenizer:
    """Character-to-id map over a fixed alphabet; unknown chars get unknown_id."""

    alphabet: str
    unknown_id: int = 0

    def __post_init__(self):
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet characters must be unique")
        if not (0 <= self.unknown_id < len(self.alphabet)):
            raise ValueError("unknown_id outside alphabet")

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    def encode(self, text: str) -> list[int]:
        index = {ch: i for i, ch in enumerate(self.alphabet)}
        return [index.get(ch, self.unknown_id) for ch in text.lower()]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.alphabet[i] for i in ids)

    def to_config(self) -> dict:
        return {"kind": "char", "alphabet": self.alphabet, "unknown_id": self.unknown_id}


@dataclass(frozen=True)
class IntTokenizer:
    """Whitespace-separated integer ids; round-trips synthetic corpora exactly."""

    vocab_size: int

    def encode(self, text: str) -> list[int]:
        out = []
        for word in text.split():
            try:
                tok = int(word)
            except ValueError as exc:
                raise UnknownToken(f"{word!r} is not an integer token") from exc
            if not (0 <= tok < self.vocab_size):
                raise UnknownToken(f"token {tok} outside vocabulary of size {self.vocab_size}")
            out.append(tok)
        return out

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(str(int(i)) for i in ids)

    def to_config(self) -> dict:
        return {"kind": "int", "vocab_size": self.vocab_size}


def tokenizer_from_config(config: dict) -> CharTokenizer | IntTokenizer:
    kind = config.get("kind")
    if kind == "char":
        return CharTokenizer(alphabet=config["alphabet"], unknown_id=config.get("unknown_id", 0))
    if kind == "int":
        return IntTokenizer(vocab_size=config["vocab_size"])
    raise ValueError(f"unknown tokenizer kind {kind!r}")


@dataclass(frozen=True)
class ToyProvider:
    """A ToyLM plus a tokenizer: everything calibration and serving need."""

    model: ToyLM
    tokenizer: CharTokenizer | IntTokenizer

    @property
    def provider_id(self) -> str:
        return self.model.provider_id

    def tokens_for(self, text: str, tokens: Sequence[int] | None = None) -> np.ndarray:
        if tokens is not None and len(tokens) > 0:
            toks = np.asarray(tokens, dtype=np.int64)
        else:
            toks = np.asarray(self.tokenizer.encode(text), dtype=np.int64)
        self.model._check_tokens(toks)
        return toks

    def score_for_witness(self, text: str, tokens, witness):
        """(log-prob rows, observed tokens); the witness is evaluated engine-side."""
        toks = self.tokens_for(text, tokens)
        return self.model.log_probs_for_tokens(toks), toks

    def to_config(self) -> dict:
        return {
            "kind": "toy",
            "model": json.loads(self.model.to_json()),
            "tokenizer": self.tokenizer.to_config(),
        }


# ── logit cache file ──────────────────────────────────────────────────────

def save_logit_cache(path: str | Path, rows: np.ndarray) -> None:
    """Binary dump of (T, V) float64 rows: "SGLC", version, V, T, row data."""
    arr = np.ascontiguousarray(np.asarray(rows, dtype="<f8"))
    if arr.ndim != 2:
        raise ValueError(f"expected a (T, V) matrix, got shape {arr.shape}")
    T, V = arr.shape
    with open(path, "wb") as fh:
        fh.write(SGLC_MAGIC)
        fh.write(struct.pack("<III", SGLC_VERSION, V, T))
        fh.write(arr.tobytes(order="C"))


def load_logit_cache(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SGLC_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {SGLC_MAGIC!r}")
        version, V, T = struct.unpack("<III", fh.read(12))
        if version != SGLC_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        payload = fh.read(8 * T * V)
        if len(payload) != 8 * T * V:
            raise ValueError(f"truncated cache: {len(payload)} bytes for T={T} V={V}")
        if fh.read(1):
            raise ValueError("trailing bytes after cache payload")
    return np.frombuffer(payload, dtype="<f8").reshape(T, V).copy()
