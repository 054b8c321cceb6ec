"""Client side of the scoring wire protocol, version 1.

A provider answers POST /score with newline-delimited JSON: one header frame
{version, vocab_size, mode, tokens?}, then one frame per position. FullVector
frames carry the whole log-prob row; MomentTriple frames carry the witness
value at the observed token plus the witness mean and variance under the row,
computed provider-side from the witness spec serialized in the request. The
second mode keeps the payload O(T) for real-vocabulary models.
"""

from __future__ import annotations

import hashlib
import json
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .backends import (
    LOGSUMEXP_TOL,
    DistMode,
    TokenDistribution,
    ToyLM,
    ToyProvider,
    tokenizer_from_config,
)
from .errors import (
    NormalizationViolation,
    ProtocolVersionMismatch,
    ProviderUnavailable,
)
from .witness import WitnessSpec, witness_fingerprint, witness_to_json

WIRE_VERSION = 1
FULLVECTOR_CAP = 8192
# looser than the engine's 1e-9: decimal serialization may cost a few ulps,
# rows inside the slack are renormalized on arrival
WIRE_NORMALIZATION_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class RemoteScoreResult:
    frames: list[TokenDistribution]
    tokens: list[int] | None
    vocab_size: int
    mode: DistMode


def score_request(text: str, mode: DistMode, witness: WitnessSpec | None) -> dict:
    """Request body for POST /score; witness_spec rides along for MomentTriple."""
    body = {"version": WIRE_VERSION, "text": text, "mode": str(mode)}
    if witness is not None:
        body["witness_spec"] = json.loads(witness_to_json(witness))
    return body


def _header(line: str) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProviderUnavailable(f"header: not valid JSON ({exc.msg})") from exc
    if not isinstance(header, dict) or "version" not in header:
        raise ProviderUnavailable("header: version field missing")
    if header["version"] != WIRE_VERSION:
        raise ProtocolVersionMismatch(
            f"provider speaks version {header['version']!r}, client speaks {WIRE_VERSION}"
        )
    return header


def _frame(line: str, index: int, mode: DistMode, vocab: int, fp: str | None) -> TokenDistribution:
    try:
        raw = json.loads(line)
        if raw.get("position") != index:
            raise ValueError(f"position {raw.get('position')!r}, expected {index}")
        if mode == DistMode.FULL_VECTOR:
            row = np.asarray(raw["log_probs"], dtype=np.float64)
            if row.shape != (vocab,):
                raise ValueError(f"log_probs length {row.size}, vocab {vocab}")
        else:
            triple = (
                float(raw["observed_logprob"]),
                float(raw["witness_mean"]),
                float(raw["witness_var"]),
            )
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise ProviderUnavailable(f"frame {index}: {exc}") from exc
    if mode == DistMode.FULL_VECTOR:
        lse = float(np.logaddexp.reduce(row))
        if not np.isfinite(lse) or abs(lse) > WIRE_NORMALIZATION_SLACK:
            raise NormalizationViolation(
                f"frame {index}: log-sum-exp {lse:.3e} beyond wire slack"
            )
        if abs(lse) > LOGSUMEXP_TOL:  # renormalize only off-tolerance rows
            row = row - lse
        return TokenDistribution.full_vector(row)
    if triple[2] < 0:
        raise ProviderUnavailable(f"frame {index}: negative witness_var {triple[2]}")
    return TokenDistribution.moment_triple(*triple, witness_fingerprint=fp)


def parse_score_response(
    lines: list[str],
    *,
    witness: WitnessSpec | None,
    cap: int = FULLVECTOR_CAP,
) -> RemoteScoreResult:
    """Validate and decode a /score response into TokenDistribution frames."""
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise ProviderUnavailable("empty response body")
    header = _header(lines[0])
    try:
        mode = DistMode(header["mode"])
        vocab = int(header["vocab_size"])
    except (KeyError, ValueError) as exc:
        raise ProviderUnavailable(f"header: {exc}") from exc
    if mode == DistMode.FULL_VECTOR and vocab > cap:
        raise ProtocolVersionMismatch(
            f"vocab {vocab} exceeds the FullVector cap {cap}; MomentTriple required"
        )
    if mode == DistMode.MOMENT_TRIPLE and witness is None:
        raise ValueError("MomentTriple responses need the witness that was sent")
    fp = witness_fingerprint(witness) if witness is not None else None
    frames = [
        _frame(line, i, mode, vocab, fp if mode == DistMode.MOMENT_TRIPLE else None)
        for i, line in enumerate(lines[1:])
    ]
    tokens = header.get("tokens")
    if tokens is not None:
        tokens = [int(t) for t in tokens]
        if len(tokens) != len(frames):
            raise ProviderUnavailable(
                f"header lists {len(tokens)} tokens but {len(frames)} frames arrived"
            )
    return RemoteScoreResult(frames=frames, tokens=tokens, vocab_size=vocab, mode=mode)


def remote_score(
    endpoint: str,
    text: str,
    *,
    witness: WitnessSpec | None = None,
    mode: DistMode | str = DistMode.FULL_VECTOR,
    cap: int = FULLVECTOR_CAP,
    timeout: float = 10.0,
) -> RemoteScoreResult:
    """POST the text to a provider and decode its frames."""
    mode = DistMode(mode)
    if mode == DistMode.MOMENT_TRIPLE and witness is None:
        raise ValueError("MomentTriple mode needs a witness spec")
    body = json.dumps(score_request(text, mode, witness)).encode("utf-8")
    request = urllib.request.Request(
        endpoint, data=body, headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            if response.status != 200:
                raise ProviderUnavailable(f"provider returned HTTP {response.status}")
            payload = response.read().decode("utf-8")
    except urllib.error.HTTPError as exc:
        raise ProviderUnavailable(f"provider returned HTTP {exc.code}") from exc
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise ProviderUnavailable(f"provider unreachable: {exc}") from exc
    return parse_score_response(payload.splitlines(), witness=witness, cap=cap)


# ── provider wrapper ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class RemoteProvider:
    """Drop-in scoring provider backed by a wire-protocol endpoint."""

    endpoint: str
    mode: DistMode = DistMode.FULL_VECTOR
    cap: int = FULLVECTOR_CAP
    timeout: float = 10.0

    @property
    def provider_id(self) -> str:
        digest = hashlib.sha1(self.endpoint.encode("utf-8")).hexdigest()[:16]
        return f"remote:{digest}"

    def score_for_witness(self, text: str, tokens, witness: WitnessSpec):
        """(frames or rows, observed tokens); moments are provider-side here."""
        result = remote_score(
            self.endpoint, text, witness=witness, mode=self.mode,
            cap=self.cap, timeout=self.timeout,
        )
        toks = result.tokens if result.tokens is not None else tokens
        if toks is None:
            raise ProviderUnavailable("provider returned no tokens and none were supplied")
        toks = np.asarray(toks, dtype=np.int64)
        if result.mode == DistMode.FULL_VECTOR:
            if len(result.frames) != toks.size:
                raise ProviderUnavailable(
                    f"{len(result.frames)} frames for {toks.size} tokens"
                )
            return np.stack([f.log_probs for f in result.frames]), toks
        return result.frames, toks

    def to_config(self) -> dict:
        return {
            "kind": "remote",
            "endpoint": self.endpoint,
            "mode": str(self.mode),
            "cap": self.cap,
            "timeout": self.timeout,
        }


def provider_from_config(config: dict) -> ToyProvider | RemoteProvider:
    """Rebuild a scoring provider from its to_config() dict."""
    kind = config.get("kind")
    if kind == "toy":
        model = ToyLM.from_json(json.dumps(config["model"]))
        return ToyProvider(model, tokenizer_from_config(config["tokenizer"]))
    if kind == "remote":
        return RemoteProvider(
            endpoint=config["endpoint"],
            mode=DistMode(config.get("mode", "FullVector")),
            cap=int(config.get("cap", FULLVECTOR_CAP)),
            timeout=float(config.get("timeout", 10.0)),
        )
    raise ValueError(f"unknown provider kind {kind!r}")
