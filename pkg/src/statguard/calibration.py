"""Empirical null calibration and rank p-values.

The null for a domain is the sorted vector of detector statistics over a
human-written corpus. A fresh text's p-value is its rank among those stats:
p = (1 + #{null stats strictly above S}) / (1 + m). The cross-domain rule
takes the maximum p over all eight domains, which can only fail to reject
more often than any single domain.

Artifacts are fingerprinted to the witness and provider so nulls calibrated
for one detector are never silently reused for another.
"""

from __future__ import annotations

import hashlib
import os
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import GENERAL, Domain, Origin, TextSample
from .errors import (
    AlphaUnattainable,
    EmptyCorpus,
    FingerprintMismatch,
    MixedOrigin,
    UncalibratedDomain,
)
from .statistics import general_stat
from .witness import WitnessSpec, witness_to_json

SGND_MAGIC = b"SGND"
SGND_VERSION = 1


@dataclass(frozen=True)
class Detector:
    """A witness plus the provider it scores with; the calibration identity."""

    witness: WitnessSpec
    provider_id: str

    @property
    def fingerprint(self) -> str:
        payload = witness_to_json(self.witness) + "|" + self.provider_id
        return hashlib.sha1(payload.encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class NullDistribution:
    domain: Domain | str
    stats: np.ndarray
    detector_fingerprint: str
    created_at: float

    def __post_init__(self):
        stats = np.asarray(self.stats, dtype=np.float64)
        if stats.size < 1:
            raise ValueError("null distribution needs at least one statistic")
        if np.any(np.diff(stats) < 0):
            raise ValueError("null statistics must be sorted ascending")
        if not self.detector_fingerprint:
            raise ValueError("fingerprint must be nonempty")
        object.__setattr__(self, "stats", stats)

    @property
    def m(self) -> int:
        return int(self.stats.size)

    @property
    def p_floor(self) -> float:
        """Smallest attainable p-value at this calibration size."""
        return 1.0 / (self.m + 1)


@dataclass(frozen=True)
class Decision:
    statistic: float
    p_value: float
    per_domain_p: dict[Domain, float]
    alpha: float
    reject: bool
    domain_used: Domain | str
    threshold: float

    def __post_init__(self):
        assert self.reject == (self.p_value <= self.alpha)


# ── calibration ───────────────────────────────────────────────────────────

def statistic_for_text(
    detector: Detector, provider, text: str, tokens: Sequence[int] | None = None
) -> float:
    rows, toks = provider.score_for_witness(text, tokens, detector.witness)
    return general_stat(rows, toks, detector.witness).value


def calibrate(
    human_corpus: Sequence[TextSample],
    detector: Detector,
    provider,
    domain: Domain,
) -> NullDistribution:
    if domain == GENERAL:
        raise ValueError("the cross-domain rule is derived, not calibrated directly")
    samples = list(human_corpus)
    if not samples:
        raise EmptyCorpus(f"no texts to calibrate domain {domain}")
    for sample in samples:
        if sample.origin != Origin.HUMAN:
            raise MixedOrigin(f"sample {sample.id} has origin {sample.origin}")
        if sample.domain != domain:
            raise ValueError(f"sample {sample.id} is {sample.domain}, not {domain}")
    values = [
        statistic_for_text(detector, provider, s.text, s.tokens or None)
        for s in samples
    ]
    return NullDistribution(
        domain=domain,
        stats=np.sort(np.asarray(values)),
        detector_fingerprint=detector.fingerprint,
        created_at=time.time(),
    )


# ── rank p-values and thresholds ──────────────────────────────────────────

def p_value(S: float, null: NullDistribution) -> float:
    """(1 + #{null stats strictly above S}) / (1 + m); ties do not count."""
    above = null.m - int(np.searchsorted(null.stats, S, side="right"))
    return (1 + above) / (1 + null.m)


def threshold(null: NullDistribution, alpha: float) -> float:
    """The k-th largest null statistic, k = floor(alpha (1+m)); rejecting when
    S exceeds it matches p_value(S) <= alpha away from ties."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha {alpha} outside (0, 1)")
    k = int(np.floor(alpha * (1 + null.m)))
    if k < 1:
        raise AlphaUnattainable(alpha, null.m)
    return float(null.stats[null.m - k])


# ── decisions ─────────────────────────────────────────────────────────────

def _checked_null(store: "CalibrationStore", domain: Domain, detector: Detector) -> NullDistribution:
    null = store.get(domain)
    if null.detector_fingerprint != detector.fingerprint:
        raise FingerprintMismatch(detector.fingerprint, null.detector_fingerprint)
    return null


def general_p(
    text: str,
    detector: Detector,
    provider,
    store: "CalibrationStore",
    *,
    tokens: Sequence[int] | None = None,
) -> tuple[float, dict[Domain, float]]:
    """Maximum p-value across all eight domain nulls."""
    missing = [d for d in Domain if not store.has(d)]
    if missing:
        raise UncalibratedDomain(missing)
    S = statistic_for_text(detector, provider, text, tokens)
    per_domain = {
        d: p_value(S, _checked_null(store, d, detector)) for d in Domain
    }
    return max(per_domain.values()), per_domain


def detect(
    text: str,
    domain_or_general: Domain | str,
    alpha: float,
    detector: Detector,
    provider,
    store: "CalibrationStore",
    *,
    tokens: Sequence[int] | None = None,
) -> Decision:
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha {alpha} outside (0, 1)")

    def _threshold_or_inf(null: NullDistribution) -> float:
        try:
            return threshold(null, alpha)
        except AlphaUnattainable:
            # alpha below the calibration resolution: nothing can be rejected
            return float("inf")

    if domain_or_general == GENERAL:
        missing = [d for d in Domain if not store.has(d)]
        if missing:
            raise UncalibratedDomain(missing)
        nulls = {d: _checked_null(store, d, detector) for d in Domain}
        S = statistic_for_text(detector, provider, text, tokens)
        per_domain = {d: p_value(S, null) for d, null in nulls.items()}
        p = max(per_domain.values())
        c = max(_threshold_or_inf(null) for null in nulls.values())
        return Decision(
            statistic=S, p_value=p, per_domain_p=per_domain, alpha=alpha,
            reject=p <= alpha, domain_used=GENERAL, threshold=c,
        )

    domain = domain_or_general if isinstance(domain_or_general, Domain) else Domain(domain_or_general)
    null = _checked_null(store, domain, detector)
    S = statistic_for_text(detector, provider, text, tokens)
    p = p_value(S, null)
    return Decision(
        statistic=S, p_value=p, per_domain_p={}, alpha=alpha,
        reject=p <= alpha, domain_used=domain, threshold=_threshold_or_inf(null),
    )


# ── artifact files ────────────────────────────────────────────────────────

def _write_str(fh, value: str) -> None:
    raw = value.encode("utf-8")
    if len(raw) > 255:
        raise ValueError("string field too long for the artifact header")
    fh.write(struct.pack("<B", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<B", fh.read(1))
    return fh.read(n).decode("utf-8")


def save_null(path: str | Path, null: NullDistribution) -> None:
    """Atomic write: header (magic, version, domain, fingerprint, created_at,
    m) then m ascending little-endian float64 values."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    domain_name = null.domain.value if isinstance(null.domain, Domain) else str(null.domain)
    with open(tmp, "wb") as fh:
        fh.write(SGND_MAGIC)
        fh.write(struct.pack("<I", SGND_VERSION))
        _write_str(fh, domain_name)
        _write_str(fh, null.detector_fingerprint)
        fh.write(struct.pack("<d", null.created_at))
        fh.write(struct.pack("<I", null.m))
        fh.write(np.ascontiguousarray(null.stats, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_null(path: str | Path) -> NullDistribution:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SGND_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != SGND_VERSION:
            raise ValueError(f"unsupported artifact version {version}")
        domain_name = _read_str(fh)
        fingerprint = _read_str(fh)
        (created_at,) = struct.unpack("<d", fh.read(8))
        (m,) = struct.unpack("<I", fh.read(4))
        payload = fh.read(8 * m)
        if len(payload) != 8 * m or fh.read(1):
            raise ValueError("artifact length does not match its header")
    stats = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    domain = GENERAL if domain_name == GENERAL else Domain(domain_name)
    return NullDistribution(domain, stats, fingerprint, created_at)


class CalibrationStore:
    """Per-domain null artifacts under <root>/nulls/<domain>.sgnd."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.nulls_dir = self.root / "nulls"
        self.nulls_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, domain: Domain | str) -> Path:
        name = domain.value if isinstance(domain, Domain) else str(domain)
        return self.nulls_dir / f"{name}.sgnd"

    def save(self, null: NullDistribution) -> None:
        save_null(self._path(null.domain), null)

    def has(self, domain: Domain | str) -> bool:
        return self._path(domain).exists()

    def get(self, domain: Domain | str) -> NullDistribution:
        if not self.has(domain):
            raise UncalibratedDomain([domain])
        return load_null(self._path(domain))

    def domains(self) -> list[Domain]:
        return [d for d in Domain if self.has(d)]
