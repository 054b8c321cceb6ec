"""Exception taxonomy shared across the engine."""

from __future__ import annotations


class StatguardError(Exception):
    """Base class for every engine-raised error."""


# corpus pipeline

class CorpusParseError(StatguardError):
    """Malformed corpus record; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TooShortForTrigrams(StatguardError):
    """Text has fewer than 3 words; the 3-gram statistic is undefined."""


class InsufficientDomain(StatguardError):
    """A domain cannot supply the requested number of samples."""

    def __init__(self, domain, available: int, requested: int):
        super().__init__(
            f"domain {domain}: {available} samples available, {requested} requested"
        )
        self.domain = domain
        self.available = available
        self.requested = requested


# scoring backends

class NonPositiveTemperature(StatguardError):
    """Softmax temperature must be strictly positive."""


class UnknownToken(StatguardError):
    """Token id outside the provider vocabulary."""


class ProviderUnavailable(StatguardError):
    """Remote provider unreachable or emitted a malformed frame."""


class ProtocolVersionMismatch(StatguardError):
    """Remote provider speaks an unsupported protocol version or mode."""


class NormalizationViolation(StatguardError):
    """A FullVector log-prob row fails to normalize within tolerance."""


# statistics

class ModeMismatch(StatguardError):
    """Distribution mode incompatible with the requested computation."""


class DegenerateVariance(StatguardError):
    """Summed conditional variance at or below the floor; scorer uninformative."""


# training

class DegenerateBatch(StatguardError):
    """Objective undefined: both class variances below floor and equal means."""


class NonFiniteGradient(StatguardError):
    """Gradient contains NaN or infinity."""


# calibration

class EmptyCorpus(StatguardError):
    """Calibration corpus contains no samples."""


class MixedOrigin(StatguardError):
    """Calibration corpus must be single-origin human text."""


class AlphaUnattainable(StatguardError):
    """No finite threshold achieves p <= alpha at this null size."""

    def __init__(self, alpha: float, m: int):
        super().__init__(
            f"alpha={alpha} unattainable with m={m} null stats (p-floor {1.0 / (m + 1):.6g})"
        )
        self.alpha = alpha
        self.m = m


class UncalibratedDomain(StatguardError):
    """Requested domain(s) lack a calibration artifact."""

    def __init__(self, missing):
        names = [str(d) for d in missing] if isinstance(missing, (list, tuple, set)) else [str(missing)]
        super().__init__("no calibration for: " + ", ".join(sorted(names)))
        self.missing = tuple(sorted(names))


class FingerprintMismatch(StatguardError):
    """Calibration artifact was built for a different detector."""

    def __init__(self, expected: str, found: str):
        super().__init__(f"calibration fingerprint {found} != detector fingerprint {expected}")
        self.expected = expected
        self.found = found
