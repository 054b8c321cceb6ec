"""Detector statistics built from exact conditional moments over the vocabulary.

Every standardized statistic here has the same shape: per position, center the
witness value of the observed token by its conditional mean under the sampling
distribution, then divide the summed numerators by the root of the summed
conditional variances. Moments are exact vocabulary sums, never sampled.

Baselines (likelihood, log-rank, and their ratio) share the result container
but use their own denominators.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .backends import DistMode, TokenDistribution, log_softmax_with_temperature
from .errors import DegenerateVariance, ModeMismatch, NonPositiveTemperature
from .witness import (
    WitnessFamily,
    WitnessSpec,
    identity_witness,
    previous_observed_logprobs,
    witness_fingerprint,
    witness_matrix,
)

VARIANCE_FLOOR = 1e-12


class StatKind(str, Enum):
    LIKELIHOOD = "Likelihood"
    LOG_RANK = "LogRank"
    LRR = "LRR"
    FAST = "Fast"
    FAST_LOGITS = "FastLogits"
    ADA = "Ada"
    GENERAL = "General"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, eq=False)
class StatisticResult:
    value: float
    per_token_numerator: np.ndarray
    denominator: float
    kind: StatKind

    def __post_init__(self):
        num = np.asarray(self.per_token_numerator, dtype=np.float64)
        object.__setattr__(self, "per_token_numerator", num)
        assert self.denominator > 0
        total = float(num.sum())
        assert abs(self.value * self.denominator - total) <= 1e-9 * max(1.0, abs(total))


# ── input normalization ───────────────────────────────────────────────────

def _as_rows(dists) -> np.ndarray | None:
    """(T, V) log-prob rows, or None when the input is moment frames."""
    if isinstance(dists, np.ndarray):
        return np.atleast_2d(np.asarray(dists, dtype=np.float64))
    frames: Sequence[TokenDistribution] = list(dists)
    if not frames:
        raise ValueError("need at least one position")
    if any(f.mode == DistMode.MOMENT_TRIPLE for f in frames):
        return None
    return np.stack([f.log_probs for f in frames])


def _moment_arrays(dists, w: WitnessSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Observed witness values, means, and variances from moment frames."""
    expected = witness_fingerprint(w)
    obs, mean, var = [], [], []
    for f in dists:
        if f.mode != DistMode.MOMENT_TRIPLE:
            raise ModeMismatch("cannot mix FullVector and MomentTriple frames")
        if f.witness_fingerprint != expected:
            raise ModeMismatch(
                f"moment frames were computed for witness {f.witness_fingerprint}, "
                f"not {expected}"
            )
        obs.append(f.observed_logprob)
        mean.append(f.witness_mean)
        var.append(f.witness_var)
    return np.asarray(obs), np.asarray(mean), np.asarray(var)


def _check_lengths(n_dists: int, observed: np.ndarray) -> None:
    if n_dists != observed.size or n_dists < 1:
        raise ValueError(f"got {n_dists} distributions for {observed.size} tokens")


def _resolve_mask(mask, T: int) -> np.ndarray:
    if mask is None:
        return np.ones(T, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (T,):
        raise ValueError(f"mask shape {mask.shape} does not match {T} positions")
    if not mask.any():
        raise ValueError("mask excludes every position")
    return mask


# ── centered moments ──────────────────────────────────────────────────────

def centered_terms(
    dists,
    observed,
    w: WitnessSpec,
    *,
    sampling=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-position (w(X_t) − E_q[w], Var_q[w]) by exact vocabulary sums.

    `sampling` optionally supplies a second row sequence for the expectation
    and variance; the witness is always evaluated on the scoring rows.
    """
    observed = np.asarray(observed, dtype=np.int64)
    rows = _as_rows(dists)
    if rows is None:
        if sampling is not None:
            raise ModeMismatch("moment frames cannot take a separate sampling model")
        frames = list(dists)
        _check_lengths(len(frames), observed)
        obs_w, mean, var = _moment_arrays(frames, w)
        return obs_w - mean, var
    _check_lengths(rows.shape[0], observed)
    if np.any(observed < 0) or np.any(observed >= rows.shape[1]):
        raise ValueError("observed token id outside the vocabulary")
    prev = previous_observed_logprobs(rows, observed)
    W = witness_matrix(w, rows, prev)
    q_rows = rows if sampling is None else _as_rows(sampling)
    if q_rows is None or q_rows.shape != rows.shape:
        raise ValueError("sampling rows must be FullVector with matching shape")
    return _centered_from_values(W, q_rows, observed)


def _centered_from_values(
    W: np.ndarray, sampling_log_probs: np.ndarray, observed: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    # two-pass moments: centering first keeps large shared offsets from
    # cancelling catastrophically in E[w^2] - E[w]^2
    q = np.exp(sampling_log_probs)
    mean = (q * W).sum(axis=1)
    centered = W - mean[:, None]
    var = (q * centered ** 2).sum(axis=1)
    num = centered[np.arange(W.shape[0]), observed]
    return num, var


def _standardized(
    num: np.ndarray, var: np.ndarray, mask: np.ndarray, kind: StatKind
) -> StatisticResult:
    total_var = float(var[mask].sum())
    if total_var <= VARIANCE_FLOOR:
        raise DegenerateVariance(
            f"summed conditional variance {total_var:.3e} is at or below the floor"
        )
    shown = np.where(mask, num, 0.0)
    denominator = float(np.sqrt(total_var))
    return StatisticResult(
        value=float(shown.sum()) / denominator,
        per_token_numerator=shown,
        denominator=denominator,
        kind=kind,
    )


# ── standardized statistics ───────────────────────────────────────────────

def general_stat(
    dists,
    observed,
    w: WitnessSpec,
    *,
    sampling=None,
    mask=None,
    kind: StatKind = StatKind.GENERAL,
) -> StatisticResult:
    num, var = centered_terms(dists, observed, w, sampling=sampling)
    return _standardized(num, var, _resolve_mask(mask, num.size), kind)


def fast_detect_stat(dists, observed, *, sampling=None, mask=None) -> StatisticResult:
    """Log-prob witness: w_t = log q_t, moments under the sampling rows."""
    return general_stat(
        dists, observed, identity_witness(), sampling=sampling, mask=mask,
        kind=StatKind.FAST,
    )


def fast_detect_stat_logits(
    logit_rows: np.ndarray, observed, temperature: float = 1.0, *, mask=None
) -> StatisticResult:
    """Standardized raw logits, moments under softmax at the given temperature.

    Per-row normalizers and the temperature both cancel through centering and
    scaling, so this equals fast_detect_stat on the normalized rows.
    """
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {temperature}")
    rows = np.atleast_2d(np.asarray(logit_rows, dtype=np.float64))
    observed = np.asarray(observed, dtype=np.int64)
    _check_lengths(rows.shape[0], observed)
    sampling = log_softmax_with_temperature(rows, temperature)
    num, var = _centered_from_values(rows, sampling, observed)
    return _standardized(num, var, _resolve_mask(mask, num.size), StatKind.FAST_LOGITS)


def ada_stat(dists, observed, spline: WitnessSpec, *, mask=None) -> StatisticResult:
    """Spline-transformed log-prob witness."""
    if spline.family != WitnessFamily.BSPLINE:
        raise ValueError(f"ada_stat needs a BSpline witness, got {spline.family}")
    return general_stat(dists, observed, spline, mask=mask, kind=StatKind.ADA)


# ── baselines ─────────────────────────────────────────────────────────────

def token_ranks(rows: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Rank of each observed token, 1 = most probable, ties by index order."""
    order = np.argsort(-rows, axis=1, kind="stable")
    inv = np.empty_like(order)
    T, V = rows.shape
    inv[np.arange(T)[:, None], order] = np.arange(V)[None, :]
    return inv[np.arange(T), observed] + 1


def baseline_stat(kind: StatKind, dists, observed, *, mask=None) -> StatisticResult:
    observed = np.asarray(observed, dtype=np.int64)
    rows = _as_rows(dists)
    if rows is None:
        raise ModeMismatch(f"{kind} needs FullVector rows")
    _check_lengths(rows.shape[0], observed)
    mask = _resolve_mask(mask, rows.shape[0])
    kept = int(mask.sum())
    obs_logprob = rows[np.arange(rows.shape[0]), observed]
    if kind == StatKind.LIKELIHOOD:
        num = np.where(mask, obs_logprob, 0.0)
        return StatisticResult(float(num.sum()) / kept, num, float(kept), kind)
    log_ranks = np.log(token_ranks(rows, observed))
    if kind == StatKind.LOG_RANK:
        num = np.where(mask, -log_ranks, 0.0)
        return StatisticResult(float(num.sum()) / kept, num, float(kept), kind)
    if kind == StatKind.LRR:
        # ratio of summed negative log-likelihood to summed log-rank;
        # both grow for humanlike text but likelihood grows faster
        denom = float(log_ranks[mask].sum())
        if denom <= 0.0:
            raise DegenerateVariance(
                "every observed token ranks first; log-rank sum is zero"
            )
        num = np.where(mask, -obs_logprob, 0.0)
        return StatisticResult(float(num.sum()) / denom, num, denom, kind)
    raise ValueError(f"{kind} is not a baseline statistic")


# ── diagnostics ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class VarianceRatio:
    sigma_q: float
    sigma_p: float

    @property
    def ratio(self) -> float:
        if self.sigma_q == 0.0 and self.sigma_p == 0.0:
            return float("nan")
        return self.sigma_q / self.sigma_p

    def __iter__(self):
        return iter((self.sigma_q, self.sigma_p))


def estimate_variance_ratio(dists_p, dists_q, w: WitnessSpec) -> VarianceRatio:
    """Root mean conditional variance of w under the scoring rows q and the
    source rows p; their ratio probes the equal-variance assumption."""
    rows_p = _as_rows(dists_p)
    rows_q = _as_rows(dists_q)
    if rows_p is None or rows_q is None:
        raise ModeMismatch("variance ratio needs FullVector rows on both sides")
    if rows_p.shape != rows_q.shape:
        raise ValueError("both sequences must share length and vocabulary")
    W = witness_matrix(w, rows_q)

    def _sigma(log_rows: np.ndarray) -> float:
        prob = np.exp(log_rows)
        mean = (prob * W).sum(axis=1)
        var = (prob * (W - mean[:, None]) ** 2).sum(axis=1)
        mean_var = float(var.mean())
        # rounding dust from a constant witness must read as exactly zero
        return float(np.sqrt(mean_var)) if mean_var > VARIANCE_FLOOR else 0.0

    return VarianceRatio(sigma_q=_sigma(rows_q), sigma_p=_sigma(rows_p))


# ── frame construction (exactness reference for the wire protocol) ────────

def moment_frames(
    spec: WitnessSpec, rows: np.ndarray, observed
) -> list[TokenDistribution]:
    """MomentTriple frames carrying (w at observed token, E_q[w], Var_q[w])."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    observed = np.asarray(observed, dtype=np.int64)
    _check_lengths(rows.shape[0], observed)
    prev = previous_observed_logprobs(rows, observed)
    W = witness_matrix(spec, rows, prev)
    q = np.exp(rows)
    mean = (q * W).sum(axis=1)
    var = (q * (W - mean[:, None]) ** 2).sum(axis=1)
    fp = witness_fingerprint(spec)
    return [
        TokenDistribution.moment_triple(
            observed_logprob=float(W[t, observed[t]]),
            witness_mean=float(mean[t]),
            witness_var=float(max(var[t], 0.0)),
            witness_fingerprint=fp,
        )
        for t in range(rows.shape[0])
    ]
