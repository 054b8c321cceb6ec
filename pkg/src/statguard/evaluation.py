"""Desk-scale evaluation harness: ranking metrics, error-rate tables,
detectability bound checks, and runtime profiling.

Everything here consumes calibrated detectors and toy scorers through their
public interfaces; nothing below this line touches model internals beyond the
cached probability tables that make batch scoring cheap.
"""

from __future__ import annotations

import csv
import json
import time
import tracemalloc
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .backends import ToyLM, sample_sequences
from .calibration import CalibrationStore, Detector, p_value, statistic_for_text
from .corpus import Domain, TextSample
from .errors import DegenerateVariance
from .statistics import VARIANCE_FLOOR
from .training import EXACT_SEQUENCE_LIMIT, estimate_Lw
from .witness import WitnessSpec, witness_matrix

# per-side size above which auc switches from pair counting to midranks
EXACT_PAIR_LIMIT = 10_000

DEFAULT_ALPHAS = (0.01, 0.05, 0.1)


# ── ranking metrics ───────────────────────────────────────────────────────

def _score_array(scores, label: str) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{label} scores must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{label} scores must be finite")
    return arr


def auc(human_scores, llm_scores, *, exact_limit: int = EXACT_PAIR_LIMIT) -> float:
    """P(llm score > human score) + 0.5 P(tie), over all cross pairs.

    Small inputs are counted exactly via sorted search; larger ones go through
    the midrank form of the same estimator.
    """
    h = _score_array(human_scores, "human")
    l = _score_array(llm_scores, "llm")
    if max(h.size, l.size) <= exact_limit:
        return _auc_pairs(h, l)
    return _auc_ranked(h, l)


def _auc_pairs(h: np.ndarray, l: np.ndarray) -> float:
    hs = np.sort(h)
    below = np.searchsorted(hs, l, side="left")   # human strictly below
    at_or_below = np.searchsorted(hs, l, side="right")
    wins = int(below.sum())
    ties = int(at_or_below.sum()) - wins
    return (wins + 0.5 * ties) / (h.size * l.size)


def _auc_ranked(h: np.ndarray, l: np.ndarray) -> float:
    ranks = rankdata(np.concatenate([h, l]), method="average")
    u = ranks[h.size:].sum() - l.size * (l.size + 1) / 2.0
    return u / (h.size * l.size)


def roc_curve(human_scores, llm_scores) -> list[tuple[float, float]]:
    """(fpr, tpr) sweep over every distinct score, threshold descending.

    Classify LLM when score > threshold; ties at a threshold fall on the
    diagonal segment, so the trapezoid integral matches auc.
    """
    h = _score_array(human_scores, "human")
    l = _score_array(llm_scores, "llm")
    hs, ls = np.sort(h), np.sort(l)
    cuts = np.unique(np.concatenate([h, l]))[::-1]
    fpr = (h.size - np.searchsorted(hs, cuts, side="right")) / h.size
    tpr = (l.size - np.searchsorted(ls, cuts, side="right")) / l.size
    points = [(0.0, 0.0)]
    for x, y in zip(fpr, tpr):
        pt = (float(x), float(y))
        if pt != points[-1]:
            points.append(pt)
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


def roc_trapezoid(points: Sequence[tuple[float, float]]) -> float:
    """Trapezoid integral of a (fpr, tpr) polyline."""
    arr = np.asarray(points, dtype=np.float64)
    dx = np.diff(arr[:, 0])
    mid = (arr[:-1, 1] + arr[1:, 1]) / 2.0
    return float(np.sum(dx * mid))


# ── error-rate tables ─────────────────────────────────────────────────────

def _rates_by_domain(
    detector: Detector,
    provider,
    store: CalibrationStore,
    samples: Sequence[TextSample],
    alphas: Sequence[float],
) -> dict[tuple[float, Domain], float]:
    by_domain: dict[Domain, list[TextSample]] = {}
    for s in samples:
        by_domain.setdefault(s.domain, []).append(s)
    table: dict[tuple[float, Domain], float] = {}
    for domain in sorted(by_domain, key=lambda d: d.value):
        null = store.get(domain)  # raises UncalibratedDomain when absent
        pvals = np.array([
            p_value(statistic_for_text(detector, provider, s.text, s.tokens or None), null)
            for s in by_domain[domain]
        ])
        for alpha in sorted(alphas):
            table[(alpha, domain)] = float(np.mean(pvals <= alpha))
    return table


def type1_power_table(
    detector: Detector,
    provider,
    store: CalibrationStore,
    test_human: Sequence[TextSample],
    test_llm: Sequence[TextSample],
    alphas: Sequence[float] = DEFAULT_ALPHAS,
) -> tuple[dict[tuple[float, Domain], float], dict[tuple[float, Domain], float]]:
    """Empirical rejection rate per (alpha, domain): the human table is the
    type-I error, the llm table is power. Test sets must be disjoint from
    whatever calibrated the store; that is the caller's contract."""
    for alpha in alphas:
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha {alpha} outside (0, 1)")
    type1 = _rates_by_domain(detector, provider, store, test_human, alphas)
    power = _rates_by_domain(detector, provider, store, test_llm, alphas)
    return type1, power


# ── batch scoring ─────────────────────────────────────────────────────────

def batch_statistics(w: WitnessSpec, model: ToyLM, sequences) -> np.ndarray:
    """Standardized witness statistic for every row of an (n, T) token batch,
    scored under `model`. One (n, V) slab per position keeps memory flat in T.
    """
    X = np.asarray(sequences, dtype=np.int64)
    if X.ndim != 2 or X.size == 0:
        raise ValueError("sequences must be a nonempty (n, T) array")
    n, T = X.shape
    ids = model.batch_context_ids(X)
    table = model.log_prob_matrix
    rows_idx = np.arange(n)
    num = np.zeros(n)
    var = np.zeros(n)
    prev = np.zeros(n)
    for t in range(T):
        rows = table[ids[:, t]]
        W = witness_matrix(w, rows, prev_obs_logprob=prev)
        q = np.exp(rows)
        mean = np.sum(q * W, axis=1)
        var += np.sum(q * (W - mean[:, None]) ** 2, axis=1)
        num += W[rows_idx, X[:, t]] - mean
        prev = rows[rows_idx, X[:, t]]
    if np.any(var <= VARIANCE_FLOOR):
        bad = int(np.argmax(var <= VARIANCE_FLOOR))
        raise DegenerateVariance(f"sequence {bad}: summed conditional variance at the floor")
    return num / np.sqrt(var)


# ── detectability bound ───────────────────────────────────────────────────

def tnr_bound_check(
    w: WitnessSpec,
    p_model: ToyLM,
    q_model: ToyLM,
    T: int,
    alpha: float,
    n_mc: int,
    *,
    rng: np.random.Generator | None = None,
    lw_samples: int | None = None,
) -> tuple[float, float]:
    """Empirical true-negative rate on human draws at the normal threshold
    z_alpha, against the lower bound min{alpha + phi(z_alpha) L_w, 1 - alpha}.

    L_w comes from exact enumeration when the sequence space allows it,
    otherwise Monte Carlo with lw_samples (default n_mc) prefixes.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha {alpha} outside (0, 1)")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    if p_model.vocab_size ** T <= EXACT_SEQUENCE_LIMIT:
        L_w = estimate_Lw(w, p_model, q_model, T)
    else:
        L_w = estimate_Lw(w, p_model, q_model, T, n_samples=lw_samples or n_mc, rng=rng)
    z = norm.ppf(alpha)  # lower quantile, negative for alpha < 1/2
    bound = min(alpha + norm.pdf(z) * L_w, 1.0 - alpha)
    X = sample_sequences(p_model, n_mc, T, rng)
    S = batch_statistics(w, q_model, X)
    empirical_tnr = float(np.mean(S <= z))
    return empirical_tnr, float(bound)


# ── profiling ─────────────────────────────────────────────────────────────

def profile_runtime(
    detector: Detector, provider, token_seqs: Sequence[Sequence[int]]
) -> list[tuple[int, float, int]]:
    """(token_count, seconds, peak_bytes) per input, sorted by length.

    Runs are serialized so the memory peaks do not bleed into each other; an
    empty sequence is reported without touching the scorer.
    """
    points: list[tuple[int, float, int]] = []
    for toks in token_seqs:
        toks = list(toks)
        if not toks:
            points.append((0, 0.0, 0))
            continue
        tracemalloc.start()
        start = time.perf_counter()
        statistic_for_text(detector, provider, "", tokens=toks)
        elapsed = time.perf_counter() - start
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        points.append((len(toks), elapsed, int(peak)))
    return sorted(points)


# ── splits and report plumbing ────────────────────────────────────────────

def split_half(samples: Sequence[TextSample], seed: int = 0) -> tuple[list[TextSample], list[TextSample]]:
    """Seeded 50/50 split within each domain: first half calibrates or
    trains, second half tests."""
    by_domain: dict[Domain, list[TextSample]] = {}
    for s in samples:
        by_domain.setdefault(s.domain, []).append(s)
    first: list[TextSample] = []
    second: list[TextSample] = []
    rng = np.random.default_rng(seed)
    for domain in sorted(by_domain, key=lambda d: d.value):
        pool = by_domain[domain]
        order = rng.permutation(len(pool))
        cut = len(pool) // 2
        first.extend(pool[i] for i in order[:cut])
        second.extend(pool[i] for i in order[cut:])
    return first, second


def _in_unit(value: float) -> bool:
    return 0.0 <= value <= 1.0


@dataclass(frozen=True)
class EvalReport:
    """One run's worth of tables and curves, ready for the line-record and
    CSV writers below."""

    auc_by_detector_domain: Mapping[tuple[str, Domain], float]
    roc_points: Sequence[tuple[float, float]]
    type1_table: Mapping[tuple[float, Domain], float]
    power_table: Mapping[tuple[float, Domain], float]
    tnr_bound: Mapping[str, tuple[float, float]]
    variance_ratio: Mapping[str, float]
    runtime_points: Sequence[tuple[int, float, int]]

    def __post_init__(self) -> None:
        for key, value in self.auc_by_detector_domain.items():
            if not _in_unit(value):
                raise ValueError(f"auc out of [0, 1] for {key}")
        for table in (self.type1_table, self.power_table):
            for key, rate in table.items():
                if not _in_unit(rate):
                    raise ValueError(f"rate out of [0, 1] for {key}")
        for label, (empirical, _) in self.tnr_bound.items():
            if not _in_unit(empirical):
                raise ValueError(f"empirical TNR out of [0, 1] for {label}")
        fprs = [p[0] for p in self.roc_points]
        if any(b < a for a, b in zip(fprs, fprs[1:])):
            raise ValueError("roc_points must be monotone in fpr")
        for count, seconds, peak in self.runtime_points:
            if count < 0 or seconds < 0 or peak < 0:
                raise ValueError("runtime points must be nonnegative")


def _domain_name(domain) -> str:
    return domain.value if isinstance(domain, Domain) else str(domain)


def _jsonable(value: float):
    return value if np.isfinite(value) else None


def write_report(path: str | Path, report: EvalReport) -> None:
    """One JSON record per line, discriminated by a `record` field."""
    with open(path, "w", encoding="utf-8") as fh:
        for (det, domain), value in report.auc_by_detector_domain.items():
            fh.write(json.dumps({
                "record": "auc", "detector": det,
                "domain": _domain_name(domain), "value": _jsonable(value),
            }) + "\n")
        for fpr, tpr in report.roc_points:
            fh.write(json.dumps({"record": "roc", "fpr": fpr, "tpr": tpr}) + "\n")
        for name, table in (("type1", report.type1_table), ("power", report.power_table)):
            for (alpha, domain), rate in table.items():
                fh.write(json.dumps({
                    "record": name, "alpha": alpha,
                    "domain": _domain_name(domain), "rate": rate,
                }) + "\n")
        for label, (empirical, bound) in report.tnr_bound.items():
            fh.write(json.dumps({
                "record": "tnr_bound", "label": label,
                "empirical_tnr": empirical, "bound": _jsonable(bound),
            }) + "\n")
        for label, value in report.variance_ratio.items():
            fh.write(json.dumps({
                "record": "variance_ratio", "label": label, "value": _jsonable(value),
            }) + "\n")
        for count, seconds, peak in report.runtime_points:
            fh.write(json.dumps({
                "record": "runtime", "tokens": count,
                "seconds": seconds, "peak_bytes": peak,
            }) + "\n")


def write_tables_csv(path: str | Path, report: EvalReport) -> None:
    """Type-I and power rates side by side, one row per (alpha, domain)."""
    keys = sorted(
        set(report.type1_table) | set(report.power_table),
        key=lambda k: (k[0], _domain_name(k[1])),
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "domain", "type1", "power"])
        for key in keys:
            alpha, domain = key
            writer.writerow([
                alpha,
                _domain_name(domain),
                report.type1_table.get(key, ""),
                report.power_table.get(key, ""),
            ])
