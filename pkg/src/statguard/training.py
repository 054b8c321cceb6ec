"""Witness training: gradient ascent on a two-sample t-test objective.

Scores are raw per-text sums of the witness at observed tokens; the objective
centers and scales them across the two corpora, so a witness that separates
LLM from human text earns a large positive value. Gradients flow through the
chain rule: objective -> per-text scores -> witness parameters.

Also computes the separation quantity L_w that lower-bounds the true negative
rate: the gap between sampled-token and observed-token witness expectations
under the human process, standardized by the total sampled-witness variance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import BSpline as _SciBSpline

from .backends import DistMode, ToyLM, sample_sequences
from .corpus import Domain, TextSample
from .errors import (
    DegenerateBatch,
    DegenerateVariance,
    ModeMismatch,
    NonFiniteGradient,
)
from .witness import (
    SPLINE_DEGREE,
    WitnessFamily,
    WitnessSpec,
    full_knot_vector,
    init_witness,
    knots_from_quantiles,
    observed_features,
    mlp_forward,
    mlp_weighted_param_grad,
    witness_fingerprint,
    witness_matrix,
)

DEFAULT_VARIANCE_FLOOR = 1e-12
IMPROVEMENT_TOL = 1e-6
EXACT_SEQUENCE_LIMIT = 300_000  # V**T above this forces Monte Carlo in estimate_Lw


@dataclass(frozen=True)
class TrainConfig:
    family: WitnessFamily
    step_size: float = 0.05
    max_iters: int = 200
    batch_size: int = 32
    seed: int = 0
    early_stop_patience: int = 20
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 per class")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be > 0")


@dataclass(frozen=True, eq=False)
class TrainedWitness:
    spec: WitnessSpec
    objective_trace: np.ndarray
    final_objective: float
    stopped_early: bool = False


# ── scores and the objective ──────────────────────────────────────────────

def per_text_score(w: WitnessSpec, dists, observed) -> float:
    """Sum of witness values at the observed tokens. No centering: the
    objective centers across texts, not positions."""
    if not isinstance(dists, np.ndarray):
        frames = list(dists)
        if frames and frames[0].mode == DistMode.MOMENT_TRIPLE:
            expected = witness_fingerprint(w)
            total = 0.0
            for f in frames:
                if f.witness_fingerprint != expected:
                    raise ModeMismatch("moment frames belong to a different witness")
                total += f.observed_logprob
            return total
        dists = np.stack([f.log_probs for f in frames])
    rows = np.atleast_2d(np.asarray(dists, dtype=np.float64))
    observed = np.asarray(observed, dtype=np.int64)
    W = witness_matrix(w, rows, _prev_for(rows, observed))
    return float(W[np.arange(rows.shape[0]), observed].sum())


def _prev_for(rows: np.ndarray, observed: np.ndarray) -> np.ndarray:
    prev = np.zeros(rows.shape[0])
    if rows.shape[0] > 1:
        prev[1:] = rows[np.arange(rows.shape[0] - 1), observed[:-1]]
    return prev


def objective(
    w: WitnessSpec,
    human_scores,
    llm_scores,
    *,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
) -> float:
    """(mean llm − mean human) / sqrt(var human + var llm), unbiased variances.

    The witness argument is carried for interface symmetry; the value depends
    on it only through the scores.
    """
    del w
    h = np.asarray(human_scores, dtype=np.float64)
    l = np.asarray(llm_scores, dtype=np.float64)
    if h.size < 2 or l.size < 2:
        raise ValueError("need at least 2 scores per class")
    gap = float(l.mean() - h.mean())
    spread = float(h.var(ddof=1) + l.var(ddof=1))
    if spread < variance_floor:
        if gap == 0.0:
            raise DegenerateBatch("both batches are constant with equal means")
        spread = variance_floor
    return gap / float(np.sqrt(spread))


def _score_coefficients(
    h_scores: np.ndarray, l_scores: np.ndarray, variance_floor: float
) -> tuple[np.ndarray, np.ndarray]:
    """d(objective)/d(score) for each human and llm score."""
    n_h, n_l = h_scores.size, l_scores.size
    mh, ml = h_scores.mean(), l_scores.mean()
    spread = h_scores.var(ddof=1) + l_scores.var(ddof=1)
    floored = spread < variance_floor
    d = float(np.sqrt(max(spread, variance_floor)))
    u = (ml - mh) / d
    coeff_l = np.full(n_l, 1.0 / (n_l * d))
    coeff_h = np.full(n_h, -1.0 / (n_h * d))
    if not floored:
        # variance terms of the quotient rule
        coeff_l -= u * (l_scores - ml) / ((n_l - 1) * d * d)
        coeff_h -= u * (h_scores - mh) / ((n_h - 1) * d * d)
    return coeff_h, coeff_l


# ── per-family score lanes ────────────────────────────────────────────────

class _LinearLane:
    """ContextLinear and BSpline: scores are linear in the parameters."""

    def __init__(self, design: np.ndarray):
        self.design = design

    def scores(self, params: np.ndarray) -> np.ndarray:
        return self.design @ params

    def grad(self, params: np.ndarray, coeff: np.ndarray, idx: np.ndarray) -> np.ndarray:
        del params
        return coeff @ self.design[idx]


class _MlpLane:
    def __init__(self, feats: list[np.ndarray]):
        self.feats = feats

    def scores(self, params: np.ndarray) -> np.ndarray:
        return np.array([mlp_forward(params, F).sum() for F in self.feats])

    def grad(self, params: np.ndarray, coeff: np.ndarray, idx: np.ndarray) -> np.ndarray:
        stacked = np.vstack([self.feats[i] for i in idx])
        per_row = np.concatenate(
            [np.full(self.feats[i].shape[0], c) for i, c in zip(idx, coeff)]
        )
        return mlp_weighted_param_grad(params, stacked, per_row)


def _spline_basis(spec: WitnessSpec, u: np.ndarray) -> np.ndarray:
    t = full_knot_vector(spec.knots)
    clamped = np.clip(u, spec.knots[0], spec.knots[-1])
    return _SciBSpline.design_matrix(clamped, t, SPLINE_DEGREE).toarray()


def _build_lane(spec: WitnessSpec, batch: Sequence[tuple[np.ndarray, np.ndarray]]):
    family = spec.family
    if family == WitnessFamily.LOG_PROB_IDENTITY:
        raise ValueError("LogProbIdentity has no trainable parameters")
    if family == WitnessFamily.TINY_MLP:
        feats = [
            observed_features(np.atleast_2d(rows), np.asarray(obs, dtype=np.int64))
            for rows, obs in batch
        ]
        return _MlpLane(feats)
    rows_design = []
    for rows, obs in batch:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        obs = np.asarray(obs, dtype=np.int64)
        if family == WitnessFamily.CONTEXT_LINEAR:
            rows_design.append(observed_features(rows, obs).sum(axis=0))
        else:
            u = rows[np.arange(rows.shape[0]), obs]
            rows_design.append(_spline_basis(spec, u).sum(axis=0))
    return _LinearLane(np.stack(rows_design))


def grad_objective(
    w: WitnessSpec,
    human_batch: Sequence[tuple[np.ndarray, np.ndarray]],
    llm_batch: Sequence[tuple[np.ndarray, np.ndarray]],
    *,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
) -> np.ndarray:
    """Analytic gradient of the objective in the witness parameters.

    Batches are sequences of (log-prob rows, observed tokens) pairs.
    """
    lane_h = _build_lane(w, human_batch)
    lane_l = _build_lane(w, llm_batch)
    h_scores = lane_h.scores(w.params)
    l_scores = lane_l.scores(w.params)
    coeff_h, coeff_l = _score_coefficients(h_scores, l_scores, variance_floor)
    all_h = np.arange(len(human_batch))
    all_l = np.arange(len(llm_batch))
    grad = lane_h.grad(w.params, coeff_h, all_h) + lane_l.grad(w.params, coeff_l, all_l)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient has non-finite entries")
    return grad


# ── the training loop ─────────────────────────────────────────────────────

def _scored_pairs(samples: Sequence[TextSample], provider) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for sample in samples:
        rows, toks = provider.score_for_witness(sample.text, sample.tokens or None, None)
        pairs.append((rows, toks))
    return pairs


def _with_params(spec: WitnessSpec, params: np.ndarray) -> WitnessSpec:
    return WitnessSpec(spec.family, params, spec.knots)


def train(
    config: TrainConfig,
    human_corpus: Sequence[TextSample],
    llm_corpus: Sequence[TextSample],
    provider,
) -> TrainedWitness:
    """Fixed-step full- or mini-batch ascent; returns the best iterate seen."""
    rng = np.random.default_rng(config.seed)
    human = _scored_pairs(human_corpus, provider)
    llm = _scored_pairs(llm_corpus, provider)
    if len(human) < 2 or len(llm) < 2:
        raise ValueError("need at least 2 texts per class")

    knots = None
    if config.family == WitnessFamily.BSPLINE:
        pool = np.concatenate(
            [rows[np.arange(len(obs)), obs] for rows, obs in human + llm]
        )
        knots = knots_from_quantiles(pool, n_interior=8)
    spec = init_witness(config.family, rng, knots=knots)

    lane_h = _build_lane(spec, human)
    lane_l = _build_lane(spec, llm)
    n_h, n_l = len(human), len(llm)
    all_h, all_l = np.arange(n_h), np.arange(n_l)

    def full_objective(params: np.ndarray) -> float:
        return objective(
            spec, lane_h.scores(params), lane_l.scores(params),
            variance_floor=config.variance_floor,
        )

    params = spec.params.copy()
    trace: list[float] = []
    best_obj = -np.inf
    best_params = params.copy()
    since_improve = 0
    stopped_early = False

    for _ in range(config.max_iters):
        obj = full_objective(params)
        trace.append(obj)
        if obj > best_obj:
            if obj > best_obj + IMPROVEMENT_TOL:
                since_improve = 0
            best_obj = obj
            best_params = params.copy()
        else:
            since_improve += 1
        if since_improve >= config.early_stop_patience:
            stopped_early = True
            break

        idx_h = all_h if config.batch_size >= n_h else rng.choice(
            n_h, config.batch_size, replace=False
        )
        idx_l = all_l if config.batch_size >= n_l else rng.choice(
            n_l, config.batch_size, replace=False
        )
        h_scores = lane_h.scores(params)[idx_h]
        l_scores = lane_l.scores(params)[idx_l]
        coeff_h, coeff_l = _score_coefficients(h_scores, l_scores, config.variance_floor)
        grad = lane_h.grad(params, coeff_h, idx_h) + lane_l.grad(params, coeff_l, idx_l)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient("gradient has non-finite entries")
        params = params + config.step_size * grad

    final = full_objective(params)
    trace.append(final)
    if final > best_obj:
        best_obj = final
        best_params = params.copy()

    return TrainedWitness(
        spec=_with_params(spec, best_params),
        objective_trace=np.asarray(trace),
        final_objective=best_obj,
        stopped_early=stopped_early,
    )


def train_per_domain(
    config: TrainConfig,
    human_corpus: Sequence[TextSample],
    llm_corpus: Sequence[TextSample],
    provider,
) -> dict[Domain, TrainedWitness]:
    """One witness per domain present in both corpora."""
    by_domain: dict[Domain, tuple[list, list]] = {}
    for sample in human_corpus:
        by_domain.setdefault(sample.domain, ([], []))[0].append(sample)
    for sample in llm_corpus:
        by_domain.setdefault(sample.domain, ([], []))[1].append(sample)
    out = {}
    for domain in sorted(by_domain, key=lambda d: d.value):
        h, l = by_domain[domain]
        if len(h) >= 2 and len(l) >= 2:
            out[domain] = train(config, h, l, provider)
    return out


# ── manifest ──────────────────────────────────────────────────────────────

def save_training_manifest(path: str | Path, config: TrainConfig, trained: TrainedWitness) -> None:
    """Line records: one config header, then one line per trace entry."""
    header = {
        "record": "config",
        "family": config.family.value,
        "step_size": config.step_size,
        "max_iters": config.max_iters,
        "batch_size": config.batch_size,
        "seed": config.seed,
        "early_stop_patience": config.early_stop_patience,
        "variance_floor": config.variance_floor,
        "final_objective": trained.final_objective,
        "stopped_early": trained.stopped_early,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for i, value in enumerate(trained.objective_trace):
            record = {"record": "trace", "iteration": i, "objective": float(value)}
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_training_manifest(path: str | Path) -> tuple[TrainConfig, np.ndarray, float, bool]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        trace = [json.loads(line)["objective"] for line in fh if line.strip()]
    config = TrainConfig(
        family=WitnessFamily(header["family"]),
        step_size=header["step_size"],
        max_iters=header["max_iters"],
        batch_size=header["batch_size"],
        seed=header["seed"],
        early_stop_patience=header["early_stop_patience"],
        variance_floor=header["variance_floor"],
    )
    return config, np.asarray(trace), header["final_objective"], header["stopped_early"]


# ── the separation quantity L_w ───────────────────────────────────────────

def _next_row(model: ToyLM, ctx: int) -> np.ndarray:
    return model.log_prob_matrix[ctx]


def _advance(model: ToyLM, ctx: int, token: int) -> int:
    span = model.order - 1
    if span == 0:
        return 0
    return (ctx % model.vocab_size ** (span - 1)) * model.vocab_size + token


def estimate_Lw(
    w: WitnessSpec,
    p_model: ToyLM,
    q_model: ToyLM,
    T: int,
    *,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
) -> float:
    """Numerator: per position, sampled-witness mean under q minus observed-
    witness mean under the human process p, prefixes drawn from p. Denominator:
    root total variance of the sampled witness under (prefix ~ p, token ~ q).

    Exact prefix-tree enumeration by default; Monte Carlo over n_samples
    prefixes when requested.
    """
    if p_model.vocab_size != q_model.vocab_size:
        raise ValueError("models must share a vocabulary")
    if T < 1:
        raise ValueError("T must be >= 1")
    if n_samples is not None:
        return _lw_monte_carlo(w, p_model, q_model, T, n_samples, rng, variance_floor)
    if p_model.vocab_size ** T > EXACT_SEQUENCE_LIMIT:
        raise ValueError("sequence space too large to enumerate; pass n_samples")
    return _lw_exact(w, p_model, q_model, T, variance_floor)


def _lw_exact(w, p_model: ToyLM, q_model: ToyLM, T: int, variance_floor: float) -> float:
    V = p_model.vocab_size
    # frontier of prefixes: probability under p, per-model context, and the
    # q-log-prob of the last emitted token (the witness prev feature)
    frontier = [(1.0, 0, 0, 0.0)]
    numerator = 0.0
    total_var = 0.0
    for _ in range(T):
        e_var = 0.0
        e_mean = 0.0
        e_mean_sq = 0.0
        new_frontier = []
        for prob, ctx_p, ctx_q, prev in frontier:
            p_row = _next_row(p_model, ctx_p)
            q_row = _next_row(q_model, ctx_q)
            w_row = witness_matrix(w, q_row[None, :], np.array([prev]))[0]
            q_prob = np.exp(q_row)
            p_prob = np.exp(p_row)
            mean_q = float(q_prob @ w_row)
            mean_p = float(p_prob @ w_row)
            var_q = float(q_prob @ (w_row - mean_q) ** 2)
            numerator += prob * (mean_q - mean_p)
            e_var += prob * var_q
            e_mean += prob * mean_q
            e_mean_sq += prob * mean_q * mean_q
            for x in range(V):
                new_frontier.append((
                    prob * float(p_prob[x]),
                    _advance(p_model, ctx_p, x),
                    _advance(q_model, ctx_q, x),
                    float(q_row[x]),
                ))
        # law of total variance over (prefix, sampled token)
        total_var += e_var + max(e_mean_sq - e_mean * e_mean, 0.0)
        frontier = new_frontier
    if total_var <= variance_floor:
        raise DegenerateVariance("sampled-witness variance at or below the floor")
    return numerator / float(np.sqrt(total_var))


def _lw_monte_carlo(
    w, p_model: ToyLM, q_model: ToyLM, T: int,
    n_samples: int, rng: np.random.Generator | None, variance_floor: float,
) -> float:
    rng = rng if rng is not None else np.random.default_rng(0)
    X = sample_sequences(p_model, n_samples, T, rng)
    n = X.shape[0]
    ctx_p = np.zeros(n, dtype=np.int64)
    ctx_q = np.zeros(n, dtype=np.int64)
    prev = np.zeros(n)
    numerator = 0.0
    total_var = 0.0
    for t in range(T):
        p_rows = p_model.log_prob_matrix[ctx_p]
        q_rows = q_model.log_prob_matrix[ctx_q]
        w_rows = witness_matrix(w, q_rows, prev)
        q_prob = np.exp(q_rows)
        p_prob = np.exp(p_rows)
        mean_q = (q_prob * w_rows).sum(axis=1)
        mean_p = (p_prob * w_rows).sum(axis=1)
        var_q = (q_prob * (w_rows - mean_q[:, None]) ** 2).sum(axis=1)
        numerator += float((mean_q - mean_p).mean())
        total_var += float(var_q.mean()) + float(mean_q.var())
        toks = X[:, t]
        prev = q_rows[np.arange(n), toks]
        span_p = p_model.order - 1
        span_q = q_model.order - 1
        ctx_p = (ctx_p % p_model.vocab_size ** max(span_p - 1, 0)) * p_model.vocab_size + toks if span_p else ctx_p
        ctx_q = (ctx_q % q_model.vocab_size ** max(span_q - 1, 0)) * q_model.vocab_size + toks if span_q else ctx_q
    if total_var <= variance_floor:
        raise DegenerateVariance("sampled-witness variance at or below the floor")
    return numerator / float(np.sqrt(total_var))
