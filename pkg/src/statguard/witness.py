"""Witness families: parametric per-position score functions over the vocabulary.

A witness w assigns a real value to every candidate token given the scoring
row for its position. LogProbIdentity returns the log-probability itself;
BSpline transforms it through a clamped cubic spline; ContextLinear and
TinyMLP act on a small hand-crafted feature vector per candidate token.

The feature map is [bias, log q_t(x), entropy(q_t), rank-bucket indicators
(rank 1 / 2-5 / 6-20 / 21+), previous observed log-prob]. Entropy and the
previous-token feature are constant in x at a fixed prefix, so they cancel in
the centered statistic but matter for the uncentered training objective.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.interpolate import BSpline

SPLINE_DEGREE = 3
FEATURE_NAMES = (
    "bias",
    "log_prob",
    "entropy",
    "rank_1",
    "rank_2_5",
    "rank_6_20",
    "rank_21_plus",
    "prev_log_prob",
)
FEATURE_DIM = len(FEATURE_NAMES)


class WitnessFamily(str, Enum):
    LOG_PROB_IDENTITY = "LogProbIdentity"
    BSPLINE = "BSpline"
    CONTEXT_LINEAR = "ContextLinear"
    TINY_MLP = "TinyMLP"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, eq=False)
class WitnessSpec:
    family: WitnessFamily
    params: np.ndarray
    knots: np.ndarray | None = None

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        if not np.all(np.isfinite(params)):
            raise ValueError("witness params must be finite")
        object.__setattr__(self, "params", params)
        if self.family == WitnessFamily.BSPLINE:
            if self.knots is None:
                raise ValueError("BSpline witness needs knots")
            knots = np.asarray(self.knots, dtype=np.float64)
            if knots.size < 2 or np.any(np.diff(knots) <= 0):
                raise ValueError("knots must be strictly increasing, length >= 2")
            if params.size != knots.size + 2:
                raise ValueError(
                    f"cubic spline over {knots.size} breakpoints needs "
                    f"{knots.size + 2} coefficients, got {params.size}"
                )
            object.__setattr__(self, "knots", knots)
        elif self.knots is not None:
            raise ValueError(f"{self.family} takes no knots")
        if self.family == WitnessFamily.LOG_PROB_IDENTITY and params.size:
            raise ValueError("LogProbIdentity has no parameters")
        if self.family == WitnessFamily.CONTEXT_LINEAR and params.size != FEATURE_DIM:
            raise ValueError(f"ContextLinear needs {FEATURE_DIM} params, got {params.size}")
        if self.family == WitnessFamily.TINY_MLP:
            mlp_hidden_width(params)  # raises if the packing is inconsistent

    def equals(self, other: "WitnessSpec") -> bool:
        if self.family != other.family or not np.array_equal(self.params, other.params):
            return False
        if (self.knots is None) != (other.knots is None):
            return False
        return self.knots is None or np.array_equal(self.knots, other.knots)


# ── constructors ──────────────────────────────────────────────────────────

def identity_witness() -> WitnessSpec:
    return WitnessSpec(WitnessFamily.LOG_PROB_IDENTITY, np.empty(0))


def full_knot_vector(knots: np.ndarray) -> np.ndarray:
    """Clamped knot vector: boundary breakpoints repeated degree extra times."""
    return np.concatenate([
        np.repeat(knots[0], SPLINE_DEGREE), knots, np.repeat(knots[-1], SPLINE_DEGREE),
    ])


def greville_abscissae(knots: np.ndarray) -> np.ndarray:
    """Coefficients that make the cubic spline the identity on the knot span."""
    t = full_knot_vector(np.asarray(knots, dtype=np.float64))
    n = t.size - SPLINE_DEGREE - 1
    return np.array([t[i + 1:i + 1 + SPLINE_DEGREE].mean() for i in range(n)])


def bspline_identity(knots) -> WitnessSpec:
    knots = np.asarray(knots, dtype=np.float64)
    return WitnessSpec(WitnessFamily.BSPLINE, greville_abscissae(knots), knots)


def knots_from_quantiles(values: np.ndarray, n_interior: int = 8) -> np.ndarray:
    """Breakpoints at the min, max, and n_interior evenly spaced quantiles."""
    values = np.asarray(values, dtype=np.float64)
    qs = np.linspace(0.0, 1.0, n_interior + 2)
    knots = np.unique(np.quantile(values, qs))
    if knots.size < 2:
        lo = float(knots[0]) if knots.size else 0.0
        knots = np.array([lo - 0.5, lo + 0.5])
    return knots


MAX_MLP_HIDDEN = 16


def mlp_hidden_width(params: np.ndarray) -> int:
    """Hidden width encoded by the parameter count: h*(d+2) + 1 entries."""
    size = np.asarray(params).size
    h, rem = divmod(size - 1, FEATURE_DIM + 2)
    if rem != 0 or not (1 <= h <= MAX_MLP_HIDDEN):
        raise ValueError(f"cannot unpack TinyMLP params of length {size}")
    return h


def mlp_unpack(params: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    h = mlp_hidden_width(params)
    d = FEATURE_DIM
    W = params[: h * d].reshape(h, d)
    b = params[h * d: h * d + h]
    v = params[h * d + h: h * d + 2 * h]
    c = float(params[-1])
    return W, b, v, c


def init_witness(
    family: WitnessFamily,
    rng: np.random.Generator,
    *,
    knots: np.ndarray | None = None,
    hidden: int = 8,
    scale: float = 0.1,
) -> WitnessSpec:
    """Trainable starting point; the spline starts at the identity transform."""
    if family == WitnessFamily.LOG_PROB_IDENTITY:
        return identity_witness()
    if family == WitnessFamily.BSPLINE:
        if knots is None:
            raise ValueError("BSpline init needs knots")
        return bspline_identity(knots)
    if family == WitnessFamily.CONTEXT_LINEAR:
        params = rng.normal(0.0, scale, size=FEATURE_DIM)
        params[1] += 1.0  # lean on the log-prob feature
        return WitnessSpec(family, params)
    if family == WitnessFamily.TINY_MLP:
        n = hidden * (FEATURE_DIM + 2) + 1
        return WitnessSpec(family, rng.normal(0.0, scale, size=n))
    raise ValueError(f"unknown family {family}")


# ── evaluation ────────────────────────────────────────────────────────────

def feature_tensor(rows: np.ndarray, prev_obs_logprob: np.ndarray | None) -> np.ndarray:
    """(N, V, FEATURE_DIM) features for every candidate token of every row."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    N, V = rows.shape
    q = np.exp(rows)
    entropy = -(q * rows).sum(axis=1)
    order = np.argsort(-rows, axis=1, kind="stable")
    inv = np.empty_like(order)
    inv[np.arange(N)[:, None], order] = np.arange(V)[None, :]
    ranks = inv + 1
    if prev_obs_logprob is None:
        prev = np.zeros(N)
    else:
        prev = np.asarray(prev_obs_logprob, dtype=np.float64)
    F = np.empty((N, V, FEATURE_DIM))
    F[:, :, 0] = 1.0
    F[:, :, 1] = rows
    F[:, :, 2] = entropy[:, None]
    F[:, :, 3] = ranks == 1
    F[:, :, 4] = (ranks >= 2) & (ranks <= 5)
    F[:, :, 5] = (ranks >= 6) & (ranks <= 20)
    F[:, :, 6] = ranks >= 21
    F[:, :, 7] = prev[:, None]
    return F


def observed_features(rows: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """(T, FEATURE_DIM) features of the realized token at each position."""
    rows = np.asarray(rows, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.int64)
    T = rows.shape[0]
    prev = previous_observed_logprobs(rows, observed)
    tensor = feature_tensor(rows, prev)
    return tensor[np.arange(T), observed]


def previous_observed_logprobs(rows: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Per position, the scoring log-prob of the previous realized token (0 at t=0)."""
    T = rows.shape[0]
    prev = np.zeros(T)
    if T > 1:
        prev[1:] = rows[np.arange(T - 1), observed[:-1]]
    return prev


def _bspline_values(spec: WitnessSpec, u: np.ndarray) -> np.ndarray:
    t = full_knot_vector(spec.knots)
    spline = BSpline(t, spec.params, SPLINE_DEGREE, extrapolate=True)
    clamped = np.clip(u, spec.knots[0], spec.knots[-1])
    return spline(clamped)


def mlp_forward(params: np.ndarray, F: np.ndarray) -> np.ndarray:
    W, b, v, c = mlp_unpack(params)
    return np.tanh(F @ W.T + b) @ v + c


def mlp_weighted_param_grad(params: np.ndarray, F: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    """d/dparams of sum_n coeff_n * mlp(F_n); F is (N, d), coeff is (N,)."""
    W, b, v, c = mlp_unpack(params)
    A = np.tanh(F @ W.T + b)
    gate = coeff[:, None] * (1.0 - A ** 2) * v
    gW = gate.T @ F
    gb = gate.sum(axis=0)
    gv = coeff @ A
    gc = coeff.sum()
    return np.concatenate([gW.ravel(), gb, gv, [gc]])


def witness_matrix(
    spec: WitnessSpec,
    rows: np.ndarray,
    prev_obs_logprob: np.ndarray | None = None,
) -> np.ndarray:
    """Evaluate the witness at every candidate token: (N, V) values for (N, V) rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if spec.family == WitnessFamily.LOG_PROB_IDENTITY:
        return rows
    if spec.family == WitnessFamily.BSPLINE:
        return _bspline_values(spec, rows)
    F = feature_tensor(rows, prev_obs_logprob)
    if spec.family == WitnessFamily.CONTEXT_LINEAR:
        return F @ spec.params
    N, V = rows.shape
    return mlp_forward(spec.params, F.reshape(N * V, FEATURE_DIM)).reshape(N, V)


# ── serialization ─────────────────────────────────────────────────────────

def witness_to_json(spec: WitnessSpec) -> str:
    """Canonical form: fixed field order, shortest round-trip decimal reals."""
    payload: dict = {
        "family": spec.family.value,
        "params": [float(x) for x in spec.params],
    }
    if spec.knots is not None:
        payload["knots"] = [float(x) for x in spec.knots]
    return json.dumps(payload, separators=(",", ":"))


def witness_from_json(text: str | dict) -> WitnessSpec:
    payload = json.loads(text) if isinstance(text, str) else text
    family = WitnessFamily(payload["family"])
    params = np.asarray(payload["params"], dtype=np.float64)
    knots = payload.get("knots")
    return WitnessSpec(
        family, params, None if knots is None else np.asarray(knots, dtype=np.float64)
    )


def witness_fingerprint(spec: WitnessSpec) -> str:
    return hashlib.sha1(witness_to_json(spec).encode()).hexdigest()


def save_witness(path: str | Path, spec: WitnessSpec) -> None:
    Path(path).write_text(witness_to_json(spec) + "\n", encoding="utf-8")


def load_witness(path: str | Path) -> WitnessSpec:
    return witness_from_json(Path(path).read_text(encoding="utf-8"))
