"""Witness evaluation for MomentTriple frames, from the wire-level spec.

The detection engine serializes its witness as {"family", "params",
"knots"?}. A provider serving MomentTriple frames must evaluate that witness
at every candidate token and return, per position, the witness value at the
observed token together with its mean and variance under the scoring row.
The families and their evaluation rules are part of the protocol:

- LogProbIdentity: w(x) = log q(x); no parameters.
- BSpline: clamped cubic spline over strictly increasing breakpoints; the
  full knot vector repeats each boundary breakpoint three extra times, the
  input log-prob is clipped to the breakpoint span, and params are the
  spline coefficients (len(knots) + 2 of them).
- ContextLinear: dot product of params with the 8-feature vector
  [bias, log_prob, entropy, rank_1, rank_2_5, rank_6_20, rank_21_plus,
  prev_log_prob], ranks taken over the row in descending log-prob order
  with ties broken by token id.
- TinyMLP: one tanh hidden layer over the same features; params pack
  [W (h x 8), b (h), v (h), c] with h inferred from the length.

The prev_log_prob feature at position t is the scoring log-prob of the
realized token at t-1 (0 at t=0) and is shared by all candidates of the
position, as is entropy; both therefore cancel in centered statistics but
must still be computed so the observed-token witness value matches.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import BSpline

SPLINE_DEGREE = 3
FEATURE_DIM = 8
MAX_MLP_HIDDEN = 16


class WitnessSpecError(ValueError):
    """The serialized witness_spec does not follow the protocol."""


def _features(rows: np.ndarray, prev: np.ndarray) -> np.ndarray:
    T, V = rows.shape
    q = np.exp(rows)
    entropy = -(q * rows).sum(axis=1)
    order = np.argsort(-rows, axis=1, kind="stable")
    inv = np.empty_like(order)
    inv[np.arange(T)[:, None], order] = np.arange(V)[None, :]
    ranks = inv + 1
    F = np.empty((T, V, FEATURE_DIM))
    F[:, :, 0] = 1.0
    F[:, :, 1] = rows
    F[:, :, 2] = entropy[:, None]
    F[:, :, 3] = ranks == 1
    F[:, :, 4] = (ranks >= 2) & (ranks <= 5)
    F[:, :, 5] = (ranks >= 6) & (ranks <= 20)
    F[:, :, 6] = ranks >= 21
    F[:, :, 7] = prev[:, None]
    return F


def _spline_values(params: np.ndarray, knots: np.ndarray, rows: np.ndarray) -> np.ndarray:
    full = np.concatenate(
        [np.repeat(knots[0], SPLINE_DEGREE), knots, np.repeat(knots[-1], SPLINE_DEGREE)]
    )
    spline = BSpline(full, params, SPLINE_DEGREE, extrapolate=True)
    return spline(np.clip(rows, knots[0], knots[-1]))


def _mlp_values(params: np.ndarray, F: np.ndarray) -> np.ndarray:
    h, rem = divmod(params.size - 1, FEATURE_DIM + 2)
    if rem != 0 or not (1 <= h <= MAX_MLP_HIDDEN):
        raise WitnessSpecError(f"cannot unpack TinyMLP params of length {params.size}")
    W = params[: h * FEATURE_DIM].reshape(h, FEATURE_DIM)
    b = params[h * FEATURE_DIM : h * FEATURE_DIM + h]
    v = params[h * FEATURE_DIM + h : h * FEATURE_DIM + 2 * h]
    c = float(params[-1])
    return np.tanh(F @ W.T + b) @ v + c


def witness_values(spec: dict, rows: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """(T, V) witness values for the given rows along the observed path."""
    rows = np.asarray(rows, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.int64)
    if not isinstance(spec, dict) or "family" not in spec:
        raise WitnessSpecError("witness_spec must carry a family field")
    family = spec["family"]
    params = np.asarray(spec.get("params", []), dtype=np.float64)
    if not np.all(np.isfinite(params)):
        raise WitnessSpecError("witness params must be finite")

    if family == "LogProbIdentity":
        if params.size:
            raise WitnessSpecError("LogProbIdentity has no parameters")
        return rows
    if family == "BSpline":
        knots = np.asarray(spec.get("knots", []), dtype=np.float64)
        if knots.size < 2 or np.any(np.diff(knots) <= 0):
            raise WitnessSpecError("knots must be strictly increasing, length >= 2")
        if params.size != knots.size + 2:
            raise WitnessSpecError(
                f"cubic spline over {knots.size} breakpoints needs "
                f"{knots.size + 2} coefficients, got {params.size}"
            )
        return _spline_values(params, knots, rows)

    T = rows.shape[0]
    prev = np.zeros(T)
    if T > 1:
        prev[1:] = rows[np.arange(T - 1), observed[:-1]]
    F = _features(rows, prev)
    if family == "ContextLinear":
        if params.size != FEATURE_DIM:
            raise WitnessSpecError(f"ContextLinear needs {FEATURE_DIM} params")
        return F @ params
    if family == "TinyMLP":
        T_, V = rows.shape
        return _mlp_values(params, F.reshape(T_ * V, FEATURE_DIM)).reshape(T_, V)
    raise WitnessSpecError(f"unknown witness family {family!r}")


def moment_triples(spec: dict, rows: np.ndarray, observed: np.ndarray) -> list[dict]:
    """Exact per-position moments of the witness under each scoring row."""
    rows = np.asarray(rows, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.int64)
    W = witness_values(spec, rows, observed)
    q = np.exp(rows)
    mean = (q * W).sum(axis=1)
    var = (q * (W - mean[:, None]) ** 2).sum(axis=1)
    return [
        {
            "position": t,
            "observed_logprob": float(W[t, observed[t]]),
            "witness_mean": float(mean[t]),
            "witness_var": float(max(var[t], 0.0)),
        }
        for t in range(rows.shape[0])
    ]
