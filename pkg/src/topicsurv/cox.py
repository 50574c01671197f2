"""Proportional hazards fitting and prediction.

The partial likelihood uses the Breslow convention for tied event times
and is maximized by Newton iterations with step halving.  An optional
ridge penalty subtracts lambda * ||W||^2 from the objective, which keeps
the problem strictly concave and rescues separable data.  Baseline
survival comes from the Kalbfleisch-Prentice estimator, which reduces to
Kaplan-Meier exactly when all weights are zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .curves import SurvivalCurve
from .data import SurvivalLabel, label_arrays
from .errors import ConvergenceError, InputError
from .persist import (
    decode_array,
    decode_float,
    encode_array,
    encode_float,
    persistable,
)

logger = logging.getLogger(__name__)


@persistable("CoxModel")
@dataclass(frozen=True)
class CoxModel:
    """Fitted proportional hazards weights with optional baseline survival."""

    weights: np.ndarray
    ridge: float = 0.0
    baseline: SurvivalCurve | None = None

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", weights)
        if weights.ndim != 1:
            raise InputError("weights must be a 1-d array")
        if not np.all(np.isfinite(weights)):
            raise InputError("weights must be finite")
        if self.ridge < 0:
            raise InputError("ridge penalty must be nonnegative")

    def to_payload(self) -> dict:
        payload = {
            "weights": encode_array(self.weights),
            "ridge": encode_float(self.ridge),
            "baseline": None,
        }
        if self.baseline is not None:
            payload["baseline"] = {
                "times": encode_array(self.baseline.times),
                "values": encode_array(self.baseline.values),
            }
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "CoxModel":
        baseline = None
        if payload["baseline"] is not None:
            baseline = SurvivalCurve(
                times=decode_array(payload["baseline"]["times"]),
                values=decode_array(payload["baseline"]["values"]),
                kind="step",
            )
        return cls(
            weights=decode_array(payload["weights"]),
            ridge=decode_float(payload["ridge"]),
            baseline=baseline,
        )


def _group_walk(times: np.ndarray, status: np.ndarray):
    """Yield tie groups in descending time order.

    Each item is (indices_of_group, event_indices_of_group); accumulating
    group members before handling the events makes the running sums equal
    the Breslow risk-set sums.
    """
    order = np.argsort(-times, kind="stable")
    i = 0
    n = len(times)
    while i < n:
        t = times[order[i]]
        j = i
        while j < n and times[order[j]] == t:
            j += 1
        members = order[i:j]
        events = members[status[members] == 1]
        yield members, events
        i = j


def _breslow_parts_grouped(
    X: np.ndarray, times: np.ndarray, status: np.ndarray, W: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Group-by-group evaluation; O(n) memory but a Python loop over ties."""
    n, p = X.shape
    scores = X @ W
    shift = scores.max() if n else 0.0
    e = np.exp(scores - shift)

    loglik = 0.0
    grad = np.zeros(p)
    hess = np.zeros((p, p))
    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    for members, events in _group_walk(times, status):
        Xg = X[members]
        eg = e[members]
        s0 += eg.sum()
        s1 += eg @ Xg
        s2 += Xg.T @ (eg[:, None] * Xg)
        d = len(events)
        if d == 0:
            continue
        loglik += float(scores[events].sum() - d * shift - d * np.log(s0))
        mean = s1 / s0
        grad += X[events].sum(axis=0) - d * mean
        hess -= d * (s2 / s0 - np.outer(mean, mean))
    return loglik, grad, hess


# above this many n * p * p entries the weighted outer-product stack of the
# vectorized route stops fitting comfortably in memory
_VECTOR_BUDGET = 3 * 10**7


def _breslow_parts(
    X: np.ndarray, times: np.ndarray, status: np.ndarray, W: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Log partial likelihood, gradient, and Hessian at ``W``."""
    n, p = X.shape
    if n * p * p > _VECTOR_BUDGET:
        return _breslow_parts_grouped(X, times, status, W)

    scores = X @ W
    shift = scores.max() if n else 0.0

    # descending time with the risk sums as running prefix totals
    order = np.argsort(-times, kind="stable")
    ts = times[order]
    st = status[order].astype(np.float64)
    Xs = X[order]
    sc = scores[order]
    e = np.exp(sc - shift)

    starts = np.flatnonzero(np.r_[True, ts[1:] != ts[:-1]])
    lasts = np.r_[starts[1:] - 1, n - 1]
    c0 = np.cumsum(e)[lasts]
    c1 = np.cumsum(e[:, None] * Xs, axis=0)[lasts]
    outer = e[:, None, None] * (Xs[:, :, None] * Xs[:, None, :])
    c2 = np.cumsum(outer, axis=0)[lasts]

    d = np.add.reduceat(st, starts)
    has_event = d > 0
    ev_scores = np.add.reduceat(st * sc, starts)[has_event]
    ev_X = np.add.reduceat(st[:, None] * Xs, starts, axis=0)[has_event]
    d = d[has_event]
    s0 = c0[has_event]
    mean = c1[has_event] / s0[:, None]

    loglik = float(ev_scores.sum() - (d * (shift + np.log(s0))).sum())
    grad = (ev_X - d[:, None] * mean).sum(axis=0)
    centered = c2[has_event] / s0[:, None, None] - mean[:, :, None] * mean[:, None, :]
    hess = -np.einsum("g,gij->ij", d, centered)
    return loglik, grad, hess


def fit_cox(
    X: np.ndarray,
    labels: tuple[SurvivalLabel, ...],
    ridge: float = 0.0,
    tol: float = 1e-8,
    max_iter: int = 100,
    with_baseline: bool = True,
) -> CoxModel:
    """Maximize the (optionally ridge-penalized) log partial likelihood.

    Requires at least one event.  With ``ridge`` zero and separable data
    the likelihood has no maximizer; that surfaces as a ConvergenceError
    suggesting a positive penalty.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError("X must be a 2-d design matrix")
    if X.shape[0] != len(labels):
        raise InputError("row count does not match label count")
    if not np.all(np.isfinite(X)):
        bad = int(np.argwhere(~np.isfinite(X).all(axis=0)).ravel()[0])
        raise InputError(f"non-finite values in design matrix column {bad}")
    times, status = label_arrays(labels)
    if status.sum() == 0:
        raise InputError("need at least one event to fit a Cox model")

    n, p = X.shape
    W = np.zeros(p)
    if p == 0:
        baseline = _kalbfleisch_prentice(np.zeros(n), times, status) if with_baseline else None
        return CoxModel(weights=W, ridge=ridge, baseline=baseline)

    def penalized(w: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        f, g, h = _breslow_parts(X, times, status, w)
        if ridge:
            f = f - ridge * float(w @ w)
            g = g - 2.0 * ridge * w
            h = h - 2.0 * ridge * np.eye(p)
        return f, g, h

    f, g, h = penalized(W)
    converged = False
    for iteration in range(max_iter):
        if np.abs(g).max() < tol:
            converged = True
            break
        # spectral pseudo-inverse: directions with (near-)zero curvature,
        # e.g. exactly collinear columns, get a zero step instead of a
        # noise-amplified jump along the flat subspace
        evals, evecs = np.linalg.eigh(-h)
        cutoff = max(float(evals.max()), 0.0) * 1e-10
        keep = evals > cutoff
        inverse = np.zeros_like(evals)
        inverse[keep] = 1.0 / evals[keep]
        delta = evecs @ (inverse * (evecs.T @ g))
        # rounding noise in the evaluation grows with |f|, so the
        # monotonicity slack must be relative or late steps get rejected
        slack = 1e-13 + 1e-12 * abs(f)
        step = 1.0
        for _ in range(40):
            candidate = W + step * delta
            f_new, g_new, h_new = penalized(candidate)
            if np.isfinite(f_new) and f_new > f - slack:
                W, f, g, h = candidate, f_new, g_new, h_new
                break
            step *= 0.5
        else:
            break
        logger.debug("newton iteration %d: loglik %.8f", iteration + 1, f)
    if not converged and (not np.all(np.isfinite(g)) or np.abs(g).max() >= tol):
        raise ConvergenceError(
            "Cox fit did not converge; the data may be separable "
            "(a positive ridge penalty restores a finite optimum)"
        )
    if ridge == 0.0:
        # separation drives a weight toward infinity but the gradient still
        # decays below tol once the likelihood saturates; a covariate whose
        # fitted effect spans relative hazards beyond e^23 has no finite
        # optimum to report
        spans = np.abs(W) * (X.max(axis=0) - X.min(axis=0))
        if np.any(spans > 23.0):
            raise ConvergenceError(
                "Cox fit diverged: a coefficient ran away, the data are "
                "separable (a positive ridge penalty restores a finite optimum)"
            )

    baseline = None
    if with_baseline:
        baseline = _kalbfleisch_prentice(X @ W, times, status)
    return CoxModel(weights=W, ridge=ridge, baseline=baseline)


def cox_risk(model: CoxModel, X: np.ndarray) -> np.ndarray:
    """Linear risk scores x'W, one per row of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(model.weights):
        raise InputError(
            f"design matrix has {X.shape[1]} columns, model has {len(model.weights)}"
        )
    return X @ model.weights


def _kp_alpha(eta_events: np.ndarray, risk_sum: float) -> float:
    """Solve the Kalbfleisch-Prentice self-consistency equation for one time."""
    e = np.exp(eta_events)
    if np.all(e == e[0]):
        ratio = float(e.sum()) / risk_sum
        if ratio >= 1.0:
            return 0.0
        return float((1.0 - ratio) ** (1.0 / e[0]))

    total = float(e.sum())
    if total >= risk_sum * (1.0 - 1e-12):
        return 0.0

    def gap(alpha: float) -> float:
        return float((e / (1.0 - alpha**e)).sum()) - risk_sum

    hi = 1.0 - 1e-12
    return float(brentq(gap, 0.0, hi, xtol=1e-15, rtol=8.9e-16))


def _kalbfleisch_prentice(
    eta: np.ndarray, times: np.ndarray, status: np.ndarray
) -> SurvivalCurve:
    """Baseline survival (for eta = 0) under the fitted relative hazards."""
    e = np.exp(eta)
    event_times: list[float] = []
    alphas: list[float] = []
    s0 = 0.0
    collected: list[tuple[float, np.ndarray, float]] = []
    for members, events in _group_walk(times, status):
        s0 += float(e[members].sum())
        if len(events):
            collected.append((float(times[events[0]]), eta[events], s0))
    for t, eta_events, risk_sum in reversed(collected):
        event_times.append(t)
        alphas.append(_kp_alpha(eta_events, risk_sum))

    values = np.cumprod(alphas)
    knot_times = np.concatenate([[0.0], event_times])
    knot_values = np.concatenate([[1.0], values])
    return SurvivalCurve(knot_times, knot_values, kind="step")


def cox_curve(model: CoxModel, x: np.ndarray) -> SurvivalCurve:
    """Survival curve for one patient: baseline powered by exp(x'W)."""
    if model.baseline is None:
        raise InputError("model carries no baseline survival; refit with_baseline=True")
    eta = float(cox_risk(model, np.asarray(x, dtype=np.float64))[0])
    values = model.baseline.values ** np.exp(eta)
    return SurvivalCurve(model.baseline.times.copy(), values, kind="step")
