"""Multi-task logistic regression for individual survival distributions.

The model places m time points and scores, for every patient, the m+1
monotone survival sequences (death in interval k means the patient was
alive at the first k points).  Sequence k gets score
sum_{l>k} (w_l'x + b_l); softmax over the scores yields the predicted
probability of death in each interval.  Uncensored patients contribute the
log probability of their interval; censored patients contribute the log of
the summed probabilities of every interval consistent with being alive at
the censoring time.  Training minimizes C/2 * sum_l ||w_l||^2 minus the
log likelihood (biases are not penalized) with a quasi-Newton method and
an analytic gradient.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .curves import SurvivalCurve
from .data import SurvivalLabel, label_arrays
from .errors import ConvergenceError, InputError
from .persist import decode_array, encode_array, persistable

logger = logging.getLogger(__name__)


@persistable("MtlrModel")
@dataclass(frozen=True)
class MtlrModel:
    """Fitted time points, weight vectors, and biases."""

    time_points: np.ndarray
    weights: np.ndarray  # (m, r)
    biases: np.ndarray  # (m,)

    def __post_init__(self):
        tp = np.asarray(self.time_points, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        object.__setattr__(self, "time_points", tp)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)
        if tp.ndim != 1 or tp.size == 0:
            raise InputError("need at least one time point")
        if np.any(tp <= 0) or np.any(np.diff(tp) <= 0):
            raise InputError("time points must be positive and strictly increasing")
        if w.ndim != 2 or w.shape[0] != tp.size or b.shape != tp.shape:
            raise InputError("weights must be (m, r) and biases (m,)")

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def to_payload(self) -> dict:
        return {
            "time_points": encode_array(self.time_points),
            "weights": encode_array(self.weights),
            "biases": encode_array(self.biases),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "MtlrModel":
        return cls(
            time_points=decode_array(payload["time_points"]),
            weights=decode_array(payload["weights"]),
            biases=decode_array(payload["biases"]),
        )


def default_time_points(labels: tuple[SurvivalLabel, ...]) -> np.ndarray:
    """m = floor(sqrt(n)) points at equally spaced event-time quantiles."""
    times, status = label_arrays(labels)
    events = times[status == 1]
    if events.size == 0:
        raise InputError("need at least one event to place time points")
    m = max(1, int(math.floor(math.sqrt(len(labels)))))
    qs = np.arange(1, m + 1) / (m + 1)
    points = np.quantile(events, qs)
    return np.unique(points)


def _sequence_scores(
    X: np.ndarray, weights: np.ndarray, biases: np.ndarray
) -> np.ndarray:
    """Scores of the m+1 survival sequences for every patient, (n, m+1)."""
    a = X @ weights.T + biases  # (n, m)
    n, m = a.shape
    scores = np.zeros((n, m + 1))
    scores[:, :m] = a[:, ::-1].cumsum(axis=1)[:, ::-1]
    return scores


def _interval_index(time_points: np.ndarray, times: np.ndarray, censored: bool) -> np.ndarray:
    """Death interval for events, or first consistent interval for censoring.

    A death at exactly a time point belongs to the interval ending there; a
    censoring at exactly a time point belongs to the interval starting
    there (so that interval stays possible).
    """
    side = "right" if censored else "left"
    return np.searchsorted(time_points, times, side=side)


def mtlr_objective(
    theta: np.ndarray,
    X: np.ndarray,
    times: np.ndarray,
    status: np.ndarray,
    time_points: np.ndarray,
    C: float,
) -> tuple[float, np.ndarray]:
    """Regularized negative log likelihood and its gradient.

    ``theta`` packs the weight matrix (m, r) then the biases (m,).
    """
    n, r = X.shape
    m = len(time_points)
    weights = theta[: m * r].reshape(m, r)
    biases = theta[m * r :]

    scores = _sequence_scores(X, weights, biases)  # (n, m+1)
    log_z = logsumexp(scores, axis=1)

    death_k = _interval_index(time_points, times, censored=False)
    censor_k = _interval_index(time_points, times, censored=True)
    uncensored = status == 1

    loglik = np.empty(n)
    loglik[uncensored] = scores[uncensored, death_k[uncensored]] - log_z[uncensored]

    # censored: log of the total mass of intervals at or after the censor's
    censored_rows = np.where(~uncensored)[0]
    tail_mask = np.arange(m + 1)[None, :] >= censor_k[:, None]
    if censored_rows.size:
        tail_scores = np.where(tail_mask, scores, -np.inf)
        log_tail = logsumexp(tail_scores[censored_rows], axis=1)
        loglik[censored_rows] = log_tail - log_z[censored_rows]

    value = 0.5 * C * float((weights**2).sum()) - float(loglik.sum())

    # gradient: for each patient the difference between the CDF under the
    # model-consistent distribution and the unrestricted one
    prob = np.exp(scores - log_z[:, None])  # (n, m+1)
    target = np.zeros((n, m + 1))
    rows = np.where(uncensored)[0]
    target[rows, death_k[rows]] = 1.0
    if censored_rows.size:
        tail_scores_c = np.where(tail_mask[censored_rows], scores[censored_rows], -np.inf)
        log_tail = logsumexp(tail_scores_c, axis=1)
        target[censored_rows] = np.where(
            tail_mask[censored_rows],
            np.exp(tail_scores_c - log_tail[:, None]),
            0.0,
        )

    diff = np.cumsum(target - prob, axis=1)[:, :m]  # (n, m)
    grad_w = C * weights - diff.T @ X
    grad_b = -diff.sum(axis=0)
    return value, np.concatenate([grad_w.ravel(), grad_b])


def fit_mtlr(
    X: np.ndarray,
    labels: tuple[SurvivalLabel, ...],
    C: float = 1.0,
    time_points: np.ndarray | None = None,
    tol: float = 1e-6,
    max_iter: int = 5000,
) -> MtlrModel:
    """Fit the model by quasi-Newton descent from zero weights.

    The objective is smooth, so L-BFGS with the analytic gradient drives
    the gradient infinity norm below ``tol``; failing that is reported as
    non-convergence rather than silently returning a poor fit.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError("X must be a 2-d design matrix")
    if X.shape[0] != len(labels):
        raise InputError("row count does not match label count")
    finite_cols = np.isfinite(X).all(axis=0)
    if not finite_cols.all():
        bad = int(np.argwhere(~finite_cols).ravel()[0])
        raise InputError(f"non-finite values in design matrix column {bad}")
    if C < 0:
        raise InputError("regularization strength must be nonnegative")
    times, status = label_arrays(labels)
    if status.sum() == 0:
        raise InputError("need at least one event to fit")

    if time_points is None:
        time_points = default_time_points(labels)
    time_points = np.asarray(time_points, dtype=np.float64)

    n, r = X.shape
    m = len(time_points)
    theta0 = np.zeros(m * r + m)
    result = minimize(
        mtlr_objective,
        theta0,
        args=(X, times, status, time_points, C),
        method="L-BFGS-B",
        jac=True,
        options={"maxiter": max_iter, "maxfun": 10 * max_iter, "ftol": 1e-14, "gtol": tol},
    )
    _, grad = mtlr_objective(result.x, X, times, status, time_points, C)
    grad_norm = float(np.abs(grad).max())
    if grad_norm > 100 * tol:
        raise ConvergenceError(
            f"MTLR fit stalled with gradient norm {grad_norm:.3g} "
            f"(target {tol:.0e}); check feature scaling"
        )
    if grad_norm > tol:
        logger.warning("MTLR gradient norm %.3g slightly above target %.0e", grad_norm, tol)

    weights = result.x[: m * r].reshape(m, r)
    biases = result.x[m * r :]
    return MtlrModel(time_points=time_points, weights=weights, biases=biases)


def mtlr_curve(model: MtlrModel, x: np.ndarray) -> SurvivalCurve:
    """Predicted survival curve for one patient.

    Knots sit at zero and the model's time points; values between knots
    interpolate linearly, matching the discrete distribution's spread
    within each interval.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != model.n_features:
        raise InputError(f"expected a feature vector of length {model.n_features}")
    scores = _sequence_scores(x[None, :], model.weights, model.biases)[0]
    log_z = logsumexp(scores)
    prob = np.exp(scores - log_z)  # death interval probabilities, m+1
    survival = 1.0 - np.cumsum(prob)[:-1]  # survival at each time point
    survival = np.clip(survival, 0.0, 1.0)
    survival = np.minimum.accumulate(survival)
    times = np.concatenate([[0.0], model.time_points])
    values = np.concatenate([[1.0], survival])
    return SurvivalCurve(times, values, kind="linear")
