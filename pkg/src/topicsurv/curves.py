"""Survival curves, the Kaplan-Meier estimator, and curve-based risk.

A curve is a set of increasing knots with non-increasing survival values
and an interpolation kind: "step" curves are right-continuous (Cox,
Kaplan-Meier), "linear" curves interpolate between knots (discrete-time
models).  Risk is the negated area under the curve; beyond the last knot
survival is held constant out to an integration horizon, which pipelines
share across learners so risks are comparable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import SurvivalLabel, label_arrays
from .errors import InputError


@dataclass(frozen=True)
class SurvivalCurve:
    """One patient's predicted survival function."""

    times: np.ndarray
    values: np.ndarray
    kind: str = "step"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.kind not in ("step", "linear"):
            raise InputError(f"curve kind must be step or linear, got {self.kind!r}")
        if times.ndim != 1 or times.shape != values.shape or times.size == 0:
            raise InputError("times and values must be equal-length 1-d arrays")
        if times[0] < 0:
            raise InputError("curve times must be nonnegative")
        if np.any(np.diff(times) <= 0):
            raise InputError("curve times must be strictly increasing")
        if np.any(values < -1e-12) or np.any(values > 1.0 + 1e-12):
            raise InputError("survival values must lie in [0, 1]")
        if np.any(np.diff(values) > 1e-12):
            raise InputError("survival values must be non-increasing")

    def evaluate(self, t: float) -> float:
        """Survival probability at time ``t``.

        Before the first knot the curve is 1; past the last knot it stays
        at the final value.
        """
        times, values = self.times, self.values
        if t < times[0]:
            return 1.0
        if self.kind == "step":
            idx = int(np.searchsorted(times, t, side="right")) - 1
            return float(values[idx])
        if t >= times[-1]:
            return float(values[-1])
        return float(np.interp(t, times, values))

    def integral(self, horizon: float | None = None) -> float:
        """Area under the curve up to ``horizon`` (default: last knot).

        Step curves contribute rectangles (value times interval width);
        linear curves contribute trapezoids.  Beyond the last knot the
        final value extends as a constant.
        """
        times, values = self.times, self.values
        last = float(times[-1])
        if horizon is None:
            horizon = last
        if horizon < times[0]:
            raise InputError("integration horizon precedes the first knot")

        cut = min(horizon, last)
        inner_times = times[times <= cut]
        inner_values = values[: len(inner_times)]
        if cut > inner_times[-1]:
            # horizon falls between knots: append the interpolated endpoint
            tail_value = self.evaluate(cut)
            inner_times = np.append(inner_times, cut)
            inner_values = np.append(inner_values, tail_value)

        widths = np.diff(inner_times)
        if self.kind == "step":
            area = float((inner_values[:-1] * widths).sum())
        else:
            area = float((0.5 * (inner_values[:-1] + inner_values[1:]) * widths).sum())

        if horizon > last:
            area += float(values[-1]) * (horizon - last)
        # account for time before the first knot, where survival is 1
        area += float(inner_times[0])
        return area


def risk_from_curve(curve: SurvivalCurve, horizon: float | None = None) -> float:
    """Negated area under the survival curve; higher risk means earlier death."""
    return -curve.integral(horizon)


def write_curve_csv(curve: SurvivalCurve, path: str) -> None:
    """Export a curve as a two-column (time, survival) CSV."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["time", "survival"])
        for t, s in zip(curve.times, curve.values):
            writer.writerow([repr(float(t)), repr(float(s))])


def read_curve_csv(path: str, kind: str = "step") -> SurvivalCurve:
    """Read a two-column curve CSV back into a SurvivalCurve."""
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0] != ["time", "survival"]:
        raise InputError(f"{path}: header must be time,survival")
    times = []
    values = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise InputError(f"{path}: row {r} must have two cells")
        try:
            times.append(float(row[0]))
            values.append(float(row[1]))
        except ValueError:
            raise InputError(f"{path}: row {r}: non-numeric cell") from None
    return SurvivalCurve(np.array(times), np.array(values), kind=kind)


@dataclass(frozen=True)
class KmCurve:
    """Kaplan-Meier product-limit estimate with inverse lookup."""

    curve: SurvivalCurve

    def survival_at(self, t: float) -> float:
        return self.curve.evaluate(t)

    def inverse(self, p: float) -> float:
        """Earliest time at which the curve reaches or falls below ``p``.

        Returns infinity when the curve never gets that low within the
        observed follow-up.
        """
        if not (0.0 <= p <= 1.0):
            raise InputError("probability must lie in [0, 1]")
        below = self.curve.values <= p + 1e-15
        if not below.any():
            return math.inf
        return float(self.curve.times[np.argmax(below)])


def kaplan_meier(labels: tuple[SurvivalLabel, ...]) -> KmCurve:
    """Product-limit survival estimate over the observed event times.

    The returned curve has a knot at time zero (survival one) and one at
    every distinct event time.
    """
    if not labels:
        raise InputError("no labels")
    times, status = label_arrays(labels)
    if status.sum() == 0:
        raise InputError("need at least one event for a Kaplan-Meier estimate")

    order = np.argsort(times, kind="stable")
    times = times[order]
    status = status[order]
    n = len(times)

    knot_times = [0.0]
    knot_values = [1.0]
    survival = 1.0
    i = 0
    while i < n:
        t = times[i]
        deaths = 0
        ties = 0
        while i < n and times[i] == t:
            deaths += int(status[i])
            ties += 1
            i += 1
        at_risk = n - (i - ties)
        if deaths:
            survival *= (at_risk - deaths) / at_risk
            knot_times.append(float(t))
            knot_values.append(survival)
    return KmCurve(SurvivalCurve(np.array(knot_times), np.array(knot_values), kind="step"))
