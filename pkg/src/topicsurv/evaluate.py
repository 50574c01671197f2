"""Discrimination and calibration measures for survival predictions.

Concordance counts, over every ordered pair whose earlier death is
determinable, how often the model ranked the earlier death as higher
risk (ties in risk credit one half).  D-calibration checks that the
predicted survival probabilities evaluated at the actual death times are
uniform, using a chi-square statistic over equal-width probability bins.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaincc

from .curves import SurvivalCurve
from .data import SurvivalLabel, label_arrays
from .errors import InputError, NumericalError


@dataclass(frozen=True)
class ComparablePairs:
    """Ordered index pairs (i, j) where i's death is known to precede j's."""

    pairs: np.ndarray  # (k, 2) int array

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return self.pairs.shape[0]


def _comparable_mask(times: np.ndarray, status: np.ndarray) -> np.ndarray:
    """Boolean (i, j) matrix of determinable orderings.

    Pair (i, j) qualifies when i is an observed death and j is either a
    later death, or a censoring at or after i's death time.  Two deaths at
    the same time are not comparable; a censoring exactly at a death time
    is (the censored patient demonstrably outlived the death).
    """
    death_i = (status == 1)[:, None]
    t_i = times[:, None]
    t_j = times[None, :]
    later_death = (status == 1)[None, :] & (t_j > t_i)
    outlived = (status == 0)[None, :] & (t_j >= t_i)
    return death_i & (later_death | outlived)


def comparable_pairs(labels: tuple[SurvivalLabel, ...]) -> ComparablePairs:
    """Materialize the comparable pair set (small cohorts only)."""
    times, status = label_arrays(labels)
    mask = _comparable_mask(times, status)
    return ComparablePairs(np.argwhere(mask))


def concordance(risks: np.ndarray, labels: tuple[SurvivalLabel, ...]) -> float:
    """Fraction of comparable pairs ranked correctly by the risk scores.

    Computed with exact integer counting: ties in risk contribute one half
    each, and the final division is the only inexact step.
    """
    risks = np.asarray(risks, dtype=np.float64)
    if risks.ndim != 1 or risks.shape[0] != len(labels):
        raise InputError("need one risk score per label")
    if not np.all(np.isfinite(risks)):
        raise InputError("risk scores must be finite")
    times, status = label_arrays(labels)
    mask = _comparable_mask(times, status)
    total = int(mask.sum())
    if total == 0:
        raise NumericalError(
            "no comparable pairs: concordance is undefined "
            "(all patients censored, or all deaths simultaneous)"
        )
    r_i = risks[:, None]
    r_j = risks[None, :]
    wins = int((mask & (r_i > r_j)).sum())
    ties = int((mask & (r_i == r_j)).sum())
    return float(Fraction(2 * wins + ties, 2 * total))


@dataclass(frozen=True)
class CalibrationTable:
    """Per-bin occupancy of predicted survival probabilities.

    ``observed`` holds the bin counts of the N evaluated probabilities,
    ``predicted`` the uniform expectation N/G per bin, ``proportions`` the
    uniform bin mass 1/G used by the statistic's variance term.
    """

    observed: np.ndarray
    predicted: np.ndarray
    proportions: np.ndarray
    n: int
    statistic: float
    p_value: float

    def __post_init__(self):
        observed = np.asarray(self.observed, dtype=np.int64)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "predicted", np.asarray(self.predicted, dtype=np.float64))
        object.__setattr__(self, "proportions", np.asarray(self.proportions, dtype=np.float64))
        if observed.sum() != self.n:
            raise InputError("bin counts must sum to the number of evaluated patients")

    @property
    def n_bins(self) -> int:
        return len(self.observed)


def d_calibration(
    curves: list[SurvivalCurve],
    labels: tuple[SurvivalLabel, ...],
    n_bins: int = 20,
) -> CalibrationTable:
    """Chi-square uniformity check of S_i(d_i) over the uncensored patients.

    Each uncensored patient contributes their predicted survival
    probability at their own death time; a perfectly calibrated model
    spreads these uniformly over [0, 1].  The statistic compares bin
    occupancy against the uniform expectation with variance
    N * (1/G) * (1 - 1/G) per bin, and its p-value comes from the
    chi-square upper tail with G - 2 degrees of freedom.
    """
    if len(curves) != len(labels):
        raise InputError("need one curve per label")
    if n_bins < 3:
        raise InputError("need at least 3 bins")
    values = [
        curve.evaluate(lab.time)
        for curve, lab in zip(curves, labels)
        if lab.status == 1
    ]
    n = len(values)
    if n == 0:
        raise NumericalError("no uncensored patients: calibration is undefined")
    if n < n_bins:
        warnings.warn(
            f"only {n} uncensored patients for {n_bins} bins; "
            "the calibration statistic will be unstable",
            stacklevel=2,
        )

    probs = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    bins = np.minimum((probs * n_bins).astype(np.int64), n_bins - 1)
    observed = np.bincount(bins, minlength=n_bins)
    predicted = np.full(n_bins, n / n_bins)
    proportions = np.full(n_bins, 1.0 / n_bins)

    variance = n * (1.0 / n_bins) * (1.0 - 1.0 / n_bins)
    statistic = float(((observed - predicted) ** 2 / variance).sum())
    df = n_bins - 2
    p_value = float(gammaincc(df / 2.0, statistic / 2.0))
    return CalibrationTable(
        observed=observed,
        predicted=predicted,
        proportions=proportions,
        n=n,
        statistic=statistic,
        p_value=p_value,
    )
