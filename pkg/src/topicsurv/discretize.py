"""Discretization of standardized expression into signed level bins.

Standardized values inside (-1, +1) are treated as baseline and map to
level 0.  Values at or above +1 are split into ten equal-width bins between
the smallest and largest such value seen in training, giving levels +1
(just over the threshold) through +10 (most extreme); values at or below
-1 mirror this with levels -1 through -10, binned by their distance below
the least extreme under-expressed training value.  The per-gene bin
boundaries are kept so unseen patients can be binned consistently, with
out-of-range values clamping to the nearest end bin.

Two count encodings turn a binned matrix into documents for topic
modelling: one that collapses direction and keeps only the magnitude, and
one that splits each gene into an over- and an under-expression feature.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InputError

N_BINS = 10


@dataclass(frozen=True)
class DiscretizationStats:
    """Per-gene training ranges of the non-baseline values.

    Arrays are aligned with ``gene_ids``; a NaN entry means no training
    value fell on that side of the baseline band.
    """

    gene_ids: tuple[str, ...]
    pos_min: np.ndarray
    pos_max: np.ndarray
    neg_min: np.ndarray
    neg_max: np.ndarray

    def __post_init__(self):
        p = len(self.gene_ids)
        for field_name in ("pos_min", "pos_max", "neg_min", "neg_max"):
            arr = np.asarray(getattr(self, field_name), dtype=np.float64)
            object.__setattr__(self, field_name, arr)
            if arr.shape != (p,):
                raise InputError(f"{field_name} must have one entry per gene")

    def to_payload(self) -> dict:
        from .persist import encode_array

        return {
            "gene_ids": list(self.gene_ids),
            "pos_min": encode_array(self.pos_min),
            "pos_max": encode_array(self.pos_max),
            "neg_min": encode_array(self.neg_min),
            "neg_max": encode_array(self.neg_max),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "DiscretizationStats":
        from .persist import decode_array

        return cls(
            gene_ids=tuple(payload["gene_ids"]),
            pos_min=decode_array(payload["pos_min"]),
            pos_max=decode_array(payload["pos_max"]),
            neg_min=decode_array(payload["neg_min"]),
            neg_max=decode_array(payload["neg_max"]),
        )


@dataclass(frozen=True)
class DgevMatrix:
    """Integer expression levels in [-10, +10], one row per patient."""

    patient_ids: tuple[str, ...]
    gene_ids: tuple[str, ...]
    levels: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels)
        if levels.dtype.kind not in "iu":
            raise InputError("levels must be integers")
        levels = levels.astype(np.int64)
        object.__setattr__(self, "levels", levels)
        if levels.shape != (len(self.patient_ids), len(self.gene_ids)):
            raise InputError("levels shape does not match patients x genes")
        if levels.size and (levels.max() > N_BINS or levels.min() < -N_BINS):
            raise InputError(f"levels must lie in [-{N_BINS}, {N_BINS}]")


class EncodingScheme(Enum):
    """How signed levels become nonnegative token counts."""

    COLLAPSED = "collapsed"  # |level|: direction discarded, one feature per gene
    SPLIT = "split"  # separate over- and under-expression features per gene


@dataclass(frozen=True)
class CountMatrix:
    """Token counts per patient document, input to topic fitting."""

    patient_ids: tuple[str, ...]
    feature_ids: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.dtype.kind not in "iu":
            raise InputError("counts must be integers")
        counts = counts.astype(np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.shape != (len(self.patient_ids), len(self.feature_ids)):
            raise InputError("counts shape does not match patients x features")
        if counts.size and counts.min() < 0:
            raise InputError("counts must be nonnegative")


def _side_bins(distance: np.ndarray, width: np.ndarray) -> np.ndarray:
    """Bin a nonnegative distance into 1..10 given the per-gene bin width."""
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.floor(distance / width).astype(np.int64) + 1
    return np.minimum(N_BINS, raw)


def discretize(
    z: np.ndarray, gene_ids: tuple[str, ...], patient_ids: tuple[str, ...]
) -> tuple[DgevMatrix, DiscretizationStats]:
    """Bin a standardized training matrix and record the per-gene ranges."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (len(patient_ids), len(gene_ids)):
        raise InputError("matrix shape does not match patients x genes")
    if not np.all(np.isfinite(z)):
        raise InputError("standardized values must be finite")

    pos = np.where(z >= 1.0, z, np.nan)
    neg = np.where(z <= -1.0, z, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pos_min = np.nanmin(pos, axis=0)
        pos_max = np.nanmax(pos, axis=0)
        neg_min = np.nanmin(neg, axis=0)
        neg_max = np.nanmax(neg, axis=0)

    stats = DiscretizationStats(gene_ids, pos_min, pos_max, neg_min, neg_max)
    levels = _bin_against(z, stats, clamp=False)
    return DgevMatrix(patient_ids, gene_ids, levels), stats


def discretize_row(z_row: np.ndarray, stats: DiscretizationStats) -> np.ndarray:
    """Bin one new standardized row using training ranges.

    Values beyond a training range clamp to the extreme bin on that side
    (+-10 past the recorded maximum extent, +-1 short of the recorded
    minimum extent); values on a side never seen in training map to 0.
    """
    z_row = np.asarray(z_row, dtype=np.float64)
    if z_row.shape != (len(stats.gene_ids),):
        raise InputError("row length does not match the fitted gene list")
    return _bin_against(z_row[None, :], stats, clamp=True)[0]


def discretize_rows(
    z: np.ndarray, stats: DiscretizationStats, patient_ids: tuple[str, ...]
) -> DgevMatrix:
    """Bin a batch of new standardized rows with discretize_row clamping."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (len(patient_ids), len(stats.gene_ids)):
        raise InputError("matrix shape does not match patients x genes")
    levels = _bin_against(z, stats, clamp=True)
    return DgevMatrix(patient_ids, stats.gene_ids, levels)


def _bin_against(z: np.ndarray, stats: DiscretizationStats, clamp: bool) -> np.ndarray:
    levels = np.zeros(z.shape, dtype=np.int64)

    pos_width = (stats.pos_max - stats.pos_min) / N_BINS
    on_pos = z >= 1.0
    with np.errstate(invalid="ignore"):
        degenerate = on_pos & (pos_width == 0.0)
        regular = on_pos & (pos_width > 0.0)
    levels[degenerate] = 1
    if regular.any():
        cols = np.broadcast_to(stats.pos_min, z.shape)
        widths = np.broadcast_to(pos_width, z.shape)
        b = _side_bins(z[regular] - cols[regular], widths[regular])
        levels[regular] = b
    if clamp:
        seen = ~np.isnan(np.broadcast_to(stats.pos_min, z.shape))
        below = on_pos & seen & (z < np.broadcast_to(stats.pos_min, z.shape))
        above = on_pos & seen & (z > np.broadcast_to(stats.pos_max, z.shape))
        levels[below] = 1
        levels[above] = N_BINS
        unseen = on_pos & ~seen
        levels[unseen] = 0

    neg_width = (stats.neg_max - stats.neg_min) / N_BINS
    on_neg = z <= -1.0
    with np.errstate(invalid="ignore"):
        degenerate = on_neg & (neg_width == 0.0)
        regular = on_neg & (neg_width > 0.0)
    levels[degenerate] = -1
    if regular.any():
        tops = np.broadcast_to(stats.neg_max, z.shape)
        widths = np.broadcast_to(neg_width, z.shape)
        b = _side_bins(tops[regular] - z[regular], widths[regular])
        levels[regular] = -b
    if clamp:
        seen = ~np.isnan(np.broadcast_to(stats.neg_max, z.shape))
        above = on_neg & seen & (z > np.broadcast_to(stats.neg_max, z.shape))
        below = on_neg & seen & (z < np.broadcast_to(stats.neg_min, z.shape))
        levels[above] = -1
        levels[below] = -N_BINS
        unseen = on_neg & ~seen
        levels[unseen] = 0

    return levels


def encode(dgev: DgevMatrix, scheme: EncodingScheme) -> CountMatrix:
    """Turn signed levels into token counts under the chosen scheme.

    COLLAPSED keeps one feature per gene holding the magnitude of its
    level.  SPLIT keeps an over- and an under-expression feature per gene,
    so level +2 becomes (2, 0) and level -3 becomes (0, 3).
    """
    levels = dgev.levels
    if scheme is EncodingScheme.COLLAPSED:
        counts = np.abs(levels)
        return CountMatrix(dgev.patient_ids, dgev.gene_ids, counts)
    if scheme is EncodingScheme.SPLIT:
        over = np.maximum(levels, 0)
        under = np.maximum(-levels, 0)
        n, p = levels.shape
        counts = np.empty((n, 2 * p), dtype=np.int64)
        counts[:, 0::2] = over
        counts[:, 1::2] = under
        feature_ids = []
        for gene in dgev.gene_ids:
            feature_ids.append(f"OVER-{gene}")
            feature_ids.append(f"UNDER-{gene}")
        return CountMatrix(dgev.patient_ids, tuple(feature_ids), counts)
    raise InputError(f"unknown encoding scheme {scheme!r}")
