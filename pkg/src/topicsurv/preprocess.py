"""Feature preparation: clinical imputation/encoding and expression scaling.

Clinical columns are imputed (mean for real columns, most frequent level for
categorical ones) and categorical columns are expanded to one indicator per
declared level.  Expression values are standardized against the grand mean
and standard deviation of the whole training matrix, a single (mu, sigma)
pair shared by every gene, and genes whose standardized values never leave
[-1, +1] are dropped as uninformative.  Everything fitted here is recorded
in a PreprocessInfo so new patients can be pushed through the exact same
transform later.
"""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .data import ClinicalTable, ExpressionMatrix
from .errors import InputError
from .persist import (
    decode_array,
    decode_float,
    encode_array,
    encode_float,
    persistable,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClinicalFeatureSpec:
    """Fitted transform for one raw clinical column."""

    name: str
    kind: str  # "real" or "categorical"
    levels: tuple[str, ...]
    impute_real: float = 0.0
    impute_level: str = ""


@persistable("PreprocessInfo")
@dataclass(frozen=True)
class PreprocessInfo:
    """Everything needed to replay the fitted preprocessing on new rows.

    ``mean``/``std`` are the grand moments of the training expression matrix
    (None when no expression preprocessing was fitted); ``retained_genes``
    lists the gene ids that survived the variation filter, in output column
    order.
    """

    clinical_specs: tuple[ClinicalFeatureSpec, ...] = ()
    clinical_feature_names: tuple[str, ...] = ()
    gene_ids: tuple[str, ...] = ()
    mean: float | None = None
    std: float | None = None
    retained_genes: tuple[str, ...] = ()

    def to_payload(self) -> dict:
        return {
            "clinical_specs": [
                {
                    "name": s.name,
                    "kind": s.kind,
                    "levels": list(s.levels),
                    "impute_real": encode_float(s.impute_real),
                    "impute_level": s.impute_level,
                }
                for s in self.clinical_specs
            ],
            "clinical_feature_names": list(self.clinical_feature_names),
            "gene_ids": list(self.gene_ids),
            "mean": None if self.mean is None else encode_float(self.mean),
            "std": None if self.std is None else encode_float(self.std),
            "retained_genes": list(self.retained_genes),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "PreprocessInfo":
        specs = tuple(
            ClinicalFeatureSpec(
                name=s["name"],
                kind=s["kind"],
                levels=tuple(s["levels"]),
                impute_real=decode_float(s["impute_real"]),
                impute_level=s["impute_level"],
            )
            for s in payload["clinical_specs"]
        )
        mean = payload["mean"]
        std = payload["std"]
        return cls(
            clinical_specs=specs,
            clinical_feature_names=tuple(payload["clinical_feature_names"]),
            gene_ids=tuple(payload["gene_ids"]),
            mean=None if mean is None else decode_float(mean),
            std=None if std is None else decode_float(std),
            retained_genes=tuple(payload["retained_genes"]),
        )


def _mode_level(values: np.ndarray, levels: tuple[str, ...], name: str) -> str:
    observed = [v for v in values if v is not None]
    if not observed:
        raise InputError(f"column {name!r}: cannot impute, every value is missing")
    counts = Counter(observed)
    best = max(counts.values())
    # ties go to the lexicographically smallest level
    return min(level for level, c in counts.items() if c == best)


def fit_clinical(
    table: ClinicalTable, columns: tuple[str, ...] | None = None
) -> tuple[np.ndarray, tuple[ClinicalFeatureSpec, ...], tuple[str, ...]]:
    """Fit imputation and one-hot encoding on ``table``.

    ``columns`` optionally restricts (and orders) which raw columns are used;
    by default all columns are used in table order.  Returns the encoded
    design matrix, the per-column specs, and the expanded feature names.
    """
    if columns is None:
        use = table.columns
    else:
        use = tuple(table.column(name) for name in columns)

    specs: list[ClinicalFeatureSpec] = []
    blocks: list[np.ndarray] = []
    names: list[str] = []
    for col in use:
        if col.kind == "real":
            observed = col.values[~np.isnan(col.values)]
            if observed.size == 0:
                raise InputError(
                    f"column {col.name!r}: cannot impute, every value is missing"
                )
            fill = float(observed.mean())
            spec = ClinicalFeatureSpec(col.name, "real", (), impute_real=fill)
            filled = np.where(np.isnan(col.values), fill, col.values)
            blocks.append(filled[:, None])
            names.append(col.name)
        else:
            fill_level = _mode_level(col.values, col.levels, col.name)
            spec = ClinicalFeatureSpec(
                col.name, "categorical", col.levels, impute_level=fill_level
            )
            block = np.zeros((len(col.values), len(col.levels)))
            for i, v in enumerate(col.values):
                level = fill_level if v is None else v
                block[i, col.levels.index(level)] = 1.0
            blocks.append(block)
            names.extend(f"{col.name}={level}" for level in col.levels)
        specs.append(spec)

    if blocks:
        matrix = np.hstack(blocks)
    else:
        matrix = np.zeros((table.n_patients, 0))
    return matrix, tuple(specs), tuple(names)


def apply_clinical(
    info: PreprocessInfo, table: ClinicalTable, strict_levels: bool = False
) -> np.ndarray:
    """Replay the fitted clinical transform on new patients.

    A categorical level unseen in the fitted schema either raises (with
    ``strict_levels``) or encodes as an all-zero indicator block with a
    warning.
    """
    blocks: list[np.ndarray] = []
    for spec in info.clinical_specs:
        col = table.column(spec.name)
        if col.kind != spec.kind:
            raise InputError(
                f"column {spec.name!r}: kind {col.kind!r} does not match fitted {spec.kind!r}"
            )
        if spec.kind == "real":
            filled = np.where(np.isnan(col.values), spec.impute_real, col.values)
            blocks.append(filled[:, None])
        else:
            block = np.zeros((len(col.values), len(spec.levels)))
            for i, v in enumerate(col.values):
                level = spec.impute_level if v is None else v
                if level in spec.levels:
                    block[i, spec.levels.index(level)] = 1.0
                elif strict_levels:
                    raise InputError(
                        f"column {spec.name!r}: level {level!r} was not seen at fit time"
                    )
                else:
                    warnings.warn(
                        f"column {spec.name!r}: unseen level {level!r} encoded as zeros",
                        stacklevel=2,
                    )
            blocks.append(block)
    if blocks:
        return np.hstack(blocks)
    return np.zeros((table.n_patients, 0))


def standardize_expression(expr: ExpressionMatrix) -> tuple[np.ndarray, float, float]:
    """Center and scale the whole matrix by its grand mean and sd.

    The variance uses the (N - 1) denominator over all n x p entries.  A
    matrix with no variation at all cannot be standardized and is rejected.
    """
    values = expr.values
    n_total = values.size
    if n_total < 2:
        raise InputError("need at least 2 expression values to standardize")
    mu = float(values.mean())
    var = float(((values - mu) ** 2).sum() / (n_total - 1))
    if var == 0.0:
        raise InputError("expression matrix is constant, cannot standardize")
    sigma = float(np.sqrt(var))
    return (values - mu) / sigma, mu, sigma


def filter_genes(z: np.ndarray, gene_ids: tuple[str, ...]) -> tuple[str, ...]:
    """Drop genes whose standardized values all sit inside [-1, +1].

    A gene is kept only if at least one patient's value leaves the closed
    interval, that is strictly exceeds one grand standard deviation.
    """
    keep = (np.abs(z) > 1.0).any(axis=0)
    retained = tuple(g for g, k in zip(gene_ids, keep) if k)
    if not retained:
        raise InputError(
            "no gene shows variation beyond one standard deviation; "
            "check scaling (a log2 transform at ingest may be needed)"
        )
    logger.info("gene filter kept %d of %d genes", len(retained), len(gene_ids))
    return retained


def fit_expression(expr: ExpressionMatrix) -> tuple[np.ndarray, PreprocessInfo]:
    """Standardize, filter, and package the expression transform.

    Returns the filtered standardized matrix (columns follow the retained
    gene order) together with an info holding only the expression part.
    """
    z, mu, sigma = standardize_expression(expr)
    retained = filter_genes(z, expr.gene_ids)
    index = {g: j for j, g in enumerate(expr.gene_ids)}
    cols = [index[g] for g in retained]
    info = PreprocessInfo(
        gene_ids=expr.gene_ids,
        mean=mu,
        std=sigma,
        retained_genes=retained,
    )
    return z[:, cols], info


def apply_expression(info: PreprocessInfo, expr: ExpressionMatrix) -> np.ndarray:
    """Replay standardization and gene filtering on new expression rows."""
    if info.mean is None or info.std is None:
        raise InputError("no expression transform was fitted")
    index = {g: j for j, g in enumerate(expr.gene_ids)}
    missing = [g for g in info.retained_genes if g not in index]
    if missing:
        raise InputError(f"expression matrix lacks fitted genes: {missing[:5]}")
    cols = [index[g] for g in info.retained_genes]
    return (expr.values[:, cols] - info.mean) / info.std
