"""Core data types: labels, matrices, datasets, and train/test splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .rng import derive_rng


@dataclass(frozen=True)
class SurvivalLabel:
    """Observed follow-up for one patient.

    ``time`` is the death time when ``status`` is 1 and the censoring time
    when ``status`` is 0.  Times must be positive and finite.
    """

    time: float
    status: int

    def __post_init__(self):
        if not (isinstance(self.time, (int, float)) and math.isfinite(self.time)):
            raise InputError(f"label time must be finite, got {self.time!r}")
        if self.time <= 0:
            raise InputError(f"label time must be positive, got {self.time!r}")
        if self.status not in (0, 1):
            raise InputError(f"label status must be 0 or 1, got {self.status!r}")


@dataclass(frozen=True)
class ExpressionMatrix:
    """Numeric expression values, one row per patient, one column per gene."""

    patient_ids: tuple[str, ...]
    gene_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise InputError("expression values must be a 2-d array")
        if values.shape != (len(self.patient_ids), len(self.gene_ids)):
            raise InputError(
                f"expression shape {values.shape} does not match "
                f"{len(self.patient_ids)} patients x {len(self.gene_ids)} genes"
            )
        if len(set(self.patient_ids)) != len(self.patient_ids):
            raise InputError("duplicate patient ids in expression matrix")
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise InputError("duplicate gene ids in expression matrix")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise InputError(
                f"non-finite expression value for patient "
                f"{self.patient_ids[bad[0]]!r}, gene {self.gene_ids[bad[1]]!r}"
            )

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)


# Missing real cells are NaN; missing categorical cells are None.
@dataclass(frozen=True)
class ClinicalColumn:
    name: str
    kind: str  # "real" or "categorical"
    levels: tuple[str, ...] = ()
    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.kind not in ("real", "categorical"):
            raise InputError(f"column {self.name!r}: kind must be real or categorical")
        if self.kind == "real":
            values = np.asarray(self.values, dtype=np.float64)
        else:
            values = np.asarray(self.values, dtype=object)
            observed = {v for v in values if v is not None}
            unknown = observed - set(self.levels)
            if unknown:
                raise InputError(
                    f"column {self.name!r}: values {sorted(unknown)} not in declared levels"
                )
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ClinicalTable:
    """Raw clinical covariates, possibly with missing cells."""

    patient_ids: tuple[str, ...]
    columns: tuple[ClinicalColumn, ...]

    def __post_init__(self):
        if len(set(self.patient_ids)) != len(self.patient_ids):
            raise InputError("duplicate patient ids in clinical table")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise InputError("duplicate column names in clinical table")
        for col in self.columns:
            if len(col.values) != len(self.patient_ids):
                raise InputError(
                    f"column {col.name!r} has {len(col.values)} values for "
                    f"{len(self.patient_ids)} patients"
                )

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)

    def column(self, name: str) -> ClinicalColumn:
        for col in self.columns:
            if col.name == name:
                return col
        raise InputError(f"no clinical column named {name!r}")


@dataclass(frozen=True)
class Dataset:
    """Aligned expression, clinical, and label data for one cohort.

    All three components cover exactly the same patients in the same order;
    construction enforces the alignment so downstream code can index by row.
    """

    expression: ExpressionMatrix
    clinical: ClinicalTable
    labels: tuple[SurvivalLabel, ...]

    def __post_init__(self):
        ids = self.expression.patient_ids
        if self.clinical.patient_ids != ids:
            raise InputError("clinical table patients do not match expression matrix")
        if len(self.labels) != len(ids):
            raise InputError("label count does not match patient count")

    @property
    def patient_ids(self) -> tuple[str, ...]:
        return self.expression.patient_ids

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)

    def subset(self, ids: list[str] | tuple[str, ...]) -> "Dataset":
        """Return the dataset restricted to ``ids``, in the given order."""
        index = {pid: i for i, pid in enumerate(self.patient_ids)}
        missing = [pid for pid in ids if pid not in index]
        if missing:
            raise InputError(f"unknown patient ids in subset: {missing}")
        rows = [index[pid] for pid in ids]
        expr = ExpressionMatrix(
            patient_ids=tuple(ids),
            gene_ids=self.expression.gene_ids,
            values=self.expression.values[rows],
        )
        cols = tuple(
            ClinicalColumn(c.name, c.kind, c.levels, c.values[rows])
            for c in self.clinical.columns
        )
        clin = ClinicalTable(patient_ids=tuple(ids), columns=cols)
        labels = tuple(self.labels[i] for i in rows)
        return Dataset(expression=expr, clinical=clin, labels=labels)


def label_arrays(labels: tuple[SurvivalLabel, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Unpack labels into (times, status) float64/int arrays."""
    times = np.array([lab.time for lab in labels], dtype=np.float64)
    status = np.array([lab.status for lab in labels], dtype=np.int64)
    return times, status


@dataclass(frozen=True)
class SplitSpec:
    """How to divide a cohort into train and test parts."""

    train_fraction: float
    seed: int
    stratified: bool = True

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise InputError(
                f"train_fraction must be strictly between 0 and 1, got {self.train_fraction}"
            )


def _take(n: int, fraction: float) -> int:
    # floor(x + 0.5) rounding, clamped so neither part is empty
    k = int(math.floor(n * fraction + 0.5))
    return min(max(k, 1), n - 1)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Partition ``dataset`` into (train, test) per ``spec``.

    The assignment is a seeded shuffle of the patient ids sorted
    lexicographically, so the outcome does not depend on the row order of the
    input files.  With ``stratified`` set, censored and uncensored patients
    are allocated separately so both parts keep close to the cohort's
    censoring fraction.
    """
    n = dataset.n_patients
    if n < 5:
        raise InputError(f"need at least 5 patients to split, got {n}")
    rng = derive_rng(spec.seed, "split")
    order = sorted(dataset.patient_ids)
    status = {pid: lab.status for pid, lab in zip(dataset.patient_ids, dataset.labels)}

    if spec.stratified:
        train_ids: list[str] = []
        test_ids: list[str] = []
        for value in (1, 0):
            stratum = [pid for pid in order if status[pid] == value]
            if not stratum:
                continue
            perm = rng.permutation(len(stratum))
            shuffled = [stratum[i] for i in perm]
            if len(stratum) == 1:
                train_ids.extend(shuffled)
                continue
            k = _take(len(stratum), spec.train_fraction)
            train_ids.extend(shuffled[:k])
            test_ids.extend(shuffled[k:])
        if not test_ids:
            # tiny degenerate strata can starve the test side; move one patient
            test_ids.append(train_ids.pop())
    else:
        perm = rng.permutation(n)
        shuffled = [order[i] for i in perm]
        k = _take(n, spec.train_fraction)
        train_ids, test_ids = shuffled[:k], shuffled[k:]

    # keep the original row order within each part for readability
    rank = {pid: i for i, pid in enumerate(dataset.patient_ids)}
    train_ids.sort(key=rank.__getitem__)
    test_ids.sort(key=rank.__getitem__)
    return dataset.subset(train_ids), dataset.subset(test_ids)
