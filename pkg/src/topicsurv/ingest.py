"""CSV ingestion and export for cohorts.

Three files describe a cohort:

* expression: header ``patient_id,<gene>,...``, one numeric row per patient
* clinical: header ``patient_id,<column>,...`` with a sidecar schema file
  declaring each column as ``real`` or ``categorical`` (with its levels);
  missing cells hold the literal string ``NA``
* labels: header ``patient_id,time,status``

Files are joined by patient id, never by row order.  Any inconsistency is
rejected with a message naming the offending file, row, and value.
"""

from __future__ import annotations

import csv
import math
import os

import numpy as np

from .data import (
    ClinicalColumn,
    ClinicalTable,
    Dataset,
    ExpressionMatrix,
    SurvivalLabel,
)
from .errors import IngestError, SchemaError

MISSING = "NA"


def _read_rows(path: str) -> list[list[str]]:
    try:
        with open(path, newline="") as handle:
            return [row for row in csv.reader(handle) if row]
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc


def _check_unique_ids(ids: list[str], path: str) -> None:
    seen: set[str] = set()
    for pid in ids:
        if pid in seen:
            raise IngestError(f"{path}: duplicate patient id {pid!r}")
        seen.add(pid)


def read_expression(path: str, log2_transform: bool = False) -> ExpressionMatrix:
    """Parse an expression CSV, optionally applying log2(x + 1) per cell."""
    rows = _read_rows(path)
    if not rows:
        raise IngestError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "patient_id":
        raise IngestError(f"{path}: first header column must be patient_id")
    gene_ids = tuple(header[1:])
    if not gene_ids:
        raise IngestError(f"{path}: no gene columns")

    patient_ids: list[str] = []
    values = np.empty((len(rows) - 1, len(gene_ids)), dtype=np.float64)
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IngestError(
                f"{path}: row {r} has {len(row)} cells, expected {len(header)}"
            )
        patient_ids.append(row[0])
        for c, cell in enumerate(row[1:]):
            try:
                x = float(cell)
            except ValueError:
                raise IngestError(
                    f"{path}: row {r}, column {gene_ids[c]!r}: "
                    f"non-numeric value {cell!r}"
                ) from None
            if not math.isfinite(x):
                raise IngestError(
                    f"{path}: row {r}, column {gene_ids[c]!r}: non-finite value {cell!r}"
                )
            if log2_transform:
                if x < 0:
                    raise IngestError(
                        f"{path}: row {r}, column {gene_ids[c]!r}: "
                        f"negative value {cell!r} cannot be log2(x+1) transformed"
                    )
                x = math.log2(x + 1.0)
            values[r - 2, c] = x
    _check_unique_ids(patient_ids, path)
    return ExpressionMatrix(tuple(patient_ids), gene_ids, values)


def read_schema(path: str) -> list[tuple[str, str, tuple[str, ...]]]:
    """Parse a clinical schema file into (name, kind, levels) entries."""
    rows = _read_rows(path)
    if not rows:
        raise SchemaError(f"{path}: empty schema")
    entries: list[tuple[str, str, tuple[str, ...]]] = []
    seen: set[str] = set()
    for r, row in enumerate(rows, start=1):
        if len(row) < 2:
            raise SchemaError(f"{path}: line {r}: need at least name and kind")
        name, kind, levels = row[0], row[1], tuple(row[2:])
        if name in seen:
            raise SchemaError(f"{path}: line {r}: duplicate column {name!r}")
        seen.add(name)
        if kind == "real":
            if levels:
                raise SchemaError(f"{path}: line {r}: real column {name!r} lists levels")
        elif kind == "categorical":
            if len(levels) < 2:
                raise SchemaError(
                    f"{path}: line {r}: categorical column {name!r} needs >= 2 levels"
                )
            if len(set(levels)) != len(levels):
                raise SchemaError(f"{path}: line {r}: duplicate levels for {name!r}")
            if MISSING in levels:
                raise SchemaError(
                    f"{path}: line {r}: {MISSING!r} is reserved for missing cells"
                )
        else:
            raise SchemaError(
                f"{path}: line {r}: kind must be real or categorical, got {kind!r}"
            )
        entries.append((name, kind, levels))
    return entries


def read_clinical(path: str, schema_path: str) -> ClinicalTable:
    """Parse a clinical CSV against its schema file."""
    schema = read_schema(schema_path)
    rows = _read_rows(path)
    if not rows:
        raise IngestError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "patient_id":
        raise IngestError(f"{path}: first header column must be patient_id")
    declared = {name for name, _, _ in schema}
    present = set(header[1:])
    if len(header[1:]) != len(present):
        raise IngestError(f"{path}: duplicate column names in header")
    if present != declared:
        missing = sorted(declared - present)
        extra = sorted(present - declared)
        raise SchemaError(
            f"{path}: columns disagree with schema "
            f"(missing {missing}, undeclared {extra})"
        )
    pos = {name: header.index(name) for name in declared}

    patient_ids: list[str] = []
    raw: dict[str, list[str]] = {name: [] for name in declared}
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IngestError(
                f"{path}: row {r} has {len(row)} cells, expected {len(header)}"
            )
        patient_ids.append(row[0])
        for name in declared:
            raw[name].append(row[pos[name]])
    _check_unique_ids(patient_ids, path)

    columns = []
    for name, kind, levels in schema:
        cells = raw[name]
        if kind == "real":
            parsed = np.empty(len(cells), dtype=np.float64)
            for i, cell in enumerate(cells):
                if cell == MISSING:
                    parsed[i] = np.nan
                    continue
                try:
                    parsed[i] = float(cell)
                except ValueError:
                    raise IngestError(
                        f"{path}: row {i + 2}, column {name!r}: "
                        f"non-numeric value {cell!r}"
                    ) from None
        else:
            parsed = np.empty(len(cells), dtype=object)
            for i, cell in enumerate(cells):
                if cell == MISSING:
                    parsed[i] = None
                elif cell in levels:
                    parsed[i] = cell
                else:
                    raise IngestError(
                        f"{path}: row {i + 2}, column {name!r}: "
                        f"level {cell!r} not declared in schema"
                    )
        columns.append(ClinicalColumn(name, kind, levels, parsed))
    return ClinicalTable(tuple(patient_ids), tuple(columns))


def read_labels(path: str) -> dict[str, SurvivalLabel]:
    """Parse a labels CSV into a patient id to label mapping."""
    rows = _read_rows(path)
    if not rows:
        raise IngestError(f"{path}: empty file")
    if rows[0] != ["patient_id", "time", "status"]:
        raise IngestError(f"{path}: header must be patient_id,time,status")
    labels: dict[str, SurvivalLabel] = {}
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise IngestError(f"{path}: row {r} has {len(row)} cells, expected 3")
        pid, time_cell, status_cell = row
        if pid in labels:
            raise IngestError(f"{path}: duplicate patient id {pid!r}")
        try:
            time = float(time_cell)
        except ValueError:
            raise IngestError(
                f"{path}: row {r}: non-numeric time {time_cell!r}"
            ) from None
        if not math.isfinite(time) or time <= 0:
            raise IngestError(f"{path}: row {r}: time must be positive, got {time_cell!r}")
        if status_cell not in ("0", "1"):
            raise IngestError(
                f"{path}: row {r}: status must be 0 or 1, got {status_cell!r}"
            )
        labels[pid] = SurvivalLabel(time=time, status=int(status_cell))
    return labels


def ingest(
    expression_path: str,
    clinical_path: str,
    schema_path: str,
    labels_path: str,
    log2_transform: bool = False,
) -> Dataset:
    """Load and align the three cohort files into a Dataset.

    The expression file's row order becomes the canonical patient order;
    clinical rows and labels are joined to it by patient id.  A patient
    present in only some of the files is an error, reported with the full
    list of offenders per file.
    """
    expr = read_expression(expression_path, log2_transform=log2_transform)
    clin = read_clinical(clinical_path, schema_path)
    labels = read_labels(labels_path)

    sets = {
        expression_path: set(expr.patient_ids),
        clinical_path: set(clin.patient_ids),
        labels_path: set(labels),
    }
    union = set.union(*sets.values())
    report = []
    for path, ids in sets.items():
        absent = sorted(union - ids)
        if absent:
            report.append(f"{path} lacks patients {absent}")
    if report:
        raise IngestError("patient sets disagree across files: " + "; ".join(report))

    order = expr.patient_ids
    clin_index = {pid: i for i, pid in enumerate(clin.patient_ids)}
    rows = [clin_index[pid] for pid in order]
    columns = tuple(
        ClinicalColumn(c.name, c.kind, c.levels, c.values[rows]) for c in clin.columns
    )
    clinical = ClinicalTable(order, columns)
    aligned_labels = tuple(labels[pid] for pid in order)
    return Dataset(expression=expr, clinical=clinical, labels=aligned_labels)


def _format_number(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_csvs(dataset: Dataset, out_dir: str, prefix: str = "cohort") -> dict[str, str]:
    """Export a Dataset back to the four interchange files.

    Returns the mapping of roles (expression, clinical, schema, labels) to
    the written paths.  Re-ingesting the written files reproduces the
    dataset exactly.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "expression": os.path.join(out_dir, f"{prefix}_expression.csv"),
        "clinical": os.path.join(out_dir, f"{prefix}_clinical.csv"),
        "schema": os.path.join(out_dir, f"{prefix}_schema.csv"),
        "labels": os.path.join(out_dir, f"{prefix}_labels.csv"),
    }

    with open(paths["expression"], "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["patient_id", *dataset.expression.gene_ids])
        for i, pid in enumerate(dataset.patient_ids):
            row = [repr(float(x)) for x in dataset.expression.values[i]]
            writer.writerow([pid, *row])

    with open(paths["schema"], "w", newline="") as handle:
        writer = csv.writer(handle)
        for col in dataset.clinical.columns:
            writer.writerow([col.name, col.kind, *col.levels])

    with open(paths["clinical"], "w", newline="") as handle:
        writer = csv.writer(handle)
        names = [c.name for c in dataset.clinical.columns]
        writer.writerow(["patient_id", *names])
        for i, pid in enumerate(dataset.patient_ids):
            cells = []
            for col in dataset.clinical.columns:
                v = col.values[i]
                if col.kind == "real":
                    cells.append(MISSING if np.isnan(v) else repr(float(v)))
                else:
                    cells.append(MISSING if v is None else v)
            writer.writerow([pid, *cells])

    with open(paths["labels"], "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["patient_id", "time", "status"])
        for pid, lab in zip(dataset.patient_ids, dataset.labels):
            writer.writerow([pid, _format_number(lab.time), lab.status])

    return paths
