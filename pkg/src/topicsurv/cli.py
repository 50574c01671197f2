"""Command-line front end.

Subcommands cover the whole workflow: validate cohort files, train one
model from a config, score new patients, evaluate a saved model on a
labeled cohort, and run a config matrix against one shared split.  Every
tunable lives in a flat ``key = value`` config file whose complete
default set the ``defaults`` subcommand prints, and every run that
produces files also writes a manifest recording its inputs by hash.

Exit codes: 0 success, 2 bad input (files, schema, config), 3 numerical
failure (non-convergence, undefined metrics).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import re
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .curves import write_curve_csv
from .data import SplitSpec, split
from .discretize import EncodingScheme
from .errors import InputError, NumericalError, PersistenceError, TopicsurvError
from .evaluate import concordance, d_calibration
from .ingest import ingest, read_clinical, read_expression
from .persist import load_model, save_model
from .pipeline import (
    FittedPipeline,
    PipelineConfig,
    learn_survival_model,
    run_experiment_matrix,
    use_survival_model,
)

_BOOL_KEYS = ("features_clinical", "features_pca", "features_dlda")
_CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(PipelineConfig))


def _parse_bool(key: str, raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise InputError(f"config key {key} expects true or false, got {raw!r}")


def _parse_items(raw: str) -> list[str]:
    return [piece.strip() for piece in raw.split(",") if piece.strip()]


def _config_value(key: str, raw: str):
    if key in _BOOL_KEYS:
        return _parse_bool(key, raw)
    try:
        if key == "learner":
            return raw
        if key in ("extra_columns", "exclude_columns"):
            return tuple(_parse_items(raw))
        if key == "k_grid":
            return tuple(int(v) for v in _parse_items(raw))
        if key == "encodings":
            return tuple(EncodingScheme(v) for v in _parse_items(raw))
        if key in ("eta_grid", "lambda_grid", "c_grid"):
            return tuple(float(v) for v in _parse_items(raw))
        if key in ("cv_folds", "seed"):
            return int(raw)
    except ValueError as exc:
        raise InputError(f"config key {key}: cannot parse {raw!r} ({exc})") from exc
    raise InputError(
        f"unknown config key {key!r}; valid keys: {', '.join(_CONFIG_KEYS)}"
    )


def read_config(path: str) -> PipelineConfig:
    """Parse a flat key = value config file into a pipeline config.

    Blank lines and ``#`` comments are ignored; every key must be one the
    ``defaults`` subcommand prints, and duplicates are rejected.
    """
    try:
        with open(path) as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc

    values: dict = {}
    for lineno, raw_line in enumerate(lines, 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key in values:
            raise InputError(f"{path}:{lineno}: duplicate key {key}")
        values[key] = _config_value(key, raw)
    if any(k < 1 for k in values.get("k_grid", (1,))):
        raise InputError(f"{path}: k_grid values must be at least 1")
    return PipelineConfig(**values)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(
            v.value if isinstance(v, EncodingScheme) else _format_value(v)
            for v in value
        )
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_defaults(args: argparse.Namespace) -> int:
    config = PipelineConfig()
    for field in dataclasses.fields(PipelineConfig):
        print(f"{field.name} = {_format_value(getattr(config, field.name))}")
    return 0


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(config.to_payload(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _write_manifest(
    out_dir: str,
    argv: list[str],
    config_hash: str | None,
    input_paths: list[str],
    seed: int | None,
    started: float,
    output_paths: list[str],
) -> str:
    manifest = {
        "command": argv,
        "config_hash": config_hash,
        "dataset_hashes": {path: _sha256_file(path) for path in sorted(set(input_paths))},
        "seed": seed,
        "tool_version": __version__,
        "wall_clock_seconds": time.perf_counter() - started,
        "output_paths": sorted(output_paths),
    }
    path = os.path.join(out_dir, "manifest.json")
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".manifest.tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            json.dump(manifest, handle, sort_keys=True, indent=1)
            handle.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _ingest_args(args: argparse.Namespace):
    return ingest(
        args.expression,
        args.clinical,
        args.schema,
        args.labels,
        log2_transform=args.log2,
    )


def _dataset_paths(args: argparse.Namespace) -> list[str]:
    return [args.expression, args.clinical, args.schema, args.labels]


def cmd_ingest_check(args: argparse.Namespace) -> int:
    dataset = _ingest_args(args)
    events = sum(lab.status for lab in dataset.labels)
    n = dataset.n_patients
    print(f"patients {n}")
    print(f"genes {dataset.expression.n_genes}")
    print(f"clinical columns {len(dataset.clinical.columns)}")
    print(f"events {events} censored {n - events}")
    print("ok")
    return 0


def _load_pipeline(path: str) -> FittedPipeline:
    try:
        model = load_model(path)
    except OSError as exc:
        raise InputError(f"cannot read model {path}: {exc}") from exc
    if not isinstance(model, FittedPipeline):
        raise InputError(f"{path} holds a {type(model).__name__}, not a fitted pipeline")
    return model


def cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    config = read_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    dataset = _ingest_args(args)
    os.makedirs(args.out_dir, exist_ok=True)

    cells_path = None
    if config.features_dlda:
        cells_path = os.path.join(args.out_dir, "dlda_cells.csv")
    fitted = learn_survival_model(
        dataset, config, n_jobs=args.workers, dlda_diagnostics_path=cells_path
    )

    model_path = os.path.join(args.out_dir, "model.json")
    save_model(fitted, model_path)
    diag_path = os.path.join(args.out_dir, "diagnostics.csv")
    _write_train_diagnostics(fitted, diag_path)

    outputs = [model_path, diag_path]
    if cells_path is not None:
        outputs.append(cells_path)
    outputs.append(
        _write_manifest(
            args.out_dir,
            args.argv,
            _config_hash(config),
            _dataset_paths(args) + [args.config],
            config.seed,
            started,
            outputs,
        )
    )
    print(f"model written to {model_path}")
    print(f"train CI {fitted.diagnostics.train_concordance:.4f}")
    return 0


def _write_train_diagnostics(fitted: FittedPipeline, path: str) -> None:
    """Flat key,value summary of what training chose."""
    diag = fitted.diagnostics
    rows: list[tuple[str, str]] = [
        ("learner", fitted.config.learner),
        ("train_concordance", repr(diag.train_concordance)),
        ("horizon", repr(fitted.horizon)),
    ]
    for name, value in sorted(diag.chosen.items()):
        rows.append((f"chosen_{name}", repr(value)))
    for value, mean_ci in diag.cv_table:
        rows.append((f"cv_{value!r}", repr(mean_ci)))
    if fitted.topic_basis is not None:
        rows.append(("topic_encoding", fitted.topic_basis.scheme.value))
        rows.append(("topic_count", str(fitted.topic_basis.n_topics)))
    if fitted.pca_basis is not None:
        rows.append(("pca_eta", repr(fitted.pca_basis.eta)))
        rows.append(("pca_retained", str(len(fitted.pca_basis.retained_indices))))
    with open(path, "w", newline="") as handle:
        handle.write("key,value\n")
        for key, value in rows:
            handle.write(f"{key},{value}\n")


def _curve_filename(patient_id: str, used: set) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", patient_id) or "patient"
    name = f"curve_{safe}.csv"
    suffix = 1
    while name in used:
        name = f"curve_{safe}_{suffix}.csv"
        suffix += 1
    used.add(name)
    return name


def cmd_predict(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    fitted = _load_pipeline(args.model)
    input_paths = [args.model]

    expression = None
    if fitted.expression_info is not None:
        if args.expression is None:
            raise InputError("this model needs --expression")
        expression = read_expression(args.expression, log2_transform=args.log2)
        input_paths.append(args.expression)
    clinical = None
    if fitted.clinical_info is not None or fitted.extra_info is not None:
        if args.clinical is None or args.schema is None:
            raise InputError("this model needs --clinical and --schema")
        clinical = read_clinical(args.clinical, args.schema)
        input_paths += [args.clinical, args.schema]

    scored = use_survival_model(
        fitted, expression, clinical, strict_levels=args.strict_levels
    )
    patient_ids = (expression or clinical).patient_ids

    os.makedirs(args.out_dir, exist_ok=True)
    used: set = set()
    outputs = []
    table_path = os.path.join(args.out_dir, "predictions.csv")
    with open(table_path, "w", newline="") as handle:
        handle.write("patient_id,risk,curve_path\n")
        for pid, (curve, risk) in zip(patient_ids, scored):
            name = _curve_filename(pid, used)
            curve_path = os.path.join(args.out_dir, name)
            write_curve_csv(curve, curve_path)
            outputs.append(curve_path)
            handle.write(f"{pid},{risk!r},{name}\n")
    outputs.append(table_path)

    outputs.append(
        _write_manifest(
            args.out_dir,
            args.argv,
            _config_hash(fitted.config),
            input_paths,
            fitted.config.seed,
            started,
            outputs,
        )
    )
    print(f"scored {len(scored)} patients into {args.out_dir}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    fitted = _load_pipeline(args.model)
    dataset = _ingest_args(args)

    scored = use_survival_model(
        fitted,
        dataset.expression if fitted.expression_info is not None else None,
        dataset.clinical,
        strict_levels=args.strict_levels,
    )
    risks = np.array([risk for _, risk in scored])
    ci = concordance(risks, dataset.labels)
    table = d_calibration([curve for curve, _ in scored], dataset.labels)

    os.makedirs(args.out_dir, exist_ok=True)
    cal_path = os.path.join(args.out_dir, "calibration.csv")
    with open(cal_path, "w", newline="") as handle:
        handle.write("bin_low,bin_high,observed,expected\n")
        g = table.n_bins
        for b in range(g):
            handle.write(
                f"{b / g!r},{(b + 1) / g!r},"
                f"{int(table.observed[b])},{float(table.predicted[b])!r}\n"
            )
    outputs = [cal_path]
    outputs.append(
        _write_manifest(
            args.out_dir,
            args.argv,
            _config_hash(fitted.config),
            _dataset_paths(args) + [args.model],
            fitted.config.seed,
            started,
            outputs,
        )
    )
    print(f"CI {ci:.4f}")
    print(f"HL {table.statistic:.4f} p {table.p_value:.4f}")
    return 0


def cmd_matrix(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if len(args.config) < 2:
        raise InputError("matrix needs at least 2 --config files")
    configs = [read_config(path) for path in args.config]
    if args.seed is not None:
        configs = [dataclasses.replace(c, seed=args.seed) for c in configs]
    dataset = _ingest_args(args)

    split_seed = args.seed if args.seed is not None else 0
    train, test = split(
        dataset, SplitSpec(train_fraction=args.train_fraction, seed=split_seed)
    )

    os.makedirs(args.out_dir, exist_ok=True)
    results_path = os.path.join(args.out_dir, "results.csv")
    cal_path = os.path.join(args.out_dir, "calibration.csv")
    rows = run_experiment_matrix(
        train,
        test,
        configs,
        n_jobs=args.workers,
        results_path=results_path,
        calibration_path=cal_path,
    )

    matrix_hash = hashlib.sha256(
        "".join(_config_hash(c) for c in configs).encode()
    ).hexdigest()
    outputs = [results_path, cal_path]
    outputs.append(
        _write_manifest(
            args.out_dir,
            args.argv,
            matrix_hash,
            _dataset_paths(args) + list(args.config),
            split_seed,
            started,
            outputs,
        )
    )
    for row in rows:
        print(
            f"{row.config_index} {row.config.learner} "
            f"CI {row.test_concordance:.4f} HL p {row.calibration.p_value:.4f}"
        )
    return 0


def _add_dataset_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--expression", required=True, help="expression CSV")
    parser.add_argument("--clinical", required=True, help="clinical CSV")
    parser.add_argument("--schema", required=True, help="clinical schema CSV")
    parser.add_argument("--labels", required=True, help="survival labels CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topicsurv",
        description="Survival prediction from expression data via topic models",
    )
    parser.add_argument(
        "--seed", type=int, default=None, help="override every configured seed"
    )
    parser.add_argument(
        "--workers",
        type=int,
        default=os.cpu_count() or 1,
        help="parallel workers (results do not depend on this)",
    )
    parser.add_argument(
        "--log2",
        action="store_true",
        help="apply log2(1+x) to expression values at ingest",
    )
    parser.add_argument(
        "--strict-levels",
        action="store_true",
        help="reject unseen categorical levels instead of zero-encoding them",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("defaults", help="print every config key with its default")
    p.set_defaults(func=cmd_defaults)

    p = sub.add_parser("ingest-check", help="validate cohort files and summarize")
    _add_dataset_arguments(p)
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("train", help="fit one model from a config")
    p.add_argument("--config", required=True, help="flat key = value config file")
    _add_dataset_arguments(p)
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score patients with a saved model")
    p.add_argument("--model", required=True, help="saved model file")
    p.add_argument("--expression", help="expression CSV")
    p.add_argument("--clinical", help="clinical CSV")
    p.add_argument("--schema", help="clinical schema CSV")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="test a saved model on a labeled cohort")
    p.add_argument("--model", required=True, help="saved model file")
    _add_dataset_arguments(p)
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("matrix", help="run several configs on one shared split")
    p.add_argument(
        "--config",
        action="append",
        default=[],
        help="config file; give one per matrix row",
    )
    _add_dataset_arguments(p)
    p.add_argument(
        "--train-fraction", type=float, default=0.8, help="shared split fraction"
    )
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=cmd_matrix)

    return parser


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    args = build_parser().parse_args(argv)
    args.argv = list(argv)
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (InputError, PersistenceError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except TopicsurvError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
