"""End-to-end training, scoring, and experiment grids.

One config says which feature groups feed the learner (clinical
covariates, screened principal-component scores, topic mixtures from the
discretized expression, plus any extra clinical columns kept aside from
the main block).  Training fits every enabled transform on the training
cohort only, picks learner hyperparameters by cross-validated
concordance, and returns a self-contained fitted object that replays the
whole chain on new patients.  A matrix run evaluates several configs
against one shared train/test split and tabulates test concordance and
calibration per row.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .basis_selection import (
    DEFAULT_ENCODINGS,
    DEFAULT_K_GRID,
    CellDiagnostic,
    compute_basis_dlda,
)
from .cox import CoxModel, cox_curve, cox_risk, fit_cox
from .curves import SurvivalCurve, risk_from_curve
from .data import ClinicalTable, Dataset, ExpressionMatrix, SurvivalLabel
from .discretize import EncodingScheme, discretize_rows, encode
from .errors import InputError, NumericalError, TopicsurvError
from .evaluate import CalibrationTable, _comparable_mask, concordance, d_calibration
from .lda import TopicBasis, infer_mixtures
from .mtlr import MtlrModel, fit_mtlr, mtlr_curve
from .persist import decode_array, decode_float, encode_array, encode_float, persistable
from .preprocess import (
    PreprocessInfo,
    apply_clinical,
    apply_expression,
    fit_clinical,
    fit_expression,
)
from .rng import derive_rng
from .superpc import DEFAULT_ETA_GRID, PcaBasis, fit_pca, screen_components, use_basis_pca

logger = logging.getLogger(__name__)

LEARNERS = ("cox", "rcox", "mtlr")
DEFAULT_LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0)
DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0)

RESULT_COLUMNS = (
    "config_id",
    "features_clinical",
    "features_pca",
    "features_dlda",
    "learner",
    "test_ci",
    "hl_stat",
    "hl_pvalue",
)


@contextmanager
def _stage(name: str):
    # the innermost stage to see an error names it; outer stages leave it be
    try:
        yield
    except TopicsurvError as err:
        if err.stage is None:
            err.stage = name
        raise


@dataclass(frozen=True)
class PipelineConfig:
    """Feature groups, learner choice, and every tuning grid for one model."""

    features_clinical: bool = True
    features_pca: bool = False
    features_dlda: bool = False
    learner: str = "cox"
    extra_columns: tuple[str, ...] = ()
    exclude_columns: tuple[str, ...] = ()
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    encodings: tuple[EncodingScheme, ...] = DEFAULT_ENCODINGS
    eta_grid: tuple[float, ...] = DEFAULT_ETA_GRID
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    c_grid: tuple[float, ...] = DEFAULT_C_GRID
    cv_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        enabled = (
            self.features_clinical
            or self.features_pca
            or self.features_dlda
            or bool(self.extra_columns)
        )
        if not enabled:
            raise InputError("config enables no feature group")
        if self.learner not in LEARNERS:
            raise InputError(
                f"unknown learner {self.learner!r}; expected one of {LEARNERS}"
            )
        if self.cv_folds < 2:
            raise InputError(f"cv_folds must be at least 2, got {self.cv_folds}")
        if self.learner == "rcox" and not self.lambda_grid:
            raise InputError("ridge learner needs a nonempty lambda grid")
        if self.learner == "mtlr" and not self.c_grid:
            raise InputError("mtlr learner needs a nonempty C grid")
        if any(v <= 0 for v in self.lambda_grid):
            raise InputError("lambda grid values must be positive")
        if any(v <= 0 for v in self.c_grid):
            raise InputError("C grid values must be positive")
        overlap = set(self.extra_columns) & set(self.exclude_columns)
        if overlap:
            raise InputError(f"columns both extra and excluded: {sorted(overlap)}")

    def to_payload(self) -> dict:
        return {
            "features_clinical": self.features_clinical,
            "features_pca": self.features_pca,
            "features_dlda": self.features_dlda,
            "learner": self.learner,
            "extra_columns": list(self.extra_columns),
            "exclude_columns": list(self.exclude_columns),
            "k_grid": list(self.k_grid),
            "encodings": [e.value for e in self.encodings],
            "eta_grid": [encode_float(v) for v in self.eta_grid],
            "lambda_grid": [encode_float(v) for v in self.lambda_grid],
            "c_grid": [encode_float(v) for v in self.c_grid],
            "cv_folds": self.cv_folds,
            "seed": self.seed,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "PipelineConfig":
        return cls(
            features_clinical=payload["features_clinical"],
            features_pca=payload["features_pca"],
            features_dlda=payload["features_dlda"],
            learner=payload["learner"],
            extra_columns=tuple(payload["extra_columns"]),
            exclude_columns=tuple(payload["exclude_columns"]),
            k_grid=tuple(int(k) for k in payload["k_grid"]),
            encodings=tuple(EncodingScheme(v) for v in payload["encodings"]),
            eta_grid=tuple(decode_float(v) for v in payload["eta_grid"]),
            lambda_grid=tuple(decode_float(v) for v in payload["lambda_grid"]),
            c_grid=tuple(decode_float(v) for v in payload["c_grid"]),
            cv_folds=payload["cv_folds"],
            seed=payload["seed"],
        )


@dataclass(frozen=True)
class TrainingDiagnostics:
    """In-sample audit trail; kept in memory, exported to CSV, never pickled
    into the model file."""

    train_patient_ids: tuple[str, ...]
    train_risks: np.ndarray
    train_curves: tuple[SurvivalCurve, ...]
    train_concordance: float
    dlda_cells: tuple[CellDiagnostic, ...] | None
    chosen: dict
    cv_table: tuple[tuple[float, float], ...]


@persistable("FittedPipeline")
@dataclass(frozen=True)
class FittedPipeline:
    """A trained model plus the fitted transforms that feed it.

    Holds exactly the pieces its config enabled: preprocessing info for
    each active feature group, the topic and component bases when their
    groups are on, the survival model, and the scoring horizon (1.5x the
    largest observed training time).  ``feature_center``/``feature_scale``
    standardize the assembled matrix before it reaches the model; they are
    training moments, replayed verbatim on new patients.  ``diagnostics``
    exists only on the freshly trained object; persistence keeps
    everything that affects predictions, so a reloaded pipeline scores
    patients identically.
    """

    config: PipelineConfig
    expression_info: PreprocessInfo | None
    clinical_info: PreprocessInfo | None
    extra_info: PreprocessInfo | None
    topic_basis: TopicBasis | None
    pca_basis: PcaBasis | None
    feature_center: np.ndarray
    feature_scale: np.ndarray
    model: CoxModel | MtlrModel
    horizon: float
    diagnostics: TrainingDiagnostics | None = None

    def __post_init__(self):
        cfg = self.config
        needs_expression = cfg.features_pca or cfg.features_dlda
        checks = (
            (cfg.features_clinical, self.clinical_info, "clinical info"),
            (bool(cfg.extra_columns), self.extra_info, "extra-column info"),
            (needs_expression, self.expression_info, "expression info"),
            (cfg.features_dlda, self.topic_basis, "topic basis"),
            (cfg.features_pca, self.pca_basis, "component basis"),
        )
        for enabled, part, label in checks:
            if enabled and part is None:
                raise InputError(f"config enables {label} but it is missing")
            if not enabled and part is not None:
                raise InputError(f"config does not enable {label} but it is present")
        if cfg.learner in ("cox", "rcox") and not isinstance(self.model, CoxModel):
            raise InputError(f"learner {cfg.learner!r} requires a Cox model")
        if cfg.learner == "mtlr" and not isinstance(self.model, MtlrModel):
            raise InputError("learner 'mtlr' requires an MTLR model")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise InputError("horizon must be positive and finite")
        center = np.asarray(self.feature_center, dtype=np.float64)
        scale = np.asarray(self.feature_scale, dtype=np.float64)
        object.__setattr__(self, "feature_center", center)
        object.__setattr__(self, "feature_scale", scale)
        if center.shape != scale.shape or center.ndim != 1:
            raise InputError("feature center and scale must be matching 1-d arrays")
        if np.any(scale <= 0):
            raise InputError("feature scales must be positive")
        n_model = (
            self.model.n_features
            if isinstance(self.model, MtlrModel)
            else len(self.model.weights)
        )
        if n_model != len(scale):
            raise InputError("model width does not match the feature scaling")

    def to_payload(self) -> dict:
        def opt(part):
            return None if part is None else part.to_payload()

        return {
            "config": self.config.to_payload(),
            "expression_info": opt(self.expression_info),
            "clinical_info": opt(self.clinical_info),
            "extra_info": opt(self.extra_info),
            "topic_basis": opt(self.topic_basis),
            "pca_basis": opt(self.pca_basis),
            "feature_center": encode_array(self.feature_center),
            "feature_scale": encode_array(self.feature_scale),
            "model_kind": "mtlr" if isinstance(self.model, MtlrModel) else "cox",
            "model": self.model.to_payload(),
            "horizon": encode_float(self.horizon),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FittedPipeline":
        def opt(value, decoder):
            return None if value is None else decoder(value)

        model_cls = MtlrModel if payload["model_kind"] == "mtlr" else CoxModel
        return cls(
            config=PipelineConfig.from_payload(payload["config"]),
            expression_info=opt(payload["expression_info"], PreprocessInfo.from_payload),
            clinical_info=opt(payload["clinical_info"], PreprocessInfo.from_payload),
            extra_info=opt(payload["extra_info"], PreprocessInfo.from_payload),
            topic_basis=opt(payload["topic_basis"], TopicBasis.from_payload),
            pca_basis=opt(payload["pca_basis"], PcaBasis.from_payload),
            feature_center=decode_array(payload["feature_center"]),
            feature_scale=decode_array(payload["feature_scale"]),
            model=model_cls.from_payload(payload["model"]),
            horizon=decode_float(payload["horizon"]),
        )


def _clinical_column_names(table: ClinicalTable, config: PipelineConfig) -> tuple[str, ...]:
    skip = set(config.extra_columns) | set(config.exclude_columns)
    return tuple(c.name for c in table.columns if c.name not in skip)


def _mixture_features(
    z: np.ndarray, basis: TopicBasis, patient_ids: tuple[str, ...]
) -> np.ndarray:
    """Topic mixtures for standardized rows, replaying the fitted encoding."""
    if basis.scheme is None or basis.stats is None:
        raise InputError("topic basis carries no encoding metadata")
    dgev = discretize_rows(z, basis.stats, patient_ids)
    counts = encode(dgev, basis.scheme)
    gammas, _ = infer_mixtures(counts.counts, basis)
    return gammas / gammas.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class _FeatureChain:
    """The fitted transforms of one pipeline, before the model exists."""

    config: PipelineConfig
    expression_info: PreprocessInfo | None
    clinical_info: PreprocessInfo | None
    extra_info: PreprocessInfo | None
    topic_basis: TopicBasis | None
    pca_basis: PcaBasis | None

    def assemble(
        self,
        expression: ExpressionMatrix | None,
        clinical: ClinicalTable | None,
        strict_levels: bool = False,
    ) -> np.ndarray:
        """Feature matrix in the fixed block order: mixtures, scores,
        clinical, extra columns."""
        cfg = self.config
        n = None
        z = None
        if self.expression_info is not None:
            if expression is None:
                raise InputError("this model needs an expression matrix")
            z = apply_expression(self.expression_info, expression)
            n = z.shape[0]
        if (self.clinical_info is not None or self.extra_info is not None) and clinical is None:
            raise InputError("this model needs a clinical table")
        if clinical is not None:
            if n is None:
                n = clinical.n_patients
            elif clinical.n_patients != n:
                raise InputError("expression and clinical cover different patient counts")
            if expression is not None and expression.patient_ids != clinical.patient_ids:
                raise InputError("expression and clinical patient ids disagree")

        blocks: list[np.ndarray] = []
        if cfg.features_dlda:
            blocks.append(_mixture_features(z, self.topic_basis, expression.patient_ids))
        if cfg.features_pca:
            blocks.append(use_basis_pca(z, self.pca_basis))
        if cfg.features_clinical:
            blocks.append(apply_clinical(self.clinical_info, clinical, strict_levels))
        if self.extra_info is not None:
            blocks.append(apply_clinical(self.extra_info, clinical, strict_levels))
        return np.hstack(blocks)


def _chain_of(fitted: "FittedPipeline") -> _FeatureChain:
    return _FeatureChain(
        config=fitted.config,
        expression_info=fitted.expression_info,
        clinical_info=fitted.clinical_info,
        extra_info=fitted.extra_info,
        topic_basis=fitted.topic_basis,
        pca_basis=fitted.pca_basis,
    )


def _holdout_folds(n: int, folds: int, seed: int) -> np.ndarray:
    rng = derive_rng(seed, "learner-cv")
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[rng.permutation(n)] = np.arange(n) % folds
    return fold_of


def _rank_risks(
    learner: str,
    value: float,
    X_in: np.ndarray,
    labels_in: tuple[SurvivalLabel, ...],
    X_out: np.ndarray,
    horizon: float,
) -> np.ndarray:
    if learner == "rcox":
        model = fit_cox(X_in, labels_in, ridge=value, with_baseline=False)
        return cox_risk(model, X_out)
    model = fit_mtlr(X_in, labels_in, C=value)
    return np.array(
        [risk_from_curve(mtlr_curve(model, x), horizon) for x in X_out]
    )


def _cv_pick(
    X: np.ndarray,
    labels: tuple[SurvivalLabel, ...],
    grid: tuple[float, ...],
    learner: str,
    folds: int,
    seed: int,
    horizon: float,
) -> tuple[float, tuple[tuple[float, float], ...]]:
    """Pick the grid value with the best mean held-out concordance.

    Ties go to the larger value: both penalties shrink harder as they
    grow, and equal rankings favor the more regularized model.
    """
    n = len(labels)
    if n < folds:
        raise InputError(f"{n} patients cannot support {folds}-fold tuning")
    fold_of = _holdout_folds(n, folds, seed)
    times = np.array([lab.time for lab in labels])
    status = np.array([lab.status for lab in labels])
    for f in range(folds):
        held = fold_of == f
        if not _comparable_mask(times[held], status[held]).any():
            raise InputError(
                f"tuning fold {f} holdout has no comparable pair; "
                "use fewer folds or more patients"
            )

    table: list[tuple[float, float]] = []
    for value in grid:
        fold_cis = []
        for f in range(folds):
            held = fold_of == f
            labels_in = tuple(lab for lab, h in zip(labels, held) if not h)
            labels_out = tuple(lab for lab, h in zip(labels, held) if h)
            risks = _rank_risks(learner, value, X[~held], labels_in, X[held], horizon)
            fold_cis.append(concordance(risks, labels_out))
        table.append((value, float(np.mean(fold_cis))))

    best_value, _ = max(table, key=lambda item: (item[1], item[0]))
    return best_value, tuple(table)


def learn_survival_model(
    dataset: Dataset,
    config: PipelineConfig,
    n_jobs: int = 1,
    dlda_diagnostics_path: str | None = None,
) -> FittedPipeline:
    """Fit every enabled transform and the survival learner on one cohort.

    Stages run in a fixed order (preprocess, topic basis, component
    basis, learner, diagnostics) and any error is tagged with the stage
    it arose in.  The returned object carries in-sample diagnostics:
    training risks and curves, the chosen hyperparameter with its tuning
    table, and the per-cell topic grid when that search ran.
    """
    if dataset.n_patients < 2:
        raise InputError("need at least 2 patients to train", stage="preprocess")
    labels = dataset.labels

    with _stage("preprocess"):
        clinical_matrix = None
        clinical_info = None
        if config.features_clinical:
            names = _clinical_column_names(dataset.clinical, config)
            if not names:
                raise InputError(
                    "clinical features enabled but no columns remain after exclusions"
                )
            clinical_matrix, specs, feature_names = fit_clinical(dataset.clinical, names)
            clinical_info = PreprocessInfo(
                clinical_specs=specs, clinical_feature_names=feature_names
            )
        extra_info = None
        extra_matrix = None
        if config.extra_columns:
            extra_matrix, extra_specs, extra_names = fit_clinical(
                dataset.clinical, config.extra_columns
            )
            extra_info = PreprocessInfo(
                clinical_specs=extra_specs, clinical_feature_names=extra_names
            )
        expression_info = None
        z = None
        if config.features_pca or config.features_dlda:
            z, expression_info = fit_expression(dataset.expression)

    topic_basis = None
    dlda_cells = None
    if config.features_dlda:
        with _stage("topic-basis"):
            inner_clinical = (
                clinical_matrix
                if clinical_matrix is not None
                else np.zeros((dataset.n_patients, 0))
            )
            selection = compute_basis_dlda(
                z,
                inner_clinical,
                labels,
                k_grid=config.k_grid,
                folds=config.cv_folds,
                seed=config.seed,
                encodings=config.encodings,
                n_jobs=n_jobs,
                patient_ids=dataset.patient_ids,
                gene_ids=expression_info.retained_genes,
                diagnostics_path=dlda_diagnostics_path,
            )
            topic_basis = selection.basis
            dlda_cells = selection.cells

    pca_basis = None
    if config.features_pca:
        with _stage("component-basis"):
            pca_basis = screen_components(
                fit_pca(z),
                z,
                labels,
                eta_grid=config.eta_grid,
                clinical=clinical_matrix,
                seed=config.seed,
            )

    with _stage("learner"):
        horizon = 1.5 * max(lab.time for lab in labels)
        chain = _FeatureChain(
            config=config,
            expression_info=expression_info,
            clinical_info=clinical_info,
            extra_info=extra_info,
            topic_basis=topic_basis,
            pca_basis=pca_basis,
        )
        X_raw = chain.assemble(dataset.expression, dataset.clinical)
        if X_raw.shape[1] == 0:
            raise InputError(
                "feature matrix is empty; every enabled group produced no columns"
            )
        # standardized columns keep the quasi-Newton learners well conditioned;
        # constant columns pass through untouched
        center = X_raw.mean(axis=0)
        sd = X_raw.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)
        X = (X_raw - center) / scale
        chosen: dict = {}
        cv_table: tuple[tuple[float, float], ...] = ()
        if config.learner == "cox":
            model = fit_cox(X, labels)
        elif config.learner == "rcox":
            lam, cv_table = _cv_pick(
                X, labels, config.lambda_grid, "rcox", config.cv_folds,
                config.seed, horizon,
            )
            chosen = {"lambda": lam}
            model = fit_cox(X, labels, ridge=lam)
        else:
            c_value, cv_table = _cv_pick(
                X, labels, config.c_grid, "mtlr", config.cv_folds,
                config.seed, horizon,
            )
            chosen = {"C": c_value}
            model = fit_mtlr(X, labels, C=c_value)

    fitted = FittedPipeline(
        config=config,
        expression_info=expression_info,
        clinical_info=clinical_info,
        extra_info=extra_info,
        topic_basis=topic_basis,
        pca_basis=pca_basis,
        feature_center=center,
        feature_scale=scale,
        model=model,
        horizon=horizon,
    )

    with _stage("diagnostics"):
        scored = use_survival_model(fitted, dataset.expression, dataset.clinical)
        train_curves = tuple(curve for curve, _ in scored)
        train_risks = np.array([risk for _, risk in scored])
        try:
            train_ci = concordance(train_risks, labels)
        except NumericalError:
            logger.warning("training set has no comparable pairs; concordance undefined")
            train_ci = float("nan")
        diagnostics = TrainingDiagnostics(
            train_patient_ids=dataset.patient_ids,
            train_risks=train_risks,
            train_curves=train_curves,
            train_concordance=train_ci,
            dlda_cells=dlda_cells,
            chosen=chosen,
            cv_table=cv_table,
        )
    return dataclasses.replace(fitted, diagnostics=diagnostics)


def use_survival_model(
    fitted: FittedPipeline,
    expression: ExpressionMatrix | None,
    clinical: ClinicalTable | None,
    strict_levels: bool = False,
) -> list[tuple[SurvivalCurve, float]]:
    """Score patients: one (survival curve, risk) pair per row.

    The risk is the negated area under that same curve up to the fitted
    horizon, so the two outputs can never disagree about ordering.  Pass
    only the inputs the model was trained with; a missing required part
    is an input error.
    """
    with _stage("score"):
        X_raw = _chain_of(fitted).assemble(expression, clinical, strict_levels)
        X = (X_raw - fitted.feature_center) / fitted.feature_scale
        out: list[tuple[SurvivalCurve, float]] = []
        if isinstance(fitted.model, MtlrModel):
            for x in X:
                curve = mtlr_curve(fitted.model, x)
                out.append((curve, risk_from_curve(curve, fitted.horizon)))
        else:
            for x in X:
                curve = cox_curve(fitted.model, x)
                out.append((curve, risk_from_curve(curve, fitted.horizon)))
        return out


@dataclass(frozen=True)
class MatrixRow:
    """Held-out metrics for one config in an experiment matrix."""

    config_index: int
    config: PipelineConfig
    test_concordance: float
    calibration: CalibrationTable


def _run_matrix_row(
    index: int, train: Dataset, test: Dataset, config: PipelineConfig
) -> MatrixRow:
    fitted = learn_survival_model(train, config, n_jobs=1)
    scored = use_survival_model(fitted, test.expression, test.clinical)
    risks = np.array([risk for _, risk in scored])
    with _stage("evaluate"):
        test_ci = concordance(risks, test.labels)
        calibration = d_calibration([curve for curve, _ in scored], test.labels)
    return MatrixRow(
        config_index=index,
        config=config,
        test_concordance=test_ci,
        calibration=calibration,
    )


def write_matrix_csv(rows: list[MatrixRow], path: str) -> None:
    """Write the per-config summary table."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            cfg = row.config
            writer.writerow(
                [
                    row.config_index,
                    "true" if cfg.features_clinical else "false",
                    "true" if cfg.features_pca else "false",
                    "true" if cfg.features_dlda else "false",
                    cfg.learner,
                    repr(row.test_concordance),
                    repr(row.calibration.statistic),
                    repr(row.calibration.p_value),
                ]
            )


def write_calibration_csv(rows: list[MatrixRow], path: str) -> None:
    """Write per-config bin occupancy of the held-out survival probabilities."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["config_id", "bin_low", "bin_high", "observed", "expected"])
        for row in rows:
            table = row.calibration
            g = table.n_bins
            for b in range(g):
                writer.writerow(
                    [
                        row.config_index,
                        repr(b / g),
                        repr((b + 1) / g),
                        int(table.observed[b]),
                        repr(float(table.predicted[b])),
                    ]
                )


def run_experiment_matrix(
    train: Dataset,
    test: Dataset,
    configs: list[PipelineConfig] | tuple[PipelineConfig, ...],
    n_jobs: int = 1,
    results_path: str | None = None,
    calibration_path: str | None = None,
) -> list[MatrixRow]:
    """Train and evaluate each config against one shared train/test split.

    Needs at least two configs; a single model is a plain train-then-score
    run.  Rows are independent, so they parallelize across workers, and
    the output order always follows the config list, making results
    independent of the worker count.  Two identical configs produce
    identical rows.
    """
    configs = list(configs)
    if len(configs) < 2:
        raise InputError(
            "an experiment matrix needs at least 2 configs; "
            "train a single model directly instead"
        )
    jobs = (
        delayed(_run_matrix_row)(i, train, test, cfg)
        for i, cfg in enumerate(configs)
    )
    rows = list(Parallel(n_jobs=n_jobs)(jobs))
    rows.sort(key=lambda row: row.config_index)
    if results_path is not None:
        write_matrix_csv(rows, results_path)
    if calibration_path is not None:
        write_calibration_csv(rows, calibration_path)
    return rows
