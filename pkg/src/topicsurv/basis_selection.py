"""Cross-validated choice of encoding scheme and topic count.

The standardized training matrix is discretized once, encoded under each
candidate scheme, and every (scheme, K, fold) cell fits a topic model on
the in-fold patients, projects both parts, fits an unpenalized Cox model
on [topic mixtures, clinical] in-fold, and records the held-out
concordance together with the mean held-out per-document evidence bound.

Selection: the scheme with the best achievable mean concordance wins;
within it, the likelihood-optimal K anchors a candidate set of smaller
K's whose mean likelihood is within one fold-level standard deviation,
and the candidate with the best mean concordance (ties to the smallest K)
is chosen.  The final basis is refit on all patients.

Cells run independently, each with a random stream derived from the
master seed and the cell's own coordinates, so any worker count produces
identical results.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from .cox import cox_risk, fit_cox
from .data import SurvivalLabel, label_arrays
from .discretize import (
    CountMatrix,
    DiscretizationStats,
    EncodingScheme,
    discretize,
    encode,
)
from .errors import ConvergenceError, InputError
from .evaluate import _comparable_mask, concordance
from .lda import TopicBasis, fit_lda, infer_mixtures
from .rng import derive_rng

logger = logging.getLogger(__name__)

DEFAULT_K_GRID = tuple(range(5, 151, 5))
DEFAULT_ENCODINGS = (EncodingScheme.COLLAPSED, EncodingScheme.SPLIT)


@dataclass(frozen=True)
class CellDiagnostic:
    """Held-out scores of one (scheme, K, fold) grid cell."""

    encoding: EncodingScheme
    n_topics: int
    fold: int
    concordance: float
    likelihood: float


@dataclass(frozen=True)
class DldaSelection:
    """Outcome of the grid search: the chosen basis and its audit trail."""

    encoding: EncodingScheme
    n_topics: int
    basis: TopicBasis
    stats: DiscretizationStats
    cells: tuple[CellDiagnostic, ...]


def select_encoding_and_size(
    cells: tuple[CellDiagnostic, ...] | list[CellDiagnostic],
) -> tuple[EncodingScheme, int]:
    """Apply the selection rule to a full table of cell diagnostics.

    Pure function of the diagnostics, exposed separately so the rule can
    be exercised on synthetic score tables.
    """
    by_tk: dict[tuple[EncodingScheme, int], list[CellDiagnostic]] = {}
    for cell in cells:
        by_tk.setdefault((cell.encoding, cell.n_topics), []).append(cell)
    if not by_tk:
        raise InputError("no diagnostics to select from")

    mean_ci = {
        tk: float(np.mean([c.concordance for c in group]))
        for tk, group in by_tk.items()
    }
    mean_l = {
        tk: float(np.mean([c.likelihood for c in group])) for tk, group in by_tk.items()
    }

    encodings = sorted({tk[0] for tk in by_tk}, key=lambda e: e.value)
    # scheme with the highest best-over-K mean concordance; ties prefer
    # the collapsed scheme (fewer features)
    def best_ci(enc: EncodingScheme) -> float:
        return max(ci for (e, _), ci in mean_ci.items() if e is enc)

    order = {EncodingScheme.COLLAPSED: 0, EncodingScheme.SPLIT: 1}
    chosen_enc = max(encodings, key=lambda e: (best_ci(e), -order[e]))

    ks = sorted(k for (e, k) in by_tk if e is chosen_enc)
    k_hat = max(ks, key=lambda k: (mean_l[(chosen_enc, k)], -k))
    anchor_folds = [c.likelihood for c in by_tk[(chosen_enc, k_hat)]]
    sd = float(np.std(anchor_folds, ddof=1)) if len(anchor_folds) > 1 else 0.0
    floor = mean_l[(chosen_enc, k_hat)] - sd
    candidates = [k for k in ks if k <= k_hat and mean_l[(chosen_enc, k)] >= floor]
    k_star = max(candidates, key=lambda k: (mean_ci[(chosen_enc, k)], -k))
    return chosen_enc, k_star


def _fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    rng = derive_rng(seed, "dlda-folds")
    fold_of = np.zeros(n, dtype=np.int64)
    fold_of[rng.permutation(n)] = np.arange(n) % folds
    return fold_of


def _evaluate_cell(
    counts: np.ndarray,
    feature_ids: tuple[str, ...],
    clinical: np.ndarray,
    labels: tuple[SurvivalLabel, ...],
    fold_of: np.ndarray,
    encoding: EncodingScheme,
    n_topics: int,
    fold: int,
    master_seed: int,
    alpha: float,
) -> CellDiagnostic:
    held = fold_of == fold
    rng = derive_rng(master_seed, "dlda-cell", encoding.value, n_topics, fold)
    basis = fit_lda(counts[~held], feature_ids, n_topics, seed=rng, alpha=alpha)

    gam_in, _ = infer_mixtures(counts[~held], basis)
    theta_in = gam_in / gam_in.sum(axis=1)[:, None]
    labels_in = tuple(lab for lab, h in zip(labels, held) if not h)
    design = np.hstack([theta_in, clinical[~held]])
    try:
        model = fit_cox(design, labels_in, ridge=0.0, with_baseline=False)
    except ConvergenceError:
        # a fold can be quasi-separated along a near-unused topic; the
        # cell only needs a risk ranking, so a mild penalty that restores
        # a finite optimum is preferable to aborting the whole search
        logger.warning(
            "unpenalized scoring fit diverged for %s K=%d fold=%d; "
            "retrying with a mild ridge penalty",
            encoding.value,
            n_topics,
            fold,
        )
        model = fit_cox(design, labels_in, ridge=0.01, with_baseline=False)

    gam_out, bounds_out = infer_mixtures(counts[held], basis)
    theta_out = gam_out / gam_out.sum(axis=1)[:, None]
    labels_out = tuple(lab for lab, h in zip(labels, held) if h)
    risks = cox_risk(model, np.hstack([theta_out, clinical[held]]))
    ci = concordance(risks, labels_out)
    likelihood = float(bounds_out.mean())
    return CellDiagnostic(encoding, n_topics, fold, ci, likelihood)


def compute_basis_dlda(
    z: np.ndarray,
    clinical: np.ndarray,
    labels: tuple[SurvivalLabel, ...],
    k_grid: tuple[int, ...] = DEFAULT_K_GRID,
    folds: int = 5,
    seed: int = 0,
    encodings: tuple[EncodingScheme, ...] = DEFAULT_ENCODINGS,
    alpha: float = 0.1,
    n_jobs: int = 1,
    patient_ids: tuple[str, ...] | None = None,
    gene_ids: tuple[str, ...] | None = None,
    diagnostics_path: str | None = None,
) -> DldaSelection:
    """Grid-search the encoding scheme and topic count, refit, and report.

    ``z`` is the standardized filtered expression matrix aligned with
    ``clinical`` (may have zero columns) and ``labels``.  When
    ``patient_ids`` are supplied, all internal work runs in sorted-id
    order, so permuting the input rows (with their ids) cannot change the
    selection.  Results are deterministic for a given seed and
    independent of ``n_jobs``.
    """
    z = np.asarray(z, dtype=np.float64)
    clinical = np.asarray(clinical, dtype=np.float64)
    if clinical.ndim != 2 or clinical.shape[0] != z.shape[0]:
        raise InputError("clinical matrix must align with the expression rows")
    if len(labels) != z.shape[0]:
        raise InputError("label count does not match row count")
    if not k_grid:
        raise InputError("topic count grid is empty")
    if any(k < 1 for k in k_grid):
        raise InputError("topic counts must be positive")
    if not encodings:
        raise InputError("encoding set is empty")
    n = z.shape[0]
    if folds < 2:
        raise InputError("need at least 2 folds")
    if n < folds:
        raise InputError(f"need at least {folds} patients for {folds}-fold selection")

    if patient_ids is None:
        patient_ids = tuple(f"row{i}" for i in range(n))
    if gene_ids is None:
        gene_ids = tuple(f"g{j}" for j in range(z.shape[1]))

    canon = sorted(range(n), key=lambda i: patient_ids[i])
    z = z[canon]
    clinical = clinical[canon]
    labels = tuple(labels[i] for i in canon)
    ordered_ids = tuple(patient_ids[i] for i in canon)

    fold_of = _fold_assignment(n, folds, seed)
    times, status = label_arrays(labels)
    for fold in range(folds):
        held = fold_of == fold
        if int(_comparable_mask(times[held], status[held]).sum()) == 0:
            raise InputError(
                f"fold {fold} has no comparable held-out pairs; "
                "rebalance folds or provide more events"
            )

    dgev, stats = discretize(z, gene_ids, ordered_ids)
    encoded: dict[EncodingScheme, CountMatrix] = {
        enc: encode(dgev, enc) for enc in encodings
    }

    grid = sorted(set(k_grid))
    jobs = [
        (enc, k, fold)
        for enc in encodings
        for k in grid
        for fold in range(folds)
    ]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate_cell)(
            encoded[enc].counts,
            encoded[enc].feature_ids,
            clinical,
            labels,
            fold_of,
            enc,
            k,
            fold,
            seed,
            alpha,
        )
        for enc, k, fold in jobs
    )
    cells = tuple(results)

    chosen_enc, k_star = select_encoding_and_size(cells)
    logger.info(
        "selected encoding %s with %d topics", chosen_enc.value, k_star
    )

    final_rng = derive_rng(seed, "dlda-final", chosen_enc.value, k_star)
    basis = fit_lda(
        encoded[chosen_enc].counts,
        encoded[chosen_enc].feature_ids,
        k_star,
        seed=final_rng,
        alpha=alpha,
    )
    basis = replace(basis, scheme=chosen_enc, stats=stats)

    if diagnostics_path is not None:
        with open(diagnostics_path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["t", "K", "fold", "concordance", "likelihood"])
            for cell in cells:
                writer.writerow(
                    [
                        cell.encoding.value,
                        cell.n_topics,
                        cell.fold,
                        repr(cell.concordance),
                        repr(cell.likelihood),
                    ]
                )

    return DldaSelection(
        encoding=chosen_enc,
        n_topics=k_star,
        basis=basis,
        stats=stats,
        cells=cells,
    )
