"""Synthetic cohorts for tests and demos.

Three generators with known ground truth: a block-structured document
corpus for topic recovery, a small z-scored cohort whose survival is
driven by three expression programs, and a full raw-expression dataset
whose hazard follows a latent topic mixture with only a weak clinical
signal.  All are deterministic in the seed.
"""

from __future__ import annotations

import numpy as np

from .data import (
    ClinicalColumn,
    ClinicalTable,
    Dataset,
    ExpressionMatrix,
    SurvivalLabel,
)
from .rng import derive_rng


def three_block_corpus(
    n_docs: int = 60, vocab: int = 30, seed: int = 0
) -> tuple[np.ndarray, tuple[str, ...], np.ndarray]:
    """Documents drawn from three disjoint vocabulary blocks.

    Returns (counts, feature_ids, block_of_doc).  Document d uses only
    words from block d mod 3, so a three-topic fit should place nearly
    all of each topic's mass on one block.
    """
    if vocab % 3 != 0:
        raise ValueError("vocab must be divisible by 3")
    rng = derive_rng(seed, "three-block-corpus")
    block_size = vocab // 3
    counts = np.zeros((n_docs, vocab), dtype=np.int64)
    block_of = np.zeros(n_docs, dtype=np.int64)
    for d in range(n_docs):
        block = d % 3
        block_of[d] = block
        words = rng.integers(block * block_size, (block + 1) * block_size, size=100)
        np.add.at(counts[d], words, 1)
    feature_ids = tuple(f"w{j}" for j in range(vocab))
    return counts, feature_ids, block_of


def block_survival_cohort(
    n: int = 120, genes_per_block: int = 10, seed: int = 0
) -> tuple[
    np.ndarray,
    np.ndarray,
    tuple[SurvivalLabel, ...],
    tuple[str, ...],
    tuple[str, ...],
]:
    """Standardized cohort with three expression programs driving hazard.

    Each patient strongly expresses one of three gene blocks (blocks 0
    and 2 over-expressed, block 1 under-expressed); hazard depends only
    on the block.  Deviation strength varies per patient but scales the
    whole block together, so document composition stays constant within a
    block and extra topics have nothing systematic left to model.
    Returns (z, clinical, labels, patient_ids, gene_ids) with an empty
    clinical matrix.
    """
    rng = derive_rng(seed, "block-survival-cohort")
    p = 3 * genes_per_block
    block_sign = np.array([1.0, -1.0, 1.0])
    block_score = np.array([0.9, 0.0, -0.9])

    z = rng.normal(0.0, 0.25, size=(n, p))
    np.clip(z, -0.99, 0.99, out=z)
    labels = []
    for i in range(n):
        block = i % 3
        lo = block * genes_per_block
        strong = 2.2 + 0.8 * rng.uniform() + 0.15 * rng.uniform(size=genes_per_block)
        z[i, lo : lo + genes_per_block] = block_sign[block] * strong

        score = block_score[block]
        time = rng.exponential(np.exp(-score))
        censor = rng.exponential(3.0)
        labels.append(
            SurvivalLabel(
                time=float(min(time, censor)) + 1e-9,
                status=1 if time <= censor else 0,
            )
        )

    patient_ids = tuple(f"P{i:03d}" for i in range(n))
    gene_ids = tuple(f"g{j:02d}" for j in range(p))
    return z, np.zeros((n, 0)), tuple(labels), patient_ids, gene_ids


def topic_expression_dataset(
    n: int = 300, p: int = 1000, n_topics: int = 4, seed: int = 0
) -> Dataset:
    """Raw-expression dataset whose hazard follows a latent topic mix.

    Gene blocks correspond to latent programs; each patient's expression
    of a block scales with their mixture weight, and the hazard is a
    spread of those weights.  Two clinical columns carry only a weak
    (age) or null (group) signal, so expression features are required for
    good ranking.
    """
    if p % n_topics != 0:
        raise ValueError("p must be divisible by n_topics")
    rng = derive_rng(seed, "topic-expression-dataset")
    block_size = p // n_topics

    theta = rng.dirichlet(np.full(n_topics, 0.25), size=n)
    amplitude = np.repeat(theta, block_size, axis=1) * 3.0
    values = amplitude + rng.normal(0.0, 0.4, size=(n, p))

    weights = np.linspace(1.5, -1.5, n_topics)
    age = rng.normal(60.0, 10.0, size=n)
    group = rng.choice(["F", "M"], size=n)
    risk = theta @ weights + 0.008 * (age - 60.0)

    labels = []
    for i in range(n):
        time = rng.exponential(np.exp(-risk[i]))
        censor = rng.exponential(3.0)
        labels.append(
            SurvivalLabel(
                time=float(min(time, censor)) + 1e-9,
                status=1 if time <= censor else 0,
            )
        )

    patient_ids = tuple(f"P{i:04d}" for i in range(n))
    gene_ids = tuple(f"G{j:04d}" for j in range(p))
    expression = ExpressionMatrix(patient_ids, gene_ids, values)
    clinical = ClinicalTable(
        patient_ids=patient_ids,
        columns=(
            ClinicalColumn("age", "real", (), tuple(float(a) for a in age)),
            ClinicalColumn("group", "categorical", ("F", "M"), tuple(group)),
        ),
    )
    return Dataset(
        expression=expression, clinical=clinical, labels=tuple(labels)
    )
