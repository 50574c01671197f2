"""Expression standardization, the variation filter, and clinical encoding."""

import warnings

import numpy as np
import pytest

from topicsurv.data import ClinicalColumn, ClinicalTable, ExpressionMatrix
from topicsurv.errors import InputError
from topicsurv.preprocess import (
    apply_clinical,
    apply_expression,
    filter_genes,
    fit_clinical,
    fit_expression,
    standardize_expression,
)


def test_grand_moments_small_fixture():
    # mean over all four entries is 2; variance uses the N-1 denominator
    expr = ExpressionMatrix(("a", "b"), ("g1", "g2"), np.array([[0.0, 2.0], [2.0, 4.0]]))
    z, mu, sigma = standardize_expression(expr)
    assert mu == 2.0
    assert np.isclose(sigma, np.sqrt(8.0 / 3.0), atol=1e-12)
    expect = np.array([[-1.224745, 0.0], [0.0, 1.224745]])
    assert np.allclose(z, expect, atol=1e-6)


def test_constant_matrix_rejected():
    expr = ExpressionMatrix(("a", "b"), ("g",), np.full((2, 1), 7.0))
    with pytest.raises(InputError, match="constant"):
        standardize_expression(expr)


def test_grand_moments_calibration():
    rng = np.random.default_rng(8)
    values = rng.normal(loc=5.0, scale=3.0, size=(500, 200))
    expr = ExpressionMatrix(
        tuple(f"p{i}" for i in range(500)), tuple(f"g{j}" for j in range(200)), values
    )
    z, mu, sigma = standardize_expression(expr)
    assert abs(mu - 5.0) < 0.05
    assert abs(sigma - 3.0) < 0.05
    assert abs(z.mean()) < 1e-12
    assert np.isclose(z.std(ddof=1), 1.0, atol=1e-12)


def test_filter_is_strict():
    z = np.array([[1.0], [-1.0]])
    with pytest.raises(InputError):
        filter_genes(z, ("g",))
    z = np.array([[1.0 + 1e-9], [0.0]])
    assert filter_genes(z, ("g",)) == ("g",)


def test_filter_drops_flat_gene():
    # a gene stuck at the grand mean never leaves [-1, 1]
    expr = ExpressionMatrix(
        ("a", "b"), ("varies", "flat"), np.array([[0.0, 1.0], [2.0, 1.0]])
    )
    z, info = fit_expression(expr)
    assert info.retained_genes == ("varies",)
    assert z.shape == (2, 1)


def test_fit_expression_column_order():
    rng = np.random.default_rng(2)
    values = rng.normal(size=(30, 5)) * 4
    expr = ExpressionMatrix(
        tuple(f"p{i}" for i in range(30)), ("e", "d", "c", "b", "a"), values
    )
    z, info = fit_expression(expr)
    # retained order follows the input gene order, not sorted order
    assert info.retained_genes == ("e", "d", "c", "b", "a")
    assert info.gene_ids == expr.gene_ids
    replay = apply_expression(info, expr)
    assert np.array_equal(replay, z)


def test_apply_expression_reindexes_genes():
    rng = np.random.default_rng(3)
    values = rng.normal(size=(20, 4)) * 3
    ids = ("g1", "g2", "g3", "g4")
    expr = ExpressionMatrix(tuple(f"p{i}" for i in range(20)), ids, values)
    z, info = fit_expression(expr)
    # new cohort stores the same genes in a different column order
    perm = [2, 0, 3, 1]
    shuffled = ExpressionMatrix(
        ("q1", "q2"), tuple(ids[j] for j in perm), values[:2][:, perm]
    )
    out = apply_expression(info, shuffled)
    assert np.allclose(out, z[:2])


def test_apply_expression_missing_gene():
    rng = np.random.default_rng(5)
    expr = ExpressionMatrix(("a", "b", "c"), ("g1", "g2"), rng.normal(size=(3, 2)) * 3)
    _, info = fit_expression(expr)
    small = ExpressionMatrix(("x",), ("g1",), np.array([[1.0]]))
    with pytest.raises(InputError, match="lacks fitted genes"):
        apply_expression(info, small)


def clinical_fixture():
    ids = ("p1", "p2", "p3", "p4")
    age = ClinicalColumn("age", "real", (), np.array([1.0, np.nan, 3.0, 4.0]))
    sex = ClinicalColumn(
        "sex", "categorical", ("F", "M"), np.array(["F", "M", None, "M"], dtype=object)
    )
    return ClinicalTable(ids, (age, sex))


def test_clinical_mean_imputation():
    matrix, specs, names = fit_clinical(clinical_fixture())
    assert names == ("age", "sex=F", "sex=M")
    fill = (1.0 + 3.0 + 4.0) / 3
    assert np.allclose(matrix[:, 0], [1.0, fill, 3.0, 4.0])
    assert specs[0].impute_real == fill


def test_clinical_mode_imputation_and_onehot():
    matrix, specs, names = fit_clinical(clinical_fixture())
    # M is the majority level, so the missing row imputes to M
    assert specs[1].impute_level == "M"
    assert np.array_equal(matrix[:, 1:], [[1, 0], [0, 1], [0, 1], [0, 1]])


def test_clinical_mode_tie_breaks_lexicographically():
    ids = ("a", "b", "c")
    col = ClinicalColumn(
        "grade", "categorical", ("hi", "lo"), np.array(["hi", "lo", None], dtype=object)
    )
    _, specs, _ = fit_clinical(ClinicalTable(ids, (col,)))
    assert specs[0].impute_level == "hi"


def test_clinical_many_levels():
    levels = tuple(f"L{i:02d}" for i in range(12))
    rng = np.random.default_rng(6)
    values = np.array([levels[rng.integers(0, 12)] for _ in range(40)], dtype=object)
    col = ClinicalColumn("site", "categorical", levels, values)
    matrix, _, names = fit_clinical(ClinicalTable(tuple(f"p{i}" for i in range(40)), (col,)))
    assert matrix.shape == (40, 12)
    assert names == tuple(f"site={l}" for l in levels)
    assert np.array_equal(matrix.sum(axis=1), np.ones(40))


def test_clinical_column_restriction_orders():
    table = clinical_fixture()
    matrix, specs, names = fit_clinical(table, columns=("sex", "age"))
    assert names == ("sex=F", "sex=M", "age")
    assert [s.name for s in specs] == ["sex", "age"]
    with pytest.raises(InputError, match="no clinical column"):
        fit_clinical(table, columns=("weight",))


def test_clinical_replay_identity():
    from topicsurv.preprocess import PreprocessInfo

    table = clinical_fixture()
    matrix, specs, names = fit_clinical(table)
    info = PreprocessInfo(clinical_specs=specs, clinical_feature_names=names)
    replay = apply_clinical(info, table)
    assert np.array_equal(replay, matrix)


def test_clinical_unseen_level():
    from topicsurv.preprocess import PreprocessInfo

    fit_table = ClinicalTable(
        ("a", "b"),
        (
            ClinicalColumn(
                "sex", "categorical", ("F", "M"), np.array(["F", "M"], dtype=object)
            ),
        ),
    )
    _, specs, names = fit_clinical(fit_table)
    info = PreprocessInfo(clinical_specs=specs, clinical_feature_names=names)
    new_table = ClinicalTable(
        ("x",),
        (
            ClinicalColumn(
                "sex", "categorical", ("F", "M", "X"), np.array(["X"], dtype=object)
            ),
        ),
    )
    with pytest.raises(InputError, match="not seen at fit time"):
        apply_clinical(info, new_table, strict_levels=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = apply_clinical(info, new_table, strict_levels=False)
    assert any("unseen level" in str(w.message) for w in caught)
    assert np.array_equal(out, [[0.0, 0.0]])


def test_clinical_all_missing_rejected():
    col = ClinicalColumn("age", "real", (), np.array([np.nan, np.nan]))
    with pytest.raises(InputError, match="every value is missing"):
        fit_clinical(ClinicalTable(("a", "b"), (col,)))
