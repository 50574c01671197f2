"""Tests for concordance and distribution calibration."""

from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chi2

from topicsurv.curves import SurvivalCurve
from topicsurv.data import SurvivalLabel
from topicsurv.errors import InputError, NumericalError
from topicsurv.evaluate import (
    CalibrationTable,
    comparable_pairs,
    concordance,
    d_calibration,
)


def labels_from(times, status):
    return tuple(SurvivalLabel(float(t), int(s)) for t, s in zip(times, status))


def brute_concordance(risks, labels):
    """Direct pair-by-pair count of the concordance definition."""
    num = Fraction(0)
    den = 0
    for i, a in enumerate(labels):
        if a.status != 1:
            continue
        for j, b in enumerate(labels):
            if i == j:
                continue
            ordered = (b.status == 1 and b.time > a.time) or (
                b.status == 0 and b.time >= a.time
            )
            if not ordered:
                continue
            den += 1
            if risks[i] > risks[j]:
                num += 1
            elif risks[i] == risks[j]:
                num += Fraction(1, 2)
    return float(num / den)


def point_curves(values):
    """Step curves whose evaluation at time 1 returns the given values."""
    return [SurvivalCurve(np.array([1.0]), np.array([v])) for v in values]


def test_concordance_matches_pairwise_count():
    rng = np.random.default_rng(42)
    for _ in range(8):
        n = 40
        times = rng.integers(1, 15, size=n) / 2.0  # ties in time
        status = (rng.random(n) < 0.7).astype(int)
        status[rng.integers(0, n)] = 1
        risks = np.round(rng.normal(size=n), 1)  # ties in risk
        labels = labels_from(times, status)
        assert concordance(risks, labels) == brute_concordance(risks, labels)


def test_perfect_reversed_and_uninformative_rankings():
    times = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    labels = labels_from(times, np.ones(5))
    assert concordance(-times, labels) == 1.0
    assert concordance(times, labels) == 0.0
    assert concordance(np.zeros(5), labels) == 0.5


def test_exact_fraction_arithmetic():
    # 3 wins and 1 tie over 4 pairs is exactly 7/8
    labels = labels_from([1.0, 2.0, 3.0, 4.0], [1, 1, 0, 0])
    # pairs: (0,1), (0,2), (0,3), (1,2), (1,3) -> 5 pairs, recount below
    risks = np.array([3.0, 2.0, 2.0, 1.0])
    # (0,1) win, (0,2) win, (0,3) win, (1,2) tie, (1,3) win: 9/10
    assert concordance(risks, labels) == 0.9


def test_censoring_at_death_time_is_comparable():
    labels = labels_from([2.0, 2.0], [1, 0])
    assert concordance(np.array([1.0, 0.0]), labels) == 1.0
    assert concordance(np.array([0.0, 1.0]), labels) == 0.0


def test_pair_materialization():
    labels = labels_from([1.0, 2.0, 2.0, 3.0], [1, 0, 1, 1])
    pairs = comparable_pairs(labels)
    assert len(pairs) == 5
    expected = [(0, 1), (0, 2), (0, 3), (2, 1), (2, 3)]
    assert [tuple(row) for row in pairs.pairs] == expected


def test_no_comparable_pairs_is_an_error():
    with pytest.raises(NumericalError, match="censored"):
        concordance(np.array([1.0, 2.0]), labels_from([1.0, 2.0], [0, 0]))
    # simultaneous deaths cannot be ordered
    with pytest.raises(NumericalError, match="comparable"):
        concordance(np.array([1.0, 2.0]), labels_from([2.0, 2.0], [1, 1]))
    # the only censoring precedes the only death
    with pytest.raises(NumericalError, match="comparable"):
        concordance(np.array([1.0, 2.0]), labels_from([3.0, 1.0], [1, 0]))


def test_concordance_input_checks():
    labels = labels_from([1.0, 2.0], [1, 1])
    with pytest.raises(InputError, match="one risk"):
        concordance(np.array([1.0]), labels)
    with pytest.raises(InputError, match="finite"):
        concordance(np.array([1.0, np.nan]), labels)


def test_calibration_perfectly_uniform():
    values = np.repeat((np.arange(20) + 0.5) / 20.0, 10)
    labels = labels_from(np.ones(200), np.ones(200))
    table = d_calibration(point_curves(values), labels, n_bins=20)
    np.testing.assert_array_equal(table.observed, np.full(20, 10))
    assert table.statistic == 0.0
    assert table.p_value == 1.0
    assert table.n == 200
    assert table.n_bins == 20


def test_calibration_hand_statistic():
    # bins (6, 4, 5, 5) of 20: variance 20 * 1/4 * 3/4 = 3.75,
    # statistic (1 + 1 + 0 + 0) / 3.75 = 8/15
    values = np.array([0.1] * 6 + [0.3] * 4 + [0.6] * 5 + [0.9] * 5)
    labels = labels_from(np.ones(20), np.ones(20))
    table = d_calibration(point_curves(values), labels, n_bins=4)
    np.testing.assert_array_equal(table.observed, [6, 4, 5, 5])
    assert table.statistic == pytest.approx(8.0 / 15.0, abs=1e-9)
    assert table.p_value == pytest.approx(chi2.sf(8.0 / 15.0, df=2), abs=1e-12)
    assert table.p_value == pytest.approx(0.766, abs=1e-3)
    np.testing.assert_allclose(table.predicted, np.full(4, 5.0))
    np.testing.assert_allclose(table.proportions, np.full(4, 0.25))


def test_calibration_worst_case_concentration():
    # everything in one of twenty bins: ((200-10)^2 + 19*100) / 9.5 = 4000
    values = np.full(200, 0.01)
    labels = labels_from(np.ones(200), np.ones(200))
    table = d_calibration(point_curves(values), labels, n_bins=20)
    assert table.statistic == pytest.approx(4000.0, abs=1e-9)
    assert table.p_value < 1e-100


def test_calibration_uses_only_uncensored_patients():
    values = np.array([0.1, 0.3, 0.5, 0.7, 0.99, 0.98])
    status = [1, 1, 1, 1, 0, 0]
    labels = labels_from(np.ones(6), status)
    with pytest.warns(UserWarning, match="unstable"):
        table = d_calibration(point_curves(values), labels, n_bins=5)
    assert table.n == 4
    np.testing.assert_array_equal(table.observed, [1, 1, 1, 1, 0])


def test_calibration_boundary_probabilities():
    values = np.array([0.0, 1.0, 0.9999])
    labels = labels_from(np.ones(3), np.ones(3))
    with pytest.warns(UserWarning, match="unstable"):
        table = d_calibration(point_curves(values), labels, n_bins=20)
    assert table.observed[0] == 1
    assert table.observed[19] == 2


def test_calibration_errors():
    labels = labels_from([1.0, 2.0], [0, 0])
    with pytest.raises(NumericalError, match="uncensored"):
        d_calibration(point_curves([0.5, 0.5]), labels)
    with pytest.raises(InputError, match="one curve"):
        d_calibration(point_curves([0.5]), labels)
    with pytest.raises(InputError, match="3 bins"):
        d_calibration(point_curves([0.5, 0.5]), labels_from([1.0, 2.0], [1, 1]), n_bins=2)


def test_calibration_table_checks_totals():
    with pytest.raises(InputError, match="sum"):
        CalibrationTable(
            observed=np.array([1, 2]),
            predicted=np.array([1.5, 1.5]),
            proportions=np.array([0.5, 0.5]),
            n=4,
            statistic=0.0,
            p_value=1.0,
        )
