"""Tests for survival curves, areas, and the product-limit estimator."""

import math

import numpy as np
import pytest

from topicsurv.curves import (
    KmCurve,
    SurvivalCurve,
    kaplan_meier,
    read_curve_csv,
    risk_from_curve,
    write_curve_csv,
)
from topicsurv.data import SurvivalLabel
from topicsurv.errors import InputError


def labels_from(times, status):
    return tuple(SurvivalLabel(t, s) for t, s in zip(times, status))


STEP = SurvivalCurve(np.array([1.0, 2.0, 4.0]), np.array([0.8, 0.5, 0.2]))
LINEAR = SurvivalCurve(np.array([1.0, 2.0, 4.0]), np.array([0.8, 0.5, 0.2]), kind="linear")


def test_step_evaluation():
    assert STEP.evaluate(0.5) == 1.0
    assert STEP.evaluate(1.0) == 0.8
    assert STEP.evaluate(1.99) == 0.8
    assert STEP.evaluate(2.0) == 0.5
    assert STEP.evaluate(4.0) == 0.2
    assert STEP.evaluate(100.0) == 0.2


def test_linear_evaluation():
    assert LINEAR.evaluate(0.5) == 1.0
    assert LINEAR.evaluate(1.0) == pytest.approx(0.8)
    assert LINEAR.evaluate(1.5) == pytest.approx(0.65)
    assert LINEAR.evaluate(3.0) == pytest.approx(0.35)
    assert LINEAR.evaluate(4.0) == 0.2
    assert LINEAR.evaluate(10.0) == 0.2


def test_flat_curve_integral_counts_time_before_first_knot():
    flat = SurvivalCurve(np.array([10.0]), np.array([1.0]))
    assert flat.integral() == pytest.approx(10.0, abs=1e-12)
    assert risk_from_curve(flat) == pytest.approx(-10.0, abs=1e-12)
    two_knot = SurvivalCurve(np.array([0.0, 10.0]), np.array([1.0, 1.0]))
    assert two_knot.integral() == pytest.approx(10.0, abs=1e-12)


def test_step_integral_hand_fixture():
    # 1 before the first knot, then rectangles 0.8*1 + 0.5*2
    assert STEP.integral() == pytest.approx(2.8, abs=1e-12)
    assert STEP.integral(horizon=4.0) == pytest.approx(2.8, abs=1e-12)
    # past the last knot the final value extends
    assert STEP.integral(horizon=6.0) == pytest.approx(3.2, abs=1e-12)
    assert risk_from_curve(STEP, horizon=6.0) == pytest.approx(-3.2, abs=1e-12)
    # horizon between knots cuts the rectangle short
    assert STEP.integral(horizon=3.0) == pytest.approx(2.3, abs=1e-12)
    with pytest.raises(InputError, match="precedes"):
        STEP.integral(horizon=0.5)


def test_linear_integral_hand_fixture():
    curve = SurvivalCurve(np.array([1.0, 3.0]), np.array([1.0, 0.5]), kind="linear")
    assert curve.integral() == pytest.approx(2.5, abs=1e-12)
    # horizon inside the segment: trapezoid down to the interpolated value
    assert curve.integral(horizon=2.0) == pytest.approx(1.875, abs=1e-12)
    assert curve.integral(horizon=5.0) == pytest.approx(3.5, abs=1e-12)


def test_validation_errors():
    t = np.array([1.0, 2.0])
    with pytest.raises(InputError, match="kind"):
        SurvivalCurve(t, np.array([1.0, 0.5]), kind="cubic")
    with pytest.raises(InputError, match="equal-length"):
        SurvivalCurve(t, np.array([1.0]))
    with pytest.raises(InputError, match="equal-length"):
        SurvivalCurve(np.array([]), np.array([]))
    with pytest.raises(InputError, match="nonnegative"):
        SurvivalCurve(np.array([-1.0, 2.0]), np.array([1.0, 0.5]))
    with pytest.raises(InputError, match="increasing"):
        SurvivalCurve(np.array([1.0, 1.0]), np.array([1.0, 0.5]))
    with pytest.raises(InputError, match=r"\[0, 1\]"):
        SurvivalCurve(t, np.array([1.5, 0.5]))
    with pytest.raises(InputError, match=r"\[0, 1\]"):
        SurvivalCurve(t, np.array([0.5, -0.5]))
    with pytest.raises(InputError, match="non-increasing"):
        SurvivalCurve(t, np.array([0.5, 0.8]))


def test_validation_tolerates_rounding_noise():
    curve = SurvivalCurve(
        np.array([1.0, 2.0]), np.array([1.0 + 5e-13, 1.0 + 9e-13])
    )
    assert curve.values[0] == pytest.approx(1.0, abs=1e-12)
    SurvivalCurve(np.array([1.0]), np.array([-5e-13]))


def test_csv_round_trip_is_exact(tmp_path):
    times = np.array([1.0 / 3.0, 2.0 / 3.0, 1.0000000001])
    values = np.array([0.9999999999, 0.123456789012345678, 1e-17])
    curve = SurvivalCurve(times, values, kind="linear")
    path = str(tmp_path / "curve.csv")
    write_curve_csv(curve, path)
    back = read_curve_csv(path, kind="linear")
    assert back.kind == "linear"
    np.testing.assert_array_equal(back.times, times)
    np.testing.assert_array_equal(back.values, values)


def test_csv_read_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,s\n1.0,1.0\n")
    with pytest.raises(InputError, match="header"):
        read_curve_csv(str(path))
    path.write_text("time,survival\n1.0,1.0,9\n")
    with pytest.raises(InputError, match="row 2"):
        read_curve_csv(str(path))
    path.write_text("time,survival\n1.0,high\n")
    with pytest.raises(InputError, match="non-numeric"):
        read_curve_csv(str(path))


def test_kaplan_meier_no_censoring():
    km = kaplan_meier(labels_from([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 1]))
    np.testing.assert_allclose(km.curve.times, [0.0, 1.0, 2.0, 3.0, 4.0])
    np.testing.assert_allclose(km.curve.values, [1.0, 0.75, 0.5, 0.25, 0.0])
    assert km.curve.kind == "step"
    assert km.survival_at(2.5) == 0.5
    assert km.inverse(0.5) == 2.0
    assert km.inverse(0.0) == 4.0
    assert km.inverse(1.0) == 0.0


def test_kaplan_meier_censoring_shrinks_risk_sets():
    km = kaplan_meier(labels_from([1.0, 2.0, 3.0], [1, 0, 1]))
    np.testing.assert_allclose(km.curve.times, [0.0, 1.0, 3.0])
    np.testing.assert_allclose(km.curve.values, [1.0, 2.0 / 3.0, 0.0])

    single = kaplan_meier(labels_from([5.0, 6.0, 7.0, 8.0], [1, 0, 0, 0]))
    np.testing.assert_allclose(single.curve.times, [0.0, 5.0])
    np.testing.assert_allclose(single.curve.values, [1.0, 0.75])


def test_kaplan_meier_tied_times():
    # two deaths and one censoring share t=2: all three count as at risk
    labels = labels_from([2.0, 2.0, 2.0, 10.0, 10.0], [1, 1, 0, 1, 1])
    km = kaplan_meier(labels)
    np.testing.assert_allclose(km.curve.times, [0.0, 2.0, 10.0])
    np.testing.assert_allclose(km.curve.values, [1.0, 0.6, 0.0])


def test_inverse_bounds_and_unreached_levels():
    km = kaplan_meier(labels_from([1.0, 2.0, 3.0, 4.0], [1, 0, 0, 0]))
    assert km.inverse(0.5) == math.inf
    assert km.inverse(0.75) == 1.0
    with pytest.raises(InputError, match=r"\[0, 1\]"):
        km.inverse(-0.1)
    with pytest.raises(InputError, match=r"\[0, 1\]"):
        km.inverse(1.1)


def test_kaplan_meier_input_errors():
    with pytest.raises(InputError, match="no labels"):
        kaplan_meier(())
    with pytest.raises(InputError, match="event"):
        kaplan_meier(labels_from([1.0, 2.0], [0, 0]))


def test_km_wrapper_accepts_prebuilt_curve():
    curve = SurvivalCurve(np.array([0.0, 2.0]), np.array([1.0, 0.25]))
    km = KmCurve(curve)
    assert km.survival_at(1.0) == 1.0
    assert km.inverse(0.25) == 2.0
