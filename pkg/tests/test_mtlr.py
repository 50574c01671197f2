"""Tests for the multi-task logistic survival learner."""

import math
import re

import numpy as np
import pytest

from topicsurv.curves import risk_from_curve
from topicsurv.data import SurvivalLabel
from topicsurv.errors import ConvergenceError, InputError
from topicsurv.evaluate import concordance
from topicsurv.mtlr import (
    MtlrModel,
    default_time_points,
    fit_mtlr,
    mtlr_curve,
    mtlr_objective,
)


def labels_from(times, status):
    return tuple(SurvivalLabel(t, s) for t, s in zip(times, status))


def random_problem(seed, n=14, r=3, m=4, censor_frac=0.4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, r))
    times = rng.exponential(scale=2.0, size=n) + 0.05
    status = (rng.random(n) > censor_frac).astype(int)
    status[0] = 1  # keep at least one event
    time_points = np.quantile(times, np.linspace(0.2, 0.8, m))
    time_points = np.unique(time_points)
    return X, times, status, time_points


def test_zero_weights_give_uniform_interval_probabilities():
    for m in (1, 3, 7):
        tp = np.arange(1.0, m + 1.0)
        model = MtlrModel(time_points=tp, weights=np.zeros((m, 2)), biases=np.zeros(m))
        curve = mtlr_curve(model, np.array([0.3, -1.2]))
        assert curve.kind == "linear"
        np.testing.assert_allclose(curve.times, np.concatenate([[0.0], tp]))
        # survival drops by exactly 1/(m+1) at every point
        expected = 1.0 - np.arange(0, m + 1) / (m + 1)
        np.testing.assert_allclose(curve.values, expected, atol=1e-12)
        probs = -np.diff(curve.values)
        np.testing.assert_allclose(probs, np.full(m, 1.0 / (m + 1)), atol=1e-12)


def test_zero_parameter_objective_is_uniform_code_length():
    # every uncensored patient costs log(m+1) when all sequences tie
    X, times, status, tp = random_problem(seed=5)
    status[:] = 1
    m, r = len(tp), X.shape[1]
    theta = np.zeros(m * r + m)
    value, _ = mtlr_objective(theta, X, times, status, tp, C=1.0)
    assert value == pytest.approx(len(times) * math.log(m + 1), abs=1e-10)


def test_objective_matches_hand_computed_censored_tail():
    # one time point, weights [0.5], bias [-0.2], a single covariate of 1.0:
    # the late-censored patient must survive past the point, the
    # early-censored one constrains nothing
    X = np.array([[1.0], [1.0]])
    times = np.array([3.0, 1.0])
    status = np.array([0, 0])
    tp = np.array([2.0])
    theta = np.array([0.5, -0.2])
    value, _ = mtlr_objective(theta, X, times, status, tp, C=0.0)
    assert value == pytest.approx(math.log(1.0 + math.exp(0.3)), abs=1e-12)


def test_boundary_time_conventions():
    # death exactly at a time point falls in the interval ending there;
    # censoring exactly at a time point keeps only later intervals alive
    X = np.zeros((1, 1))
    tp = np.array([2.0])
    theta = np.array([0.0, 1.0])  # sequence scores [1, 0]
    log_z = math.log(1.0 + math.e)
    death_val, _ = mtlr_objective(theta, X, np.array([2.0]), np.array([1]), tp, C=0.0)
    censor_val, _ = mtlr_objective(theta, X, np.array([2.0]), np.array([0]), tp, C=0.0)
    assert death_val == pytest.approx(log_z - 1.0, abs=1e-12)
    assert censor_val == pytest.approx(log_z, abs=1e-12)


def test_gradient_matches_finite_differences():
    X, times, status, tp = random_problem(seed=11)
    m, r = len(tp), X.shape[1]
    rng = np.random.default_rng(3)
    theta = rng.normal(scale=0.4, size=m * r + m)
    _, grad = mtlr_objective(theta, X, times, status, tp, C=0.7)
    h = 1e-5
    for j in range(len(theta)):
        up = theta.copy()
        up[j] += h
        down = theta.copy()
        down[j] -= h
        f_up, _ = mtlr_objective(up, X, times, status, tp, C=0.7)
        f_down, _ = mtlr_objective(down, X, times, status, tp, C=0.7)
        fd = (f_up - f_down) / (2 * h)
        denom = max(1.0, abs(fd))
        assert abs(grad[j] - fd) / denom < 1e-4


def test_fit_probabilities_normalized_and_monotone():
    for seed in range(4):
        X, times, status, tp = random_problem(seed=seed, n=25)
        model = fit_mtlr(X, labels_from(times, status), C=0.5, time_points=tp)
        for i in range(5):
            curve = mtlr_curve(model, X[i])
            assert curve.values[0] == 1.0
            assert np.all(np.diff(curve.values) <= 1e-12)
            assert np.all(curve.values >= -1e-12)
            # interval masses plus the residual tail account for everything
            tail = curve.values[-1]
            assert (-np.diff(curve.values)).sum() + tail == pytest.approx(1.0, abs=1e-9)


def test_strong_regularization_crushes_weights():
    # the weight block of the optimum scales like 1/C; a looser gradient
    # target keeps the quasi-Newton loop honest on this stiff objective
    X, times, status, tp = random_problem(seed=2, n=30)
    model = fit_mtlr(X, labels_from(times, status), C=1e6, time_points=tp, tol=1e-4)
    assert np.abs(model.weights).max() < 1e-3
    # biases stay free, so the curve still tracks the marginal distribution
    assert np.abs(model.biases).max() > 1e-4


def test_separating_covariate_orders_curves():
    X = np.array([[3.0], [2.5], [2.0], [-2.0], [-2.5], [-3.0]])
    times = np.array([1.0, 1.2, 1.4, 5.0, 5.5, 6.0])
    status = np.ones(6, dtype=int)
    labels = labels_from(times, status)
    model = fit_mtlr(X, labels, C=0.1)
    hi = mtlr_curve(model, np.array([3.0]))
    lo = mtlr_curve(model, np.array([-3.0]))
    assert np.all(hi.values <= lo.values + 1e-12)
    assert hi.values[1] < lo.values[1] - 0.2
    risks = np.array([risk_from_curve(mtlr_curve(model, x)) for x in X])
    assert concordance(risks, labels) == 1.0


def test_default_time_points_quantiles():
    # nine patients -> three points at the 25/50/75 percent event quantiles
    times = np.arange(10.0, 100.0, 10.0)
    labels = labels_from(times, np.ones(9, dtype=int))
    np.testing.assert_allclose(default_time_points(labels), [30.0, 50.0, 70.0])


def test_default_time_points_ignore_censoring_and_dedup():
    times = np.concatenate([np.arange(10.0, 90.0, 10.0), np.full(8, 1e6)])
    status = np.array([1] * 8 + [0] * 8)
    points = default_time_points(labels_from(times, status))
    np.testing.assert_allclose(points, [24.0, 38.0, 52.0, 66.0])

    same = labels_from(np.full(9, 5.0), np.ones(9, dtype=int))
    np.testing.assert_allclose(default_time_points(same), [5.0])

    with pytest.raises(InputError, match="event"):
        default_time_points(labels_from([1.0, 2.0], [0, 0]))


def test_convergence_warning_and_failure_bands(caplog):
    # an iteration cap of zero still allows one line-search step, so first
    # measure the gradient that step leaves behind, then pick tolerances
    # that put it inside the warning band and beyond the failure band
    X, times, status, tp = random_problem(seed=7, n=20)
    labels = labels_from(times, status)
    with pytest.raises(ConvergenceError, match="stalled") as exc:
        fit_mtlr(X, labels, C=1.0, time_points=tp, tol=1e-300, max_iter=0)
    achieved = float(re.search(r"gradient norm ([0-9.eE+-]+)", str(exc.value)).group(1))
    assert achieved > 0

    with caplog.at_level("WARNING", logger="topicsurv.mtlr"):
        fit_mtlr(X, labels, C=1.0, time_points=tp, tol=achieved / 50, max_iter=0)
    assert any("above target" in rec.message for rec in caplog.records)

    with pytest.raises(ConvergenceError, match="stalled"):
        fit_mtlr(X, labels, C=1.0, time_points=tp, tol=achieved / 200, max_iter=0)


def test_input_validation():
    X, times, status, tp = random_problem(seed=0)
    labels = labels_from(times, status)
    with pytest.raises(InputError, match="2-d"):
        fit_mtlr(X[:, 0], labels, time_points=tp)
    with pytest.raises(InputError, match="row count"):
        fit_mtlr(X[:-1], labels, time_points=tp)
    bad = X.copy()
    bad[3, 1] = np.nan
    with pytest.raises(InputError, match="column 1"):
        fit_mtlr(bad, labels, time_points=tp)
    with pytest.raises(InputError, match="nonnegative"):
        fit_mtlr(X, labels, C=-1.0, time_points=tp)
    with pytest.raises(InputError, match="event"):
        fit_mtlr(X, labels_from(times, np.zeros_like(status)), time_points=tp)


def test_model_validation():
    with pytest.raises(InputError, match="time point"):
        MtlrModel(np.array([]), np.zeros((0, 2)), np.array([]))
    with pytest.raises(InputError, match="increasing"):
        MtlrModel(np.array([1.0, 1.0]), np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(InputError, match="positive"):
        MtlrModel(np.array([-1.0, 2.0]), np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(InputError, match="weights"):
        MtlrModel(np.array([1.0, 2.0]), np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(InputError, match="weights"):
        MtlrModel(np.array([1.0, 2.0]), np.zeros((2, 2)), np.zeros(3))


def test_curve_feature_length_checked():
    model = MtlrModel(np.array([1.0]), np.zeros((1, 3)), np.zeros(1))
    with pytest.raises(InputError, match="length 3"):
        mtlr_curve(model, np.zeros(2))


def test_zero_model_curve_integral():
    # four unit-spaced points, uniform masses: trapezoids 0.9+0.7+0.5+0.3
    tp = np.array([1.0, 2.0, 3.0, 4.0])
    model = MtlrModel(tp, np.zeros((4, 1)), np.zeros(4))
    curve = mtlr_curve(model, np.zeros(1))
    assert curve.integral() == pytest.approx(2.4, abs=1e-12)
    assert risk_from_curve(curve) == pytest.approx(-2.4, abs=1e-12)
