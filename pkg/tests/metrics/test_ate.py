import copy

import numpy as np
import pytest
import torch

from tlt.errors import EstimandUndefinedError, UntrainedModelError
from tlt.metrics.ate import (
    correctness_difference,
    estimate_ate_interventional,
    estimate_ate_observational,
    observational_ate,
    outcome_functional,
    percentile_interval,
)
from tests.conftest import FixedPredictor, vector_manifest


def ninety_seventy():
    """100 treated records 90% correct and 100 untreated records 70% correct"""
    t = np.array([1] * 100 + [0] * 100)
    correct = np.array([True] * 90 + [False] * 10 + [True] * 70 + [False] * 30)
    return correct, t


def test_observational_ate_counting_value():
    correct, t = ninety_seventy()
    report = observational_ate(correct, t, bootstrap=200, seed=1)
    assert report.ate == pytest.approx(0.2)
    assert report.signed_ate == pytest.approx(0.2)
    assert report.arm_means == (0.9, 0.7)
    assert (report.n_treated, report.n_untreated) == (100, 100)
    low, high = report.bootstrap_ci
    assert low <= report.ate <= high
    assert 0.05 < high - low < 0.4


def test_observational_ate_is_absolute():
    correct, t = ninety_seventy()
    report = observational_ate(correct, 1 - t, bootstrap=10, seed=1)
    assert report.ate == pytest.approx(0.2)
    assert report.signed_ate == pytest.approx(-0.2)


def test_equal_arms_give_zero():
    t = np.array([0, 1] * 10)
    assert observational_ate(np.ones(20, dtype=bool), t, bootstrap=10).ate == 0.0


def test_missing_arm_is_undefined():
    with pytest.raises(EstimandUndefinedError):
        correctness_difference(np.ones(4, dtype=bool), np.ones(4))


def test_bootstrap_is_reproducible():
    correct, t = ninety_seventy()
    first = observational_ate(correct, t, 100, 3)
    assert first.bootstrap_ci == observational_ate(correct, t, 100, 3).bootstrap_ci


def test_percentile_interval_includes_point():
    assert percentile_interval(np.array([0.1, 0.2, 0.3]), 0.0)[0] == 0.0
    assert percentile_interval(np.array([]), 0.4) == (0.4, 0.4)


def test_estimate_observational_from_predictions():
    rows = [(1, 1)] * 9 + [(0, 1)] + [(1, 0)] * 7 + [(0, 0)] * 3
    dataset = vector_manifest(rows)
    predictor = FixedPredictor(np.ones(20, dtype=np.int64))
    report = estimate_ate_observational(predictor, dataset, bootstrap=50)
    assert report.ate == pytest.approx(0.2)
    assert report.metrics("obs_")["obs_ate"] == report.ate


def test_outcome_functionals():
    p1 = np.array([[0.2, 0.8], [0.6, 0.4]])
    p0 = np.array([[0.5, 0.5], [0.9, 0.1]])
    y = np.array([1, 0])
    u1, u0 = outcome_functional(p1, p0, y, "true_class")
    assert u1.tolist() == [0.8, 0.6] and u0.tolist() == [0.5, 0.9]
    u1, u0 = outcome_functional(p1, p0, y, "true_class_argmax")
    assert u1.tolist() == [1.0, 1.0] and u0.tolist() == [0.0, 1.0]
    u1, u0 = outcome_functional(p1, p0, y, "positive_class")
    assert u1.tolist() == [0.8, 0.4]


def test_interventional_refuses_untrained_model(image_model, image_dataset):
    with pytest.raises(UntrainedModelError):
        estimate_ate_interventional(image_model, image_dataset, mc_samples=2)


def test_interventional_ate(trained_image_model):
    model, dataset = trained_image_model
    report = estimate_ate_interventional(
        model, dataset, mc_samples=4, seed=2, bootstrap=50
    )
    assert 0.0 <= report.ate <= 1.0
    assert report.ate == abs(report.signed_ate)
    assert report.n == len(dataset)
    assert report.mc_samples == 4
    again = estimate_ate_interventional(
        model, dataset, mc_samples=4, seed=2, bootstrap=50
    )
    assert again.ate == report.ate


def test_interventional_ate_zero_for_shared_outcome_arms(trained_image_model):
    model, dataset = trained_image_model
    shared = copy.deepcopy(model)
    with torch.no_grad():
        shared.decoder_outcome.arm1.weight.copy_(shared.decoder_outcome.arm0.weight)
        shared.decoder_outcome.arm1.bias.copy_(shared.decoder_outcome.arm0.bias)
    report = estimate_ate_interventional(
        shared, dataset, mc_samples=2, seed=0, bootstrap=10
    )
    assert report.ate == 0.0
