import dataclasses
import os

import numpy as np
import pandas as pd
import pytest
import torch

from tlt import consts
from tlt.errors import NumericError, TrainingDivergedError
from tlt.forge.datasets import build_image_dataset
from tlt.model.network import TltNetwork
from tlt.training.trainer import fit, history_row, nonfinite_parameters, write_history
from tests.conftest import TestConsts, image_data_config


def test_history_row_uses_bound_signs():
    sums = {
        "total": 4.0,
        "recon_x": -2.0,
        "recon_t": -1.0,
        "recon_y": -1.0,
        "kl": 1.0,
        "aux_t": -0.5,
        "aux_y": -0.5,
    }
    row = history_row(3, sums, 2, 0.75, 0.5)
    assert row["epoch"] == 3
    assert row["total"] == -2.0
    assert row["kl"] == -0.5
    assert row["recon_x"] == -1.0
    assert list(row) == consts.HISTORY_COLUMNS


def test_fit_history(image_dataset):
    model = TltNetwork(TestConsts.image_model)
    checkpoint, history = fit(model, image_dataset, TestConsts.train)
    assert list(history.columns) == consts.HISTORY_COLUMNS
    assert history["epoch"].tolist() == [1, 2]
    assert history["kl"].le(0).all()
    assert history["acc"].between(0, 1).all()
    assert model.trained and checkpoint.trained


def test_second_epoch_loss_does_not_rise():
    dataset = build_image_dataset(image_data_config(n=64), TestConsts.seed)
    model = TltNetwork(TestConsts.image_model)
    _, history = fit(model, dataset, TestConsts.train)
    # history holds the bound, the negated loss
    assert history["total"][1] >= history["total"][0]


def test_fit_is_deterministic(image_dataset):
    _, first = fit(TltNetwork(TestConsts.image_model), image_dataset, TestConsts.train)
    _, second = fit(TltNetwork(TestConsts.image_model), image_dataset, TestConsts.train)
    pd.testing.assert_frame_equal(first, second)


def test_zero_learning_rate_leaves_parameters_unchanged(image_dataset):
    model = TltNetwork(TestConsts.image_model)
    before = [p.detach().clone() for p in model.parameters()]
    config = dataclasses.replace(TestConsts.train, learning_rate=0.0, epochs=1)
    fit(model, image_dataset, config)
    for a, b in zip(before, model.parameters()):
        assert torch.equal(a, b)


def test_zero_epochs(image_dataset):
    model = TltNetwork(TestConsts.image_model)
    config = dataclasses.replace(TestConsts.train, epochs=0)
    _, history = fit(model, image_dataset, config)
    assert len(history) == 0
    assert model.trained


def test_double_precision_training(image_dataset):
    model = TltNetwork(TestConsts.image_model)
    config = dataclasses.replace(TestConsts.train, epochs=1, precision="float64")
    fit(model, image_dataset, config)
    assert model.dtype == torch.float64


def test_write_history(tmp_path, image_dataset):
    config = dataclasses.replace(TestConsts.train, epochs=1)
    _, history = fit(TltNetwork(TestConsts.image_model), image_dataset, config)
    path = os.path.join(tmp_path, "history.csv")
    write_history(history, path)
    reread = pd.read_csv(path)
    assert list(reread.columns) == consts.HISTORY_COLUMNS
    assert np.allclose(reread["total"], history["total"], rtol=1e-5)


def test_nonfinite_starting_parameters_are_refused(image_dataset):
    model = TltNetwork(TestConsts.image_model)
    with torch.no_grad():
        model.posterior_mu.arm0.bias.fill_(float("inf"))
    with pytest.raises(NumericError):
        fit(model, image_dataset, TestConsts.train)


def test_divergence_mid_training_restores_finite_parameters(image_dataset):
    model = TltNetwork(TestConsts.image_model)
    initial = [p.detach().clone() for p in model.parameters()]
    calls = []

    def poison_second_step(grad):
        calls.append(1)
        return torch.full_like(grad, float("nan")) if len(calls) == 2 else grad

    model.treatment_head.weight.register_hook(poison_second_step)
    with pytest.raises(TrainingDivergedError) as exc:
        fit(model, image_dataset, TestConsts.train)

    assert (exc.value.epoch, exc.value.step) == (1, 1)
    assert nonfinite_parameters(model) == []
    retained = exc.value.checkpoint.params
    assert all(np.all(np.isfinite(value)) for value in retained.values())
    for name, param in model.state_dict().items():
        assert np.array_equal(param.numpy().astype(np.float64), retained[name])
    # the retained parameters are those after the first, finite step
    assert not all(torch.equal(a, b) for a, b in zip(initial, model.parameters()))
