import os

import numpy as np
import pytest
import torch
from torchvision.io import read_image

from tlt.errors import DomainError
from tlt.metrics.saliency import (
    SaliencyMap,
    cam_from_gradients,
    export_saliency,
    grad_cam,
    resample_mask,
    saliency_alignment,
)
from tests.conftest import TestConsts, random_batch


def test_single_channel_unit_weight_is_relu():
    activation = np.array([[[1.0, -2.0], [0.5, -0.1]]])
    cam, alpha = cam_from_gradients(activation, np.ones_like(activation))
    assert alpha.tolist() == [1.0]
    assert cam.tolist() == [[1.0, 0.0], [0.5, 0.0]]


def test_zero_gradient_gives_zero_map():
    activation = np.random.default_rng(0).random((3, 4, 4))
    cam, _ = cam_from_gradients(activation, np.zeros_like(activation))
    assert np.all(cam == 0.0)


def test_uniform_map_alignment_is_area_fraction():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[2:5, 1:7] = 1
    assert saliency_alignment(np.ones((8, 8)), mask) == pytest.approx(18 / 64, abs=1e-6)


def test_alignment_inside_and_outside():
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[:2, :2] = 1
    inside = np.zeros((4, 4))
    inside[0, 0] = 3.0
    outside = np.zeros((4, 4))
    outside[3, 3] = 3.0
    assert saliency_alignment(inside, mask) == 1.0
    assert saliency_alignment(outside, mask) == 0.0
    assert saliency_alignment(np.zeros((4, 4)), mask) == 0.0


def test_alignment_resamples_mask():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[:4, :] = 1
    cam = np.zeros((2, 2))
    cam[0, 0] = 1.0
    assert saliency_alignment(SaliencyMap(cam, 0, "encoder", np.ones(1)), mask) == 1.0


def test_resample_mask():
    mask = np.zeros((4, 4))
    mask[0, 0] = 1
    assert resample_mask(mask, (2, 2)).tolist() == [[0.25, 0.0], [0.0, 0.0]]
    with pytest.raises(DomainError):
        resample_mask(mask, (3, 3))


def test_grad_cam_on_network(image_model, image_dataset):
    record = image_dataset.records[0]
    saliency = grad_cam(image_model, record.x, record.y, "encoder")
    assert saliency.map.shape == (4, 4)
    assert np.all(saliency.map >= 0)
    assert saliency.alpha.shape == (8,)
    assert grad_cam(image_model, record.x, record.y, "block0").map.shape == (16, 16)
    with pytest.raises(DomainError):
        grad_cam(image_model, record.x, 2)


def test_grad_cam_weights_match_finite_differences(micro_model):
    x, _, _ = random_batch(TestConsts.micro_model, 1, seed=4)
    layer, class_id, h = "block1", 1, 1e-6
    saliency = grad_cam(micro_model, x[0], class_id, layer)

    t_hat = micro_model.hard_treatment(x)
    with torch.no_grad():
        activation = micro_model.encoder_activation(x, layer)
        positions = activation.shape[2] * activation.shape[3]
        for k in range(activation.shape[1]):
            step = torch.zeros_like(activation)
            step[0, k] = h
            logits = micro_model.outcome_logits_from_activation
            plus = logits(activation + step, layer, t_hat)[0, class_id]
            minus = logits(activation - step, layer, t_hat)[0, class_id]
            numeric = float(plus - minus) / (2 * h) / positions
            exact = saliency.alpha[k]
            assert abs(exact - numeric) <= 1e-3 * max(abs(exact), abs(numeric), 1e-8)


def test_export_saliency(tmp_path):
    cam = np.array([[0.0, 1.0], [2.0, 4.0]])
    saliency = SaliencyMap(cam, 0, "encoder", np.ones(1))
    export_saliency(os.path.join(tmp_path, "maps"), "rec", saliency)
    image = read_image(os.path.join(tmp_path, "maps", "rec.png"))
    assert image.shape[1:] == (2, 2)
    for channel in image:
        assert channel.flatten().tolist() == [0, 64, 128, 255]
    assert np.array_equal(np.load(os.path.join(tmp_path, "maps", "rec.npy")), cam)


def test_export_all_zero_saliency_is_black(tmp_path):
    saliency = SaliencyMap(np.zeros((3, 3)), 0, "encoder", np.ones(1))
    export_saliency(str(tmp_path), "flat", saliency)
    assert int(read_image(os.path.join(tmp_path, "flat.png")).max()) == 0
