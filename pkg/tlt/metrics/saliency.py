"""Grad-CAM saliency and its alignment with object masks

    alpha_k = spatial mean of d(class-c logit) / dA^k
    map = ReLU(sum_k alpha_k A^k)

The class logit is the evaluation-path selected outcome logit, with the
inferred treatment held fixed at its value for the unperturbed input.
"""

import dataclasses
import logging
import os
import typing

import numpy as np
import torch
from torchvision.utils import save_image

from tlt.errors import DomainError


logger = logging.getLogger(__name__)


@dataclasses.dataclass
class SaliencyMap:
    map: np.ndarray
    class_id: int
    layer: str
    alpha: np.ndarray


def cam_from_gradients(
    activation: np.ndarray, gradients: np.ndarray
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """(map, alpha) from one activation and its gradient, both (C, H, W)"""
    activation = np.asarray(activation, dtype=np.float64)
    gradients = np.asarray(gradients, dtype=np.float64)
    alpha = gradients.mean(axis=(1, 2))
    combined = np.tensordot(alpha, activation, axes=(0, 0))
    return np.maximum(combined, 0.0), alpha


def grad_cam(
    model, x: np.ndarray, class_id: int, layer: str = "encoder"
) -> SaliencyMap:
    """Grad-CAM for one input in sample layout"""
    if not 0 <= class_id < model.config.n_classes:
        raise DomainError(
            f"class_id must be in [0, {model.config.n_classes}), got {class_id}"
        )
    model.eval()
    batch = np.asarray(x)[None]
    t_hat = model.hard_treatment(batch)
    activation = model.encoder_activation(batch, layer).detach().requires_grad_(True)
    logits = model.outcome_logits_from_activation(activation, layer, t_hat)
    (gradients,) = torch.autograd.grad(logits[0, class_id], activation)
    cam, alpha = cam_from_gradients(
        activation[0].detach().cpu().numpy(), gradients[0].cpu().numpy()
    )
    return SaliencyMap(map=cam, class_id=class_id, layer=layer, alpha=alpha)


def resample_mask(mask: np.ndarray, shape: typing.Tuple[int, int]) -> np.ndarray:
    """Block-average a binary mask down to `shape`, giving the covered fraction of each cell"""
    mask = np.asarray(mask, dtype=np.float64)
    height, width = mask.shape
    rows, cols = shape
    if (height, width) == (rows, cols):
        return mask
    if rows == 0 or cols == 0 or height % rows or width % cols:
        raise DomainError(f"Cannot resample a {height}x{width} mask to {rows}x{cols}")
    return mask.reshape(rows, height // rows, cols, width // cols).mean(axis=(1, 3))


def saliency_alignment(saliency, mask: np.ndarray) -> float:
    """Fraction of saliency mass inside the object mask, in [0,1]

    An all-zero map scores 0 and is logged as flagged.
    """
    if isinstance(saliency, SaliencyMap):
        cam = saliency.map
    else:
        cam = np.asarray(saliency, dtype=np.float64)
    resampled = resample_mask(mask, cam.shape)
    if resampled.shape != cam.shape:
        raise DomainError(
            f"Mask shape {resampled.shape} does not match map shape {cam.shape}"
        )
    total = float(cam.sum())
    if total <= 0:
        logger.warning("Saliency map is all zero; alignment flagged and scored 0")
        return 0.0
    return float(np.clip((cam * resampled).sum() / total, 0.0, 1.0))


def export_saliency(directory: str, name: str, saliency: SaliencyMap):
    """Write <name>.png, scaled so its maximum is white, and the raw map as <name>.npy"""
    os.makedirs(directory, exist_ok=True)
    cam = torch.as_tensor(saliency.map, dtype=torch.float32)
    peak = float(cam.max()) if cam.numel() else 0.0
    image = cam / peak if peak > 0 else torch.zeros_like(cam)
    save_image(image.unsqueeze(0), os.path.join(directory, f"{name}.png"))
    np.save(os.path.join(directory, f"{name}.npy"), saliency.map)
