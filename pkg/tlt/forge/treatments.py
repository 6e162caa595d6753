"""Visual treatments

Every treatment returns a new Sample with t=1 and the same label and shape.
"""

import dataclasses
import logging
import typing

import numpy as np
import torch
import torch.nn.functional as F

from tlt import consts
from tlt.configuration.basetypes import TreatmentSpec
from tlt.errors import CapabilityError, DomainError, PreconditionError
from tlt.forge.manifest import Sample


logger = logging.getLogger(__name__)


def scramble_permutation(key: typing.Optional[int], n: int) -> np.ndarray:
    """The keyed pixel permutation over n positions

    A key of None is the identity permutation.
    Other keys seed a numpy generator whose shuffle is a Fisher-Yates pass.
    """
    if key is None:
        return np.arange(n)
    if key < 0:
        raise DomainError(f"Scramble keys must be nonnegative, got {key}")
    return np.random.default_rng(int(key)).permutation(n)


def _positions(x: np.ndarray) -> np.ndarray:
    """View x as (positions, channels); vectors have one channel per entry position"""
    if x.ndim == 3:
        return x.reshape(-1, x.shape[2])
    return x.reshape(-1, 1)


def scramble(x: np.ndarray, key: typing.Optional[int]) -> np.ndarray:
    """Permute pixel positions of x; all channels move together"""
    flat = _positions(x)
    perm = scramble_permutation(key, flat.shape[0])
    return flat[perm].reshape(x.shape)


def unscramble(x: np.ndarray, key: typing.Optional[int]) -> np.ndarray:
    flat = _positions(x)
    perm = scramble_permutation(key, flat.shape[0])
    restored = np.empty_like(flat)
    restored[perm] = flat
    return restored.reshape(x.shape)


def masked_pixel_indices(mask: np.ndarray, ratio: float) -> np.ndarray:
    """Flat indices of the ratio-fraction of object pixels nearest the object centroid

    The count is round-half-up of ratio times the object size.
    Ties in distance go to the lower flat index,
    so the selection at a larger ratio always contains the selection at a smaller one.
    """
    flat = np.flatnonzero(mask.ravel())
    count = int(np.floor(ratio * flat.size + 0.5))
    if count == 0 or flat.size == 0:
        return np.array([], dtype=np.int64)
    rows, cols = np.unravel_index(flat, mask.shape)
    cy, cx = rows.mean(), cols.mean()
    distance = (rows - cy) ** 2 + (cols - cx) ** 2
    order = np.lexsort((flat, distance))
    return np.sort(flat[order[:count]])


def apply_treatment(s: Sample, spec: TreatmentSpec, rng: np.random.Generator) -> Sample:
    """Apply one non-adversarial treatment to a sample

    scramble:           keyed permutation of pixel positions
    object_mask:        fill the selected object pixels with neutral gray
    background_refill:  replace the selected object pixels with randomly sampled background pixels
    gaussian:           add N(0, sigma^2) per value, then clip to [0,1]

    FGSM is not handled here because it needs a model; use apply_fgsm().
    """
    kind = spec.kind
    if kind == "fgsm":
        raise DomainError("The fgsm treatment needs a model, use apply_fgsm()")
    if kind not in consts.TREATMENT_KINDS:
        raise DomainError(f"Unsupported treatment kind '{kind}'")
    if kind in consts.MASK_TREATMENT_KINDS and s.mask is None:
        raise PreconditionError(
            f"Treatment {kind} needs an object mask, but sample {s.id} has none"
        )

    key = None
    if kind == "scramble":
        key = spec.key
        x = scramble(s.x, key)
    elif kind == "gaussian":
        x = np.clip(s.x + rng.normal(0.0, spec.sigma, size=s.x.shape), 0.0, 1.0)
    else:
        indices = masked_pixel_indices(s.mask, spec.ratio)
        x = s.x.copy()
        pixels = _positions(x)
        if kind == "object_mask":
            pixels[indices] = consts.OBJECT_MASK_FILL
        else:
            background = np.flatnonzero(s.mask.ravel() == 0)
            if indices.size and not background.size:
                raise PreconditionError(
                    f"Sample {s.id} has no background pixels to refill from"
                )
            if indices.size:
                source = rng.choice(background, size=indices.size, replace=True)
                pixels[indices] = _positions(s.x)[source]
        x = pixels.reshape(s.x.shape)

    return dataclasses.replace(s, x=x, t=1, t_clean=1, treatment=kind, key=key)


def invert_scramble(s: Sample, key: typing.Optional[int]) -> Sample:
    """Undo a scramble

    With the key that produced the scramble the original image comes back bit-exactly.
    A wrong key silently produces a different permutation of the pixels.
    Labels of a scrambled sample are restored to untreated.
    """
    x = unscramble(s.x, key)
    if s.treatment == "scramble":
        return dataclasses.replace(s, x=x, t=0, t_clean=0, treatment="", key=None)
    return dataclasses.replace(s, x=x)


def _differentiable_scorer(model) -> typing.Tuple[typing.Callable, torch.dtype]:
    """Find a callable mapping a batch of inputs to class logits"""
    scorer = getattr(model, "classify_logits", None)
    if callable(scorer):
        module = model
    elif isinstance(model, torch.nn.Module):
        scorer = model
        module = model
    else:
        raise CapabilityError("input gradients", model)
    params = list(module.parameters()) if isinstance(module, torch.nn.Module) else []
    dtype = params[0].dtype if params else torch.float64
    return scorer, dtype


def input_gradient_sign(model, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sign of the gradient of the cross-entropy loss with respect to a batch of inputs"""
    scorer, dtype = _differentiable_scorer(model)
    xt = torch.tensor(xs, dtype=dtype, requires_grad=True)
    logits = scorer(xt)
    if not isinstance(logits, torch.Tensor) or not logits.requires_grad:
        raise CapabilityError("input gradients", model)
    targets = torch.as_tensor(ys, dtype=torch.long)
    loss = F.cross_entropy(logits, targets, reduction="sum")
    (grad,) = torch.autograd.grad(loss, xt)
    return np.sign(grad.detach().cpu().numpy().astype(np.float64))


def apply_fgsm(s: Sample, model, eps: float = 0.3) -> Sample:
    """Fast gradient sign attack: x' = clip(x + eps * sign(grad_x J(x, y)), 0, 1)

    model:  Anything with a differentiable classify_logits(x), or a torch module mapping inputs to logits
    """
    if eps < 0:
        raise DomainError(f"FGSM eps must be nonnegative, got {eps}")
    sign = input_gradient_sign(model, s.x[None], np.array([s.y]))[0]
    x = np.clip(s.x + eps * sign, 0.0, 1.0)
    return dataclasses.replace(s, x=x, t=1, t_clean=1, treatment="fgsm", key=None)
