"""Finite-difference verification of analytic gradients"""

import logging
import typing

import numpy as np
import torch

from tlt import util
from tlt.errors import DomainError, PreconditionError
from tlt.training.objective import objective


logger = logging.getLogger(__name__)


def default_loss(model, batch, noise: torch.Tensor) -> torch.Tensor:
    """The training objective of a TltNetwork with frozen latent noise"""
    x, y, t = batch
    return objective(model, x, y, t, noise=[noise]).total


def gradient_check(
    model: torch.nn.Module,
    batch,
    eps: float = 1e-5,
    loss_fn: typing.Optional[typing.Callable] = None,
    n_params: int = 50,
    seed: int = 0,
    parameter_filter: typing.Optional[typing.Callable[[str], bool]] = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients

    The model must already be in double precision.
    loss_fn(model, batch) -> scalar replaces the training objective;
    by default the objective is used with one frozen latent draw, so the
    stochastic node is the same in every evaluation.
    Up to n_params scalar parameters, optionally restricted by name with
    parameter_filter, are chosen at random and each compared as
    |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8).
    """
    if eps <= 0:
        raise DomainError(f"Finite-difference step must be positive, got {eps}")
    params = [
        (name, p)
        for name, p in model.named_parameters()
        if p.requires_grad and (parameter_filter is None or parameter_filter(name))
    ]
    if not params:
        raise PreconditionError("No parameters selected for the gradient check")
    if any(p.dtype != torch.float64 for _, p in params):
        raise PreconditionError(
            "Gradient checks need a double precision model, call model.double() first"
        )

    if loss_fn is None:
        x, _, _ = batch
        noise = torch.randn(
            (len(x), model.config.latent_dim),
            generator=util.torch_generator(seed),
            dtype=torch.float64,
        )

        def loss_fn(m, b):
            return default_loss(m, b, noise)

    model.zero_grad()
    loss = loss_fn(model, batch)
    loss.backward()
    analytic = [
        p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        for _, p in params
    ]

    sizes = np.array([p.numel() for _, p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = util.numpy_rng(seed, "gradcheck")
    total = int(offsets[-1])
    chosen = rng.choice(total, size=min(n_params, total), replace=False)

    worst = 0.0
    worst_name = ""
    with torch.no_grad():
        for flat in np.sort(chosen):
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            name, param = params[which]
            local = int(flat - offsets[which])
            view = param.view(-1)
            original = view[local].item()
            view[local] = original + eps
            plus = float(loss_fn(model, batch))
            view[local] = original - eps
            minus = float(loss_fn(model, batch))
            view[local] = original
            numeric = (plus - minus) / (2 * eps)
            exact = float(analytic[which].view(-1)[local])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            if error > worst:
                worst, worst_name = error, f"{name}[{local}]"

    model.zero_grad()
    logger.debug(
        f"Gradient check over {len(chosen)} parameters: max relative error {worst:.3g} at {worst_name or 'none'}"
    )
    return worst
