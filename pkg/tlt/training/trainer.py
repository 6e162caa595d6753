"""The optimization loop"""

import logging
import typing

import numpy as np
import pandas as pd
import torch

from tlt import consts, util
from tlt.configuration.basetypes import TrainConfig
from tlt.errors import NumericError, PreconditionError, TrainingDivergedError
from tlt.forge.manifest import DatasetManifest
from tlt.model.checkpoint import Checkpoint
from tlt.model.network import TltNetwork
from tlt.training.objective import NumericWarnings, objective


logger = logging.getLogger(__name__)

LOSS_TERMS = ("total", "recon_x", "recon_t", "recon_y", "kl", "aux_t", "aux_y")


def history_row(
    epoch: int, sums: typing.Dict[str, float], count: int, acc: float, t_acc: float
) -> typing.Dict:
    """One history row, every term with its sign in the maximized bound"""
    means = {name: value / count for name, value in sums.items()}
    return {
        "epoch": epoch,
        "total": -means["total"],
        "recon_x": means["recon_x"],
        "recon_t": means["recon_t"],
        "recon_y": means["recon_y"],
        "kl": -means["kl"],
        "aux_t": means["aux_t"],
        "aux_y": means["aux_y"],
        "acc": acc,
        "t_acc": t_acc,
    }


def write_history(history: pd.DataFrame, path: str):
    history[consts.HISTORY_COLUMNS].to_csv(path, index=False, float_format="%.6g")


def nonfinite_parameters(model: torch.nn.Module) -> typing.List[str]:
    return [
        name
        for name, param in model.named_parameters()
        if not bool(torch.isfinite(param).all())
    ]


def fit(
    model: TltNetwork, dataset: DatasetManifest, config: TrainConfig
) -> typing.Tuple[Checkpoint, pd.DataFrame]:
    """Train a model in place with Adam on observed (y, t)

    Returns the final checkpoint and the per-epoch history.

    The last good snapshot is the latest parameters known to be finite.
    When the objective or an optimizer step goes non-finite, the model is put back
    to that snapshot and TrainingDivergedError carries it.
    A model that starts with non-finite parameters raises NumericError.
    """
    if len(dataset) == 0:
        raise PreconditionError("Cannot train on an empty dataset")
    if config.precision == "float64":
        model.double()
    else:
        model.float()

    x = torch.as_tensor(dataset.x, dtype=model.dtype)
    y = torch.as_tensor(dataset.y)
    t = torch.as_tensor(dataset.t)
    t_clean = dataset.t_clean
    n = len(dataset)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    batch_generator = util.torch_generator(
        util.derive_seed(config.seed, "train", "batches")
    )
    latent_generator = util.torch_generator(
        util.derive_seed(config.seed, "train", "latent")
    )
    warnings = NumericWarnings()
    last_good = Checkpoint.capture(model)

    rows = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(n, generator=batch_generator)
        sums = {name: 0.0 for name in LOSS_TERMS}
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            try:
                breakdown = objective(
                    model,
                    x[idx],
                    y[idx],
                    t[idx],
                    likelihood=config.recon_likelihood,
                    kl_weight=config.kl_weight,
                    aux_weight=config.aux_weight,
                    mc_samples=config.mc_samples,
                    generator=latent_generator,
                    warnings=warnings,
                )
                total = breakdown.total
                if not bool(torch.isfinite(total)):
                    raise NumericError("total")
            except NumericError as exc:
                logger.error(
                    f"Objective not finite at epoch {epoch} step {step}: {exc}"
                )
                last_good.restore_into(model)
                raise TrainingDivergedError(epoch, step, last_good)

            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            broken = nonfinite_parameters(model)
            if broken:
                logger.error(
                    f"Parameters not finite after epoch {epoch} step {step}: {broken}"
                )
                last_good.restore_into(model)
                raise TrainingDivergedError(epoch, step, last_good)
            last_good = Checkpoint.capture(model)

            size = len(idx)
            for name, value in breakdown.values().items():
                sums[name] += value * size

        model.eval()
        acc = float(np.mean(model.predict(dataset.x) == dataset.y))
        t_hat = (model.treatment_probabilities(dataset.x) >= 0.5).astype(np.int64)
        t_acc = float(np.mean(t_hat == t_clean))
        row = history_row(epoch, sums, n, acc, t_acc)
        rows.append(row)
        logger.info(
            f"Epoch {epoch}/{config.epochs}: bound {row['total']:.4f}, kl {-row['kl']:.4f}, acc {acc:.4f}, t_acc {t_acc:.4f}"
        )

    if warnings.clamped:
        logger.warning(f"Training clamped {warnings.clamped} probabilities in total")
    model.eval()
    model.trained = True
    history = pd.DataFrame(rows, columns=consts.HISTORY_COLUMNS)
    return Checkpoint.capture(model), history
