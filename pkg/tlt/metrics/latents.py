"""Latent export and a treatment-separation check on exported latents"""

import logging
import typing

import numpy as np
import pandas as pd

from tlt import util
from tlt.forge.manifest import DatasetManifest


logger = logging.getLogger(__name__)


def latent_columns(latent_dim: int) -> typing.List[str]:
    return ["id", "y", "t"] + [f"mu_{idx}" for idx in range(latent_dim)]


def export_latents(
    model, dataset: DatasetManifest, batch_size: int = 256
) -> pd.DataFrame:
    """One row per record: id, y, clean t, then the evaluation posterior mean

    The posterior mean involves no sampling, so exports are reproducible.
    """
    if not getattr(model, "trained", False):
        logger.warning("Exporting latents from a model that has not been trained")
    mu = model.features(dataset.x, "latent", batch_size=batch_size)
    table = pd.DataFrame(mu, columns=latent_columns(mu.shape[1])[3:])
    table.insert(0, "t", dataset.t_clean)
    table.insert(0, "y", dataset.y)
    table.insert(0, "id", dataset.ids)
    return table


def write_latents(table: pd.DataFrame, path: str):
    table.to_csv(path, index=False, float_format="%.6g")


def centroid_distance(mu: np.ndarray, t: np.ndarray) -> float:
    return float(np.linalg.norm(mu[t == 1].mean(axis=0) - mu[t == 0].mean(axis=0)))


def centroid_permutation_test(
    mu: np.ndarray, t: np.ndarray, n_perm: int = 1000, seed: int = 0
) -> typing.Dict[str, float]:
    """Distance between treated and untreated latent centroids against a permuted-treatment null

    Returns the observed distance, the 95th percentile of the null,
    and the permutation p-value (1 + #null >= observed) / (1 + n_perm).
    """
    mu = np.asarray(mu, dtype=np.float64)
    t = np.asarray(t).astype(np.int64)
    observed = centroid_distance(mu, t)
    rng = util.numpy_rng(seed, "latents", "permutation")
    null = np.array([centroid_distance(mu, rng.permutation(t)) for _ in range(n_perm)])
    exceed = int(np.sum(null >= observed))
    return {
        "centroid_distance": observed,
        "null_q95": float(np.percentile(null, 95)),
        "p_value": (1 + exceed) / (1 + n_perm),
    }
