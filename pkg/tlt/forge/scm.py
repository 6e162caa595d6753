"""Tabular structural causal model with a known treatment effect

The latent confounder z drives treatment, outcome, and the observed proxies x.
Because the outcome noise and b.z are jointly Gaussian,
the interventional effect on P(y=1) has a closed form,
which makes this dataset an oracle for the back-door estimator.
"""

import dataclasses
import logging

import numpy as np
from scipy import special, stats

from tlt.configuration.basetypes import ScmConfig
from tlt.errors import DomainError
from tlt.forge.manifest import DatasetManifest, Sample


logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class ScmCoefficients:
    """Generating coefficients

    w:  treatment assignment weights, shape (latent_dim,)
    A:  proxy loadings, shape (feature_dim, latent_dim)
    b:  outcome weights, shape (latent_dim,)
    """

    w: np.ndarray
    A: np.ndarray
    b: np.ndarray


def scm_coefficients(config: ScmConfig) -> ScmCoefficients:
    if config.latent_dim < 1:
        raise DomainError(f"SCM latent_dim must be positive, got {config.latent_dim}")
    rng = np.random.default_rng(config.coefficient_seed)
    scale = 1.0 / np.sqrt(config.latent_dim)
    w = rng.normal(0.0, scale, size=config.latent_dim)
    A = rng.normal(0.0, 1.0, size=(config.feature_dim, config.latent_dim))
    b = rng.normal(0.0, scale, size=config.latent_dim)
    return ScmCoefficients(w=w, A=A, b=b)


def planted_ate(config: ScmConfig) -> float:
    """P(y=1 | do(t=1)) - P(y=1 | do(t=0)) in closed form

    b.z + noise_y * e is N(0, |b|^2 + noise_y^2), so the effect is Phi(tau / sd) - 1/2.
    """
    coefficients = scm_coefficients(config)
    sd = float(np.sqrt(np.dot(coefficients.b, coefficients.b) + config.noise_y ** 2))
    if sd == 0.0:
        return float(config.tau > 0)
    return float(stats.norm.cdf(config.tau / sd) - 0.5)


def _draw(
    config: ScmConfig, coefficients: ScmCoefficients, n: int, rng: np.random.Generator
):
    z = rng.standard_normal((n, config.latent_dim))
    t_prob = special.expit(config.treatment_strength * (z @ coefficients.w))
    t = (rng.random(n) < t_prob).astype(np.int64)
    noise_x = config.noise_x * rng.standard_normal((n, config.feature_dim))
    x = special.expit(z @ coefficients.A.T + noise_x)
    noise = config.noise_y * rng.standard_normal(n)
    return z, t, x, noise


def simulate_planted_ate(
    config: ScmConfig, n_samples: int, seed: int = 0, chunk: int = 1_000_000
) -> float:
    """Monte-Carlo estimate of the planted effect, intervening on t for every draw"""
    coefficients = scm_coefficients(config)
    rng = np.random.default_rng(seed)
    total = 0
    remaining = n_samples
    while remaining > 0:
        size = min(chunk, remaining)
        z = rng.standard_normal((size, config.latent_dim))
        base = z @ coefficients.b + config.noise_y * rng.standard_normal(size)
        total += int(np.sum(base + config.tau > 0)) - int(np.sum(base > 0))
        remaining -= size
    return total / n_samples


def generate_tabular_scm(config: ScmConfig, n: int, seed: int) -> DatasetManifest:
    """Sample a tabular dataset from the SCM

    Proxies are squashed through a logistic so x stays in [0,1] like image inputs.
    """
    coefficients = scm_coefficients(config)
    rng = np.random.default_rng(seed)
    z, t, x, noise = _draw(config, coefficients, n, rng)
    y = (z @ coefficients.b + config.tau * t + noise > 0).astype(np.int64)

    records = tuple(
        Sample(
            id=f"scm-{idx:06d}", x=x[idx], y=int(y[idx]), t=int(t[idx]), treatment=""
        )
        for idx in range(n)
    )
    ate = planted_ate(config)
    logger.info(
        f"Generated {n} SCM records, treated fraction {t.mean():.3f}, planted ATE {ate:.4f}"
    )
    return DatasetManifest(
        records=records,
        n_classes=2,
        mode="tabular",
        seed=seed,
        planted_ate=ate,
    )
