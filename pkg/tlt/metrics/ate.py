"""Average treatment effect estimators

The observational estimator compares prediction correctness between the
treated and untreated groups:

    ATE = |E[1(y_hat = y) | t = 1] - E[1(y_hat = y) | t = 0]|

and is computed with integer counts, so it equals the counting value exactly.

The interventional estimator uses back-door adjustment over the latent:

    p(y | x, do(t)) = E_{z ~ q(z | x, y_hat, t_hat)} p(y | z, t)

approximated with mc_samples reparameterized draws per input.

Bootstrap intervals are percentile intervals over resampled records.
When the point estimate falls outside the percentile interval, which can
happen for the absolute value near zero, the interval is widened to include it.
"""

import dataclasses
import logging
import typing

import numpy as np
import torch
import torch.nn.functional as F

from tlt import consts, util
from tlt.errors import DomainError, EstimandUndefinedError, UntrainedModelError
from tlt.forge.manifest import DatasetManifest
from tlt.model.network import sample_latent


logger = logging.getLogger(__name__)

BOOTSTRAP_CHUNK = 100


@dataclasses.dataclass
class ATEReport:
    """An ATE estimate

    ate:            Absolute effect
    signed_ate:     Treated minus untreated
    arm_means:      (treated mean, untreated mean) of the outcome functional
    bootstrap_ci:   95% interval for ate
    """

    estimand: str
    ate: float
    signed_ate: float
    arm_means: typing.Tuple[float, float]
    n: int
    n_treated: int
    n_untreated: int
    bootstrap_ci: typing.Tuple[float, float]
    seed: int
    mc_samples: typing.Optional[int] = None
    functional: typing.Optional[str] = None

    @property
    def ci_half_width(self) -> float:
        return (self.bootstrap_ci[1] - self.bootstrap_ci[0]) / 2

    def metrics(self, prefix: str = "") -> typing.Dict[str, float]:
        """Flat metric map for metric files"""
        values = {
            "ate": self.ate,
            "signed_ate": self.signed_ate,
            "mean_treated": self.arm_means[0],
            "mean_untreated": self.arm_means[1],
            "ci_low": self.bootstrap_ci[0],
            "ci_high": self.bootstrap_ci[1],
            "n": self.n,
            "n_treated": self.n_treated,
            "n_untreated": self.n_untreated,
        }
        if self.mc_samples is not None:
            values["mc_samples"] = self.mc_samples
        return {f"{prefix}{k}": v for k, v in values.items()}


def correctness_difference(
    correct: np.ndarray, t: np.ndarray
) -> typing.Tuple[float, int, int, int, int]:
    """(signed difference, c1, n1, c0, n0) of correctness rates between arms, in integer arithmetic"""
    correct = np.asarray(correct).astype(bool)
    t = np.asarray(t).astype(np.int64)
    n1 = int(np.sum(t == 1))
    n0 = int(np.sum(t == 0))
    if n1 == 0 or n0 == 0:
        raise EstimandUndefinedError(
            "observational",
            f"treated arm has {n1} records and untreated arm has {n0}",
        )
    c1 = int(np.sum(correct & (t == 1)))
    c0 = int(np.sum(correct & (t == 0)))
    return (c1 * n0 - c0 * n1) / (n1 * n0), c1, n1, c0, n0


def percentile_interval(
    statistics: np.ndarray, point: float
) -> typing.Tuple[float, float]:
    if statistics.size == 0:
        return (point, point)
    low, high = np.percentile(statistics, [2.5, 97.5])
    return (float(min(low, point)), float(max(high, point)))


def bootstrap_observational(
    correct: np.ndarray, t: np.ndarray, resamples: int, seed: int
) -> np.ndarray:
    """Absolute observational ATE over bootstrap resamples; resamples missing an arm are dropped"""
    correct = np.asarray(correct).astype(bool)
    t = np.asarray(t).astype(bool)
    n = len(t)
    rng = util.numpy_rng(seed, "bootstrap", "observational")
    results = []
    for start in range(0, resamples, BOOTSTRAP_CHUNK):
        size = min(BOOTSTRAP_CHUNK, resamples - start)
        idx = rng.integers(0, n, size=(size, n))
        tb = t[idx]
        cb = correct[idx]
        n1 = tb.sum(axis=1)
        n0 = n - n1
        c1 = (cb & tb).sum(axis=1)
        c0 = (cb & ~tb).sum(axis=1)
        valid = (n1 > 0) & (n0 > 0)
        results.append(np.abs(c1[valid] / n1[valid] - c0[valid] / n0[valid]))
    stats = np.concatenate(results) if results else np.array([])
    if stats.size < resamples:
        logger.debug(
            f"Dropped {resamples - stats.size} bootstrap resamples with an empty arm"
        )
    return stats


def observational_ate(
    correct: np.ndarray, t: np.ndarray, bootstrap: int = 1000, seed: int = 0
) -> ATEReport:
    """The observational ATE from per-record correctness indicators and treatments"""
    signed, c1, n1, c0, n0 = correctness_difference(correct, t)
    ate = abs(signed)
    ci = percentile_interval(bootstrap_observational(correct, t, bootstrap, seed), ate)
    return ATEReport(
        estimand="observational",
        ate=ate,
        signed_ate=signed,
        arm_means=(c1 / n1, c0 / n0),
        n=n1 + n0,
        n_treated=n1,
        n_untreated=n0,
        bootstrap_ci=ci,
        seed=seed,
    )


def estimate_ate_observational(
    model, dataset: DatasetManifest, bootstrap: int = 1000, seed: int = 0
) -> ATEReport:
    """Observational ATE of a model's prediction correctness, conditioning on the clean treatment

    model:  anything with predict(x) -> labels
    """
    predictions = np.asarray(model.predict(dataset.x))
    correct = predictions == dataset.y
    report = observational_ate(correct, dataset.t_clean, bootstrap, seed)
    logger.info(
        f"Observational ATE {report.ate:.4f} over {report.n} records, CI {report.bootstrap_ci}"
    )
    return report


def outcome_functional(
    p1: np.ndarray, p0: np.ndarray, y: np.ndarray, functional: str
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Per-record outcome values under each arm from class probabilities (N, K)"""
    rows = np.arange(len(y))
    if functional == "true_class":
        return p1[rows, y], p0[rows, y]
    if functional == "true_class_argmax":
        hit1 = (np.argmax(p1, axis=1) == y).astype(np.float64)
        hit0 = (np.argmax(p0, axis=1) == y).astype(np.float64)
        return hit1, hit0
    if functional == "positive_class":
        return p1[:, 1], p0[:, 1]
    raise DomainError(
        f"Unknown outcome functional '{functional}', expected one of {consts.OUTCOME_FUNCTIONALS}"
    )


@torch.no_grad()
def interventional_outcomes(
    model, x: np.ndarray, mc_samples: int, seed: int, batch_size: int = 256
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo p(y | x, do(t=1)) and p(y | x, do(t=0)), each (N, K)"""
    generator = util.torch_generator(util.derive_seed(seed, "ate", "latent"))
    treated, untreated = [], []
    for start in range(0, len(x), batch_size):
        batch = x[start : start + batch_size]
        posterior = model.evaluation_posterior(batch)
        zeros = torch.zeros(len(batch), dtype=posterior.mu.dtype)
        sum1 = torch.zeros((len(batch), model.config.n_classes), dtype=torch.float64)
        sum0 = torch.zeros_like(sum1)
        for _ in range(mc_samples):
            noise = torch.randn(
                posterior.mu.shape, generator=generator, dtype=posterior.mu.dtype
            )
            decoded = model.decode(sample_latent(posterior, noise=noise), zeros)
            sum1 += F.softmax(decoded.y_logits_arm1, dim=1).double()
            sum0 += F.softmax(decoded.y_logits_arm0, dim=1).double()
        treated.append((sum1 / mc_samples).numpy())
        untreated.append((sum0 / mc_samples).numpy())
    return np.concatenate(treated), np.concatenate(untreated)


def estimate_ate_interventional(
    model,
    dataset: DatasetManifest,
    mc_samples: int = 128,
    seed: int = 0,
    functional: str = "true_class",
    bootstrap: int = 1000,
    batch_size: int = 256,
) -> ATEReport:
    """Back-door adjusted ATE of the decoder outcome functional"""
    if not getattr(model, "trained", False):
        raise UntrainedModelError("the interventional ATE")
    if mc_samples < 1:
        raise DomainError(f"mc_samples must be at least 1, got {mc_samples}")
    if len(dataset) == 0:
        raise EstimandUndefinedError("interventional", "the dataset is empty")

    model.eval()
    p1, p0 = interventional_outcomes(model, dataset.x, mc_samples, seed, batch_size)
    u1, u0 = outcome_functional(p1, p0, dataset.y, functional)
    differences = u1 - u0
    signed = float(np.mean(u1) - np.mean(u0))
    ate = abs(signed)

    rng = util.numpy_rng(seed, "bootstrap", "interventional")
    n = len(differences)
    stats = np.array(
        [
            abs(np.mean(differences[rng.integers(0, n, size=n)]))
            for _ in range(bootstrap)
        ]
    )
    report = ATEReport(
        estimand="interventional",
        ate=ate,
        signed_ate=signed,
        arm_means=(float(np.mean(u1)), float(np.mean(u0))),
        n=n,
        n_treated=n,
        n_untreated=n,
        bootstrap_ci=percentile_interval(stats, ate),
        seed=seed,
        mc_samples=mc_samples,
        functional=functional,
    )
    logger.info(
        f"Interventional ATE {signed:+.4f} ({functional}, {mc_samples} draws) over {n} records"
    )
    return report
