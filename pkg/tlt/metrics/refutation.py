"""Refutation tests for the observational ATE

common_cause:   append an independent random covariate, strip it before
                prediction, and re-estimate adjusting for it by stratification
placebo:        replace every treatment with an independent Bern(0.5) draw
subset:         re-estimate on a uniformly random subset of the records

Each test runs `trials` times with its own derived seed per trial,
so results do not depend on how many trials run or in what order.
The common cause and subset estimates are means of absolute ATEs;
the placebo estimate is the mean signed ATE, which concentrates at zero.
"""

import dataclasses
import logging
import typing

import numpy as np

from tlt import consts, util
from tlt.errors import DomainError, EstimandUndefinedError
from tlt.forge.datasets import split_common_cause, with_common_cause
from tlt.forge.manifest import DatasetManifest
from tlt.metrics.ate import (
    ATEReport,
    correctness_difference,
    estimate_ate_observational,
)


logger = logging.getLogger(__name__)

COMMON_CAUSE_STRATA = 5


@dataclasses.dataclass
class RefutationEntry:
    kind: str
    estimate: float
    trials: int
    values: typing.List[float]


@dataclasses.dataclass
class RefutationReport:
    original_ate: float
    common_cause_ate: float
    placebo_ate: float
    subset_ate: float
    tol_common_cause: float
    tol_placebo: float
    tol_subset: float
    trials: int

    @property
    def pass_common_cause(self) -> bool:
        return abs(self.common_cause_ate - self.original_ate) <= self.tol_common_cause

    @property
    def pass_placebo(self) -> bool:
        return abs(self.placebo_ate) <= self.tol_placebo

    @property
    def pass_subset(self) -> bool:
        return abs(self.subset_ate - self.original_ate) <= self.tol_subset

    def metrics(self) -> typing.Dict[str, float]:
        return {
            "original_ate": self.original_ate,
            "common_cause_ate": self.common_cause_ate,
            "placebo_ate": self.placebo_ate,
            "subset_ate": self.subset_ate,
            "tol_common_cause": self.tol_common_cause,
            "tol_placebo": self.tol_placebo,
            "tol_subset": self.tol_subset,
            "pass_common_cause": int(self.pass_common_cause),
            "pass_placebo": int(self.pass_placebo),
            "pass_subset": int(self.pass_subset),
            "trials": self.trials,
        }


def stratified_difference(
    correct: np.ndarray, t: np.ndarray, covariate: np.ndarray, strata: int
) -> float:
    """Absolute correctness difference adjusted for a covariate by quantile strata

    Strata missing an arm are left out and the remaining weights renormalized.
    """
    edges = np.quantile(covariate, np.linspace(0, 1, strata + 1)[1:-1])
    bins = np.searchsorted(edges, covariate, side="right")
    total = 0.0
    weight = 0
    for stratum in range(strata):
        members = bins == stratum
        if not np.any(members & (t == 1)) or not np.any(members & (t == 0)):
            continue
        signed = correctness_difference(correct[members], t[members])[0]
        size = int(members.sum())
        total += size * signed
        weight += size
    if weight == 0:
        raise EstimandUndefinedError(
            "common cause", "no covariate stratum contains both arms"
        )
    return abs(total / weight)


def _common_cause_trial(model, dataset: DatasetManifest, y, t, rng) -> float:
    augmented = with_common_cause(dataset, rng)
    x, covariate = split_common_cause(augmented.x)
    correct = np.asarray(model.predict(x)) == y
    return stratified_difference(correct, t, covariate, COMMON_CAUSE_STRATA)


def refute(
    model,
    dataset: DatasetManifest,
    kind: str,
    seed: int,
    trials: int,
    subset_fraction: float = 0.8,
    correct: typing.Optional[np.ndarray] = None,
) -> RefutationEntry:
    """Run one refutation test

    correct, when given, holds the model's per-record correctness on the
    unmodified dataset, to avoid predicting it again for every trial.
    """
    if trials < 1:
        raise DomainError(f"Refutations need at least one trial, got {trials}")
    if kind not in consts.REFUTATION_KINDS:
        raise DomainError(
            f"Unknown refutation '{kind}', expected one of {consts.REFUTATION_KINDS}"
        )
    if not 0.0 < subset_fraction <= 1.0:
        raise DomainError(f"subset_fraction must be in (0,1], got {subset_fraction}")

    y = dataset.y
    t = dataset.t_clean
    if correct is None and kind != "common_cause":
        correct = np.asarray(model.predict(dataset.x)) == y

    values = []
    for trial in range(trials):
        rng = util.numpy_rng(seed, "refute", kind, trial)
        if kind == "common_cause":
            values.append(_common_cause_trial(model, dataset, y, t, rng))
        elif kind == "placebo":
            placebo = (rng.random(len(dataset)) < 0.5).astype(np.int64)
            values.append(correctness_difference(correct, placebo)[0])
        else:
            size = max(2, int(np.floor(subset_fraction * len(dataset) + 0.5)))
            chosen = np.sort(rng.choice(len(dataset), size=size, replace=False))
            values.append(abs(correctness_difference(correct[chosen], t[chosen])[0]))

    estimate = util.exact_mean(values)
    logger.info(f"Refutation {kind}: {estimate:.4f} over {trials} trials")
    return RefutationEntry(kind=kind, estimate=estimate, trials=trials, values=values)


def refutation_report(
    model,
    dataset: DatasetManifest,
    seed: int,
    trials: int = 20,
    subset_fraction: float = 0.8,
    bootstrap: int = 1000,
    tol_floor: float = 0.02,
    tol_placebo: float = 0.05,
    original: typing.Optional[ATEReport] = None,
) -> RefutationReport:
    """All three refutations against the observational ATE

    tol_common_cause = tol_subset = max(tol_floor, bootstrap CI half-width)
    """
    if original is None:
        original = estimate_ate_observational(
            model, dataset, bootstrap=bootstrap, seed=seed
        )
    correct = np.asarray(model.predict(dataset.x)) == dataset.y
    entries = {
        kind: refute(
            model, dataset, kind, seed, trials, subset_fraction, correct=correct
        )
        for kind in consts.REFUTATION_KINDS
    }
    tolerance = max(tol_floor, original.ci_half_width)
    return RefutationReport(
        original_ate=original.ate,
        common_cause_ate=entries["common_cause"].estimate,
        placebo_ate=entries["placebo"].estimate,
        subset_ate=entries["subset"].estimate,
        tol_common_cause=tolerance,
        tol_placebo=tol_placebo,
        tol_subset=tolerance,
        trials=trials,
    )
