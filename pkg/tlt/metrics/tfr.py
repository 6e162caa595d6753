"""Treatment-feature ratio

For each feature l of a layer, over matched (untreated, treated) views j of the same scene:

    s_l = sum_j |f_jl(treated) - f_jl(untreated)| / sum_j |f_jl(untreated)|

Features whose denominator is at or below consts.TFR_DENOMINATOR_GUARD are undefined
and flagged rather than divided by.
"""

import dataclasses
import logging
import math
import typing

import numpy as np

from tlt import consts
from tlt.configuration.basetypes import TreatmentSpec
from tlt.errors import DomainError, PreconditionError
from tlt.forge.datasets import matched_pairs
from tlt.forge.manifest import DatasetManifest


logger = logging.getLogger(__name__)


@dataclasses.dataclass
class TFRReport:
    """scores holds NaN where defined is False"""

    layer: str
    scores: np.ndarray
    defined: np.ndarray
    n_pairs: int

    @property
    def mean(self) -> float:
        if not self.defined.any():
            return float("nan")
        return float(np.mean(self.scores[self.defined]))

    @property
    def top1_mean(self) -> float:
        """Mean of the highest 1% of defined scores, at least one score"""
        valid = np.sort(self.scores[self.defined])[::-1]
        if valid.size == 0:
            return float("nan")
        count = max(1, math.ceil(0.01 * valid.size))
        return float(np.mean(valid[:count]))

    def metrics(self) -> typing.Dict[str, float]:
        return {
            "tfr_mean": self.mean,
            "tfr_top1_mean": self.top1_mean,
            "tfr_features": int(self.scores.size),
            "tfr_undefined": int((~self.defined).sum()),
            "tfr_pairs": self.n_pairs,
        }


def tfr_from_features(
    untreated: np.ndarray, treated: np.ndarray
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """(scores, defined) from matched feature rows, each shaped (pairs, features)"""
    untreated = np.asarray(untreated, dtype=np.float64)
    treated = np.asarray(treated, dtype=np.float64)
    if untreated.shape != treated.shape or untreated.ndim != 2:
        raise DomainError(
            f"Matched features must share a (pairs, features) shape, got {untreated.shape} and {treated.shape}"
        )
    numerator = np.abs(treated - untreated).sum(axis=0)
    denominator = np.abs(untreated).sum(axis=0)
    defined = denominator > consts.TFR_DENOMINATOR_GUARD
    scores = np.full(numerator.shape, np.nan)
    scores[defined] = numerator[defined] / denominator[defined]
    return scores, defined


def tfr_score(
    model,
    dataset: DatasetManifest,
    layer: str,
    spec: TreatmentSpec,
    seed: int = 0,
    limit: typing.Optional[int] = None,
) -> TFRReport:
    """TFR of a model layer under a treatment, over the untreated records of a dataset"""
    pairs = matched_pairs(dataset, spec, seed, model=model, limit=limit)
    if not pairs:
        raise PreconditionError(
            "No matched pairs: the dataset has no untreated records to treat"
        )
    untreated = model.features(np.stack([u.x for u, _ in pairs]), layer)
    treated = model.features(np.stack([t.x for _, t in pairs]), layer)
    scores, defined = tfr_from_features(untreated, treated)
    report = TFRReport(layer=layer, scores=scores, defined=defined, n_pairs=len(pairs))
    if not defined.all():
        logger.warning(
            f"TFR undefined for {int((~defined).sum())} of {defined.size} features at {layer}"
        )
    logger.info(
        f"TFR at {layer} under {spec.kind}: mean {report.mean:.4f}, top 1% {report.top1_mean:.4f}"
    )
    return report
