"""Dataset assembly, splitting, and derived datasets"""

import dataclasses
import logging
import typing

import numpy as np
from sklearn import model_selection

from tlt import util
from tlt.configuration.basetypes import DataConfig, TreatmentSpec
from tlt.errors import DomainError, PreconditionError
from tlt.forge.manifest import DatasetManifest, Sample, flip_treatments
from tlt.forge.scenes import generate_scene
from tlt.forge.scm import generate_tabular_scm
from tlt.forge.treatments import apply_fgsm, apply_treatment


logger = logging.getLogger(__name__)


def treated_counts(class_sizes: typing.List[int]) -> typing.List[int]:
    """How many records of each class to treat so exactly floor(N/2) are treated in total

    Each class treats half its members, rounded down;
    the leftover treatments go one each to the odd-sized classes in class order.
    """
    counts = [size // 2 for size in class_sizes]
    leftover = sum(class_sizes) // 2 - sum(counts)
    for idx, size in enumerate(class_sizes):
        if leftover == 0:
            break
        if size % 2 == 1:
            counts[idx] += 1
            leftover -= 1
    return counts


def flip_rng(seed: int) -> np.random.Generator:
    return util.numpy_rng(seed, "gen-data", "flip")


def build_image_dataset(
    config: DataConfig,
    seed: int,
    surrogate=None,
    specs: typing.Optional[typing.List[TreatmentSpec]] = None,
) -> DatasetManifest:
    """Generate the causal-pair image dataset

    Classes are balanced and shuffled, exactly floor(N/2) records are treated,
    stratified by class, and treatment kinds are cycled over the treated records.
    Observed treatments are then flipped at config.flip_rate.

    specs overrides config.treatments. An empty list assigns treatment labels
    without modifying any image, the untreated baseline setting.
    """
    scene = config.scene
    specs = list(config.treatments) if specs is None else list(specs)
    kinds = [spec.kind for spec in specs]
    if "fgsm" in kinds and surrogate is None:
        raise PreconditionError(
            "The fgsm treatment needs a trained surrogate model checkpoint"
        )

    rng = util.numpy_rng(seed, "gen-data", "layout")
    labels = rng.permutation(np.arange(config.n) % scene.n_classes)

    treated = np.zeros(config.n, dtype=bool)
    class_sizes = [int(np.sum(labels == c)) for c in range(scene.n_classes)]
    for c, count in enumerate(treated_counts(class_sizes)):
        members = np.flatnonzero(labels == c)
        treated[rng.choice(members, size=count, replace=False)] = True

    records = []
    treated_seen = 0
    for idx in range(config.n):
        sample = generate_scene(
            int(labels[idx]),
            util.derive_seed(seed, "gen-data", "scene", idx),
            scene,
            sample_id=f"img-{idx:06d}",
        )
        if treated[idx] and not specs:
            sample = dataclasses.replace(sample, t=1, t_clean=1)
        elif treated[idx]:
            spec = specs[treated_seen % len(specs)]
            treated_seen += 1
            if spec.kind == "fgsm":
                sample = apply_fgsm(sample, surrogate, spec.eps)
            else:
                rng = util.numpy_rng(seed, "gen-data", "treatment", idx)
                sample = apply_treatment(sample, spec, rng)
        records.append(sample)

    manifest = DatasetManifest(
        records=tuple(records),
        n_classes=scene.n_classes,
        mode="image",
        seed=seed,
        treatments=tuple(dict.fromkeys(kinds)),
    )
    logger.info(
        f"Generated {config.n} scenes, {int(treated.sum())} treated with {kinds}"
    )
    return flip_treatments(manifest, config.flip_rate, flip_rng(seed))


def build_dataset(config: DataConfig, seed: int, surrogate=None) -> DatasetManifest:
    """Generate a dataset for the configured mode"""
    if config.mode == "tabular":
        manifest = generate_tabular_scm(config.scm, config.n, seed)
        return flip_treatments(manifest, config.flip_rate, flip_rng(seed))
    return build_image_dataset(config, seed, surrogate=surrogate)


def _strata(manifest: DatasetManifest) -> np.ndarray:
    """One label per record for the (y, clean t) stratum it belongs to"""
    return manifest.y * 2 + manifest.t_clean


def _sklearn_seed(seed: int, label: str) -> int:
    return util.derive_seed(seed, label) % (1 << 32)


def train_test_split(
    manifest: DatasetManifest, test_fraction: float, seed: int
) -> typing.Tuple[DatasetManifest, DatasetManifest]:
    """Split stratified by (y, clean t); both halves keep manifest order"""
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must be in (0,1), got {test_fraction}")
    try:
        train_idx, test_idx = model_selection.train_test_split(
            np.arange(len(manifest)),
            test_size=test_fraction,
            stratify=_strata(manifest),
            random_state=_sklearn_seed(seed, "split"),
        )
    except ValueError as exc:
        raise DomainError(f"Cannot split {len(manifest)} records: {exc}")
    return manifest.subset(sorted(train_idx)), manifest.subset(sorted(test_idx))


def stratified_folds(
    manifest: DatasetManifest, k: int, seed: int
) -> typing.List[typing.Tuple[np.ndarray, np.ndarray]]:
    """k-fold (train indices, test indices) pairs stratified by (y, clean t)

    Test fold sizes differ by at most one.
    """
    if k < 2:
        raise DomainError(f"Need at least 2 folds, got {k}")
    if k > len(manifest):
        raise DomainError(f"Cannot split {len(manifest)} records into {k} folds")
    folds = model_selection.StratifiedKFold(
        n_splits=k, shuffle=True, random_state=_sklearn_seed(seed, "folds")
    )
    everything = np.arange(len(manifest))
    try:
        return list(folds.split(everything, _strata(manifest)))
    except ValueError as exc:
        raise DomainError(f"Cannot split {len(manifest)} records into {k} folds: {exc}")


def with_common_cause(
    manifest: DatasetManifest, rng: np.random.Generator
) -> DatasetManifest:
    """Append an independent uniform covariate to every record

    Images get it as one extra constant channel, vectors as one extra entry.
    """
    covariate = rng.random(len(manifest))
    records = []
    for record, value in zip(manifest.records, covariate):
        if record.x.ndim == 3:
            extra = np.full(record.x.shape[:2] + (1,), value)
            x = np.concatenate([record.x, extra], axis=2)
        else:
            x = np.concatenate([record.x, [value]])
        records.append(dataclasses.replace(record, x=x))
    return dataclasses.replace(manifest, records=tuple(records))


def split_common_cause(x: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Separate a batch built by with_common_cause() into (original inputs, covariate)"""
    if x.ndim == 4:
        return x[..., :-1], x[:, 0, 0, -1]
    return x[:, :-1], x[:, -1]


def matched_pairs(
    manifest: DatasetManifest,
    spec: TreatmentSpec,
    seed: int,
    model=None,
    limit: typing.Optional[int] = None,
) -> typing.List[typing.Tuple[Sample, Sample]]:
    """(untreated, treated) views of the same scene for every untreated record

    fgsm needs `model`; mask treatments need records with object masks.
    """
    pairs = []
    for idx, record in enumerate(manifest.records):
        if record.t_clean != 0 or record.treatment:
            continue
        if spec.kind == "fgsm":
            if model is None:
                raise PreconditionError("Matched fgsm pairs need a model")
            treated = apply_fgsm(record, model, spec.eps)
        else:
            treated = apply_treatment(record, spec, util.numpy_rng(seed, "pairs", idx))
        pairs.append((record, treated))
        if limit is not None and len(pairs) >= limit:
            break
    return pairs

