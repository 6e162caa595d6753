"""The experiment suite: accuracy and ATE per treatment and model variant

One row per treatment kind, with mask kinds expanded into one row per
configured mask ratio. Every row is generated from the same scenes and
the same treated records, so rows differ only in the treatment applied.
"""

import dataclasses
import logging
import os
import typing

import numpy as np
import pandas as pd

from tlt import consts, util
from tlt.configuration.appconfig import RunConfig
from tlt.configuration.basetypes import TreatmentSpec
from tlt.errors import TltConfigurationError
from tlt.forge.datasets import build_image_dataset, stratified_folds, train_test_split
from tlt.forge.manifest import DatasetManifest
from tlt.metrics.ate import observational_ate, percentile_interval
from tlt.model.checkpoint import load_checkpoint
from tlt.model.network import TltNetwork
from tlt.training.trainer import fit


logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class SuiteRow:
    treatment: str
    ratio: typing.Optional[float]
    specs: typing.Tuple[TreatmentSpec, ...]

    @property
    def label(self) -> str:
        return row_label(self.treatment, self.ratio)


def row_label(treatment: str, ratio: typing.Optional[float]) -> str:
    return treatment if ratio is None else f"{treatment}@{ratio:g}"


def suite_columns(variants: typing.List[str]) -> typing.List[str]:
    columns = ["treatment", "ratio"]
    for variant in variants:
        columns += [
            f"{variant}_acc",
            f"{variant}_acc_err",
            f"{variant}_ate",
            f"{variant}_ate_err",
        ]
    return columns


def configured_spec(config: RunConfig, kind: str) -> TreatmentSpec:
    """The first configured spec of a kind, or the defaults for that kind"""
    for spec in config.data.treatments:
        if spec.kind == kind:
            return spec
    return TreatmentSpec(kind=kind)


def suite_rows(config: RunConfig) -> typing.List[SuiteRow]:
    rows = []
    for kind in config.suite.treatments:
        if kind == "none":
            rows.append(SuiteRow("none", None, ()))
            continue
        spec = configured_spec(config, kind)
        if kind in consts.MASK_TREATMENT_KINDS and config.suite.mask_ratios:
            for ratio in config.suite.mask_ratios:
                ratio_spec = dataclasses.replace(spec, ratio=ratio)
                rows.append(SuiteRow(kind, ratio, (ratio_spec,)))
        elif kind in consts.MASK_TREATMENT_KINDS:
            rows.append(SuiteRow(kind, spec.ratio, (spec,)))
        else:
            rows.append(SuiteRow(kind, None, (spec,)))
    return rows


def accuracy_interval(
    correct: np.ndarray, resamples: int, seed: int
) -> typing.Tuple[float, float, float]:
    """(accuracy, low, high) with a percentile bootstrap interval"""
    correct = np.asarray(correct, dtype=np.float64)
    accuracy = float(correct.mean())
    rng = util.numpy_rng(seed, "suite", "accuracy")
    draws = rng.integers(0, len(correct), size=(resamples, len(correct)))
    stats = correct[draws].mean(axis=1)
    low, high = percentile_interval(stats, accuracy)
    return accuracy, low, high


def evaluate_cell(
    model, test: DatasetManifest, bootstrap: int, seed: int
) -> typing.Dict[str, float]:
    correct = np.asarray(model.predict(test.x)) == test.y
    accuracy, low, high = accuracy_interval(correct, bootstrap, seed)
    report = observational_ate(correct, test.t_clean, bootstrap, seed)
    return {
        "acc": accuracy,
        "acc_err": (high - low) / 2,
        "ate": report.ate,
        "ate_err": report.ci_half_width,
    }


def combine_folds(
    cells: typing.List[typing.Dict[str, float]]
) -> typing.Dict[str, float]:
    """A single split keeps its bootstrap errors; k folds report the spread across folds"""
    if len(cells) == 1:
        return cells[0]
    acc = np.array([c["acc"] for c in cells])
    ate = np.array([c["ate"] for c in cells])
    return {
        "acc": float(acc.mean()),
        "acc_err": float(acc.std(ddof=1)),
        "ate": float(ate.mean()),
        "ate_err": float(ate.std(ddof=1)),
    }


class ExperimentSuite:
    """Trains (or loads) each variant and evaluates it on every suite row"""

    def __init__(self, config: RunConfig):
        if config.data.mode != "image":
            raise TltConfigurationError(
                "The experiment suite runs on image datasets; set data.mode to image"
            )
        self.config = config
        self._surrogate = None

    def splits(
        self, dataset: DatasetManifest
    ) -> typing.List[typing.Tuple[DatasetManifest, DatasetManifest]]:
        suite = self.config.suite
        seed = util.derive_seed(self.config.seed, "suite")
        if suite.folds == 1:
            return [train_test_split(dataset, suite.test_fraction, seed)]
        folds = stratified_folds(dataset, suite.folds, seed)
        return [(dataset.subset(train), dataset.subset(test)) for train, test in folds]

    def train_model(
        self, variant: str, dataset: DatasetManifest, fold: int
    ) -> TltNetwork:
        seed = self.config.seed
        model_config = dataclasses.replace(
            self.config.model,
            variant=variant,
            seed=util.derive_seed(seed, "suite", variant, "init", fold),
        ).for_input(dataset.mode, dataset.sample_shape, dataset.n_classes)
        train_config = dataclasses.replace(
            self.config.train,
            seed=util.derive_seed(seed, "suite", variant, "optimize", fold),
        )
        model = TltNetwork(model_config)
        fit(model, dataset, train_config)
        return model

    def surrogate(self) -> TltNetwork:
        """The model fgsm rows attack: the first variant, trained on the untreated baseline"""
        if self._surrogate is None:
            variant = self.config.suite.variants[0]
            if self.config.suite.train_inline:
                baseline = build_image_dataset(
                    self.config.data, self.config.seed, specs=[]
                )
                logger.info(f"Training {variant} surrogate for fgsm rows")
                self._surrogate = self.train_model(variant, baseline, fold=-1)
            else:
                path = self.config.suite.checkpoints[variant]
                self._surrogate = load_checkpoint(path)
        return self._surrogate

    def dataset(self, row: SuiteRow) -> DatasetManifest:
        attacked = any(spec.kind == "fgsm" for spec in row.specs)
        return build_image_dataset(
            self.config.data,
            self.config.seed,
            surrogate=self.surrogate() if attacked else None,
            specs=list(row.specs),
        )

    def evaluate(
        self, variant: str, row: SuiteRow, dataset: DatasetManifest
    ) -> typing.Dict[str, float]:
        bootstrap = self.config.metrics.bootstrap
        seed = util.derive_seed(self.config.seed, "suite", row.label, variant)
        if not self.config.suite.train_inline:
            model = load_checkpoint(self.config.suite.checkpoints[variant])
            return evaluate_cell(model, dataset, bootstrap, seed)
        cells = []
        for fold, (train, test) in enumerate(self.splits(dataset)):
            model = self.train_model(variant, train, fold)
            cells.append(evaluate_cell(model, test, bootstrap, seed))
        return combine_folds(cells)

    def run(self) -> pd.DataFrame:
        variants = self.config.suite.variants
        table = []
        for row in suite_rows(self.config):
            dataset = self.dataset(row)
            values = {"treatment": row.treatment, "ratio": row.ratio}
            for variant in variants:
                cell = self.evaluate(variant, row, dataset)
                values.update({f"{variant}_{name}": v for name, v in cell.items()})
                logger.info(
                    f"Suite {row.label} {variant}: acc {cell['acc']:.4f}, ATE {cell['ate']:.4f}"
                )
            table.append(values)
        return pd.DataFrame(table, columns=suite_columns(variants))


def experiment_suite(
    config: RunConfig, out_dir: typing.Optional[str] = None
) -> pd.DataFrame:
    """Run the suite and, when out_dir is given, write it there as suite.csv"""
    table = ExperimentSuite(config).run()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "suite.csv")
        table.to_csv(path, index=False, float_format="%.6g")
    return table


def suite_metrics(table: pd.DataFrame) -> typing.Dict[str, float]:
    """Flatten a suite table to row-label.column metric keys"""
    metrics = {}
    for _, values in table.iterrows():
        ratio = values["ratio"]
        if ratio is not None and pd.isna(ratio):
            ratio = None
        label = row_label(values["treatment"], ratio)
        for column in table.columns[2:]:
            metrics[f"{label}.{column}"] = float(values[column])
    return metrics
