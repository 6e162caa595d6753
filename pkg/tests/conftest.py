import os
import typing

import numpy as np
import pytest
import torch
import yaml

from tlt.configuration.basetypes import (
    DataConfig,
    ModelConfig,
    SceneConfig,
    ScmConfig,
    TrainConfig,
    TreatmentSpec,
)
from tlt.forge.datasets import build_image_dataset
from tlt.forge.manifest import DatasetManifest, Sample
from tlt.model.network import TltNetwork
from tlt.training.trainer import fit


TEST_RUNCONFIG_TEMPLATE = {
    "loglevel": "DEBUG",
    "seed": 5,
    "data": {
        "mode": "image",
        "n": 24,
        "flip_rate": 0.0,
        "scene": {"height": 16, "width": 16},
        "treatments": [{"kind": "scramble", "key": 3}],
    },
    "model": {"latent_dim": 2, "channels": [4, 8, 8], "d_k": 4, "hidden": 8},
    "train": {"learning_rate": 0.01, "batch_size": 8, "epochs": 1},
    "metrics": {
        "bootstrap": 20,
        "mc_samples": 2,
        "trials": 2,
        "saliency_count": 2,
        "n_perm": 20,
    },
    "suite": {"variants": ["TLT"], "treatments": ["none", "scramble", "object_mask"]},
}


class TestConsts:
    seed = 5
    scene = SceneConfig(height=16, width=16, channels=1, n_classes=2)
    scramble = TreatmentSpec(kind="scramble", key=3)

    image_model = ModelConfig(
        variant="TLT",
        mode="image",
        n_classes=2,
        latent_dim=2,
        channels=(4, 8, 8),
        d_k=4,
        image_size=16,
        in_channels=1,
        hidden=8,
    )
    # Small enough for finite differences over the whole network
    micro_model = ModelConfig(
        variant="TLT",
        mode="image",
        n_classes=2,
        latent_dim=2,
        channels=(4, 4, 4),
        d_k=2,
        image_size=8,
        in_channels=1,
        hidden=8,
    )
    tabular_model = ModelConfig(
        variant="TLT",
        mode="tabular",
        n_classes=2,
        latent_dim=2,
        channels=(8,),
        d_k=4,
        input_dim=6,
        hidden=8,
    )
    tabular_scm = ScmConfig(latent_dim=3, feature_dim=6)

    train = TrainConfig(learning_rate=0.01, batch_size=8, epochs=2, seed=0)


@pytest.fixture
def testconstsfix():
    return TestConsts


def image_data_config(
    n: int = 24, treatments=None, flip_rate: float = 0.0
) -> DataConfig:
    if treatments is None:
        treatments = [TestConsts.scramble]
    return DataConfig(
        mode="image",
        n=n,
        flip_rate=flip_rate,
        treatments=list(treatments),
        scene=TestConsts.scene,
    )


def random_batch(config: ModelConfig, n: int, seed: int = 0):
    """Random inputs in sample layout with both treatment values and every class present"""
    rng = np.random.default_rng(seed)
    if config.mode == "image":
        x = rng.random((n, config.image_size, config.image_size, config.in_channels))
    else:
        x = rng.random((n, config.input_dim))
    y = np.arange(n) % config.n_classes
    t = (np.arange(n) // config.n_classes) % 2
    return x, y, t


def vector_manifest(
    correct_rows: typing.List[typing.Tuple[int, int]], dim: int = 2
) -> DatasetManifest:
    """A tabular manifest from (y, t) pairs with constant inputs"""
    records = [
        Sample(id=f"r{idx:04d}", x=np.full(dim, 0.5), y=y, t=t)
        for idx, (y, t) in enumerate(correct_rows)
    ]
    return DatasetManifest(records=tuple(records), n_classes=2, mode="tabular")


class FixedPredictor:
    """A model stand-in that returns preset labels"""

    def __init__(self, predictions):
        self.predictions = np.asarray(predictions)
        self.trained = True

    def predict(self, x, batch_size: int = 256):
        return self.predictions[: len(x)]


@pytest.fixture
def image_dataset():
    return build_image_dataset(image_data_config(), TestConsts.seed)


@pytest.fixture
def image_model():
    return TltNetwork(TestConsts.image_model)


@pytest.fixture
def micro_model():
    return TltNetwork(TestConsts.micro_model).double()


@pytest.fixture(scope="session")
def trained_image_model():
    """A TLT network trained briefly on a small scrambled dataset, with that dataset"""
    dataset = build_image_dataset(image_data_config(n=32), TestConsts.seed)
    model = TltNetwork(TestConsts.image_model)
    fit(model, dataset, TestConsts.train)
    return model, dataset


@pytest.fixture
def write_runconfig(tmp_path):
    """Write a run config built from the test template plus nested updates; returns its path"""

    def writer(
        updates: typing.Optional[typing.Dict] = None, name: str = "run.yml"
    ) -> str:
        contents = yaml.safe_load(yaml.safe_dump(TEST_RUNCONFIG_TEMPLATE))
        for section, values in (updates or {}).items():
            if isinstance(values, dict) and isinstance(contents.get(section), dict):
                contents[section].update(values)
            else:
                contents[section] = values
        path = os.path.join(tmp_path, name)
        with open(path, "w") as fp:
            yaml.safe_dump(contents, fp)
        return path

    return writer


@pytest.fixture(autouse=True)
def isolated_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("TLT_OUTPUT_ROOT", os.path.join(tmp_path, "tlt-output"))
    monkeypatch.delenv("TLT_CONFIG", raising=False)
    torch.set_default_dtype(torch.float32)
