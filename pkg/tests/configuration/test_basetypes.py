import pytest

from tlt.configuration.basetypes import (
    DataConfig,
    MetricsConfig,
    ModelConfig,
    SceneConfig,
    SuiteConfig,
    TrainConfig,
    TreatmentSpec,
    build_section,
)
from tlt.errors import DomainError, TltConfigurationError


def test_treatment_spec_rejects_unknown_kind():
    with pytest.raises(DomainError):
        TreatmentSpec(kind="blur")


@pytest.mark.parametrize(
    "changes", [{"ratio": 1.5}, {"ratio": -0.1}, {"sigma": -1.0}, {"eps": -0.3}]
)
def test_treatment_spec_ranges(changes):
    with pytest.raises(DomainError):
        TreatmentSpec(kind="object_mask", **changes)


def test_scene_minimum_size():
    SceneConfig(height=16, width=16)
    with pytest.raises(DomainError):
        SceneConfig(height=8, width=8)
    with pytest.raises(DomainError):
        SceneConfig(channels=2)


def test_data_config_fromdict_parses_nested_sections():
    config = DataConfig.fromdict(
        {
            "n": 10,
            "treatments": [
                {"kind": "gaussian", "sigma": 0.2},
                {"kind": "scramble", "key": None},
            ],
            "scene": {"height": 16, "width": 16, "area_band": [0.05, 0.3]},
        }
    )
    assert config.n == 10
    assert [t.kind for t in config.treatments] == ["gaussian", "scramble"]
    assert config.treatments[1].key is None
    assert config.scene.area_band == (0.05, 0.3)


def test_data_config_rejects_unknown_keys():
    with pytest.raises(TltConfigurationError) as exc:
        DataConfig.fromdict({"n": 10, "samples": 5})
    assert "samples" in str(exc.value)


def test_data_config_nested_errors_name_the_section():
    with pytest.raises(TltConfigurationError) as exc:
        DataConfig.fromdict({"treatments": [{"kind": "scramble"}, {"kind": "blur"}]})
    assert "data.treatments[1]" in str(exc.value)


def test_image_data_needs_a_treatment():
    with pytest.raises(DomainError):
        DataConfig(mode="image", treatments=[])
    DataConfig(mode="tabular", treatments=[])


def test_value_types_are_checked():
    with pytest.raises(TltConfigurationError):
        build_section(TrainConfig, {"epochs": "ten"}, "train")
    with pytest.raises(TltConfigurationError):
        build_section(TrainConfig, {"epochs": True}, "train")
    with pytest.raises(TltConfigurationError):
        build_section(ModelConfig, {"channels": 32}, "model")


def test_integers_are_accepted_as_floats():
    config = build_section(TrainConfig, {"learning_rate": 0}, "train")
    assert config.learning_rate == 0.0
    assert isinstance(config.learning_rate, float)


def test_model_channels_become_a_tuple():
    config = build_section(ModelConfig, {"channels": [8, 16]}, "model")
    assert config.channels == (8, 16)


def test_model_image_size_divisible_by_four():
    with pytest.raises(DomainError):
        ModelConfig(image_size=18)


def test_model_for_input():
    image = ModelConfig().for_input("image", (16, 16, 3), 3)
    assert (image.image_size, image.in_channels, image.n_classes) == (16, 3, 3)
    tabular = ModelConfig().for_input("tabular", (7,), 2)
    assert (tabular.mode, tabular.input_dim) == ("tabular", 7)
    with pytest.raises(DomainError):
        ModelConfig().for_input("image", (16, 12, 1), 2)


def test_invariant_failures_become_configuration_errors():
    with pytest.raises(TltConfigurationError) as exc:
        build_section(MetricsConfig, {"subset_fraction": 0.0}, "metrics")
    assert "metrics" in str(exc.value)


def test_suite_config_checks():
    with pytest.raises(DomainError):
        SuiteConfig(variants=["VAE"])
    with pytest.raises(DomainError):
        SuiteConfig(treatments=["none", "blur"])
    with pytest.raises(DomainError):
        SuiteConfig(mask_ratios=[1.5])
    assert SuiteConfig(checkpoints={"TLT": "a.npz"}).checkpoints == {"TLT": "a.npz"}
