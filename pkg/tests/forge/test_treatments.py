import numpy as np
import pytest
import torch

from tlt import consts
from tlt.configuration.basetypes import TreatmentSpec
from tlt.errors import CapabilityError, DomainError, PreconditionError
from tlt.forge.manifest import Sample
from tlt.forge.scenes import generate_scene
from tlt.forge.treatments import (
    apply_fgsm,
    apply_treatment,
    invert_scramble,
    masked_pixel_indices,
    scramble_permutation,
)
from tests.conftest import TestConsts


@pytest.fixture
def scene():
    return generate_scene(1, 17, TestConsts.scene, sample_id="scene")


def rng():
    return np.random.default_rng(0)


def test_scramble_round_trip_is_bit_exact(scene):
    treated = apply_treatment(scene, TreatmentSpec(kind="scramble", key=123), rng())
    labels = (treated.t, treated.t_clean, treated.treatment, treated.key)
    assert labels == (1, 1, "scramble", 123)
    assert not np.array_equal(treated.x, scene.x)
    restored = invert_scramble(treated, 123)
    assert restored.x.tobytes() == scene.x.tobytes()
    assert (restored.t, restored.treatment) == (0, "")


def test_scramble_preserves_pixel_multiset(scene):
    treated = apply_treatment(scene, TreatmentSpec(kind="scramble", key=5), rng())
    assert np.array_equal(np.sort(treated.x.ravel()), np.sort(scene.x.ravel()))


def test_scramble_wrong_key(scene):
    treated = apply_treatment(scene, TreatmentSpec(kind="scramble", key=123), rng())
    assert not np.array_equal(invert_scramble(treated, 124).x, scene.x)


def test_identity_scramble(scene):
    treated = apply_treatment(scene, TreatmentSpec(kind="scramble", key=None), rng())
    assert np.array_equal(treated.x, scene.x)
    assert np.array_equal(scramble_permutation(None, 5), np.arange(5))


def test_object_mask_ratio_zero_is_unchanged(scene):
    spec = TreatmentSpec(kind="object_mask", ratio=0.0)
    treated = apply_treatment(scene, spec, rng())
    assert np.array_equal(treated.x, scene.x)
    assert treated.t == 1


def test_object_mask_full_ratio_fills_object(scene):
    spec = TreatmentSpec(kind="object_mask", ratio=1.0)
    treated = apply_treatment(scene, spec, rng())
    inside = scene.mask == 1
    assert np.all(treated.x[inside] == consts.OBJECT_MASK_FILL)
    assert np.array_equal(treated.x[~inside], scene.x[~inside])


def test_masked_pixels_grow_with_ratio(scene):
    small = set(masked_pixel_indices(scene.mask, 0.25).tolist())
    large = set(masked_pixel_indices(scene.mask, 0.75).tolist())
    assert small <= large
    assert len(large) == int(np.floor(0.75 * scene.mask.sum() + 0.5))


def test_background_refill_draws_background_pixels(scene):
    spec = TreatmentSpec(kind="background_refill", ratio=1.0)
    treated = apply_treatment(scene, spec, rng())
    background = set(scene.x[scene.mask == 0].ravel().tolist())
    assert set(treated.x[scene.mask == 1].ravel().tolist()) <= background


def test_gaussian_stays_in_range(scene):
    treated = apply_treatment(scene, TreatmentSpec(kind="gaussian", sigma=0.5), rng())
    assert treated.x.min() >= 0.0 and treated.x.max() <= 1.0
    assert not np.array_equal(treated.x, scene.x)


def test_treatment_preconditions(scene):
    unmasked = Sample(id="u", x=scene.x, y=scene.y)
    with pytest.raises(PreconditionError):
        apply_treatment(unmasked, TreatmentSpec(kind="object_mask"), rng())
    with pytest.raises(DomainError):
        apply_treatment(scene, TreatmentSpec(kind="fgsm"), rng())


class LinearScorer:
    """Logits linear in the inputs, so the gradient sign is known"""

    def __init__(self, weights):
        self.weights = torch.as_tensor(weights, dtype=torch.float64)

    def classify_logits(self, x):
        flat = x.reshape(x.shape[0], -1)
        return flat @ self.weights


def test_fgsm_moves_along_gradient_sign_within_budget(scene):
    pixels = scene.x.size
    weights = np.zeros((pixels, 2))
    weights[:, 0] = 1.0
    weights[:, 1] = -1.0
    treated = apply_fgsm(scene, LinearScorer(weights), eps=0.1)
    # the scene is class 1, whose loss rises with every input value
    assert np.max(np.abs(treated.x - scene.x)) <= 0.1 + 1e-12
    assert treated.x.min() >= 0.0 and treated.x.max() <= 1.0
    assert np.all(treated.x >= scene.x)
    assert np.any(treated.x > scene.x)
    assert treated.treatment == "fgsm" and treated.t == 1


def test_fgsm_zero_budget_is_unchanged(scene):
    weights = np.ones((scene.x.size, 2))
    assert np.array_equal(apply_fgsm(scene, LinearScorer(weights), eps=0.0).x, scene.x)


def test_fgsm_arguments(scene):
    with pytest.raises(DomainError):
        apply_fgsm(scene, LinearScorer(np.ones((scene.x.size, 2))), eps=-0.1)
    with pytest.raises(CapabilityError):
        apply_fgsm(scene, object(), eps=0.1)


def test_fgsm_with_network(scene, image_model):
    treated = apply_fgsm(scene, image_model, eps=0.05)
    assert np.max(np.abs(treated.x - scene.x)) <= 0.05 + 1e-6


def test_scramble_round_trips_over_many_keys():
    rng = np.random.default_rng(8)
    for key in rng.integers(0, 2 ** 31, size=100):
        x = rng.random((16, 16, 3))
        sample = Sample(id="r", x=x, y=0)
        spec = TreatmentSpec(kind="scramble", key=int(key))
        treated = apply_treatment(sample, spec, rng)
        assert invert_scramble(treated, int(key)).x.tobytes() == x.tobytes()


@pytest.mark.parametrize("eps", [0.1, 0.3])
def test_fgsm_budget(scene, image_model, eps):
    treated = apply_fgsm(scene, image_model, eps=eps)
    assert np.max(np.abs(treated.x - scene.x)) <= eps + 1e-12
