import math
import warnings

import pytest
import torch

from tlt.errors import NumericError
from tlt.training.objective import (
    LossBreakdown,
    NumericWarnings,
    aux_loss,
    check_finite,
    elbo_terms,
    kl_divergence,
    objective,
    total_loss,
)
from tests.conftest import TestConsts, random_batch


def breakdown(**values) -> LossBreakdown:
    zero = torch.tensor(0.0, dtype=torch.float64)
    terms = {name: zero for name in LossBreakdown.TERMS}
    terms.update({k: torch.tensor(v, dtype=torch.float64) for k, v in values.items()})
    return LossBreakdown(**terms)


def test_total_loss_signs():
    # bound = -1 - 0.5 - 0.2, so the minimized total is 1.7
    value = breakdown(recon_x=-1.0, kl=0.5, aux_t=-0.2)
    assert float(total_loss(value)) == pytest.approx(1.7)
    assert value.values()["total"] == pytest.approx(1.7)


def test_total_loss_weights():
    value = breakdown(recon_y=-1.0, kl=2.0, aux_y=-1.0)
    value.kl_weight = 0.5
    value.aux_weight = 3.0
    assert float(value.total) == pytest.approx(1.0 + 1.0 + 3.0)


def test_kl_of_unit_variance_is_half_squared_norm():
    mu = torch.tensor([[1.0, 2.0], [0.0, 0.0]], dtype=torch.float64)
    kl = kl_divergence(mu, torch.ones_like(mu))
    assert kl.tolist() == pytest.approx([2.5, 0.0])


def test_kl_is_nonnegative():
    mu = torch.randn(10, 3, dtype=torch.float64)
    var = torch.rand(10, 3, dtype=torch.float64) + 0.1
    assert torch.all(kl_divergence(mu, var) >= 0)


class Outputs:
    def __init__(self, t_prob, y_prob):
        self.t_prob = torch.tensor(t_prob, dtype=torch.float64)
        self.y_prob = torch.tensor(y_prob, dtype=torch.float64)


def test_aux_terms_at_chance():
    outputs = Outputs([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]])
    aux_t, aux_y = aux_loss(outputs, [1, 0], [0, 1])
    assert float(aux_t) == pytest.approx(math.log(0.5))
    assert float(aux_y) == pytest.approx(math.log(0.5))


def test_aux_terms_clamp_zero_probabilities():
    warnings = NumericWarnings()
    outputs = Outputs([1.0], [[1.0, 0.0]])
    aux_t, aux_y = aux_loss(outputs, [0], [1], warnings)
    assert math.isfinite(float(aux_t)) and math.isfinite(float(aux_y))
    assert warnings.clamped == 2


def test_check_finite_names_the_term():
    with pytest.raises(NumericError) as exc:
        check_finite(breakdown(recon_y=float("nan")))
    assert exc.value.term == "recon_y"


def test_elbo_terms_signs(image_model):
    x, y, t = random_batch(TestConsts.image_model, 4)
    outputs = image_model(x, y=y, t=t)
    terms = elbo_terms(outputs, x, t, y)
    assert float(terms.recon_x) <= 0
    assert float(terms.recon_t) <= 0
    assert float(terms.recon_y) <= 0
    assert float(terms.kl) >= 0


def test_bernoulli_likelihood(image_model):
    x, y, t = random_batch(TestConsts.image_model, 4)
    outputs = image_model(x, y=y, t=t)
    assert float(elbo_terms(outputs, x, t, y, likelihood="bernoulli").recon_x) < 0


def test_objective_with_frozen_noise_is_deterministic(image_model):
    x, y, t = random_batch(TestConsts.image_model, 4)
    noise = [torch.randn(4, 2), torch.randn(4, 2)]
    first = objective(image_model, x, y, t, mc_samples=2, noise=noise).values()
    second = objective(image_model, x, y, t, mc_samples=2, noise=noise).values()
    assert first == second
    assert set(first) == set(LossBreakdown.TERMS) | {"total"}


def test_objective_gradients_reach_every_head(image_model):
    x, y, t = random_batch(TestConsts.image_model, 4)
    generator = torch.Generator().manual_seed(0)
    objective(image_model, x, y, t, generator=generator).total.backward()
    for name in (
        "treatment_head.weight",
        "outcome_head.arm0.weight",
        "outcome_head.arm1.weight",
        "posterior_mu.arm1.weight",
        "decoder_outcome.arm0.weight",
        "attention.query_map.weight",
    ):
        grad = dict(image_model.named_parameters())[name].grad
        assert grad is not None and torch.count_nonzero(grad) > 0, name


def test_values_of_a_graph_attached_objective_raise_no_warning(image_model):
    x, y, t = random_batch(TestConsts.image_model, 4)
    result = objective(image_model, x, y, t, generator=torch.Generator().manual_seed(0))
    assert result.total.requires_grad
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        values = result.values()
    assert all(type(value) is float for value in values.values())
    result.total.backward()
