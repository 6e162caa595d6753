import pytest
import torch

from tlt.errors import DomainError, PreconditionError
from tlt.model.network import TltNetwork
from tlt.training.gradcheck import gradient_check
from tests.conftest import TestConsts, random_batch


def micro_batch():
    x, y, t = random_batch(TestConsts.micro_model, 4, seed=3)
    return torch.as_tensor(x), torch.as_tensor(y), torch.as_tensor(t)


def test_analytic_gradients_match_finite_differences(micro_model):
    error = gradient_check(micro_model, micro_batch(), eps=1e-5, n_params=50, seed=1)
    assert error < 1e-4


def test_quadratic_loss():
    model = TltNetwork(TestConsts.micro_model).double()

    def loss_fn(m, batch):
        return sum((p ** 2).sum() for p in m.treatment_head.parameters())

    assert gradient_check(model, micro_batch(), loss_fn=loss_fn, n_params=5) < 1e-6


def test_corrupted_gradient_is_detected(micro_model):
    """Doubling one head's analytic gradient must show up as a relative error near 1/2"""
    handle = micro_model.outcome_head.arm1.weight.register_hook(lambda grad: grad * 2)
    try:
        error = gradient_check(
            micro_model,
            micro_batch(),
            n_params=5,
            parameter_filter=lambda name: name == "outcome_head.arm1.weight",
        )
    finally:
        handle.remove()
    assert error > 0.1


def test_gradient_check_arguments(micro_model):
    with pytest.raises(DomainError):
        gradient_check(micro_model, micro_batch(), eps=0.0)
    with pytest.raises(PreconditionError):
        gradient_check(micro_model, micro_batch(), parameter_filter=lambda name: False)
    with pytest.raises(PreconditionError):
        gradient_check(TltNetwork(TestConsts.micro_model), micro_batch())
