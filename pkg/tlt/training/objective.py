"""The training objective: auxiliary terms plus the evidence lower bound

Every term is a per-datum mean over the batch, with the sign it has in the
maximized bound, except kl, which is the nonnegative divergence:

    bound = recon_x + recon_t + recon_y - kl_weight * kl + aux_weight * (aux_t + aux_y)
    total = -bound, the quantity minimized

recon_x under the Gaussian likelihood is -1/2 |x - x_recon|^2 per datum;
the constant -D/2 log(2 pi) is dropped.
"""

import dataclasses
import logging
import typing

import torch
import torch.nn.functional as F

from tlt import consts
from tlt.errors import NumericError
from tlt.model.network import ForwardOutputs


logger = logging.getLogger(__name__)


class NumericWarnings:
    """Counts probabilities clamped before taking logs"""

    def __init__(self):
        self.clamped = 0

    def clamp(self, p: torch.Tensor, term: str) -> torch.Tensor:
        low = p < consts.PROBABILITY_FLOOR
        count = int(low.sum())
        if count:
            self.clamped += count
            logger.warning(
                f"Clamped {count} probabilities in {term} to {consts.PROBABILITY_FLOOR}"
            )
        return p.clamp_min(consts.PROBABILITY_FLOOR)


@dataclasses.dataclass
class LossBreakdown:
    recon_x: torch.Tensor
    recon_t: torch.Tensor
    recon_y: torch.Tensor
    kl: torch.Tensor
    aux_t: torch.Tensor
    aux_y: torch.Tensor
    kl_weight: float = 1.0
    aux_weight: float = 1.0

    TERMS: typing.ClassVar[typing.Tuple[str, ...]] = (
        "recon_x",
        "recon_t",
        "recon_y",
        "kl",
        "aux_t",
        "aux_y",
    )

    @property
    def total(self) -> torch.Tensor:
        return total_loss(self)

    def values(self) -> typing.Dict[str, float]:
        """Plain floats of every term and the total"""
        result = {
            name: _as_tensor(getattr(self, name)).detach().item() for name in self.TERMS
        }
        result["total"] = self.total.detach().item()
        return result


def _as_tensor(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value
    return torch.tensor(float(value), dtype=torch.float64)


def total_loss(breakdown: LossBreakdown) -> torch.Tensor:
    """-(recon_x + recon_t + recon_y - kl_weight * kl) - aux_weight * (aux_t + aux_y)"""
    recon_x, recon_t, recon_y, kl, aux_t, aux_y = (
        _as_tensor(getattr(breakdown, name)) for name in LossBreakdown.TERMS
    )
    recon = recon_x + recon_t + recon_y
    aux = aux_t + aux_y
    return -(recon - breakdown.kl_weight * kl) - breakdown.aux_weight * aux


def kl_divergence(mu: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag var) || N(0, I)) per datum, summed over latent coordinates"""
    return 0.5 * torch.sum(var + mu ** 2 - 1.0 - torch.log(var), dim=-1)


def aux_loss(
    outputs: ForwardOutputs,
    t_obs,
    y_obs,
    warnings: typing.Optional[NumericWarnings] = None,
) -> typing.Tuple[torch.Tensor, torch.Tensor]:
    """(log q(t=t_obs|x), log q(y=y_obs|x,t_obs)), batch means; both nonpositive"""
    warnings = warnings or NumericWarnings()
    t_obs = torch.as_tensor(t_obs).to(outputs.t_prob.dtype).reshape(-1)
    y_obs = torch.as_tensor(y_obs).long().reshape(-1)
    p_t = torch.where(t_obs >= 0.5, outputs.t_prob, 1.0 - outputs.t_prob)
    aux_t = torch.log(warnings.clamp(p_t, "aux_t")).mean()
    p_y = outputs.y_prob.gather(1, y_obs[:, None]).squeeze(1)
    aux_y = torch.log(warnings.clamp(p_y, "aux_y")).mean()
    return aux_t, aux_y


def elbo_terms(
    outputs: ForwardOutputs,
    x,
    t_obs,
    y_obs,
    likelihood: str = "gaussian",
    kl_weight: float = 1.0,
    aux_weight: float = 1.0,
) -> LossBreakdown:
    """Reconstruction log-likelihoods and the closed-form KL, auxiliary terms left at zero"""
    x_recon = outputs.decoded.x_recon
    x = torch.as_tensor(x).to(x_recon.dtype)
    t_obs = torch.as_tensor(t_obs).to(x_recon.dtype).reshape(-1)
    y_obs = torch.as_tensor(y_obs).long().reshape(-1)
    per_datum = tuple(range(1, x.dim()))

    if likelihood == "bernoulli":
        nll = F.binary_cross_entropy_with_logits(
            outputs.decoded.x_logits, x, reduction="none"
        )
        recon_x = -nll.sum(per_datum).mean()
    else:
        recon_x = (-0.5 * (x - x_recon) ** 2).sum(per_datum).mean()

    t_logit = outputs.decoded.t_logit
    log_p_t = t_obs * F.logsigmoid(t_logit) + (1.0 - t_obs) * F.logsigmoid(-t_logit)
    recon_t = log_p_t.mean()
    log_p_y = F.log_softmax(outputs.decoded.y_logits, dim=1)
    recon_y = log_p_y.gather(1, y_obs[:, None]).mean()
    kl = kl_divergence(outputs.posterior.mu, outputs.posterior.var).mean()

    zero = torch.zeros((), dtype=x_recon.dtype)
    breakdown = LossBreakdown(
        recon_x, recon_t, recon_y, kl, zero, zero, kl_weight, aux_weight
    )
    check_finite(breakdown)
    return breakdown


def check_finite(breakdown: LossBreakdown):
    for name in LossBreakdown.TERMS:
        if not bool(torch.isfinite(_as_tensor(getattr(breakdown, name)))):
            raise NumericError(name)


def objective(
    model,
    x,
    y,
    t,
    likelihood: str = "gaussian",
    kl_weight: float = 1.0,
    aux_weight: float = 1.0,
    mc_samples: int = 1,
    generator: typing.Optional[torch.Generator] = None,
    noise: typing.Optional[typing.Sequence[torch.Tensor]] = None,
    warnings: typing.Optional[NumericWarnings] = None,
) -> LossBreakdown:
    """The complete breakdown for one batch, averaged over mc_samples latent draws

    noise, when given, holds one frozen standard normal draw per latent sample.
    """
    draws = []
    for sample in range(mc_samples):
        frozen = noise[sample] if noise is not None else None
        outputs = model(x, y=y, t=t, generator=generator, noise=frozen)
        breakdown = elbo_terms(outputs, x, t, y, likelihood, kl_weight, aux_weight)
        breakdown.aux_t, breakdown.aux_y = aux_loss(outputs, t, y, warnings)
        draws.append(breakdown)
    if mc_samples == 1:
        result = draws[0]
    else:
        means = [
            torch.stack([getattr(d, name) for d in draws]).mean()
            for name in LossBreakdown.TERMS
        ]
        result = LossBreakdown(
            *means,
            kl_weight=kl_weight,
            aux_weight=aux_weight,
        )
    check_finite(result)
    return result
