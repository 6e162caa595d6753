"""The treatment learning causal transformer network

Inference side:
    features = encoder(x)
    q(t|x) = Bern(sigmoid(treatment_head(pool(features))))
    q(y|x,t) = softmax(outcome_head.arm1(...) if t else outcome_head.arm0(...)) over pool(features)
    fused = fusion(features, selected outcome logits)
    attended = attention(queries from fused, keys and values from features)
    q(z|x,attended,y,t) = N(mu, var) from posterior_mu and posterior_var, arm selected by t

Generative side:
    p(x|z) from decoder.reconstruct
    p(t|z) = Bern(sigmoid(decoder_treatment(pool(decoder.trunk(z)))))
    p(y|z,t) = softmax of decoder_outcome, arm selected by t

The CEVAE_PRIME variant replaces fusion with a pass-through and has no attention.
The CVAE_PRIME variant additionally replaces every switched head with one head over (input, t).

All public methods take inputs in sample layout: (N, H, W, C) images or (N, D) vectors,
as numpy arrays or tensors.
"""

import dataclasses
import logging
import typing

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from tlt import consts
from tlt.configuration.basetypes import ModelConfig
from tlt.errors import DomainError, NumericError, PreconditionError
from tlt.model.attention import (
    BilinearFusion,
    ConditionalQueryAttention,
    PassThroughFusion,
)
from tlt.model.decoder import (
    ConcatHead,
    ImageDecoder,
    SwitchedHead,
    TabularDecoder,
    pool,
)
from tlt.model.encoder import ImageEncoder, TabularEncoder


logger = logging.getLogger(__name__)


@dataclasses.dataclass
class PosteriorParams:
    """Per-arm Gaussian posterior parameters and their t-switched selection"""

    mu0: torch.Tensor
    mu1: torch.Tensor
    var0: torch.Tensor
    var1: torch.Tensor
    mu: torch.Tensor
    var: torch.Tensor

    @classmethod
    def switched(cls, mu0, mu1, var0, var1, t: torch.Tensor) -> "PosteriorParams":
        """mu = t * mu1 + (1 - t) * mu0 and likewise for var, for hard t"""
        hard = t[:, None] >= 0.5
        mu = torch.where(hard, mu1, mu0)
        var = torch.where(hard, var1, var0)
        return cls(mu0, mu1, var0, var1, mu, var)


@dataclasses.dataclass
class DecoderOutputs:
    x_logits: torch.Tensor
    x_recon: torch.Tensor
    t_logit: torch.Tensor
    p_t_given_z: torch.Tensor
    y_logits_arm0: torch.Tensor
    y_logits_arm1: torch.Tensor
    y_logits: torch.Tensor


@dataclasses.dataclass
class ForwardOutputs:
    """Everything one forward pass produces

    t_used and y_used are the observed labels in training mode,
    and the inferred (t_hat, y_hat) in evaluation mode.
    """

    t_logit: torch.Tensor
    t_prob: torch.Tensor
    y_logits_arm0: torch.Tensor
    y_logits_arm1: torch.Tensor
    y_logits: torch.Tensor
    y_prob: torch.Tensor
    t_used: torch.Tensor
    y_used: torch.Tensor
    fused: torch.Tensor
    attention_out: torch.Tensor
    attention_weights: typing.Optional[torch.Tensor]
    posterior: PosteriorParams
    z: torch.Tensor
    decoded: DecoderOutputs
    delta: torch.Tensor
    training: bool

    @property
    def x_recon(self) -> torch.Tensor:
        return self.decoded.x_recon


def sample_latent(
    posterior: PosteriorParams,
    generator: typing.Optional[torch.Generator] = None,
    noise: typing.Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Reparameterized draw z = mu + sqrt(var) * xi

    xi comes from `noise` when given (frozen draws), otherwise from `generator`.
    """
    if noise is None:
        noise = torch.randn(
            posterior.mu.shape,
            generator=generator,
            dtype=posterior.mu.dtype,
            device=posterior.mu.device,
        )
    return posterior.mu + torch.sqrt(posterior.var) * noise


def parameter_diagnostics(
    module: nn.Module, prefix: str = ""
) -> typing.Dict[str, str]:
    """Summaries of parameters whose names start with prefix, for numeric error reports"""
    diagnostics = {}
    for name, param in module.named_parameters():
        if not name.startswith(prefix):
            continue
        values = param.detach()
        finite = torch.isfinite(values)
        nonfinite = int((~finite).sum())
        largest = float(values[finite].abs().max()) if finite.any() else float("nan")
        diagnostics[name] = f"nonfinite={nonfinite} max_abs={largest:.4g}"
    return diagnostics


class TltNetwork(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.trained = False
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self._build(config)
        logger.debug(
            f"Built {config.variant} {config.mode} network with {self.parameter_count()} parameters"
        )

    def _build(self, config: ModelConfig):
        channels = config.channels[-1]
        k = config.n_classes
        if config.mode == "image":
            self.encoder = ImageEncoder(
                config.in_channels,
                config.channels,
                config.image_size,
                config.activation,
            )
            self.decoder = ImageDecoder(
                config.latent_dim,
                channels,
                config.image_size,
                config.in_channels,
                config.activation,
            )
        else:
            self.encoder = TabularEncoder(
                config.input_dim, config.hidden, channels, config.activation
            )
            self.decoder = TabularDecoder(
                config.latent_dim, config.hidden, config.input_dim, config.activation
            )

        head = ConcatHead if config.variant == "CVAE_PRIME" else SwitchedHead
        self.treatment_head = nn.Linear(channels, 1)
        self.outcome_head = head(channels, k)

        if config.variant == "TLT":
            self.fusion = BilinearFusion(k, channels)
            self.attention = ConditionalQueryAttention(
                channels, config.d_k, config.heads
            )
        else:
            self.fusion = PassThroughFusion()
            self.attention = None

        posterior_in = channels + k
        if self.attention is not None and config.posterior_input == "concat":
            posterior_in += channels
        self.posterior_mu = head(posterior_in, config.latent_dim)
        self.posterior_var = head(posterior_in, config.latent_dim)

        self.decoder_treatment = nn.Linear(self.decoder.out_channels, 1)
        self.decoder_outcome = head(self.decoder.out_channels, k)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    @property
    def sample_shape(self) -> typing.Tuple[int, ...]:
        config = self.config
        if config.mode == "image":
            return (config.image_size, config.image_size, config.in_channels)
        return (config.input_dim,)

    def as_input(self, x) -> torch.Tensor:
        """Convert a sample-layout batch to the tensor layout the encoder reads"""
        if not isinstance(x, torch.Tensor):
            x = torch.as_tensor(np.asarray(x), dtype=self.dtype)
        elif x.dtype != self.dtype:
            x = x.to(self.dtype)
        if tuple(x.shape[1:]) != self.sample_shape:
            raise DomainError(
                f"Expected inputs shaped (N, {', '.join(map(str, self.sample_shape))}), got {tuple(x.shape)}"
            )
        if self.config.mode == "image":
            return x.permute(0, 3, 1, 2)
        return x

    def _binary(self, t, name: str = "t") -> torch.Tensor:
        t = torch.as_tensor(t).to(self.dtype).reshape(-1)
        if not bool(torch.all((t == 0) | (t == 1))):
            raise DomainError(f"{name} must be 0 or 1 at this interface")
        return t

    def _classes(self, y) -> torch.Tensor:
        y = torch.as_tensor(y).long().reshape(-1)
        if bool(torch.any((y < 0) | (y >= self.config.n_classes))):
            raise DomainError(f"Class labels must be in [0, {self.config.n_classes})")
        return y

    def encode_features(self, x) -> torch.Tensor:
        """Encoder feature map, shaped (N, C, H', W')"""
        return self.encoder(self.as_input(x))

    def treatment_logit(self, features: torch.Tensor) -> torch.Tensor:
        return self.treatment_head(pool(features)).squeeze(1)

    def infer_treatment(self, features: torch.Tensor) -> torch.Tensor:
        """q(t=1|x)"""
        return torch.sigmoid(self.treatment_logit(features))

    def infer_outcome(
        self, features: torch.Tensor, t
    ) -> typing.Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Outcome logits (arm0, arm1, selected) for hard t"""
        return self.outcome_head(pool(features), self._binary(t))

    def _fuse(self, features: torch.Tensor, y_pre: torch.Tensor):
        fused = self.fusion(features, y_pre)
        if self.attention is None:
            return fused, fused, None
        attended, weights = self.attention(fused, features)
        return fused, attended, weights

    def fuse_and_attend(
        self,
        features: torch.Tensor,
        y_pre: typing.Optional[torch.Tensor] = None,
        t=None,
    ):
        """(fused, attended) maps from the encoder features and the selected outcome logits

        When y_pre is omitted it is computed from the features for the treatment t.
        """
        if y_pre is None:
            if t is None:
                raise PreconditionError("fuse_and_attend needs either y_pre or t")
            y_pre = self.infer_outcome(features, t)[2]
        fused, attended, _ = self._fuse(features, y_pre)
        return fused, attended

    def infer_posterior(
        self, attended: torch.Tensor, t, y, fused: typing.Optional[torch.Tensor] = None
    ) -> PosteriorParams:
        """q(z | x, a, y, t) for hard t and class y

        The heads read the pooled attention output (and the pooled fused map when
        posterior_input is 'concat') together with a one-hot encoding of y.
        """
        t = self._binary(t)
        h = pool(attended)
        if self.attention is not None and self.config.posterior_input == "concat":
            if fused is None:
                raise PreconditionError("posterior_input 'concat' needs the fused map")
            h = torch.cat([h, pool(fused)], dim=1)
        onehot = F.one_hot(self._classes(y), self.config.n_classes).to(h.dtype)
        h = torch.cat([h, onehot], dim=1)

        mu0, mu1, _ = self.posterior_mu(h, t)
        pre0, pre1, _ = self.posterior_var(h, t)
        var0 = F.softplus(pre0) + consts.VARIANCE_FLOOR
        var1 = F.softplus(pre1) + consts.VARIANCE_FLOOR
        for name, value in (("mu0", mu0), ("mu1", mu1), ("var0", var0), ("var1", var1)):
            if not bool(torch.all(torch.isfinite(value))):
                raise NumericError(
                    f"posterior {name}", parameter_diagnostics(self, "posterior")
                )
        return PosteriorParams.switched(mu0, mu1, var0, var1, t)

    def decode(self, z: torch.Tensor, t) -> DecoderOutputs:
        """p(x|z), p(t|z) and p(y|z,t) for hard t"""
        t = self._binary(t)
        trunk = self.decoder.trunk(z)
        x_logits = self.decoder.reconstruction_logits(trunk)
        if self.config.mode == "image":
            x_logits = x_logits.permute(0, 2, 3, 1)
        pooled = pool(trunk)
        t_logit = self.decoder_treatment(pooled).squeeze(1)
        arm0, arm1, selected = self.decoder_outcome(pooled, t)
        return DecoderOutputs(
            x_logits=x_logits,
            x_recon=torch.sigmoid(x_logits),
            t_logit=t_logit,
            p_t_given_z=torch.sigmoid(t_logit),
            y_logits_arm0=arm0,
            y_logits_arm1=arm1,
            y_logits=selected,
        )

    def _infer(self, x, y=None, t=None):
        """Inference side of the forward pass, up to and including the posterior"""
        if (y is None) != (t is None):
            raise PreconditionError(
                "Training mode needs both y and t observed; evaluation mode needs neither"
            )
        observed = y is not None
        features = self.encode_features(x)
        t_logit = self.treatment_logit(features)
        t_prob = torch.sigmoid(t_logit)
        if observed:
            t_used = self._binary(t)
        else:
            t_used = (t_prob >= 0.5).to(features.dtype).detach()

        arm0, arm1, selected = self.outcome_head(pool(features), t_used)
        if not observed and self.config.soft_mixing:
            w = t_prob[:, None]
            y_prob = w * F.softmax(arm1, dim=1) + (1 - w) * F.softmax(arm0, dim=1)
        else:
            y_prob = F.softmax(selected, dim=1)
        y_used = self._classes(y) if observed else torch.argmax(y_prob, dim=1)

        fused, attended, weights = self._fuse(features, selected)
        posterior = self.infer_posterior(attended, t_used, y_used, fused=fused)
        return dict(
            t_logit=t_logit,
            t_prob=t_prob,
            y_logits_arm0=arm0,
            y_logits_arm1=arm1,
            y_logits=selected,
            y_prob=y_prob,
            t_used=t_used,
            y_used=y_used,
            fused=fused,
            attention_out=attended,
            attention_weights=weights,
            posterior=posterior,
        )

    def forward(
        self,
        x,
        y=None,
        t=None,
        generator: typing.Optional[torch.Generator] = None,
        noise: typing.Optional[torch.Tensor] = None,
    ) -> ForwardOutputs:
        """Full pass; training mode when (y, t) are given, evaluation mode otherwise"""
        inferred = self._infer(x, y, t)
        z = sample_latent(inferred["posterior"], generator=generator, noise=noise)
        decoded = self.decode(z, inferred["t_used"])
        w = inferred["t_used"][:, None]
        p1 = F.softmax(decoded.y_logits_arm1, dim=1)
        p0 = F.softmax(decoded.y_logits_arm0, dim=1)
        delta = w * p1 + (1 - w) * p0
        return ForwardOutputs(
            z=z, decoded=decoded, delta=delta, training=y is not None, **inferred
        )

    def classify_logits(self, x) -> torch.Tensor:
        """Evaluation-path outcome logits, differentiable with respect to x

        With soft mixing these are the log of the mixed class probabilities.
        """
        features = self.encode_features(x)
        t_prob = self.infer_treatment(features)
        t_hat = (t_prob >= 0.5).to(features.dtype).detach()
        arm0, arm1, selected = self.outcome_head(pool(features), t_hat)
        if self.config.soft_mixing:
            w = t_prob[:, None]
            mixed = w * F.softmax(arm1, dim=1) + (1 - w) * F.softmax(arm0, dim=1)
            return torch.log(mixed.clamp_min(consts.PROBABILITY_FLOOR))
        return selected

    def _batched(self, x, batch_size: int, fn) -> np.ndarray:
        """Concatenate fn over batches of x, as float64 numpy"""
        x = np.asarray(x) if not isinstance(x, torch.Tensor) else x
        results = []
        for start in range(0, len(x), batch_size):
            result = fn(x[start : start + batch_size])
            results.append(result.cpu().numpy().astype(np.float64))
        return np.concatenate(results)

    @torch.no_grad()
    def outcome_probabilities(self, x, batch_size: int = 256) -> np.ndarray:
        """Evaluation-path class probabilities q(y | x, t_hat), shaped (N, K)"""
        return self._batched(x, batch_size, lambda b: self._infer(b)["y_prob"])

    @torch.no_grad()
    def treatment_probabilities(self, x, batch_size: int = 256) -> np.ndarray:
        return self._batched(
            x, batch_size, lambda b: self.infer_treatment(self.encode_features(b))
        )

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """Class labels; ties go to the lowest class index"""
        return np.argmax(self.outcome_probabilities(x, batch_size), axis=1)

    @torch.no_grad()
    def evaluation_posterior(self, x) -> PosteriorParams:
        """q(z | x, y_hat, t_hat) with test-time inferred labels"""
        return self._infer(x)["posterior"]

    @torch.no_grad()
    def features(self, x, layer: str, batch_size: int = 256) -> np.ndarray:
        """Per-sample feature vectors at a named layer, shaped (N, L)

        block<i> and encoder are spatially pooled encoder maps;
        fused and attention are the pooled fusion and attention output maps of the evaluation path;
        latent is the evaluation posterior mean.
        """

        def extract(batch):
            if layer == "encoder":
                return pool(self.encode_features(batch))
            if layer in self.encoder.layer_names:
                idx = self.encoder.layer_names.index(layer)
                return pool(self.encoder.forward_layers(self.as_input(batch))[idx])
            if layer in ("fused", "attention", "latent"):
                inferred = self._infer(batch)
                if layer == "fused":
                    return pool(inferred["fused"])
                if layer == "attention":
                    return pool(inferred["attention_out"])
                return inferred["posterior"].mu
            derived = ["encoder", "fused", "attention", "latent"]
            known = self.encoder.layer_names + derived
            raise DomainError(f"Unknown layer '{layer}', expected one of {known}")

        return self._batched(x, batch_size, extract)

    def _spatial_index(self, layer: str) -> int:
        names = self.encoder.layer_names
        if not names:
            raise DomainError(
                f"Layer '{layer}' is not spatial: {self.config.mode} encoders have no spatial layers"
            )
        if layer == "encoder":
            return len(names) - 1
        if layer in names:
            return names.index(layer)
        raise DomainError(
            f"Layer '{layer}' is not a spatial encoder layer, expected one of {names + ['encoder']}"
        )

    def encoder_activation(self, x, layer: str) -> torch.Tensor:
        """The (N, C, H', W') activation of a spatial encoder layer"""
        idx = self._spatial_index(layer)
        return self.encoder.forward_layers(self.as_input(x))[idx]

    @torch.no_grad()
    def hard_treatment(self, x) -> torch.Tensor:
        return (self.infer_treatment(self.encode_features(x)) >= 0.5).to(self.dtype)

    def outcome_logits_from_activation(
        self, activation: torch.Tensor, layer: str, t: torch.Tensor
    ) -> torch.Tensor:
        """Selected outcome logits computed onward from a spatial encoder activation, for fixed t"""
        idx = self._spatial_index(layer)
        features = self.encoder.forward_from(activation, idx)
        return self.outcome_head(pool(features), self._binary(t))[2]
