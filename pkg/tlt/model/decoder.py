"""Generative decoders p(x|z), p(t|z), p(y|z,t)

A decoder maps z to a trunk feature map; the reconstruction network
and the pooled affine treatment and outcome heads
all read that trunk.
"""

import typing

import torch
import torch.nn as nn

from tlt.model.encoder import make_activation


class ImageDecoder(nn.Module):
    """z -> (C, S/4, S/4) trunk -> two transposed convolutions -> (in_channels, S, S) logits"""

    def __init__(
        self,
        latent_dim: int,
        channels: int,
        image_size: int,
        out_channels: int,
        activation: str,
    ):
        super().__init__()
        self.channels = channels
        self.side = image_size // 4
        self.lift = nn.Linear(latent_dim, channels * self.side * self.side)
        self.act = make_activation(activation)
        half = max(channels // 2, 1)
        self.reconstruct = nn.Sequential(
            nn.ConvTranspose2d(channels, half, 4, stride=2, padding=1),
            make_activation(activation),
            nn.ConvTranspose2d(half, out_channels, 4, stride=2, padding=1),
        )
        self.out_channels = channels

    def trunk(self, z: torch.Tensor) -> torch.Tensor:
        lifted = self.act(self.lift(z))
        return lifted.view(z.size(0), self.channels, self.side, self.side)

    def reconstruction_logits(self, trunk: torch.Tensor) -> torch.Tensor:
        """Logits in (N, C, H, W) layout"""
        return self.reconstruct(trunk)


class TabularDecoder(nn.Module):
    """z -> hidden trunk -> affine reconstruction logits"""

    def __init__(self, latent_dim: int, hidden: int, output_dim: int, activation: str):
        super().__init__()
        self.lift = nn.Linear(latent_dim, hidden)
        self.act = make_activation(activation)
        self.reconstruct = nn.Linear(hidden, output_dim)
        self.out_channels = hidden

    def trunk(self, z: torch.Tensor) -> torch.Tensor:
        return self.act(self.lift(z))[:, :, None, None]

    def reconstruction_logits(self, trunk: torch.Tensor) -> torch.Tensor:
        return self.reconstruct(trunk.flatten(1))


def pool(feature_map: torch.Tensor) -> torch.Tensor:
    """Spatial mean, (N, C, H, W) -> (N, C)"""
    return feature_map.mean(dim=(2, 3))


class SwitchedHead(nn.Module):
    """Two affine arms selected by a hard treatment: t * arm1(h) + (1 - t) * arm0(h)

    For t in {0,1} the selected output is the chosen arm's output exactly,
    and the other arm does not influence it.
    """

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.arm0 = nn.Linear(in_features, out_features)
        self.arm1 = nn.Linear(in_features, out_features)

    def forward(
        self, h: torch.Tensor, t: torch.Tensor
    ) -> typing.Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (arm0, arm1, selected)"""
        out0 = self.arm0(h)
        out1 = self.arm1(h)
        selected = torch.where(t[:, None] >= 0.5, out1, out0)
        return out0, out1, selected


class ConcatHead(nn.Module):
    """One affine map over the input concatenated with t

    The arm outputs are that map evaluated at t=0 and t=1,
    so the interface matches SwitchedHead.
    """

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.net = nn.Linear(in_features + 1, out_features)

    def _at(self, h: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([h, t[:, None].to(h.dtype)], dim=1))

    def forward(
        self, h: torch.Tensor, t: torch.Tensor
    ) -> typing.Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        out0 = self._at(h, torch.zeros_like(t))
        out1 = self._at(h, torch.ones_like(t))
        return out0, out1, self._at(h, t)
