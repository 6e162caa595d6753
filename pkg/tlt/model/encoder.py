"""Feature encoders

Both encoders return a feature map shaped (N, C, H', W'):
the image encoder a spatial grid, the tabular encoder a single position.
"""

import typing

import torch
import torch.nn as nn

from tlt.errors import DomainError


def make_activation(name: str) -> nn.Module:
    if name == "elu":
        return nn.ELU()
    if name == "relu":
        return nn.ReLU()
    if name == "tanh":
        return nn.Tanh()
    raise DomainError(f"Unknown activation '{name}'")


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with a skip connection

    The skip is the identity when shape is preserved, otherwise a strided 1x1 convolution.
    """

    def __init__(
        self, in_channels: int, out_channels: int, stride: int, activation: str
    ):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, stride=1, padding=1)
        self.act = make_activation(activation)
        if stride != 1 or in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.conv2(self.act(self.conv1(x)))
        return self.act(out + self.skip(x))


class ImageEncoder(nn.Module):
    """A stem convolution followed by one residual block per configured width

    The first block keeps the resolution and every later block halves it,
    so (32, 64, 64) turns a 32x32 image into an 8x8 grid of 64 channels.
    """

    def __init__(
        self,
        in_channels: int,
        channels: typing.Sequence[int],
        image_size: int,
        activation: str,
    ):
        super().__init__()
        downsample = 2 ** (len(channels) - 1)
        if image_size % downsample != 0:
            raise DomainError(
                f"image_size {image_size} is not divisible by {downsample}"
            )
        self.stem = nn.Conv2d(in_channels, channels[0], 3, padding=1)
        self.act = make_activation(activation)
        blocks = []
        width = channels[0]
        for idx, out in enumerate(channels):
            blocks.append(ResidualBlock(width, out, 1 if idx == 0 else 2, activation))
            width = out
        self.blocks = nn.ModuleList(blocks)
        self.out_channels = width
        self.grid = image_size // downsample

    @property
    def layer_names(self) -> typing.List[str]:
        return [f"block{idx}" for idx in range(len(self.blocks))]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_layers(x)[-1]

    def forward_layers(self, x: torch.Tensor) -> typing.List[torch.Tensor]:
        """Outputs of every residual block, in order"""
        out = self.act(self.stem(x))
        outputs = []
        for block in self.blocks:
            out = block(out)
            outputs.append(out)
        return outputs

    def forward_from(self, activation: torch.Tensor, block_index: int) -> torch.Tensor:
        """Finish the encoder given the output of block `block_index`"""
        out = activation
        for block in self.blocks[block_index + 1 :]:
            out = block(out)
        return out


class TabularEncoder(nn.Module):
    """Two affine layers with a nonlinearity, presented as a 1x1 feature grid"""

    def __init__(self, input_dim: int, hidden: int, out_channels: int, activation: str):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(input_dim, hidden),
            make_activation(activation),
            nn.Linear(hidden, out_channels),
            make_activation(activation),
        )
        self.out_channels = out_channels
        self.grid = 1

    @property
    def layer_names(self) -> typing.List[str]:
        return []

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)[:, :, None, None]

    def forward_layers(self, x: torch.Tensor) -> typing.List[torch.Tensor]:
        return [self.forward(x)]
