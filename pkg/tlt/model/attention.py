"""Fusion and conditional-query attention"""

import math
import typing

import torch
import torch.nn as nn
import torch.nn.functional as F

from tlt.errors import TltConfigurationError


def scaled_dot_product_attention(
    query: torch.Tensor, key: torch.Tensor, value: torch.Tensor
) -> typing.Tuple[torch.Tensor, torch.Tensor]:
    """softmax(Q K^T / sqrt(d_k)) V

    query:  (..., n_queries, d_k)
    key:    (..., n_keys, d_k)
    value:  (..., n_keys, d_v)

    Returns (output, weights); each row of weights sums to 1.
    """
    d_k = query.size(-1)
    if key.size(-1) != d_k:
        raise TltConfigurationError(
            f"Query dimension {d_k} does not match key dimension {key.size(-1)}"
        )
    scores = (query @ key.transpose(-2, -1)) / math.sqrt(d_k)
    weights = F.softmax(scores, dim=-1)
    return weights @ value, weights


def unroll(feature_map: torch.Tensor) -> torch.Tensor:
    """(N, C, H, W) -> (N, H*W, C)"""
    return feature_map.flatten(2).transpose(1, 2)


def roll(rows: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """(N, H*W, C) -> (N, C, H, W)"""
    return rows.transpose(1, 2).reshape(rows.size(0), rows.size(2), height, width)


class BilinearFusion(nn.Module):
    """features * project(selected outcome logits), broadcast over positions"""

    def __init__(self, n_classes: int, channels: int):
        super().__init__()
        self.project = nn.Linear(n_classes, channels)

    def forward(self, features: torch.Tensor, y_pre: torch.Tensor) -> torch.Tensor:
        return features * self.project(y_pre)[:, :, None, None]


class PassThroughFusion(nn.Module):
    def forward(self, features: torch.Tensor, y_pre: torch.Tensor) -> torch.Tensor:
        return features


class ConditionalQueryAttention(nn.Module):
    """Attention whose queries come from the fused map and whose keys and values come from the encoder features

    lifted = query_lift(fused), a 1x1 convolution
    Q = unroll(query_map(lifted)), K = unroll(key_map(features)), V = unroll(value_map(features))
    out = softmax(Q K^T / sqrt(d_k)) V, rolled back to a map shaped like features

    With several heads, d_k and the value channels are split evenly between heads.
    """

    def __init__(self, channels: int, d_k: int, heads: int = 1):
        super().__init__()
        if d_k % heads or channels % heads:
            raise TltConfigurationError(
                f"d_k ({d_k}) and channels ({channels}) must both be divisible by heads ({heads})"
            )
        self.heads = heads
        self.d_k = d_k
        self.query_lift = nn.Conv2d(channels, channels, 1)
        self.query_map = nn.Conv2d(channels, d_k, 1)
        self.key_map = nn.Conv2d(channels, d_k, 1)
        self.value_map = nn.Conv2d(channels, channels, 1)

    def _split(self, rows: torch.Tensor) -> torch.Tensor:
        n, positions, width = rows.shape
        return rows.view(n, positions, self.heads, width // self.heads).transpose(1, 2)

    def forward(
        self, fused: torch.Tensor, features: torch.Tensor
    ) -> typing.Tuple[torch.Tensor, torch.Tensor]:
        """Returns (a, weights) with weights shaped (N, heads, queries, keys)"""
        height, width = features.shape[2:]
        hz = self.query_lift(fused)
        query = self._split(unroll(self.query_map(hz)))
        key = self._split(unroll(self.key_map(features)))
        value = self._split(unroll(self.value_map(features)))
        out, weights = scaled_dot_product_attention(query, key, value)
        out = out.transpose(1, 2).reshape(out.size(0), -1, self.heads * out.size(-1))
        return roll(out, height, width), weights
