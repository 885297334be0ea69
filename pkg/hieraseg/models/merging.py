"""
`hieraseg` merging blocks.

A merging block carries one hierarchy level's features into another level's
channel space: a 1x1 alignment convolution C_src -> C_tgt gated by a channel
attention map (shared two-layer perceptron over global average and max
pooling) and a spatial attention map (3x3 convolution over the channel-wise
average and max maps).
"""

from __future__ import annotations

import logging

import numpy as np

from hieraseg.exceptions import ShapeError
from hieraseg.numeric import ops
from hieraseg.numeric.nn import Conv2d, LayerNorm, Linear, Module
from hieraseg.numeric.tensor import Tensor

logger = logging.getLogger(__name__)


class MergingBlock(Module):
    """
    :param source_channels: C_src, channel count of the incoming level.
    :param target_channels: C_tgt, channel count of the receiving level.
    :param rng: Generator used for all initial weights.
    :param bias: Whether the alignment, perceptron and spatial convolutions
        carry bias terms.
    :param norm: Apply a LayerNorm over channels to the aligned features
        before gating.
    :param hidden: Perceptron hidden width; defaults to max(C_src // 2, 4).
    :param spatial_kernel: Kernel size of the spatial attention convolution.
    """

    def __init__(
        self,
        source_channels: int,
        target_channels: int,
        rng: np.random.Generator,
        bias: bool = True,
        norm: bool = False,
        hidden: int | None = None,
        spatial_kernel: int = 3,
    ):
        hidden = hidden or max(source_channels // 2, 4)
        self.source_channels = source_channels
        self.target_channels = target_channels
        self.align = Conv2d(source_channels, target_channels, 1, rng, bias=bias)
        self.mlp_in = Linear(source_channels, hidden, rng, bias=bias, gain=np.sqrt(2.0))
        self.mlp_out = Linear(hidden, target_channels, rng, bias=bias)
        self.spatial = Conv2d(2, 1, spatial_kernel, rng, bias=bias)
        self.norm = LayerNorm(target_channels) if norm else None

    def _mlp(self, pooled: Tensor) -> Tensor:
        return self.mlp_out(ops.relu(self.mlp_in(pooled)))

    def channel_attention(self, x: Tensor) -> Tensor:
        """(B, C_tgt, 1, 1) map in (0, 1)."""
        batch = x.shape[0]
        avg = ops.reshape(ops.global_avg_pool(x), (batch, self.source_channels))
        mx = ops.reshape(ops.global_max_pool(x), (batch, self.source_channels))
        weights = ops.sigmoid(ops.add(self._mlp(avg), self._mlp(mx)))
        return ops.reshape(weights, (batch, self.target_channels, 1, 1))

    def spatial_attention(self, x: Tensor) -> Tensor:
        """(B, 1, H, W) map in (0, 1)."""
        pooled = ops.concat([ops.channel_avg_pool(x), ops.channel_max_pool(x)], axis=1)
        return ops.sigmoid(self.spatial(pooled))

    def aligned(self, x: Tensor) -> Tensor:
        out = self.align(x)
        if self.norm is not None:
            out = ops.transpose(self.norm(ops.transpose(out, (0, 2, 3, 1))), (0, 3, 1, 2))
        return out

    def forward(self, x) -> Tensor:
        x = ops.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.source_channels:
            raise ShapeError(
                f"merge ({self.source_channels}->{self.target_channels})",
                x.shape,
                (None, self.source_channels, None, None),
            )
        gated = ops.mul(self.aligned(x), self.channel_attention(x))
        return ops.mul(gated, self.spatial_attention(x))


def merge(block: MergingBlock, x) -> Tensor:
    return block(x)
