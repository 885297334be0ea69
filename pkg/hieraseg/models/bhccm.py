"""
`hieraseg` bidirectional hierarchical consistency head.

Decoder features are projected once per level (F_in). Coarse-to-fine fusion
gives every level j the weighted sum of merged features from all coarser
levels plus its own input:

    F_mid[j] = sum_{i<j} W[i,j] * MB(i->j)(F_in[i]) + W[j,j] * F_in[j],  F_mid[0] = F_in[0]

Fine-to-coarse fusion then feeds every level i from all finer levels:

    F_out[i] = sum_{j>i} Y[j,i] * MB(j->i)(F_mid[j]) + Y[i,i] * F_mid[i],  F_out[L-1] = F_mid[L-1]

Cross weights start at 0 and self weights at 1, so a fresh head behaves
exactly like independent per-level projections.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from hieraseg.exceptions import ShapeError, ValidationError
from hieraseg.numeric import ops
from hieraseg.numeric.nn import Conv2d, Module, Scalar
from hieraseg.numeric.tensor import Tensor

from .merging import MergingBlock

logger = logging.getLogger(__name__)

FUSION_MODES = ("none", "c2f", "f2c", "bidirectional")


def _key(source: int, target: int) -> str:
    return f"{source + 1}_{target + 1}"


class BhccmHead(Module):
    """
    :param in_channels: Decoder feature width C_dim.
    :param num_classes: Class count per level, coarsest first.
    :param fusion: One of `none`, `c2f`, `f2c`, `bidirectional`.
    :param block_bias: Bias terms inside merging blocks.
    :param block_norm: Channel LayerNorm inside merging blocks.
    """

    def __init__(
        self,
        in_channels: int,
        num_classes: Sequence[int],
        rng: np.random.Generator,
        fusion: str = "bidirectional",
        block_bias: bool = True,
        block_norm: bool = False,
    ):
        if fusion not in FUSION_MODES:
            raise ValidationError(f"Unknown fusion mode {fusion!r}; expected one of {FUSION_MODES}")
        self.in_channels = in_channels
        self.num_classes = tuple(int(c) for c in num_classes)
        self.fusion = fusion
        levels = len(self.num_classes)

        self.projections = [Conv2d(in_channels, c, 1, rng) for c in self.num_classes]

        self.c2f_blocks: dict[str, MergingBlock] = {}
        self.c2f_weights: dict[str, Scalar] = {}
        if fusion in ("c2f", "bidirectional"):
            for target in range(1, levels):
                self.c2f_weights[_key(target, target)] = Scalar(1.0)
                for source in range(target):
                    key = _key(source, target)
                    self.c2f_blocks[key] = MergingBlock(
                        self.num_classes[source],
                        self.num_classes[target],
                        rng,
                        bias=block_bias,
                        norm=block_norm,
                    )
                    self.c2f_weights[key] = Scalar(0.0)

        self.f2c_blocks: dict[str, MergingBlock] = {}
        self.f2c_weights: dict[str, Scalar] = {}
        if fusion in ("f2c", "bidirectional"):
            for target in range(levels - 1):
                self.f2c_weights[_key(target, target)] = Scalar(1.0)
                for source in range(target + 1, levels):
                    key = _key(source, target)
                    self.f2c_blocks[key] = MergingBlock(
                        self.num_classes[source],
                        self.num_classes[target],
                        rng,
                        bias=block_bias,
                        norm=block_norm,
                    )
                    self.f2c_weights[key] = Scalar(0.0)

    @property
    def num_levels(self) -> int:
        return len(self.num_classes)

    @property
    def num_cross_blocks(self) -> int:
        return len(self.c2f_blocks) + len(self.f2c_blocks)

    def cross_weights(self) -> list[Scalar]:
        return [
            weight
            for weights in (self.c2f_weights, self.f2c_weights)
            for key, weight in weights.items()
            if key.split("_")[0] != key.split("_")[1]
        ]

    def self_weights(self) -> list[Scalar]:
        return [
            weight
            for weights in (self.c2f_weights, self.f2c_weights)
            for key, weight in weights.items()
            if key.split("_")[0] == key.split("_")[1]
        ]

    def project(self, dec) -> list[Tensor]:
        """Per-level head inputs F_in."""
        dec = ops.as_tensor(dec)
        if dec.ndim != 4 or dec.shape[1] != self.in_channels:
            raise ShapeError("bhccm projection", dec.shape, (None, self.in_channels, None, None))
        return [projection(dec) for projection in self.projections]

    def coarse_to_fine(self, f_in: Sequence[Tensor]) -> list[Tensor]:
        if not self.c2f_blocks:
            return list(f_in)
        mid = [f_in[0]]
        for target in range(1, self.num_levels):
            total = self.c2f_weights[_key(target, target)](f_in[target])
            for source in range(target):
                key = _key(source, target)
                total = ops.add(total, self.c2f_weights[key](self.c2f_blocks[key](f_in[source])))
            mid.append(total)
        return mid

    def fine_to_coarse(self, f_mid: Sequence[Tensor]) -> list[Tensor]:
        if not self.f2c_blocks:
            return list(f_mid)
        out = []
        for target in range(self.num_levels - 1):
            total = self.f2c_weights[_key(target, target)](f_mid[target])
            for source in range(target + 1, self.num_levels):
                key = _key(source, target)
                total = ops.add(total, self.f2c_weights[key](self.f2c_blocks[key](f_mid[source])))
            out.append(total)
        out.append(f_mid[-1])
        return out

    def fuse(self, f_in: Sequence[Tensor]) -> list[Tensor]:
        if len(f_in) != self.num_levels:
            raise ValidationError(f"Head has {self.num_levels} levels, got {len(f_in)} inputs")
        for level, (tensor, classes) in enumerate(zip(f_in, self.num_classes)):
            if tensor.shape[1] != classes:
                raise ShapeError(f"bhccm fuse (level {level + 1})", tensor.shape, (None, classes, None, None))
        return self.fine_to_coarse(self.coarse_to_fine(f_in))

    def forward(self, dec) -> list[Tensor]:
        return self.fuse(self.project(dec))


def bhccm_forward(head: BhccmHead, dec) -> list[Tensor]:
    return head(dec)
