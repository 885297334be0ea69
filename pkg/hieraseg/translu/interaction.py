"""
`hieraseg` branch interaction units.

An interaction unit lets the trainable Branch 1 read from the frozen Branch 2
at one encoder stage:

    f_hat   = f1 + gamma * Attn(norm(f1), norm(FC(f2)))
    f_tilde = f_hat + tau * FFN(norm(f_hat))

Attn is single-head scaled dot-product cross-attention over flattened
spatial tokens (queries from Branch 1, keys and values from the aligned
Branch 2 tokens). Keys and values are average-pooled down to at most
`kv_tokens` tokens, a fixed sampling budget per query. gamma and tau start
at zero, so a new unit returns f1 unchanged.
"""

from __future__ import annotations

import logging

import numpy as np

from hieraseg.exceptions import ShapeError
from hieraseg.numeric import ops
from hieraseg.numeric.nn import LayerNorm, Linear, Module, Scalar
from hieraseg.numeric.tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_KV_TOKENS = 64


def to_tokens(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C)"""
    batch, channels, height, width = x.shape
    return ops.transpose(ops.reshape(x, (batch, channels, height * width)), (0, 2, 1))


def from_tokens(tokens: Tensor, height: int, width: int) -> Tensor:
    batch, _, channels = tokens.shape
    return ops.reshape(ops.transpose(tokens, (0, 2, 1)), (batch, channels, height, width))


class BranchInteractionUnit(Module):
    """
    :param dim1: Branch 1 channel count at this stage.
    :param dim2: Branch 2 channel count at this stage.
    :param fc_bias: Bias on the Branch 2 alignment layer.
    :param value_bias: Bias on the value and output projections.
    :param hidden_ratio: FFN expansion factor.
    """

    def __init__(
        self,
        dim1: int,
        dim2: int,
        rng: np.random.Generator,
        fc_bias: bool = True,
        value_bias: bool = True,
        hidden_ratio: int = 2,
        kv_tokens: int = DEFAULT_KV_TOKENS,
    ):
        self.dim1 = dim1
        self.dim2 = dim2
        self.kv_tokens = kv_tokens
        self.fc = Linear(dim2, dim1, rng, bias=fc_bias)
        self.norm_q = LayerNorm(dim1)
        self.norm_kv = LayerNorm(dim1)
        self.norm_ffn = LayerNorm(dim1)
        self.query = Linear(dim1, dim1, rng)
        self.key = Linear(dim1, dim1, rng)
        self.value = Linear(dim1, dim1, rng, bias=value_bias)
        self.out = Linear(dim1, dim1, rng, bias=value_bias)
        self.ffn_in = Linear(dim1, hidden_ratio * dim1, rng, gain=np.sqrt(2.0))
        self.ffn_out = Linear(hidden_ratio * dim1, dim1, rng)
        self.gamma = Scalar(0.0)
        self.tau = Scalar(0.0)

    def _pool_kv(self, f2: Tensor) -> Tensor:
        while f2.shape[2] * f2.shape[3] > self.kv_tokens and f2.shape[2] % 2 == 0 and f2.shape[3] % 2 == 0:
            f2 = ops.avg_pool2d(f2)
        return f2

    def attend(self, q_tokens: Tensor, kv_tokens: Tensor) -> Tensor:
        q = self.query(self.norm_q(q_tokens))
        kv = self.norm_kv(self.fc(kv_tokens))
        k = self.key(kv)
        v = self.value(kv)
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(self.dim1))
        return self.out(ops.matmul(ops.softmax(scores, axis=-1), v))

    def ffn(self, tokens: Tensor) -> Tensor:
        return self.ffn_out(ops.relu(self.ffn_in(self.norm_ffn(tokens))))

    def forward(self, f1, f2) -> Tensor:
        f1 = ops.as_tensor(f1)
        f2 = ops.as_tensor(f2)
        if f1.ndim != 4 or f2.ndim != 4 or f1.shape[0] != f2.shape[0]:
            raise ShapeError("interaction", f1.shape, f2.shape)
        if f1.shape[2:] != f2.shape[2:]:
            raise ShapeError("interaction (token count)", f1.shape, f2.shape)
        if f1.shape[1] != self.dim1 or f2.shape[1] != self.dim2:
            raise ShapeError(f"interaction ({self.dim1}<-{self.dim2} channels)", f1.shape, f2.shape)
        height, width = f1.shape[2:]
        tokens = to_tokens(f1)
        hat = ops.add(tokens, self.gamma(self.attend(tokens, to_tokens(self._pool_kv(f2)))))
        tilde = ops.add(hat, self.tau(self.ffn(hat)))
        return from_tokens(tilde, height, width)


def biu_forward(unit: BranchInteractionUnit, f1, f2) -> Tensor:
    return unit(f1, f2)
