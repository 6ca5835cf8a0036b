"""Parameterized building blocks on top of the autodiff kernel."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ContractError

# Large negative logit used for masked attention slots; exp() underflows to 0
# after max-shift without producing NaN the way -inf would.
MASK_VALUE = -1e30


class Module:
    """Tiny base: children are discovered from attribute order."""

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for value in vars(self).values():
            if isinstance(value, Parameter):
                out.append(value)
            elif isinstance(value, Module):
                out.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        out.extend(item.parameters())
                    elif isinstance(item, Parameter):
                        out.append(item)
        return out


class Linear(Module):
    """Affine map on the last axis, evaluated as one flat GEMM."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        name: str,
        zero_init: bool = False,
    ):
        if d_in < 1 or d_out < 1:
            raise ConfigError(f"{name}: non-positive Linear dims ({d_in}, {d_out})")
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.standard_normal((d_in, d_out)) / math.sqrt(d_in)
        self.w = Parameter(w, f"{name}.w")
        self.b = Parameter(np.zeros(d_out), f"{name}.b")
        self.d_in = d_in
        self.d_out = d_out

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, self.d_in))
        out = ad.add_bias(ad.matmul(flat, self.w.tensor()), self.b.tensor())
        return ad.reshape(out, lead + (self.d_out,))


class Mlp(Module):
    """Linear -> tanh -> Linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator, name: str):
        self.fc1 = Linear(d_in, d_hidden, rng, f"{name}.fc1")
        self.fc2 = Linear(d_hidden, d_out, rng, f"{name}.fc2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.tanh(self.fc1(x)))


class LayerNorm(Module):
    def __init__(self, dim: int, name: str, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim), f"{name}.gain")
        self.bias = Parameter(np.zeros(dim), f"{name}.bias")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain.tensor(), self.bias.tensor(), eps=self.eps)


class MultiHeadCrossAttention(Module):
    """Scaled dot-product attention with per-head split and a learned output projection.

    q: (B, Lq, D), k/v: (B, Lk, D) with Lk >= 1. Scores are scaled by
    1/sqrt(D/heads). An optional additive mask (broadcast over batch and
    heads) is applied to the score matrix before the softmax.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, name: str):
        if heads < 1:
            raise ConfigError(f"{name}: heads must be positive, got {heads}")
        if dim % heads != 0:
            raise ConfigError(f"{name}: width {dim} not divisible by {heads} heads")
        self.wq = Linear(dim, dim, rng, f"{name}.wq")
        self.wk = Linear(dim, dim, rng, f"{name}.wk")
        self.wv = Linear(dim, dim, rng, f"{name}.wv")
        self.wo = Linear(dim, dim, rng, f"{name}.wo")
        self.dim = dim
        self.heads = heads

    def _split(self, x: Tensor) -> Tensor:
        b, l, _ = x.shape
        dh = self.dim // self.heads
        return ad.transpose(ad.reshape(x, (b, l, self.heads, dh)), (0, 2, 1, 3))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, attn_mask=None) -> Tensor:
        if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
            raise ContractError("attention operands must be (B, L, D)")
        if k.shape[1] < 1:
            raise ContractError("attention needs at least one key")
        if k.shape != v.shape or q.shape[0] != k.shape[0] or q.shape[-1] != self.dim or k.shape[-1] != self.dim:
            raise ContractError(f"attention shapes disagree: q {q.shape}, k {k.shape}, v {v.shape}")
        b, lq, _ = q.shape
        qh, kh, vh = self._split(self.wq(q)), self._split(self.wk(k)), self._split(self.wv(v))
        scale = 1.0 / math.sqrt(self.dim / self.heads)
        scores = ad.mul_scalar(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))), scale)
        if attn_mask is not None:
            scores = ad.add_const(scores, attn_mask)
        weights = ad.softmax_lastdim(scores)
        mixed = ad.matmul(weights, vh)
        out = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, lq, self.dim))
        return self.wo(out)
