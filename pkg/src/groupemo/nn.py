"""Parameterized layers and the Adam optimizer.

Layers are small ``Module`` objects holding ``Tensor`` parameters.  Parameters
are drawn from a ``numpy.random.Generator`` in construction order, so a model
built twice from the same seed and configuration is bitwise identical.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError


def glorot_uniform(rng: np.random.Generator, d_in: int, d_out: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)


class Module:
    """Minimal container: parameters and sub-modules are discovered by attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad and value.op == "leaf":
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True, dtype=None):
        dtype = dtype or ad.get_default_dtype()
        self.d_in, self.d_out = d_in, d_out
        self.weight = Tensor(glorot_uniform(rng, d_in, d_out, dtype), requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True, dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    if x.ndim == 1:
        out = ad.reshape(ad.matmul(ad.reshape(x, (1, -1)), weight), (weight.shape[1],))
    else:
        out = ad.matmul(x, weight)
    if bias is not None:
        out = ad.broadcast_add(out, bias)
    return out


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5, dtype=None):
        dtype = dtype or ad.get_default_dtype()
        self.eps = eps
        self.gamma = Tensor(np.ones(width), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(width), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        centered = x - ad.mean(x, axis=-1, keepdims=True)
        var = ad.mean(centered * centered, axis=-1, keepdims=True)
        return centered / ad.sqrt(var + self.eps) * self.gamma + self.beta


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None):
    """softmax(q kᵀ / √d) v with masked keys excluded.  Returns (output, weights).

    ``key_mask`` has shape ``k.shape[:-1]`` (one flag per key row) and is
    broadcast over the query axis.
    """
    d = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d))
    mask = None
    if key_mask is not None:
        mask = np.expand_dims(np.asarray(key_mask, dtype=bool), -2)
    weights = ad.softmax(scores, mask=mask)
    return ad.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention without positional encodings.

    Head ``h`` owns columns ``h*head_dim:(h+1)*head_dim`` of each projection.
    """

    def __init__(self, rng: np.random.Generator, width: int, heads: int, dtype=None):
        if width % heads:
            raise ContractError(f"hidden size {width} is not divisible by {heads} heads")
        self.width, self.heads, self.head_dim = width, heads, width // heads
        self.q = Linear(rng, width, width, dtype=dtype)
        self.k = Linear(rng, width, width, dtype=dtype)
        self.v = Linear(rng, width, width, dtype=dtype)
        self.out = Linear(rng, width, width, dtype=dtype)
        self.last_weights: Tensor | None = None

    def _split(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        return ad.swapaxes(ad.reshape(x, lead + (self.heads, self.head_dim)), -2, -3)

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        for t in (q_in, k_in, v_in):
            if t.shape[-1] != self.width:
                raise DimensionError(f"attention input width {t.shape[-1]} != hidden size {self.width}")
        q, k, v = self._split(self.q(q_in)), self._split(self.k(k_in)), self._split(self.v(v_in))
        if key_mask is not None:
            key_mask = np.expand_dims(np.asarray(key_mask, dtype=bool), -2)  # broadcast over heads
        ctx, weights = scaled_dot_attention(q, k, v, key_mask)
        self.last_weights = weights
        ctx = ad.swapaxes(ctx, -2, -3)
        ctx = ad.reshape(ctx, ctx.shape[:-2] + (self.width,))
        return self.out(ctx)


class EncoderBlock(Module):
    """Post-norm transformer block: LN(x + MHA(x)), then LN(x' + FFN(x'))."""

    def __init__(self, rng: np.random.Generator, width: int, heads: int, ffn_mult: int = 4,
                 dropout: float = 0.1, dtype=None):
        self.dropout = dropout
        self.attn = MultiHeadAttention(rng, width, heads, dtype=dtype)
        self.norm1 = LayerNorm(width, dtype=dtype)
        self.ff1 = Linear(rng, width, ffn_mult * width, dtype=dtype)
        self.ff2 = Linear(rng, ffn_mult * width, width, dtype=dtype)
        self.norm2 = LayerNorm(width, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        x = self.norm1(x + self.attn(x, x, x, mask))
        hidden = ad.dropout(ad.relu(self.ff1(x)), self.dropout, rng, train)
        return self.norm2(x + self.ff2(hidden))


class EncoderStack(Module):
    def __init__(self, rng: np.random.Generator, depth: int, width: int, heads: int, ffn_mult: int = 4,
                 dropout: float = 0.1, dtype=None):
        self.blocks = [EncoderBlock(rng, width, heads, ffn_mult, dropout, dtype) for _ in range(depth)]

    def __call__(self, x: Tensor, mask=None, train: bool = False, rng=None) -> Tensor:
        for block in self.blocks:
            x = block(x, mask, train, rng)
        return x


def gcn_layer(h: Tensor, a_hat: Tensor | np.ndarray, weight: Tensor) -> Tensor:
    """relu(Â · H · W) for a symmetric normalized adjacency Â."""
    a = a_hat.data if isinstance(a_hat, Tensor) else np.asarray(a_hat)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or not np.allclose(a, a.T):
        raise ContractError("gcn_layer: normalized adjacency must be square and symmetric")
    if not np.all(np.isfinite(a)):
        raise ContractError("gcn_layer: adjacency has non-finite entries")
    if a.shape[1] != h.shape[0]:
        raise DimensionError(f"gcn_layer: adjacency {a.shape} vs node matrix {h.shape}")
    a_t = a_hat if isinstance(a_hat, Tensor) else Tensor(a, dtype=h.dtype)
    return ad.relu(ad.matmul(ad.matmul(a_t, h), weight))


class Adam:
    """Bias-corrected Adam over a fixed, named set of parameters.

    The learning rate is ``lr * decay ** k`` where ``k`` counts epochs
    (``decay_mode="epoch"``) or optimizer steps (``decay_mode="iteration"``).
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, decay: float = 0.9, decay_mode: str = "epoch"):
        if decay_mode not in ("epoch", "iteration"):
            raise ContractError(f"unknown lr decay mode {decay_mode!r}")
        self.params = params
        self.base_lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decay, self.decay_mode = decay, decay_mode
        self.t = 0
        self.epoch = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    @property
    def lr(self) -> float:
        k = self.epoch if self.decay_mode == "epoch" else self.t
        return self.base_lr * self.decay ** k

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """One update.  ``grads`` defaults to each parameter's ``.grad``."""
        if grads is None:
            grads = {name: p.grad for name, p in self.params.items()}
        missing = [name for name in self.params if grads.get(name) is None]
        if missing:
            raise ContractError(f"adam_step: missing gradient for {missing[:5]}")
        lr = self.lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = np.asarray(grads[name], dtype=p.dtype)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.dtype)

    def state_dict(self) -> dict:
        return {"t": self.t, "epoch": self.epoch, "base_lr": self.base_lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps, "decay": self.decay, "decay_mode": self.decay_mode,
                "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.epoch = int(state["epoch"])
        for name, p in self.params.items():
            self.m[name] = np.asarray(state["m"][name], dtype=p.dtype).reshape(p.shape).copy()
            self.v[name] = np.asarray(state["v"][name], dtype=p.dtype).reshape(p.shape).copy()


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: Adam) -> None:
    if set(params) != set(state.params):
        raise ContractError("adam_step: parameter set differs from optimizer state")
    state.step(grads)
