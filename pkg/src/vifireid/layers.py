"""Parameter containers and transformer building blocks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ConfigError(ValueError):
    """Invalid model or training configuration, or inputs that do not fit it."""


class Module:
    """Base class: parameters are ``Tensor`` attributes with ``requires_grad``.

    Submodules may be attributes or lists of modules. ``named_parameters``
    walks attributes in definition order, so names and ordering are stable.
    """

    training: bool = False
    dropout_rng: np.random.Generator | None = None

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_") or key == "dropout_rng":
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{k}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        yield self
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            items = val if isinstance(val, (list, tuple)) else val.values() if isinstance(val, dict) else [val]
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, rng: np.random.Generator | None) -> None:
        """Enable dropout, drawing masks from ``rng``."""
        for m in self.modules():
            m.training = True
            m.dropout_rng = rng

    def eval(self) -> None:
        for m in self.modules():
            m.training = False
            m.dropout_rng = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"state is missing parameters: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=T.DTYPE)
            if arr.shape != p.shape:
                raise T.ShapeError(f"parameter {name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr

    def _drop(self, x: Tensor, p: float) -> Tensor:
        return T.dropout(x, p, self.dropout_rng if self.training else None)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def embedding_init(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = T.parameter(uniform_init(rng, d_in, (d_in, d_out)))
        self.bias = T.parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim > 2:
            lead = x.shape[:-1]
            return (x.reshape(-1, x.shape[-1]) @ self.weight + self.bias).reshape(*lead, -1)
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(d))
        self.beta = T.parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """Unmasked scaled dot-product attention over (batch, tokens, d)."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        if d % heads:
            raise ConfigError(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.p_drop = dropout

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        context = x if context is None else context
        b, n, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(context)), self._split(self.v(context))
        scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d // self.heads))
        attn = self._drop(T.softmax(scores, axis=-1), self.p_drop)
        merged = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out(merged)


class EncoderBlock(Module):
    """Pre-norm transformer encoder layer with a GELU feed-forward of width 4d."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng, dropout)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(d, 4 * d, rng)
        self.ff2 = Linear(4 * d, d, rng)
        self.p_drop = dropout

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self._drop(self.attn(self.ln1(x)), self.p_drop)
        h = self.ff2(T.gelu(self.ff1(self.ln2(x))))
        return x + self._drop(h, self.p_drop)


class SummaryEncoder(Module):
    """Sequence encoder: project tokens, add positions, prepend a learned
    summary token, run encoder blocks and return the final summary state.

    Shared by the CSI, spatial and temporal encoders. ``d_in`` of None
    means the input tokens already have width ``d``.
    """

    def __init__(self, d: int, n_tokens: int, layers: int, heads: int, rng: np.random.Generator,
                 d_in: int | None = None, dropout: float = 0.0):
        self.proj = Linear(d_in, d, rng) if d_in is not None else None
        self.pos = T.parameter(embedding_init(rng, (n_tokens, d)))
        self.summary = T.parameter(embedding_init(rng, (1, 1, d)))
        self.blocks = [EncoderBlock(d, heads, rng, dropout) for _ in range(layers)]
        self.norm = LayerNorm(d)
        self.p_drop = dropout

    def __call__(self, tokens: Tensor) -> Tensor:
        x = self.proj(tokens) if self.proj is not None else tokens
        b, n, d = x.shape
        if n != self.pos.shape[0]:
            raise T.ShapeError(f"expected {self.pos.shape[0]} tokens, got {n}")
        x = x + self.pos
        summary = T.broadcast_to(self.summary, (b, 1, d))
        x = self._drop(T.concat([summary, x], axis=1), self.p_drop)
        for block in self.blocks:
            x = block(x)
        return self.norm(x)[:, 0, :]
