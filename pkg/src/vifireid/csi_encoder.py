"""WiFormer: CSI amplitude preprocessing and a bidirectional encoder stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import CSI_SHAPE, CsiUnit
from .layers import ConfigError, Module, SummaryEncoder
from .tensor import Tensor


@dataclass(frozen=True)
class WiFormerConfig:
    d: int = 768
    layers: int = 4
    heads: int = 8
    time_patch: int = 10
    dropout: float = 0.1
    time_frames: int = CSI_SHAPE[0]
    antennas: int = CSI_SHAPE[1]
    subcarriers: int = CSI_SHAPE[2]

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.time_patch < 1 or self.time_frames % self.time_patch:
            raise ConfigError(f"time_patch={self.time_patch} does not divide {self.time_frames} frames")

    @property
    def n_tokens(self) -> int:
        return self.time_frames // self.time_patch

    @property
    def token_width(self) -> int:
        return self.antennas * self.subcarriers * self.time_patch


def preprocess(unit: CsiUnit, eps: float = 1e-12) -> np.ndarray:
    """Amplitude, then z-score each (antenna, subcarrier) channel over time.

    Channels with zero variance map to all zeros.
    """
    amp = np.abs(unit.values)
    mu = amp.mean(axis=0, keepdims=True)
    centred = amp - mu
    std = np.sqrt((centred ** 2).mean(axis=0, keepdims=True))
    return np.where(std > eps, centred / np.where(std > eps, std, 1.0), 0.0)


def tokenize(pre: np.ndarray, cfg: WiFormerConfig) -> np.ndarray:
    """Cut (time, A, S) into contiguous non-overlapping time patches,
    one flattened token per patch, in time order."""
    t = pre.shape[0]
    if cfg.time_patch < 1 or t % cfg.time_patch:
        raise ConfigError(f"time_patch={cfg.time_patch} does not divide {t} frames")
    return pre.reshape(t // cfg.time_patch, -1)


def csi_tokens(unit: CsiUnit, cfg: WiFormerConfig) -> np.ndarray:
    return tokenize(preprocess(unit), cfg)


class WiFormer(Module):
    def __init__(self, cfg: WiFormerConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = SummaryEncoder(cfg.d, cfg.n_tokens, cfg.layers, cfg.heads, rng,
                                      d_in=cfg.token_width, dropout=cfg.dropout)

    def __call__(self, tokens) -> Tensor:
        """(B, n_tokens, token_width) or a single (n_tokens, token_width)
        sequence -> unit-norm descriptors (B, d) or (d,)."""
        tokens = T.as_tensor(tokens)
        single = tokens.ndim == 2
        if single:
            tokens = tokens.reshape(1, *tokens.shape)
        if tokens.shape[1:] != (self.cfg.n_tokens, self.cfg.token_width):
            raise ConfigError(f"CSI tokens of shape {tokens.shape[1:]} do not match "
                              f"({self.cfg.n_tokens}, {self.cfg.token_width})")
        out = T.l2_normalize(self.encoder(tokens), axis=-1)
        return out[0] if single else out


def encode_wifi(seq: np.ndarray, model: WiFormer) -> Tensor:
    return model(seq)
