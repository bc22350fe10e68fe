"""Merged-attention fusion and the two-stream vision + WiFi model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .csi_encoder import WiFormer, WiFormerConfig
from .layers import ConfigError, EncoderBlock, LayerNorm, Module, MultiHeadAttention, embedding_init
from .tensor import Tensor
from .video_encoder import VideoEncoder, VideoEncoderConfig

MODES = ("vision", "wifi", "full")


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    d: int = 768
    layers: int = 2
    heads: int = 8
    dropout: float = 0.1

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")


class MergedAttentionFusion(Module):
    """Fuse one vision and one WiFi descriptor.

    The sequence [summary, v + slot_v, w + slot_w] goes through one merged
    attention layer (every token attends to the concatenation of both
    modalities) and then ``layers`` encoder blocks; the summary state,
    L2-normalised, is the fused descriptor.
    """

    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.summary = T.parameter(embedding_init(rng, (1, 1, cfg.d)))
        self.slots = T.parameter(embedding_init(rng, (2, cfg.d)))
        self.cross_norm = LayerNorm(cfg.d)
        self.cross = MultiHeadAttention(cfg.d, cfg.heads, rng, cfg.dropout)
        self.blocks = [EncoderBlock(cfg.d, cfg.heads, rng, cfg.dropout) for _ in range(cfg.layers)]
        self.norm = LayerNorm(cfg.d)

    def __call__(self, v, w) -> Tensor:
        v, w = T.as_tensor(v), T.as_tensor(w)
        single = v.ndim == 1
        if single:
            v, w = v.reshape(1, -1), w.reshape(1, -1)
        if v.shape != w.shape or v.shape[-1] != self.cfg.d:
            raise ConfigError(f"fusion inputs {v.shape} and {w.shape} must both have width {self.cfg.d}")
        b, d = v.shape
        pair = T.stack([v, w], axis=1) + self.slots
        x = T.concat([T.broadcast_to(self.summary, (b, 1, d)), pair], axis=1)
        x = x + self._drop(self.cross(self.cross_norm(x)), self.cfg.dropout)
        for block in self.blocks:
            x = block(x)
        out = T.l2_normalize(self.norm(x)[:, 0, :], axis=-1)
        return out[0] if single else out


def fuse(v, w, fusion: MergedAttentionFusion) -> Tensor:
    return fusion(v, w)


@dataclass(frozen=True)
class ModelConfig:
    wifi: WiFormerConfig = field(default_factory=WiFormerConfig)
    video: VideoEncoderConfig = field(default_factory=VideoEncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    seed: int = 0

    def __post_init__(self):
        if not (self.wifi.d == self.video.d == self.fusion.d):
            raise ConfigError("wifi, video and fusion widths must agree")

    @property
    def d(self) -> int:
        return self.fusion.d

    @classmethod
    def tiny(cls, d: int = 32, heads: int = 4, seed: int = 0, dropout: float = 0.0, **shape) -> ModelConfig:
        """Reduced-width model for tests and desk-scale experiments.

        ``shape`` may override CSI/video input extents (``time_frames``,
        ``antennas``, ``subcarriers``, ``time_patch``, ``frames``,
        ``patches``, ``patch_dim``).
        """
        wifi_keys = {"time_frames", "antennas", "subcarriers", "time_patch"}
        wifi = WiFormerConfig(d=d, layers=1, heads=heads, dropout=dropout,
                              **{k: v for k, v in shape.items() if k in wifi_keys})
        video = VideoEncoderConfig(d=d, spatial_layers=1, temporal_layers=1, heads=heads, dropout=dropout,
                                   **{k: v for k, v in shape.items() if k not in wifi_keys})
        return cls(wifi, video, FusionConfig(d=d, layers=1, heads=heads, dropout=dropout), seed)


class ViFiReID(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.video = VideoEncoder(cfg.video, rng)
        self.wifi = WiFormer(cfg.wifi, rng)
        self.fusion = MergedAttentionFusion(cfg.fusion, rng)

    def encode(self, csi=None, clips=None, modes=MODES) -> dict[str, Tensor]:
        """Descriptors for each requested mode, sharing the single-mode
        encodings between them."""
        out: dict[str, Tensor] = {}
        for mode in modes:
            if mode not in MODES:
                raise InputError(f"unknown mode {mode!r}")
            if mode in ("vision", "full") and clips is None:
                raise InputError(f"mode {mode!r} needs video input")
            if mode in ("wifi", "full") and csi is None:
                raise InputError(f"mode {mode!r} needs CSI input")
        if "vision" in modes or "full" in modes:
            out["vision"] = self.video(clips)
        if "wifi" in modes or "full" in modes:
            out["wifi"] = self.wifi(csi)
        if "full" in modes:
            out["full"] = self.fusion(out["vision"], out["wifi"])
        return {m: out[m] for m in modes}

    def descriptor(self, csi=None, clips=None, mode: str = "full") -> Tensor:
        return self.encode(csi, clips, (mode,))[mode]
