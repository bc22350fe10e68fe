"""Factorised video transformer: a spatial encoder per frame, then a
temporal encoder across the per-frame summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import CLIP_FRAMES
from .layers import ConfigError, Module, SummaryEncoder
from .tensor import Tensor


@dataclass(frozen=True)
class VideoEncoderConfig:
    d: int = 768
    spatial_layers: int = 4
    temporal_layers: int = 2
    heads: int = 8
    frames: int = CLIP_FRAMES
    patches: int = 16
    patch_dim: int = 48
    dropout: float = 0.1

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")


class VideoEncoder(Module):
    # spatial and temporal stacks share no parameters
    def __init__(self, cfg: VideoEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.spatial = SummaryEncoder(cfg.d, cfg.patches, cfg.spatial_layers, cfg.heads, rng,
                                      d_in=cfg.patch_dim, dropout=cfg.dropout)
        self.temporal = SummaryEncoder(cfg.d, cfg.frames, cfg.temporal_layers, cfg.heads, rng,
                                       dropout=cfg.dropout)

    def _batch(self, clips) -> tuple[Tensor, bool]:
        clips = T.as_tensor(clips)
        single = clips.ndim == 3
        if single:
            clips = clips.reshape(1, *clips.shape)
        want = (self.cfg.frames, self.cfg.patches, self.cfg.patch_dim)
        if clips.ndim != 4 or clips.shape[1:] != want:
            raise ConfigError(f"clip shape {clips.shape[1:]} does not match {want}")
        return clips, single

    def encode_spatial(self, clips) -> Tensor:
        """Per-frame features H: (B, frames, d), or (frames, d) for one clip.

        Frames are encoded independently, so row i only depends on frame i.
        """
        clips, single = self._batch(clips)
        b, nt, p, pd = clips.shape
        h = self.spatial(clips.reshape(b * nt, p, pd)).reshape(b, nt, self.cfg.d)
        return h[0] if single else h

    def encode_temporal(self, H) -> Tensor:
        H = T.as_tensor(H)
        single = H.ndim == 2
        if single:
            H = H.reshape(1, *H.shape)
        if H.shape[1] != self.cfg.frames:
            raise ConfigError(f"expected {self.cfg.frames} frame features, got {H.shape[1]}")
        out = T.l2_normalize(self.temporal(H), axis=-1)
        return out[0] if single else out

    def __call__(self, clips) -> Tensor:
        clips, single = self._batch(clips)
        out = self.encode_temporal(self.encode_spatial(clips))
        return out[0] if single else out


def encode_video(clip, model: VideoEncoder) -> Tensor:
    return model(clip)
