"""Paired CSI/video sample files, the manifest, and a synthetic generator.

On-disk layouts (little-endian throughout):

* CSI unit: ``b"VIFI"``, three u32 dims (time, antennas, subcarriers), then
  time*antennas*subcarriers (f32 real, f32 imag) pairs, row-major
  time -> antenna -> subcarrier.
* Video clip: ``b"VIFV"``, three u32 dims (frames, patches, patch_dim), then
  the f32 patch values, row-major.

Values are held as float64 / complex128 in memory and stored as f32 on disk,
so in-memory data that is f32-representable round-trips bit-exactly.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

CSI_MAGIC = b"VIFI"
VIDEO_MAGIC = b"VIFV"
CSI_SHAPE = (500, 4, 234)  # 5 s at 100 Hz, 1x4 MIMO, 234 subcarriers
CLIP_FRAMES = 25  # 34,500 frames / 1380 sequences
SCENES = 3
SPLITS = ("train", "test")
_HEADER = struct.Struct("<4s3I")


class DecodeError(ValueError):
    pass


class BadMagicError(DecodeError):
    pass


class TruncatedPayloadError(DecodeError):
    pass


class DimMismatchError(DecodeError):
    pass


class IngestionError(OSError):
    pass


@dataclass
class CsiUnit:
    """One capture window: complex ``values`` of shape (time, antennas, subcarriers)."""

    values: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class VideoClip:
    """One tokenised pedestrian sequence: real (frames, patches, patch_dim)."""

    values: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


# -- binary formats ---------------------------------------------------------------
def _write(path, magic: bytes, dims: Sequence[int], payload: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, *dims))
        fh.write(payload.tobytes())


def _read(path, magic: bytes, item_bytes: int, expect=None) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated header ({len(raw)} bytes)")
    got, *dims = _HEADER.unpack_from(raw)
    if got != magic:
        raise BadMagicError(f"{path}: bad magic {got!r}, expected {magic!r}")
    dims = tuple(dims)
    if expect is not None and dims != tuple(expect):
        raise DimMismatchError(f"{path}: header dims {dims} differ from expected {tuple(expect)}")
    need = int(np.prod(dims)) * item_bytes
    body = raw[_HEADER.size:]
    if len(body) < need:
        raise TruncatedPayloadError(f"{path}: truncated payload, {len(body)} of {need} bytes")
    if len(body) > need:
        raise DimMismatchError(f"{path}: payload of {len(body)} bytes exceeds header dims {dims} ({need} bytes)")
    return dims, body


def csi_payload_bytes(dims: Sequence[int]) -> int:
    return int(np.prod(dims)) * 8


def write_csi(path, unit: CsiUnit) -> None:
    vals = np.asarray(unit.values)
    if vals.ndim != 3:
        raise DimMismatchError(f"CSI unit must be 3-D, got shape {vals.shape}")
    _write(path, CSI_MAGIC, vals.shape, vals.astype("<c8"))


def read_csi(path, expect: Sequence[int] | None = None) -> CsiUnit:
    dims, body = _read(path, CSI_MAGIC, 8, expect)
    vals = np.frombuffer(body, dtype="<c8").reshape(dims).astype(np.complex128)
    return CsiUnit(vals)


def write_video(path, clip: VideoClip) -> None:
    vals = np.asarray(clip.values)
    if vals.ndim != 3:
        raise DimMismatchError(f"video clip must be 3-D, got shape {vals.shape}")
    _write(path, VIDEO_MAGIC, vals.shape, vals.astype("<f4"))


def read_video(path, expect: Sequence[int] | None = None) -> VideoClip:
    dims, body = _read(path, VIDEO_MAGIC, 4, expect)
    return VideoClip(np.frombuffer(body, dtype="<f4").reshape(dims).astype(np.float64))


# -- manifest -----------------------------------------------------------------------
@dataclass(frozen=True)
class Record:
    sample_id: str
    person_id: int
    scene_id: int
    csi_path: str
    video_path: str
    split: str

    def line(self) -> str:
        return "\t".join([self.sample_id, str(self.person_id), str(self.scene_id),
                          self.csi_path, self.video_path, self.split])


@dataclass
class Manifest:
    records: list[Record] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        ids = [r.sample_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest sample_ids are not unique")

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> list[Record]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}; expected one of {SPLITS}")
        return sorted((r for r in self.records if r.split == name), key=lambda r: r.sample_id)

    def identities(self) -> list[int]:
        return sorted({r.person_id for r in self.records})

    def text(self) -> str:
        head = "# sample_id\tperson_id\tscene_id\tcsi_path\tvideo_path\tsplit\n"
        return head + "".join(r.line() + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.text())

    @classmethod
    def load(cls, path) -> Manifest:
        path = Path(path)
        try:
            lines = path.read_text().splitlines()
        except OSError as e:
            raise IngestionError(f"cannot read manifest {path}: {e}") from e
        records = []
        for n, line in enumerate(lines, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"{path}:{n}: expected 6 tab-separated fields, got {len(parts)}")
            sid, pid, scene, csi, vid, split = parts
            if split not in SPLITS:
                raise ValueError(f"{path}:{n}: unknown split {split!r}")
            records.append(Record(sid, int(pid), int(scene), csi, vid, split))
        return cls(records, path.parent)


def load_split(manifest: Manifest, split: str) -> list[tuple[CsiUnit, VideoClip, int]]:
    """Read both modalities for every record of ``split``, sorted by sample_id."""
    out = []
    for rec in manifest.split(split):
        csi_path, vid_path = manifest.root / rec.csi_path, manifest.root / rec.video_path
        for p in (csi_path, vid_path):
            if not p.exists():
                raise IngestionError(f"missing sample file: {p}")
        out.append((read_csi(csi_path), read_video(vid_path), rec.person_id))
    return out


@dataclass
class SampleArrays:
    """Model-ready stacked inputs for one split."""

    sample_ids: list[str]
    person_ids: np.ndarray
    csi: np.ndarray
    clips: np.ndarray

    def __len__(self) -> int:
        return len(self.sample_ids)

    def subset(self, idx) -> SampleArrays:
        idx = np.asarray(idx, dtype=np.intp)
        return SampleArrays([self.sample_ids[i] for i in idx], self.person_ids[idx],
                            self.csi[idx], self.clips[idx])


def load_arrays(manifest: Manifest, split: str,
                csi_transform: Callable[[CsiUnit], np.ndarray]) -> SampleArrays:
    """Like ``load_split`` but streams CSI through ``csi_transform`` so only
    the transformed arrays are retained."""
    recs = manifest.split(split)
    sids, pids, csi, clips = [], [], [], []
    for rec in recs:
        csi_path, vid_path = manifest.root / rec.csi_path, manifest.root / rec.video_path
        for p in (csi_path, vid_path):
            if not p.exists():
                raise IngestionError(f"missing sample file: {p}")
        sids.append(rec.sample_id)
        pids.append(rec.person_id)
        csi.append(csi_transform(read_csi(csi_path)))
        clips.append(read_video(vid_path).values)
    if not recs:
        return SampleArrays([], np.zeros(0, dtype=np.int64), np.zeros((0,)), np.zeros((0,)))
    return SampleArrays(sids, np.array(pids, dtype=np.int64), np.stack(csi), np.stack(clips))


# -- synthetic generator ------------------------------------------------------------
@dataclass(frozen=True)
class GeneratorConfig:
    gait_dim: int = 16
    components: int = 4
    csi_shape: tuple[int, int, int] = CSI_SHAPE
    frames: int = CLIP_FRAMES
    patches: int = 16
    patch_dim: int = 48
    duration_s: float = 5.0
    modulation: float = 0.3
    scene_dim: int = 4
    min_gait_distance: float = 3.0
    test_fraction: float = 0.2
    # video noise std per unit of noise_level
    video_noise: float = 0.5
    # fraction of clips with an occluder hiding a contiguous run of patches
    occlusion_rate: float = 0.0
    occlusion_extent: float = 0.5


@dataclass
class GaitLatent:
    person_id: int
    gait_vector: np.ndarray


@dataclass
class World:
    """Everything shared across samples: identities, scenes and projections."""

    gaits: list[GaitLatent]
    scene_profiles: np.ndarray  # (scenes, antennas, subcarriers) base multipath amplitude
    scene_nuisance: np.ndarray  # (scenes, scene_dim)
    freq_proj: np.ndarray
    phase_proj: np.ndarray
    gain_proj: np.ndarray
    csi_patterns: np.ndarray  # (components, antennas, subcarriers)
    video_proj: np.ndarray  # (patches, patch_dim, feature_dim)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def sample_gaits(rng: np.random.Generator, n_ids: int, dim: int, min_dist: float) -> list[GaitLatent]:
    """Rejection-sample identity gait vectors with pairwise distance >= ``min_dist``."""
    found: list[np.ndarray] = []
    tries = 0
    while len(found) < n_ids:
        cand = rng.normal(size=dim)
        tries += 1
        if tries > 1000 * n_ids:
            raise RuntimeError("gait rejection sampler did not converge; lower min_gait_distance")
        if all(np.linalg.norm(cand - g) >= min_dist for g in found):
            found.append(cand)
    return [GaitLatent(i, g) for i, g in enumerate(found)]


def build_world(seed: int, n_ids: int, cfg: GeneratorConfig = GeneratorConfig()) -> World:
    rng = np.random.default_rng([seed, 0])
    gaits = sample_gaits(rng, n_ids, cfg.gait_dim, cfg.min_gait_distance)
    _, A, S = cfg.csi_shape
    sub = np.arange(S) / S
    profiles = np.empty((SCENES, A, S))
    for sc in range(SCENES):
        for a in range(A):
            # a few multipath taps give a frequency-selective amplitude profile
            taps = rng.normal(size=3) + 1j * rng.normal(size=3)
            delays = rng.uniform(0.5, 6.0, size=3)
            resp = (taps[None, :] * np.exp(-2j * np.pi * np.outer(sub, delays))).sum(axis=1)
            profiles[sc, a] = 1.0 + 0.5 * np.abs(resp)
    waves = rng.uniform(0.5, 3.0, size=(cfg.components, 1, 1))
    offsets = rng.uniform(0, 2 * np.pi, size=(cfg.components, A, 1))
    patterns = np.cos(2 * np.pi * waves * sub[None, None, :] + offsets)
    feat_dim = cfg.gait_dim + 2 * cfg.components + cfg.scene_dim
    return World(
        gaits=gaits,
        scene_profiles=profiles,
        scene_nuisance=rng.normal(size=(SCENES, cfg.scene_dim)),
        freq_proj=rng.normal(size=(cfg.components, cfg.gait_dim)) / np.sqrt(cfg.gait_dim),
        phase_proj=rng.normal(size=(cfg.components, cfg.gait_dim)) / np.sqrt(cfg.gait_dim),
        gain_proj=rng.normal(size=(cfg.components, cfg.gait_dim)) / np.sqrt(cfg.gait_dim),
        csi_patterns=patterns,
        video_proj=rng.normal(size=(cfg.patches, cfg.patch_dim, feat_dim)) / np.sqrt(feat_dim),
    )


def _gait_waves(world: World, gait: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-component gait oscillation (sin, cos) at times ``t``; gain-weighted."""
    freq = 0.6 + 0.8 * _sigmoid(world.freq_proj @ gait)  # Hz, walking cadence range
    phase = np.pi * np.tanh(world.phase_proj @ gait)
    gain = 0.5 + _sigmoid(world.gain_proj @ gait)
    arg = 2 * np.pi * np.outer(t, freq) + phase
    return gain * np.sin(arg), gain * np.cos(arg)


def synth_csi(world: World, gait: np.ndarray, scene: int, noise: float, rng: np.random.Generator,
              cfg: GeneratorConfig = GeneratorConfig()) -> CsiUnit:
    Tn, A, S = cfg.csi_shape
    t = np.arange(Tn) * (cfg.duration_s / Tn)
    sin, _ = _gait_waves(world, gait, t)
    mod = np.tensordot(sin, world.csi_patterns, axes=(1, 0))  # (T, A, S)
    base = world.scene_profiles[scene]
    amp = base * (1.0 + cfg.modulation * mod / cfg.components)
    if noise:
        amp = amp + noise * cfg.modulation * base * rng.normal(size=amp.shape) / np.sqrt(cfg.components)
    amp = np.abs(amp)
    phase = rng.uniform(-np.pi, np.pi, size=amp.shape)
    vals = (amp * np.exp(1j * phase)).astype(np.complex64).astype(np.complex128)
    return CsiUnit(vals)


def synth_video(world: World, gait: np.ndarray, scene: int, noise: float, rng: np.random.Generator,
                cfg: GeneratorConfig = GeneratorConfig()) -> VideoClip:
    t = np.arange(cfg.frames) * (cfg.duration_s / cfg.frames)
    sin, cos = _gait_waves(world, gait, t)
    nuis = np.broadcast_to(world.scene_nuisance[scene], (cfg.frames, cfg.scene_dim))
    feats = np.concatenate([np.broadcast_to(gait, (cfg.frames, gait.size)), sin, cos, nuis], axis=1)
    vals = np.tanh(np.einsum("pqf,tf->tpq", world.video_proj, feats))
    if cfg.occlusion_rate and rng.random() < cfg.occlusion_rate:
        width = max(1, round(cfg.occlusion_extent * cfg.patches))
        start = int(rng.integers(cfg.patches))
        vals[:, (start + np.arange(width)) % cfg.patches] = 0.0
    if noise:
        vals = vals + cfg.video_noise * noise * rng.normal(size=vals.shape)
    return VideoClip(vals.astype(np.float32).astype(np.float64))


def _test_quotas(counts: Sequence[int], fraction: float) -> list[int]:
    """Per-identity test counts: largest-remainder apportionment of
    round(fraction * total), clamped so each identity keeps >= 1 sample in
    both splits whenever it has >= 2."""
    total = round(fraction * sum(counts))
    shares = [fraction * c for c in counts]
    quotas = [int(np.floor(s)) for s in shares]
    order = sorted(range(len(counts)), key=lambda i: (-(shares[i] - quotas[i]), i))
    for i in order[: max(total - sum(quotas), 0)]:
        quotas[i] += 1
    return [min(max(q, 1), c - 1) if c >= 2 else 0 for q, c in zip(quotas, counts)]


def build_manifest(seed: int, n_ids: int, seqs_per_id: int,
                   cfg: GeneratorConfig = GeneratorConfig()) -> Manifest:
    """Sample ids, identities, scenes and the stratified 80/20 split (no I/O)."""
    if n_ids < 2:
        raise ValueError(f"need at least 2 identities, got {n_ids}")
    if seqs_per_id < 1:
        raise ValueError("seqs_per_id must be >= 1")
    rng = np.random.default_rng([seed, 1])
    quotas = _test_quotas([seqs_per_id] * n_ids, cfg.test_fraction)
    records = []
    for pid in range(n_ids):
        test = set(rng.permutation(seqs_per_id)[: quotas[pid]].tolist())
        for k in range(seqs_per_id):
            sid = f"s{pid * seqs_per_id + k:05d}"
            records.append(Record(sid, pid, k % SCENES, f"csi/{sid}.csi", f"video/{sid}.vid",
                                  "test" if k in test else "train"))
    return Manifest(records)


def generate_dataset(out_dir, seed: int = 1, n_ids: int = 20, seqs_per_id: int = 69,
                     noise_level: float = 1.0, cfg: GeneratorConfig = GeneratorConfig()) -> Manifest:
    """Write paired synthetic CSI/video files plus ``manifest.tsv`` under ``out_dir``.

    Both modalities of a sample are independent noisy projections of the
    same identity gait vector; identical arguments give identical bytes.
    """
    out = Path(out_dir)
    manifest = build_manifest(seed, n_ids, seqs_per_id, cfg)
    world = build_world(seed, n_ids, cfg)
    (out / "csi").mkdir(parents=True, exist_ok=True)
    (out / "video").mkdir(parents=True, exist_ok=True)
    for n, rec in enumerate(manifest.records):
        rng = np.random.default_rng([seed, 2, n])
        gait = world.gaits[rec.person_id].gait_vector
        write_csi(out / rec.csi_path, synth_csi(world, gait, rec.scene_id, noise_level, rng, cfg))
        write_video(out / rec.video_path, synth_video(world, gait, rec.scene_id, noise_level, rng, cfg))
    manifest.root = out
    manifest.save(out / "manifest.tsv")
    log.info("generated %d samples for %d identities in %s", len(manifest), n_ids, out)
    return manifest
