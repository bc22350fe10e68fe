"""Adam training with the warmup/step learning-rate schedule, PK batch
sampling, evaluation and checkpoints.

Every random draw during training comes from a generator seeded by
``(seed, stream, epoch, batch)``, so a run is a pure function of its seed,
config and data, and resuming from a checkpoint continues the trajectory
bit-exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgio
from .dataset import SampleArrays
from .fusion import MODES, ModelConfig, ViFiReID
from .layers import ConfigError, Module
from .objectives import MetricHeads, ObjectiveConfig, total_loss
from .retrieval import DIRECTIONS, EmbeddingRecord, RetrievalRun, run_retrieval
from .tensor import no_grad

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    warmup_epochs: int = 10
    lr_start: float = 3.5e-6
    lr_peak: float = 1e-4
    decay_epochs: tuple[int, ...] = (40, 90)
    decay_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    P: int = 4
    K: int = 4
    batches_per_epoch: int | None = None
    seed: int = 0
    modes: tuple[str, ...] = MODES
    eval_every: int = 10
    eval_direction: str = "v2v"
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs and warmup_epochs must be nonnegative")
        if not self.lr_start < self.lr_peak:
            raise ConfigError(f"lr_start {self.lr_start} must be below lr_peak {self.lr_peak}")
        for e in self.decay_epochs:
            if not self.warmup_epochs <= e < max(self.epochs, 1):
                raise ConfigError(f"decay epoch {e} outside [{self.warmup_epochs}, {self.epochs})")
        if self.P < 2 or self.K < 1:
            raise ConfigError("batches need P >= 2 identities and K >= 1 samples each")
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ConfigError(f"invalid modes {self.modes}")
        if self.eval_direction not in DIRECTIONS:
            raise ConfigError(f"unknown eval_direction {self.eval_direction!r}")


def lr_at(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.lr_start + (epoch / cfg.warmup_epochs) * (cfg.lr_peak - cfg.lr_start)
    n = sum(1 for e in cfg.decay_epochs if epoch >= e)
    # divide by the reciprocal so 0.1-steps land on correctly rounded decimals
    return cfg.lr_peak / (1.0 / cfg.decay_factor) ** n


class Adam:
    def __init__(self, named_params: Sequence[tuple[str, object]], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sample_batch(person_ids: np.ndarray, P: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of P distinct identities x K samples each (identity-major).

    Identities with fewer than K samples are drawn with replacement.
    """
    pids = np.asarray(person_ids)
    ids = np.unique(pids)
    if ids.size < 2:
        raise ConfigError("PK sampling needs at least 2 identities")
    if P > ids.size:
        raise ConfigError(f"P={P} exceeds the {ids.size} available identities")
    chosen = rng.choice(ids, size=P, replace=False)
    out = []
    for pid in chosen:
        pool = np.flatnonzero(pids == pid)
        out.append(rng.choice(pool, size=K, replace=pool.size < K))
    return np.concatenate(out)


# -- embedding and evaluation --------------------------------------------------------
def embed(model: ViFiReID, data: SampleArrays, modes=MODES, batch_size: int = 16) -> list[EmbeddingRecord]:
    model.eval()
    records = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            sl = slice(start, start + batch_size)
            need_csi = any(m in ("wifi", "full") for m in modes)
            need_vid = any(m in ("vision", "full") for m in modes)
            out = model.encode(data.csi[sl] if need_csi else None, data.clips[sl] if need_vid else None, modes)
            for mode in modes:
                for i, vec in enumerate(out[mode].data):
                    j = start + i
                    records.append(EmbeddingRecord(data.sample_ids[j], int(data.person_ids[j]), mode, vec.copy()))
    return records


def modes_for(direction: str) -> tuple[str, ...]:
    q, g = DIRECTIONS[direction]
    return (q,) if q == g else (q, g)


def evaluate(model: ViFiReID, data: SampleArrays, direction: str) -> RetrievalRun:
    return run_retrieval(embed(model, data, modes_for(direction)), direction)


# -- training -------------------------------------------------------------------------
@dataclass
class TrainState:
    model: ViFiReID
    heads: MetricHeads
    optimizer: Adam
    classes: np.ndarray
    epoch: int = 0

    def modules(self) -> dict[str, Module]:
        return {"model": self.model, "heads": self.heads}


@dataclass
class TrainResult:
    state: TrainState
    losses: list[float]
    log_lines: list[str]
    checkpoint: Path | None = None


def _named(state_modules: dict[str, Module]):
    return [(f"{prefix}.{n}", p) for prefix, m in state_modules.items() for n, p in m.named_parameters()]


def init_state(model_cfg: ModelConfig, train_cfg: TrainConfig, person_ids: np.ndarray) -> TrainState:
    model = ViFiReID(model_cfg)
    classes = np.unique(person_ids)
    rng = np.random.default_rng([train_cfg.seed, 3])
    heads = MetricHeads(train_cfg.modes, classes.size, model_cfg.d, train_cfg.objective.softtriple.K, rng)
    named = _named({"model": model, "heads": heads})
    opt = Adam(named, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    return TrainState(model, heads, opt, classes)


def save_checkpoint(path, state: TrainState, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Path:
    arrays = {n: p.data for n, p in state.optimizer.params}
    arrays.update({f"adam.m.{n}": a for n, a in state.optimizer.m.items()})
    arrays.update({f"adam.v.{n}": a for n, a in state.optimizer.v.items()})
    meta = {
        "epoch": str(state.epoch),
        "adam_t": str(state.optimizer.t),
        "classes": ",".join(str(int(c)) for c in state.classes),
        "config_hash": cfgio.config_hash(model=model_cfg, train=train_cfg),
    }
    meta.update(cfgio.flatten(model_cfg, "model."))
    meta.update(cfgio.flatten(train_cfg, "train."))
    return ckpt.save_arrays(path, arrays, meta)


def read_checkpoint_configs(meta: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    text = "\n".join(f"{k} = {v}" for k, v in meta.items() if k.startswith(("model.", "train.")))
    cfgs = cfgio.load_configs(text, model=ModelConfig, train=TrainConfig)
    return cfgs["model"], cfgs["train"]


def load_checkpoint(path) -> tuple[TrainState, ModelConfig, TrainConfig]:
    arrays, meta = ckpt.load_arrays(path)
    model_cfg, train_cfg = read_checkpoint_configs(meta)
    classes = np.array([int(c) for c in meta["classes"].split(",") if c], dtype=np.int64)
    state = init_state(model_cfg, train_cfg, classes)
    for prefix, module in state.modules().items():
        sub = {k[len(prefix) + 1:]: v for k, v in arrays.items() if k.startswith(prefix + ".")}
        module.load_state_dict(sub)
    for n in state.optimizer.m:
        state.optimizer.m[n] = arrays[f"adam.m.{n}"].copy()
        state.optimizer.v[n] = arrays[f"adam.v.{n}"].copy()
    state.optimizer.t = int(meta["adam_t"])
    state.epoch = int(meta["epoch"])
    return state, model_cfg, train_cfg


def load_model(path) -> ViFiReID:
    return load_checkpoint(path)[0].model


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, data: SampleArrays,
          eval_data: SampleArrays | None = None, out: str | Path | None = None,
          log_path: str | Path | None = None, state: TrainState | None = None) -> TrainResult:
    """Train for ``train_cfg.epochs`` epochs (continuing ``state`` if given).

    Writes a checkpoint to ``out`` and the metrics log (``epoch, loss,
    mAP, rank1`` tab-separated per evaluation) to ``log_path``.
    """
    if state is None:
        state = init_state(model_cfg, train_cfg, data.person_ids)
    unknown = np.setdiff1d(data.person_ids, state.classes)
    if unknown.size:
        raise TrainingError(f"identities {unknown.tolist()} are unknown to the classification heads")
    labels_all = np.searchsorted(state.classes, data.person_ids)
    per_epoch = train_cfg.batches_per_epoch or max(1, len(data) // (train_cfg.P * train_cfg.K))
    named = state.optimizer.params
    losses, lines = [], []
    for epoch in range(state.epoch, train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        batch_losses = []
        for b in range(per_epoch):
            idx = sample_batch(data.person_ids, train_cfg.P, train_cfg.K,
                               np.random.default_rng([train_cfg.seed, 7, epoch, b]))
            state.model.train(np.random.default_rng([train_cfg.seed, 9, epoch, b]))
            descs = state.model.encode(data.csi[idx], data.clips[idx], train_cfg.modes)
            loss, terms = total_loss(descs, labels_all[idx], state.heads, train_cfg.objective)
            if not math.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {terms}")
            for _, p in named:
                p.grad = None
            loss.backward()
            state.optimizer.step(lr)
            batch_losses.append(loss.item())
        state.epoch = epoch + 1
        losses.append(float(np.mean(batch_losses)))
        log.debug("epoch %d lr %.3g loss %.6f", epoch, lr, losses[-1])
        if state.epoch % train_cfg.eval_every == 0 or state.epoch == train_cfg.epochs:
            if eval_data is not None and len(eval_data):
                m = evaluate(state.model, eval_data, train_cfg.eval_direction).metrics
                mAP, r1 = m["mAP"], m["rank1"]
            else:
                mAP = r1 = float("nan")
            lines.append(f"{epoch}\t{losses[-1]!r}\t{mAP!r}\t{r1!r}")
            log.info("epoch %d loss %.4f %s mAP %.4f rank1 %.4f", epoch, losses[-1],
                     train_cfg.eval_direction, mAP, r1)
    state.model.eval()
    if log_path is not None:
        Path(log_path).write_text("".join(line + "\n" for line in lines))
    path = save_checkpoint(out, state, model_cfg, train_cfg) if out is not None else None
    return TrainResult(state, losses, lines, path)
