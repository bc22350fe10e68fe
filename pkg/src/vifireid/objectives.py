"""Training objectives: large-margin cosine loss, SoftTriple, supervised
cross-modal contrastive loss, and the hard-negative distance loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import ConfigError, Module
from .tensor import ContractError, Tensor


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LmclConfig:
    s: float = 30.0
    m: float = 0.35

    def __post_init__(self):
        if self.s <= 0 or not 0 <= self.m < 1:
            raise ConfigError(f"LMCL needs s > 0 and 0 <= m < 1, got s={self.s}, m={self.m}")


@dataclass(frozen=True)
class SoftTripleConfig:
    K: int = 2
    sigma: float = 10.0
    delta: float = 0.01
    lam: float = 20.0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"SoftTriple needs K >= 1 centers per class, got {self.K}")


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.07
    margin: float = 0.5

    def __post_init__(self):
        if self.tau <= 0 or self.margin <= 0:
            raise ConfigError(f"need tau > 0 and margin > 0, got tau={self.tau}, margin={self.margin}")


@dataclass(frozen=True)
class LossWeights:
    lmcl: float = 1.0
    soft: float = 1.0
    sup: float = 1.0
    dis: float = 1.0

    def __post_init__(self):
        w = (self.lmcl, self.soft, self.sup, self.dis)
        if any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise ConfigError(f"loss weights must be nonnegative with at least one positive, got {w}")


def _labels(labels, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(labels, dtype=np.intp).reshape(-1)
    if n_classes is not None and y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    return y


# -- LMCL -------------------------------------------------------------------------
def lmcl_from_cosines(cos, labels, cfg: LmclConfig = LmclConfig()) -> Tensor:
    """Mean over rows of -log softmax(s * (cos - m * onehot))[y]."""
    cos = T.as_tensor(cos)
    y = _labels(labels, cos.shape[1])
    onehot = np.zeros(cos.shape)
    onehot[np.arange(y.size), y] = 1.0
    logits = (cos - cfg.m * onehot) * cfg.s
    picked = (logits * onehot).sum(axis=1)
    return (T.logsumexp(logits, axis=1) - picked).mean()


def lmcl(features, weights, labels, cfg: LmclConfig = LmclConfig()) -> Tensor:
    """Features (N, d) and class weights (C, d) are both L2-normalised, so
    cosines are their dot products."""
    f = T.l2_normalize(features, axis=-1)
    w = T.l2_normalize(weights, axis=-1)
    return lmcl_from_cosines(f @ w.T, labels, cfg)


# -- SoftTriple (printed form) ----------------------------------------------------
def softtriple_from_distances(dist, labels, cfg: SoftTripleConfig = SoftTripleConfig()) -> Tensor:
    """``dist`` is (N, C, K). Per sample

        log( (1 + sum_{j,k} exp(-sigma (d_jk - delta)))
             / (exp(lam) + sum_{j != y, k} exp(-sigma d_jk)) )

    averaged over the batch. Both log-sums are evaluated stably.
    """
    dist = T.as_tensor(dist)
    n, c, k = dist.shape
    y = _labels(labels, c)
    flat = dist.reshape(n, c * k)
    zero = T.Tensor(np.zeros((n, 1)))
    num = T.logsumexp(T.concat([zero, (flat - cfg.delta) * (-cfg.sigma)], axis=1), axis=1)
    own = np.zeros((n, c, k), dtype=bool)
    own[np.arange(n), y] = True
    mask = np.where(own.reshape(n, c * k), -np.inf, 0.0)
    lam = T.Tensor(np.full((n, 1), cfg.lam))
    den = T.logsumexp(T.concat([lam, flat * (-cfg.sigma) + mask], axis=1), axis=1)
    return (num - den).mean()


def squared_distances(x, centers) -> Tensor:
    """(N, d) against (C, K, d) -> (N, C, K) squared Euclidean distances."""
    x, centers = T.as_tensor(x), T.as_tensor(centers)
    c, k, d = centers.shape
    flat = centers.reshape(c * k, d)
    xx = (x * x).sum(axis=1, keepdims=True)
    cc = (flat * flat).sum(axis=1).reshape(1, c * k)
    return (xx + cc - (x @ flat.T) * 2.0).reshape(x.shape[0], c, k)


def softtriple(features, centers, labels, cfg: SoftTripleConfig = SoftTripleConfig()) -> Tensor:
    if centers.shape[1] < 1:
        raise ConfigError("SoftTriple needs K >= 1 centers per class")
    f = T.l2_normalize(features, axis=-1)
    return softtriple_from_distances(squared_distances(f, centers), labels, cfg)


# -- supervised cross-modal contrastive -------------------------------------------
def _positives(labels) -> np.ndarray:
    y = _labels(labels)
    pos = (y[:, None] == y[None, :]).astype(np.float64)
    if np.any(pos.sum(axis=1) == 0):
        raise ContractError("every sample needs at least one positive")
    return pos


def directional_contrastive(sim, labels) -> Tensor:
    """Rows of ``sim`` are anchors; positives are same-label columns
    (including the paired column i)."""
    sim = T.as_tensor(sim)
    pos = _positives(labels)
    logp = T.log_softmax(sim, axis=1)
    per_anchor = (logp * pos).sum(axis=1) / pos.sum(axis=1)
    return -per_anchor.mean()


def w2v_loss(w, v, labels, cfg: ContrastiveConfig = ContrastiveConfig()) -> Tensor:
    return directional_contrastive((T.as_tensor(w) @ T.as_tensor(v).T) * (1.0 / cfg.tau), labels)


def sup_contrastive(w, v, labels, cfg: ContrastiveConfig = ContrastiveConfig()) -> Tensor:
    """WiFi->vision plus vision->WiFi supervised contrastive loss."""
    sim = (T.as_tensor(w) @ T.as_tensor(v).T) * (1.0 / cfg.tau)
    return directional_contrastive(sim, labels) + directional_contrastive(sim.T, labels)


# -- hard-negative distance loss --------------------------------------------------
def pair_distance_loss(dist, y, margin: float) -> Tensor:
    """Per-pair y * D + (1 - y) * max(0, margin - D)."""
    dist = T.as_tensor(dist)
    y = np.asarray(y, dtype=np.float64)
    return dist * y + T.relu(margin - dist) * (1.0 - y)


def euclidean(a, b) -> Tensor:
    diff = T.as_tensor(a) - T.as_tensor(b)
    return T.sqrt((diff * diff).sum(axis=-1))


def mine_hard_negatives(anchors: np.ndarray, others: np.ndarray, labels) -> np.ndarray:
    """For each anchor row, index of the most similar different-label row."""
    y = _labels(labels)
    if np.unique(y).size < 2:
        raise ContractError("hard-negative mining needs at least two identities in the batch")
    sim = anchors @ others.T
    sim = np.where(y[:, None] == y[None, :], -np.inf, sim)
    return np.argmax(sim, axis=1)


def hard_negative_dis(v, w, labels, cfg: ContrastiveConfig = ContrastiveConfig()) -> Tensor:
    """Average of the vision-anchored and WiFi-anchored terms. Each term is
    the mean over 2N pairs: the N matched pairs (y=1) and, per anchor, its
    hardest different-identity partner from the other modality (y=0).
    Selection is made on the forward values; gradients flow only through
    the selected pairs."""
    v, w = T.as_tensor(v), T.as_tensor(w)
    n = v.shape[0]
    pos_d = euclidean(v, w)
    j_for_v = mine_hard_negatives(v.data, w.data, labels)
    j_for_w = mine_hard_negatives(w.data, v.data, labels)
    y = np.concatenate([np.ones(n), np.zeros(n)])
    terms = []
    for neg_d in (euclidean(v, w[j_for_v]), euclidean(w, v[j_for_w])):
        terms.append(pair_distance_loss(T.concat([pos_d, neg_d]), y, cfg.margin).mean())
    return (terms[0] + terms[1]) * 0.5


# -- heads and combination ----------------------------------------------------------
class MetricHeads(Module):
    """Per-mode LMCL class weights (C, d) and SoftTriple centers (C, K, d)."""

    def __init__(self, modes, n_classes: int, d: int, K: int, rng: np.random.Generator):
        self.lmcl_weights = {}
        self.centers = {}
        for mode in modes:
            w = rng.normal(size=(n_classes, d))
            self.lmcl_weights[mode] = T.parameter(w / np.linalg.norm(w, axis=1, keepdims=True))
            c = rng.normal(size=(n_classes, K, d))
            self.centers[mode] = T.parameter(c / np.linalg.norm(c, axis=2, keepdims=True))


@dataclass(frozen=True)
class ObjectiveConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    lmcl: LmclConfig = field(default_factory=LmclConfig)
    softtriple: SoftTripleConfig = field(default_factory=SoftTripleConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)


def total_loss(descriptors: dict[str, Tensor], labels, heads: MetricHeads,
               cfg: ObjectiveConfig = ObjectiveConfig()) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of all objectives; returns (loss, per-term values).

    LMCL and SoftTriple apply to every descriptor mode present; the two
    contrastive terms need both "vision" and "wifi".
    """
    w = cfg.weights
    terms: dict[str, Tensor] = {}
    for mode, desc in descriptors.items():
        if w.lmcl > 0:
            terms[f"lmcl.{mode}"] = lmcl(desc, heads.lmcl_weights[mode], labels, cfg.lmcl) * w.lmcl
        if w.soft > 0:
            terms[f"soft.{mode}"] = softtriple(desc, heads.centers[mode], labels, cfg.softtriple) * w.soft
    if "vision" in descriptors and "wifi" in descriptors:
        v, wi = descriptors["vision"], descriptors["wifi"]
        if w.sup > 0:
            terms["sup"] = sup_contrastive(wi, v, labels, cfg.contrastive) * w.sup
        if w.dis > 0:
            terms["dis"] = hard_negative_dis(v, wi, labels, cfg.contrastive) * w.dis
    if not terms:
        raise ConfigError("no active loss term for the given descriptors and weights")
    total = None
    for t in terms.values():
        total = t if total is None else total + t
    return total, {k: t.item() for k, t in terms.items()}
