"""Embedding store, cosine ranking, ReID metrics and plot data."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

# query modality, gallery modality
DIRECTIONS = {
    "v2v": ("vision", "vision"),
    "w2w": ("wifi", "wifi"),
    "w2v": ("wifi", "vision"),
    "v2w": ("vision", "wifi"),
    "f2f": ("full", "full"),
}


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingRecord:
    sample_id: str
    person_id: int
    modality: str
    vector: np.ndarray

    def __post_init__(self):
        n = float(np.linalg.norm(self.vector))
        if abs(n - 1.0) > 1e-9:
            raise RetrievalError(f"embedding {self.sample_id}/{self.modality} has norm {n}, expected 1")


# -- store file -----------------------------------------------------------------
def save_embeddings(path, records: Sequence[EmbeddingRecord]) -> None:
    dim = records[0].vector.size if records else 0
    lines = [f"{len(records)}\t{dim}"]
    for r in records:
        vec = ",".join(repr(float(x)) for x in r.vector)
        lines.append(f"{r.sample_id}\t{r.person_id}\t{r.modality}\t{vec}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_embeddings(path) -> list[EmbeddingRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise RetrievalError(f"{path}: empty embedding store")
    count, dim = (int(x) for x in lines[0].split("\t"))
    out = []
    for line in lines[1:]:
        if not line:
            continue
        sid, pid, modality, vec = line.split("\t")
        v = np.array([float(x) for x in vec.split(",")])
        if v.size != dim:
            raise RetrievalError(f"{path}: record {sid} has dim {v.size}, header says {dim}")
        out.append(EmbeddingRecord(sid, int(pid), modality, v))
    if len(out) != count:
        raise RetrievalError(f"{path}: header count {count} but {len(out)} records")
    return out


# -- ranking ------------------------------------------------------------------------
def rank(query: EmbeddingRecord, gallery: Sequence[EmbeddingRecord]) -> list[str]:
    """Gallery sample_ids by descending cosine similarity, ties by ascending id."""
    if not gallery:
        raise RetrievalError("empty gallery")
    sims = ranked_scores(query.vector, np.stack([g.vector for g in gallery]), [g.sample_id for g in gallery])
    return [gallery[i].sample_id for i in sims[0]]


def ranked_scores(q: np.ndarray, G: np.ndarray, ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Order and cosine scores of gallery rows ``G`` for query ``q``."""
    qn = q / np.linalg.norm(q)
    Gn = G / np.linalg.norm(G, axis=1, keepdims=True)
    s = Gn @ qn
    # lexsort: last key is primary
    order = np.lexsort((np.asarray(ids), -s))
    return order, s[order]


def average_precision(relevance: Sequence[bool]) -> float:
    rel = np.asarray(relevance, dtype=bool)
    R = int(rel.sum())
    if R == 0:
        raise RetrievalError("average precision needs at least one relevant item")
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float((hits[rel] / ranks[rel]).sum() / R)


def inverse_negative_penalty(relevance: Sequence[bool]) -> float:
    """Number of relevant items over the rank of the last (hardest) one."""
    rel = np.asarray(relevance, dtype=bool)
    R = int(rel.sum())
    if R == 0:
        raise RetrievalError("INP needs at least one relevant item")
    hardest = int(np.flatnonzero(rel)[-1]) + 1
    return R / hardest


def cmc(relevances: Iterable[Sequence[bool]], k: int) -> float:
    """Fraction of queries with a relevant item in the top ``k``."""
    if k < 1:
        raise RetrievalError("CMC needs k >= 1")
    rels = list(relevances)
    if not rels:
        return 0.0
    return float(np.mean([bool(np.any(np.asarray(r, dtype=bool)[:k])) for r in rels]))


@dataclass
class RetrievalRun:
    direction: str
    query_ids: list[str]
    rankings: list[list[str]]
    scores: list[np.ndarray]
    relevances: list[np.ndarray]
    skipped: int = 0
    metrics: dict[str, float] = field(default_factory=dict)


METRIC_KEYS = ("mAP", "mINP", "rank1", "rank5", "rank10")


def summarize(relevances: Sequence[np.ndarray]) -> dict[str, float]:
    if not relevances:
        return {k: 0.0 for k in METRIC_KEYS}
    return {
        "mAP": float(np.mean([average_precision(r) for r in relevances])),
        "mINP": float(np.mean([inverse_negative_penalty(r) for r in relevances])),
        "rank1": cmc(relevances, 1),
        "rank5": cmc(relevances, 5),
        "rank10": cmc(relevances, 10),
    }


def run_retrieval(records: Sequence[EmbeddingRecord], direction: str) -> RetrievalRun:
    """Every record of the query modality queries every record of the
    gallery modality. Same-modality runs drop the query's own sample from
    the gallery; cross-modal runs keep the paired sample. Queries without a
    relevant gallery item are skipped and counted."""
    if direction not in DIRECTIONS:
        raise RetrievalError(f"unknown direction {direction!r}; expected one of {sorted(DIRECTIONS)}")
    qmod, gmod = DIRECTIONS[direction]
    queries = sorted((r for r in records if r.modality == qmod), key=lambda r: r.sample_id)
    gallery = sorted((r for r in records if r.modality == gmod), key=lambda r: r.sample_id)
    if not queries or not gallery:
        raise RetrievalError(f"direction {direction} needs {qmod} queries and {gmod} gallery records")
    G = np.stack([g.vector for g in gallery])
    gids = np.array([g.sample_id for g in gallery])
    gpids = np.array([g.person_id for g in gallery])
    run = RetrievalRun(direction, [], [], [], [])
    for q in queries:
        keep = gids != q.sample_id if qmod == gmod else np.ones(len(gallery), dtype=bool)
        if not keep.any():
            raise RetrievalError(f"empty gallery for query {q.sample_id}")
        order, scores = ranked_scores(q.vector, G[keep], gids[keep])
        rel = gpids[keep][order] == q.person_id
        if not rel.any():
            run.skipped += 1
            continue
        run.query_ids.append(q.sample_id)
        run.rankings.append(gids[keep][order].tolist())
        run.scores.append(scores)
        run.relevances.append(rel)
    if run.skipped:
        log.warning("%s: %d queries without a relevant gallery item were skipped", direction, run.skipped)
    run.metrics = summarize(run.relevances)
    return run


def format_report(run: RetrievalRun) -> str:
    m = run.metrics
    head = f"{'direction':<10}" + "".join(f"{k:>9}" for k in METRIC_KEYS)
    row = f"{run.direction:<10}" + "".join(f"{100 * m[k]:>9.2f}" for k in METRIC_KEYS)
    kv = [f"{k}={m[k]:.6f}" for k in METRIC_KEYS]
    kv += [f"direction={run.direction}", f"queries={len(run.query_ids)}", f"skipped={run.skipped}"]
    return "\n".join([head, row, *kv])


# -- plot data ------------------------------------------------------------------------
def project_2d(records: Sequence[EmbeddingRecord]) -> list[tuple[str, float, float]]:
    """First two principal-component coordinates, each axis signed so its
    largest-magnitude loading is positive."""
    if len(records) < 3:
        raise RetrievalError("projection needs at least 3 embeddings")
    X = np.stack([r.vector for r in records])
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        log.warning("degenerate covariance: projection axes are zero")
        return [(r.sample_id, 0.0, 0.0) for r in records]
    axes = vt[:2].copy()
    if axes.shape[0] < 2:
        axes = np.vstack([axes, np.zeros_like(axes[0])])
    for a in axes:
        j = np.argmax(np.abs(a))
        if a[j] < 0:
            a *= -1
    coords = Xc @ axes.T
    return [(r.sample_id, float(x), float(y)) for r, (x, y) in zip(records, coords)]


def explained_variance(records: Sequence[EmbeddingRecord]) -> np.ndarray:
    X = np.stack([r.vector for r in records])
    s = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    return s ** 2 / np.sum(s ** 2)


def roc_points(scores: Sequence[float], labels: Sequence[bool]) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) for every distinct score threshold, descending,
    starting from (0, 0, +inf)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise RetrievalError("ROC needs both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp, fp = np.cumsum(y), np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    pts = [(0.0, 0.0, float("inf"))]
    pts += [(fp[i] / N, tp[i] / P, float(s[i])) for i in last]
    return pts


def auc(points: Sequence[tuple[float, float, float]]) -> float:
    f = np.array([p[0] for p in points])
    t = np.array([p[1] for p in points])
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2))


def pair_scores(records: Sequence[EmbeddingRecord], direction: str) -> tuple[np.ndarray, np.ndarray]:
    """All query-gallery cosine scores for ``direction`` with same-identity labels."""
    run = run_retrieval(records, direction)
    scores = np.concatenate(run.scores) if run.scores else np.zeros(0)
    labels = np.concatenate(run.relevances) if run.relevances else np.zeros(0, dtype=bool)
    return scores, labels
