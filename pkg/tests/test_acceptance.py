"""Acceptance criteria, one marked group per criterion.

The conftest prints a PASS/FAIL line per criterion after the run. The
ablation criteria (6, 7) train ten small models and dominate the runtime.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vifireid import dataset as ds
from vifireid import objectives as obj
from vifireid import retrieval as rv
from vifireid import tensor as T
from vifireid.csi_encoder import WiFormer, WiFormerConfig, csi_tokens
from vifireid.dataset import CsiUnit, GeneratorConfig, VideoClip
from vifireid.fusion import FusionConfig, MergedAttentionFusion, ModelConfig, ViFiReID
from vifireid.gradcheck import check_gradients
from vifireid.objectives import ContrastiveConfig, LmclConfig, LossWeights, ObjectiveConfig, SoftTripleConfig
from vifireid.retrieval import EmbeddingRecord
from vifireid.tensor import Tensor
from vifireid.trainer import TrainConfig, evaluate, lr_at, train


def criterion(num, title):
    return pytest.mark.criterion(num, title)


# -- 1: gradient suite --------------------------------------------------------------------
C1 = criterion(1, "finite-difference gradient checks of losses, encoders and fusion")
GRAD_SHAPE = dict(time_frames=20, antennas=2, subcarriers=3, time_patch=5, frames=4, patches=3, patch_dim=5)


def _leaves(module):
    return [n for n, _ in module.named_parameters()], [p for _, p in module.named_parameters()]


@C1
def test_c1_losses_standalone():
    rng = np.random.default_rng(100)
    y = [0, 1, 0, 1]
    f = T.parameter(rng.normal(size=(4, 6)))
    W = T.parameter(rng.normal(size=(3, 6)))
    C = T.parameter(rng.normal(size=(3, 2, 6)))
    v, w = T.parameter(rng.normal(size=(4, 6))), T.parameter(rng.normal(size=(4, 6)))
    checks = {
        "lmcl": (lambda: obj.lmcl(f, W, y, LmclConfig(s=5, m=0.35)), [f, W]),
        "softtriple": (lambda: obj.softtriple(f, C, y, SoftTripleConfig(K=2, sigma=2.0, delta=0.05, lam=1.0)), [f, C]),
        "sup": (lambda: obj.sup_contrastive(w, v, y, ContrastiveConfig(tau=0.3)), [w, v]),
        "dis": (lambda: obj.hard_negative_dis(v, w, y, ContrastiveConfig(margin=1.5)), [v, w]),
    }
    for name, (fn, leaves) in checks.items():
        rep = check_gradients(fn, leaves)
        assert rep.max_rel_error < 1e-4, (name, rep.per_leaf)


@C1
def test_c1_modules_standalone_and_end_to_end():
    start = time.perf_counter()
    keys = ("time_frames", "antennas", "subcarriers", "time_patch")
    wifi = WiFormer(WiFormerConfig(d=32, layers=1, heads=4, dropout=0.0, **{k: GRAD_SHAPE[k] for k in keys}),
                    np.random.default_rng(1))
    model = ViFiReID(ModelConfig.tiny(d=32, heads=4, seed=2, **GRAD_SHAPE))
    rng = np.random.default_rng(3)
    csi = rng.normal(size=(3, wifi.cfg.n_tokens, wifi.cfg.token_width))
    clips = rng.normal(size=(3, 4, 3, 5))
    proj = T.Tensor(rng.normal(size=(3, 32)))

    names, leaves = _leaves(wifi)
    assert check_gradients(lambda: (wifi(csi) * proj).sum(), leaves, max_per_leaf=3, names=names).max_rel_error < 1e-4
    names, leaves = _leaves(model.video)
    assert check_gradients(lambda: (model.video(clips) * proj).sum(), leaves, max_per_leaf=3,
                           names=names).max_rel_error < 1e-4

    fusion = MergedAttentionFusion(FusionConfig(d=32, layers=1, heads=4, dropout=0.0), np.random.default_rng(4))
    a, b = T.parameter(rng.normal(size=(3, 32))), T.parameter(rng.normal(size=(3, 32)))
    rep = check_gradients(lambda: (fusion(a, b) * proj).sum(), [a, b] + fusion.parameters(), max_per_leaf=3)
    assert rep.max_rel_error < 1e-4

    labels = [0, 1, 0]

    def e2e():
        d = model.encode(csi, clips)
        return obj.sup_contrastive(d["wifi"], d["vision"], labels) + (d["full"] * proj).sum()

    names, leaves = _leaves(model)
    assert check_gradients(e2e, leaves, max_per_leaf=3, names=names).max_rel_error < 1e-3
    assert time.perf_counter() - start < 120


# -- 2: loss oracles -------------------------------------------------------------------
C2 = criterion(2, "loss hand cases")


@C2
def test_c2_lmcl_hand_cases():
    assert obj.lmcl_from_cosines(Tensor([[1.0, 0.0]]), [0], LmclConfig(s=1, m=0)).item() == pytest.approx(
        0.313262, abs=1e-6)
    assert obj.lmcl_from_cosines(Tensor([[1.0, -1.0]]), [0], LmclConfig(s=10, m=0)).item() == pytest.approx(
        2.06e-9, abs=1e-6)
    for C in (2, 7):
        got = obj.lmcl_from_cosines(Tensor(np.full((2, C), 0.1)), [0, C - 1], LmclConfig(s=1, m=0)).item()
        assert got == pytest.approx(math.log(C), abs=1e-6)


@C2
def test_c2_w2v_hand_case():
    e = np.eye(2)
    assert obj.w2v_loss(Tensor(e), Tensor(e), [0, 1], ContrastiveConfig(tau=1.0)).item() == pytest.approx(
        0.313262, abs=1e-6)


@C2
def test_c2_hinge_cases():
    assert obj.pair_distance_loss(Tensor([0.0]), [1], 0.5).item() == 0.0
    assert obj.pair_distance_loss(Tensor([0.2]), [0], 0.5).item() == 0.5 - 0.2
    assert obj.pair_distance_loss(Tensor([0.7]), [0], 0.5).item() == 0.0


# -- 3: metric oracle -------------------------------------------------------------------
C3 = criterion(3, "retrieval metrics against a brute-force oracle")


def _brute_metrics(queries, gallery, same_modality):
    aps, inps, ranks = [], [], []
    for q in queries:
        scored = []
        for g in gallery:
            if same_modality and g.sample_id == q.sample_id:
                continue
            s = sum(a * b for a, b in zip(q.vector, g.vector))
            scored.append((-s, g.sample_id, g.person_id == q.person_id))
        scored.sort()
        rel = [hit for _, _, hit in scored]
        if not any(rel):
            continue
        hits, precisions = 0, []
        for i, r in enumerate(rel, 1):
            if r:
                hits += 1
                precisions.append(hits / i)
        aps.append(sum(precisions) / hits)
        last = max(i for i, r in enumerate(rel, 1) if r)
        inps.append(hits / last)
        ranks.append(min(i for i, r in enumerate(rel, 1) if r))
    n = len(aps)
    out = {"mAP": sum(aps) / n, "mINP": sum(inps) / n}
    for k in (1, 5, 10):
        out[f"rank{k}"] = sum(r <= k for r in ranks) / n
    return out


@C3
@pytest.mark.parametrize("seed", range(50))
def test_c3_random_instances(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(4, 51))
    d = int(rng.integers(2, 6))
    pids = rng.integers(0, max(2, n // 4), size=n)
    recs = []
    for m in ("vision", "wifi"):
        X = rng.normal(size=(n, d))
        X[rng.random(n) < 0.15] = X[0]
        recs += [EmbeddingRecord(f"s{i:02d}", int(pids[i]), m, X[i] / np.linalg.norm(X[i])) for i in range(n)]
    for direction, (qm, gm) in (("v2v", ("vision", "vision")), ("w2v", ("wifi", "vision"))):
        queries = [r for r in recs if r.modality == qm]
        gallery = [r for r in recs if r.modality == gm]
        want = _brute_metrics(queries, gallery, qm == gm)
        got = rv.run_retrieval(recs, direction).metrics
        for key, val in want.items():
            assert abs(got[key] - val) <= 1e-12, (direction, key)


@C3
def test_c3_hand_cases():
    assert rv.average_precision([1, 0, 1]) == pytest.approx(0.8333, abs=5e-5)
    assert rv.inverse_negative_penalty([1, 0, 1]) == pytest.approx(0.6667, abs=5e-5)
    assert rv.average_precision([1, 0, 1]) == (1 + 2 / 3) / 2
    assert rv.inverse_negative_penalty([1, 0, 1]) == 2 / 3


# -- 4: learning-rate schedule -------------------------------------------------------------
@criterion(4, "learning-rate schedule table")
@pytest.mark.parametrize("epoch, lr", [(0, 3.5e-6), (10, 1e-4), (40, 1e-5), (90, 1e-6), (5, 5.175e-5)])
def test_c4_lr_table(epoch, lr):
    assert lr_at(epoch) == lr


# -- 5: overfit ---------------------------------------------------------------------------
SMALL_GEN = GeneratorConfig(csi_shape=(50, 2, 12), frames=5, patches=4, patch_dim=6)
SMALL_SHAPE = dict(time_frames=50, antennas=2, subcarriers=12, time_patch=5, frames=5, patches=4, patch_dim=6)


def _small_arrays(root, n_ids, per_id, seed=1):
    manifest = ds.generate_dataset(root, seed=seed, n_ids=n_ids, seqs_per_id=per_id, cfg=SMALL_GEN)
    cfg = ModelConfig.tiny(**SMALL_SHAPE).wifi
    return {s: ds.load_arrays(manifest, s, lambda u: csi_tokens(u, cfg)) for s in ("train", "test")}


@criterion(5, "overfit 8 identities x 8 samples to train v2v rank-1 = 1")
def test_c5_overfit(tmp_path):
    start = time.perf_counter()
    data = _small_arrays(tmp_path, 8, 8)
    model_cfg = ModelConfig.tiny(seed=0, **SMALL_SHAPE)
    cfg = TrainConfig(epochs=60, warmup_epochs=5, lr_start=3.5e-5, lr_peak=1e-3, decay_epochs=(20, 45),
                      eval_every=60, eval_direction="v2v")
    res = train(model_cfg, cfg, data["train"])
    metrics = evaluate(res.state.model, data["train"], "v2v").metrics
    print(f"train v2v {metrics}")
    assert metrics["rank1"] == 1.0
    assert time.perf_counter() - start < 600


# -- 6 and 7: ablation and modality complementarity --------------------------------------------
# Occluders hide part of 40% of the clips while the CSI is unaffected, so
# the two modalities carry partly independent evidence about identity.
WORLD = GeneratorConfig(occlusion_rate=0.4, occlusion_extent=0.5)
VARIANTS = {
    "baseline": LossWeights(1, 1, 0, 0),
    "+vwc": LossWeights(1, 1, 1, 0),
    "+vwc+vwd": LossWeights(1, 1, 1, 1),
}
# mined cross-modal negatives start near distance sqrt(2); a smaller
# margin leaves the hinge inactive for the whole run
HARD_NEGATIVES = ContrastiveConfig(margin=1.4)


LR_PEAK = 1e-3


def _schedule(seed, weights, epochs):
    return TrainConfig(epochs=epochs, warmup_epochs=epochs // 12, lr_start=0.035 * LR_PEAK, lr_peak=LR_PEAK,
                       decay_epochs=(epochs // 3, 3 * epochs // 4), seed=seed, eval_every=epochs,
                       eval_direction="w2v", objective=ObjectiveConfig(weights=weights, contrastive=HARD_NEGATIVES))


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    manifest = ds.generate_dataset(root, seed=1, n_ids=10, seqs_per_id=20, noise_level=2.0, cfg=WORLD)
    wifi = ModelConfig.tiny().wifi
    return {s: ds.load_arrays(manifest, s, lambda u: csi_tokens(u, wifi)) for s in ("train", "test")}


@criterion(6, "w2v mAP: baseline < +VWC <= +VWC+VWD, +VWC gains >= 20 points, all three seeds")
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_c6_ablation_order(world, seed):
    maps = {}
    for name, weights in VARIANTS.items():
        res = train(ModelConfig.tiny(seed=seed), _schedule(seed, weights, 40), world["train"])
        maps[name] = evaluate(res.state.model, world["test"], "w2v").metrics["mAP"]
    print(f"seed {seed} w2v mAP " + ", ".join(f"{k} {v:.4f}" for k, v in maps.items()))
    base, vwc, vwd = maps["baseline"], maps["+vwc"], maps["+vwc+vwd"]
    assert base < vwc <= vwd
    assert vwc - base >= 0.20


@criterion(7, "full-mode mAP >= max(vision-only, wifi-only) - 1 point")
def test_c7_full_tops_single_modalities(world):
    model_cfg = ModelConfig.tiny(seed=0)
    # the two-token fusion block memorises the training set unless dropped
    # out heavily; the encoders stay unregularised
    model_cfg = replace(model_cfg, fusion=replace(model_cfg.fusion, dropout=0.5))
    res = train(model_cfg, _schedule(0, VARIANTS["+vwc+vwd"], 60), world["train"])
    maps = {d: evaluate(res.state.model, world["test"], d).metrics["mAP"] for d in ("v2v", "w2w", "f2f")}
    print(f"test mAP {maps}")
    assert maps["f2f"] >= max(maps["v2v"], maps["w2w"]) - 0.01


# -- 8: file formats -------------------------------------------------------------------
C8 = criterion(8, "CSI and video files round-trip bit-exactly")


@C8
@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_c8_random_round_trips(tmp_path_factory, t, a, s, seed):
    rng = np.random.default_rng(seed)
    d = tmp_path_factory.mktemp("c8")
    vals = (rng.normal(size=(t, a, s)) + 1j * rng.normal(size=(t, a, s))).astype(np.complex64)
    unit = CsiUnit(vals.astype(np.complex128))
    ds.write_csi(d / "u.csi", unit)
    back = ds.read_csi(d / "u.csi")
    ds.write_csi(d / "again.csi", back)
    assert np.array_equal(back.values, unit.values)
    assert (d / "u.csi").read_bytes() == (d / "again.csi").read_bytes()
    clip = VideoClip(rng.normal(size=(t, a, s)).astype(np.float32).astype(np.float64))
    ds.write_video(d / "c.vid", clip)
    back_clip = ds.read_video(d / "c.vid")
    ds.write_video(d / "again.vid", back_clip)
    assert np.array_equal(back_clip.values, clip.values)
    assert (d / "c.vid").read_bytes() == (d / "again.vid").read_bytes()


@C8
def test_c8_csi_payload_arithmetic(tmp_path):
    assert ds.csi_payload_bytes((500, 4, 234)) == 3_744_000
    path = tmp_path / "full.csi"
    ds.write_csi(path, CsiUnit(np.zeros((500, 4, 234), dtype=np.complex128)))
    assert path.stat().st_size - 3_744_000 == 16


# -- 9: determinism -----------------------------------------------------------------
@criterion(9, "identical seed and config give byte-identical checkpoints and logs")
def test_c9_determinism(tmp_path):
    data = _small_arrays(tmp_path / "data", 4, 4)
    model_cfg = ModelConfig.tiny(d=16, heads=2, seed=5, dropout=0.1, **SMALL_SHAPE)
    cfg = TrainConfig(epochs=4, warmup_epochs=1, lr_start=1e-4, lr_peak=1e-3, decay_epochs=(3,), P=2, K=2,
                      eval_every=2, seed=5)
    for name in ("a", "b"):
        train(model_cfg, cfg, data["train"], eval_data=data["test"], out=tmp_path / name,
              log_path=tmp_path / f"{name}.log")
    for suffix in (".idx", ".bin", ".log"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()
    assert len((tmp_path / "a.log").read_text().splitlines()) == 2
