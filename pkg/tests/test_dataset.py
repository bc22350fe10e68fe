import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vifireid import dataset as ds
from vifireid.csi_encoder import preprocess
from vifireid.dataset import (BadMagicError, CsiUnit, DimMismatchError, GeneratorConfig, IngestionError, Manifest,
                              TruncatedPayloadError, VideoClip)

SMALL = GeneratorConfig(csi_shape=(50, 2, 12), frames=5, patches=4, patch_dim=6)


def random_unit(rng, shape=(500, 4, 234)):
    vals = (rng.normal(size=shape) + 1j * rng.normal(size=shape)).astype(np.complex64)
    return CsiUnit(vals.astype(np.complex128))


def test_csi_round_trip_bytes_identical(tmp_path):
    rng = np.random.default_rng(0)
    unit = random_unit(rng)
    a, b = tmp_path / "a.csi", tmp_path / "b.csi"
    ds.write_csi(a, unit)
    back = ds.read_csi(a)
    ds.write_csi(b, back)
    assert np.array_equal(back.values, unit.values)
    assert a.read_bytes() == b.read_bytes()


def test_csi_payload_size_for_full_unit(tmp_path):
    assert ds.csi_payload_bytes((500, 4, 234)) == 500 * 4 * 234 * 8 == 3_744_000
    p = tmp_path / "u.csi"
    ds.write_csi(p, CsiUnit(np.zeros((500, 4, 234), dtype=np.complex128)))
    assert p.stat().st_size == 16 + 3_744_000


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_random_round_trips(tmp_path_factory, t, a, s, seed):
    rng = np.random.default_rng(seed)
    d = tmp_path_factory.mktemp("rt")
    unit = random_unit(rng, (t, a, s))
    ds.write_csi(d / "x.csi", unit)
    assert np.array_equal(ds.read_csi(d / "x.csi").values, unit.values)
    clip = VideoClip(rng.normal(size=(t, a, s)).astype(np.float32).astype(np.float64))
    ds.write_video(d / "x.vid", clip)
    assert np.array_equal(ds.read_video(d / "x.vid").values, clip.values)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.csi"
    ds.write_csi(p, random_unit(np.random.default_rng(1), (2, 2, 2)))
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError, match="bad magic"):
        ds.read_csi(p)


def test_truncated_and_dim_mismatch(tmp_path):
    p = tmp_path / "x.csi"
    ds.write_csi(p, random_unit(np.random.default_rng(1), (2, 2, 2)))
    raw = p.read_bytes()
    p.write_bytes(raw[:-3])
    with pytest.raises(TruncatedPayloadError):
        ds.read_csi(p)
    p.write_bytes(raw + b"\0" * 8)
    with pytest.raises(DimMismatchError):
        ds.read_csi(p)
    p.write_bytes(raw)
    with pytest.raises(DimMismatchError):
        ds.read_csi(p, expect=(500, 4, 234))


def test_error_classes_are_distinct():
    assert len({BadMagicError, TruncatedPayloadError, DimMismatchError}) == 3
    assert all(issubclass(e, ds.DecodeError) for e in (BadMagicError, TruncatedPayloadError, DimMismatchError))


# -- manifest / split ----------------------------------------------------------------
def test_default_scale_manifest():
    m = ds.build_manifest(seed=1, n_ids=20, seqs_per_id=69)
    assert len(m) == 1380
    assert len(m.split("train")) == 1104
    assert len(m.split("test")) == 276
    assert {r.person_id for r in m.split("train")} == {r.person_id for r in m.split("test")} == set(range(20))
    assert {r.scene_id for r in m.records} == {0, 1, 2}


def test_clip_frame_count_matches_dataset_total():
    assert 34_500 / 1380 == ds.CLIP_FRAMES


def test_build_manifest_needs_two_ids():
    with pytest.raises(ValueError):
        ds.build_manifest(1, 1, 5)


def test_every_identity_in_both_splits_small():
    m = ds.build_manifest(seed=3, n_ids=5, seqs_per_id=3)
    for split in ds.SPLITS:
        assert {r.person_id for r in m.split(split)} == set(range(5))


def test_generate_is_deterministic(tmp_path):
    a = ds.generate_dataset(tmp_path / "a", seed=5, n_ids=3, seqs_per_id=3, cfg=SMALL)
    b = ds.generate_dataset(tmp_path / "b", seed=5, n_ids=3, seqs_per_id=3, cfg=SMALL)
    assert (tmp_path / "a/manifest.tsv").read_bytes() == (tmp_path / "b/manifest.tsv").read_bytes()
    for r in a.records:
        assert (tmp_path / "a" / r.csi_path).read_bytes() == (tmp_path / "b" / r.csi_path).read_bytes()
        assert (tmp_path / "a" / r.video_path).read_bytes() == (tmp_path / "b" / r.video_path).read_bytes()
    assert len(b) == 9


def test_manifest_round_trip(tmp_path):
    m = ds.generate_dataset(tmp_path, seed=2, n_ids=2, seqs_per_id=4, cfg=SMALL)
    back = Manifest.load(tmp_path / "manifest.tsv")
    assert back.records == m.records
    line = (tmp_path / "manifest.tsv").read_text().splitlines()[1]
    assert len(line.split("\t")) == 6


def test_load_split_sorted_and_complete(tmp_path):
    m = ds.generate_dataset(tmp_path, seed=2, n_ids=3, seqs_per_id=5, cfg=SMALL)
    got = ds.load_split(Manifest.load(tmp_path / "manifest.tsv"), "train")
    recs = m.split("train")
    assert [pid for _, _, pid in got] == [r.person_id for r in recs]
    assert [r.sample_id for r in recs] == sorted(r.sample_id for r in recs)
    assert got[0][0].shape == SMALL.csi_shape and got[0][1].shape == (5, 4, 6)


def test_load_split_errors(tmp_path):
    m = ds.generate_dataset(tmp_path, seed=2, n_ids=2, seqs_per_id=3, cfg=SMALL)
    with pytest.raises(KeyError):
        ds.load_split(m, "val")
    assert ds.load_split(Manifest([]), "train") == []
    victim = tmp_path / m.split("train")[0].video_path
    victim.unlink()
    with pytest.raises(IngestionError, match=str(victim.name)):
        ds.load_split(m, "train")


def test_duplicate_sample_ids_rejected():
    r = ds.Record("s1", 0, 0, "a", "b", "train")
    with pytest.raises(ValueError):
        Manifest([r, r])


# -- generator semantics ----------------------------------------------------------------
def test_noise_free_samples_match_up_to_phase():
    cfg = GeneratorConfig()
    world = ds.build_world(7, 3, cfg)
    g = world.gaits[1].gait_vector
    a = ds.synth_csi(world, g, 0, 0.0, np.random.default_rng(1), cfg)
    b = ds.synth_csi(world, g, 0, 0.0, np.random.default_rng(2), cfg)
    assert not np.allclose(a.values, b.values)
    assert np.allclose(np.abs(a.values), np.abs(b.values), rtol=1e-6, atol=0)
    va = ds.synth_video(world, g, 0, 0.0, np.random.default_rng(1), cfg)
    vb = ds.synth_video(world, g, 0, 0.0, np.random.default_rng(2), cfg)
    assert np.array_equal(va.values, vb.values)


def test_default_shapes():
    cfg = GeneratorConfig()
    world = ds.build_world(1, 2, cfg)
    g = world.gaits[0].gait_vector
    assert ds.synth_csi(world, g, 0, 1.0, np.random.default_rng(0), cfg).shape == (500, 4, 234)
    assert ds.synth_video(world, g, 0, 1.0, np.random.default_rng(0), cfg).shape == (25, 16, 48)


def test_gait_vectors_separated():
    gaits = ds.sample_gaits(np.random.default_rng(0), 20, 16, 3.0)
    G = np.stack([g.gait_vector for g in gaits])
    d = np.linalg.norm(G[:, None] - G[None], axis=-1)
    assert d[~np.eye(20, dtype=bool)].min() >= 3.0


def _amplitude_features(world, cfg, n_ids, per_id, noise, seed):
    rng = np.random.default_rng(seed)
    X, Y, P = [], [], []
    for pid in range(n_ids):
        g = world.gaits[pid].gait_vector
        for k in range(per_id):
            X.append(preprocess(ds.synth_csi(world, g, k % 3, noise, rng, cfg)).reshape(-1))
            Y.append(g)
            P.append(pid)
    return np.array(X), np.array(Y), np.array(P)


def test_linear_probe_beats_shuffled_probe():
    cfg = SMALL
    world = ds.build_world(11, 8, cfg)
    X, Y, _ = _amplitude_features(world, cfg, 8, 6, 1.0, 0)
    Xt, Yt, _ = _amplitude_features(world, cfg, 8, 2, 1.0, 1)
    mu, sd = X.mean(0), X.std(0) + 1e-9

    def probe(targets):
        A = (X - mu) / sd
        W = np.linalg.solve(A.T @ A + 10.0 * np.eye(A.shape[1]), A.T @ targets)
        return np.mean((((Xt - mu) / sd) @ W - Yt) ** 2)

    shuffled = Y[np.random.default_rng(3).permutation(len(Y))]
    assert probe(Y) < probe(shuffled)


def test_inter_identity_distance_exceeds_intra():
    cfg = SMALL
    world = ds.build_world(4, 6, cfg)
    X, _, P = _amplitude_features(world, cfg, 6, 4, 1.0, 0)
    d = np.linalg.norm(X[:, None] - X[None], axis=-1)
    same = (P[:, None] == P[None]) & ~np.eye(len(P), dtype=bool)
    diff = P[:, None] != P[None]
    assert d[diff].mean() > d[same].mean()
