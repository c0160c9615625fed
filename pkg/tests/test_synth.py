import math
from collections import Counter

import numpy as np
import pytest

from mscl.synth import (
    HEADER,
    MotionClass,
    corpus_checksum,
    default_classes,
    generate_corpus,
    generate_video,
    hflip_clip,
    linear_direction_classes,
    load_split,
    read_manifest,
    read_video,
    sample_clip_pair,
    valid_starts,
    write_video,
)


def centre_pixel_flow(video, t):
    """Flow at the foreground pixel closest to the mask centroid."""
    mask = np.abs(video.flows[t]).sum(-1) > 0
    ys, xs = np.nonzero(mask)
    cy, cx = ys.mean(), xs.mean()
    i = np.argmin((ys - cy) ** 2 + (xs - cx) ** 2)
    return video.flows[t, ys[i], xs[i]]


def test_zero_speed_gives_zero_flow():
    v = generate_video(MotionClass(0, "linear", speed=0.0), F=6, H=16, W=16, seed=3)
    assert not v.flows.any()


def test_linear_unit_velocity_flow_at_centroid():
    v = generate_video(MotionClass(0, "linear", speed=1.0, angle=0.0), F=8, H=32, W=32, seed=1)
    for t in range(7):
        np.testing.assert_array_equal(centre_pixel_flow(v, t), [1.0, 0.0])


def test_circular_flow_magnitude_matches_rho_omega():
    omega = 0.1
    mc = MotionClass(0, "circular", speed=0.5, period=2 * math.pi / omega)
    v = generate_video(mc, F=10, H=64, W=64, seed=2)
    rho = 0.5 / omega
    for t in range(9):
        mag = float(np.hypot(*centre_pixel_flow(v, t)))
        assert mag == pytest.approx(rho * omega, rel=0.01)


def test_flow_is_zero_on_background_and_uniform_on_shape():
    for mc in default_classes(4):
        v = generate_video(mc, F=10, H=32, W=32, seed=mc.id)
        for t in range(10):
            fg = np.abs(v.flows[t]).sum(-1) > 0
            vals = v.flows[t][fg]
            if len(vals):
                assert np.all(vals == vals[0])


def test_frames_in_unit_range_and_dtype():
    v = generate_video(default_classes(1)[0], seed=9)
    assert v.frames.dtype == np.float32 and v.flows.dtype == np.float32
    assert v.frames.min() >= 0.0 and v.frames.max() <= 1.0
    assert v.frames.shape == (24, 32, 32, 3) and v.flows.shape == (24, 32, 32, 2)


def test_generation_is_deterministic():
    mc = default_classes(2)[1]
    a, b = generate_video(mc, seed=42), generate_video(mc, seed=42)
    assert np.array_equal(a.frames, b.frames) and np.array_equal(a.flows, b.flows)
    c = generate_video(mc, seed=43)
    assert not np.array_equal(a.frames, c.frames)


def test_generate_rejects_short_or_oversized():
    with pytest.raises(ValueError, match="at least 2 frames"):
        generate_video(default_classes(1)[0], F=1)
    with pytest.raises(ValueError, match="does not fit"):
        generate_video(default_classes(1)[0], H=8, W=8)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown motion kind"):
        MotionClass(0, "spiral")


def test_classes_recoverable_from_mean_flow():
    """Nearest-centroid on mean flow per clip separates 4 linear directions."""
    classes = linear_direction_classes(4)
    feats, labels = [], []
    for mc in classes:
        for s in range(15):
            v = generate_video(mc, F=12, H=32, W=32, seed=1000 * mc.id + s)
            fg = np.abs(v.flows).sum(-1) > 0
            feats.append(v.flows[fg].mean(axis=0))
            labels.append(mc.id)
    feats, labels = np.array(feats), np.array(labels)
    train = np.arange(len(labels)) % 3 != 0
    cents = np.stack([feats[train & (labels == c)].mean(0) for c in range(4)])
    pred = np.argmin(((feats[~train, None] - cents[None]) ** 2).sum(-1), axis=1)
    assert (pred == labels[~train]).mean() > 0.9


def test_hflip_negates_u_and_mirrors():
    v = generate_video(default_classes(1)[0], F=4, seed=1)
    f, o = hflip_clip(v.frames, v.flows)
    np.testing.assert_array_equal(f, v.frames[:, :, ::-1])
    np.testing.assert_array_equal(o[..., 0], -v.flows[:, :, ::-1, 0])
    np.testing.assert_array_equal(o[..., 1], v.flows[:, :, ::-1, 1])


def test_video_roundtrip_and_header(tmp_path):
    v = generate_video(default_classes(3)[2], F=5, H=16, W=16, seed=4)
    p = tmp_path / "v.bin"
    write_video(p, v)
    raw = p.read_bytes()
    assert HEADER.size == 32 and raw[:8] == b"MSCLVID1"
    assert len(raw) == 32 + 4 * (5 * 16 * 16 * 5)
    w = read_video(p)
    assert np.array_equal(w.frames, v.frames) and np.array_equal(w.flows, v.flows)
    assert (w.label, w.stride) == (2, 1)


def test_read_video_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTAVIDEO" + bytes(40))
    with pytest.raises(ValueError, match="bad magic"):
        read_video(p)
    v = generate_video(default_classes(1)[0], F=3, H=16, W=16)
    write_video(p, v)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(ValueError, match="does not match"):
        read_video(p)


def test_corpus_counts_split_and_determinism(tmp_path):
    a = generate_corpus(tmp_path / "a", per_class=5, train_fraction=0.8, frames=10, size=16, seed=7)
    b = generate_corpus(tmp_path / "b", per_class=5, train_fraction=0.8, frames=10, size=16, seed=7)
    assert corpus_checksum(tmp_path / "a") == corpus_checksum(tmp_path / "b")
    assert Counter(e.split for e in a) == {"train": 16, "test": 4}
    # recount by scanning the files on disk
    on_disk = Counter(read_video(p).label for p in sorted((tmp_path / "a").glob("*/*.bin")))
    assert on_disk == {0: 5, 1: 5, 2: 5, 3: 5}
    assert read_manifest(tmp_path / "a") == a
    paths = {e.path for e in a}
    assert not {p for p in paths if p.startswith("train/")} & {p for p in paths if p.startswith("test/")}


def test_default_corpus_shape():
    # 4 classes x 50 at 0.8 -> 160 / 40 (arithmetic only; generation is exercised above)
    n_train = int(round(50 * 0.8))
    assert (4 * n_train, 4 * (50 - n_train)) == (160, 40)
    assert len(default_classes()) == 4


def test_corpus_refuses_non_empty_dir(tmp_path):
    (tmp_path / "x").mkdir()
    (tmp_path / "x" / "keep").write_text("")
    with pytest.raises(FileExistsError):
        generate_corpus(tmp_path / "x", per_class=1, frames=4, size=16)
    generate_corpus(tmp_path / "x", per_class=1, frames=4, size=16, force=True)
    assert not (tmp_path / "x" / "keep").exists()


def test_load_split_roundtrip_and_checksum(tmp_path):
    root = tmp_path / "c"
    generate_corpus(root, per_class=2, train_fraction=0.5, frames=6, size=16, seed=1)
    train = load_split(root, "train", verify=True)
    assert [v.label for v in train] == [0, 1, 2, 3]
    assert all(v.frames.shape == (6, 16, 16, 3) for v in train)
    victim = root / "train/c1_0000.bin"
    data = bytearray(victim.read_bytes())
    data[-1] ^= 0xFF
    victim.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="checksum"):
        load_split(root, "train", verify=True)


def test_valid_starts():
    assert valid_starts(24, 8, 1) == list(range(16))
    assert valid_starts(24, 8, 2) == list(range(8))
    with pytest.raises(ValueError, match="too short"):
        valid_starts(8, 8, 1)


def test_sample_clip_pair_uniform_reproducible():
    v = generate_video(default_classes(1)[0], seed=3)
    a = sample_clip_pair(v, 8, 1, np.random.default_rng(5))
    b = sample_clip_pair(v, 8, 1, np.random.default_rng(5))
    assert (a.start_q, a.start_k) == (b.start_q, b.start_k)
    np.testing.assert_array_equal(a.frames_q, v.frames[a.start_q : a.start_q + 8])
    np.testing.assert_array_equal(a.flows_k, v.flows[a.start_k : a.start_k + 8])


def test_sample_clip_pair_mds_prefers_moving_half():
    """Static first half, oscillating second half: both clips come from motion."""
    from mscl.motion_sampling import score_clips

    v = generate_video(MotionClass(0, "oscillation", speed=1.5, period=6.0), F=24, H=32, W=32, seed=8)
    v.flows[:12] = 0.0
    scores = score_clips(v.flows, 4, 1)
    best = max(scores, key=lambda s: s.score).start
    assert best >= 9
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = sample_clip_pair(v, 4, 1, rng, selector="mds")
        assert p.start_q >= 8 and p.start_k >= 8


def test_sample_clip_pair_rejects_unknown_selector():
    v = generate_video(default_classes(1)[0], F=12, seed=0)
    with pytest.raises(ValueError, match="selector"):
        sample_clip_pair(v, 4, 1, np.random.default_rng(0), selector="best")
