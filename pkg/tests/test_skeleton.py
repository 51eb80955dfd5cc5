import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deeplstm.skeleton import (
    DatasetManifest,
    ManifestEntry,
    PreprocessConfig,
    SkeletonSequence,
    SynthSpec,
    centralize,
    downsample,
    joint_covariance,
    load_sequence,
    preprocess,
    read_manifest,
    save_sequence,
    smooth,
    synth_generate,
    write_manifest,
)


def seq(frames, fps=30.0, center=None):
    return SkeletonSequence(np.asarray(frames, dtype=float), fps, center)


# -- I/O -------------------------------------------------------------------------

def test_load_two_frames(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("fps=30,joints=1\n0,0,0\n1,1,1\n")
    s = load_sequence(path)
    assert s.T == 2 and s.joints == 1 and s.fps == 30.0
    np.testing.assert_array_equal(s.frames, [[0, 0, 0], [1, 1, 1]])


@pytest.mark.parametrize("body,match", [
    ("fps=30,joints=1\n", "no frames"),
    ("0,0,0\n", ":1:"),
    ("fps=30,joints=1\n0,0,0\n1,1\n", ":3:"),
    ("fps=30,joints=1\n0,0,x\n", ":2:"),
    ("", ":1:"),
])
def test_load_errors(tmp_path, body, match):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ValueError, match=match):
        load_sequence(path)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.data(),
       st.floats(0.5, 500, allow_nan=False))
def test_round_trip_bitwise(tmp_path_factory, J, T, data, fps):
    frames = data.draw(arrays(np.float64, (T, 3 * J), elements=finite))
    s = seq(frames, fps)
    path = tmp_path_factory.mktemp("rt") / "s.csv"
    save_sequence(s, path)
    back = load_sequence(path)
    assert back.fps == fps and back.joints == J
    assert back.frames.tobytes() == s.frames.tobytes()


def test_header_and_refusal(tmp_path):
    save_sequence(seq(np.zeros((1, 6)), 120.0), tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "fps=120.0,joints=2"
    empty = SkeletonSequence.__new__(SkeletonSequence)
    empty.frames, empty.fps, empty.center_joint = np.zeros((0, 3)), 30.0, None
    with pytest.raises(ValueError):
        save_sequence(empty, tmp_path / "e.csv")


def test_sequence_invariants():
    with pytest.raises(ValueError):
        seq(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        seq(np.zeros((2, 3)), fps=0)
    with pytest.raises(ValueError):
        seq([[0, np.nan, 0]])


# -- downsample -------------------------------------------------------------------

def ramp(T, J=1):
    return seq(np.repeat(np.arange(T, dtype=float)[:, None], 3 * J, axis=1), fps=120.0)


def test_downsample_120_to_30():
    d = downsample(ramp(13), 30)
    assert d.fps == 30.0
    np.testing.assert_array_equal(d.frames[:, 0], [0, 4, 8, 12])  # frames 1, 5, 9, 13


def test_downsample_identity_and_length():
    s = ramp(10)
    np.testing.assert_array_equal(downsample(s, 120).frames, s.frames)
    d = downsample(seq(s.frames, fps=90.0), 30)
    np.testing.assert_array_equal(d.frames[:, 0], [0, 3, 6, 9])
    with pytest.raises(ValueError):
        downsample(s, 240)


def test_downsample_nearest_factor():
    d = downsample(ramp(10), 50)  # 120/50 = 2.4 -> k = 2
    assert d.fps == 60.0 and d.T == 5


# -- smooth -----------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.floats(-1e6, 1e6), st.integers(1, 12))
def test_smooth_preserves_constants_exactly(v, T):
    s = seq(np.full((T, 3), v))
    np.testing.assert_array_equal(smooth(s).frames, s.frames)


def test_smooth_impulse_center():
    x = np.zeros((5, 3))
    x[2] = 1.0
    out = smooth(seq(x)).frames
    assert out[2, 0] == 17 / 35
    assert abs(out[2, 0] - 0.4857142857) < 1e-10


def test_smooth_ramp_interior():
    x = np.repeat(np.arange(9, dtype=float)[:, None], 3, axis=1)
    out = smooth(seq(x)).frames
    np.testing.assert_allclose(out[2:-2], x[2:-2], rtol=0, atol=1e-12)


def test_smooth_matches_direct_convolution():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(11, 6))
    padded = np.pad(x, ((2, 2), (0, 0)), mode="reflect")
    k = np.array([-3, 12, 17, 12, -3]) / 35
    direct = np.array([[k @ padded[t:t + 5, j] for j in range(6)] for t in range(11)])
    np.testing.assert_allclose(smooth(seq(x)).frames, direct, rtol=0, atol=1e-14)


# -- centralize -------------------------------------------------------------------

def test_centralize_examples():
    np.testing.assert_array_equal(centralize(seq([[1.0, 2.0, 3.0]]), 0).frames, [[0, 0, 0]])
    out = centralize(seq([[0, 0, 0, 2, 2, 2]])).frames
    np.testing.assert_array_equal(out, [[-1, -1, -1, 1, 1, 1]])
    with pytest.raises(IndexError):
        centralize(seq([[0, 0, 0]]), 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([None, 0, 2]))
def test_centralize_translation_invariant_and_idempotent(seed, center):
    rng = np.random.default_rng(seed)
    s = seq(rng.normal(size=(4, 9)))
    offset = np.tile(rng.normal(size=3), 3)
    a = centralize(s, center).frames
    b = centralize(seq(s.frames + offset), center).frames
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    if center is not None:
        np.testing.assert_array_equal(centralize(seq(a), center).frames, a)


def test_preprocess_order():
    rng = np.random.default_rng(1)
    s = SkeletonSequence(rng.normal(size=(40, 6)), 120.0)
    cfg = PreprocessConfig(target_fps=30, center_joint=1)
    expected = centralize(smooth(downsample(s, 30)), 1)
    np.testing.assert_array_equal(preprocess(s, cfg).frames, expected.frames)
    # a 30 fps source is never upsampled
    low = SkeletonSequence(s.frames, 15.0)
    assert preprocess(low, cfg).T == 40


# -- joint covariance ------------------------------------------------------------

def test_covariance_identical_motion_and_static_joint():
    rng = np.random.default_rng(2)
    walk = np.cumsum(rng.normal(size=(20, 3)), axis=0)
    frames = np.hstack([walk, walk + 5.0, np.zeros((20, 3))])
    C = joint_covariance([seq(frames)])
    assert C[0, 1] == pytest.approx(C[0, 0], rel=1e-12)
    assert C[0, 1] == pytest.approx(C[1, 1], rel=1e-12)
    np.testing.assert_array_equal(C[2], 0.0)
    np.testing.assert_array_equal(C[:, 2], 0.0)


def test_covariance_matches_straight_line_oracle():
    rng = np.random.default_rng(3)
    seqs = [seq(rng.normal(size=(T, 9))) for T in (5, 8)]
    speeds = []
    for s in seqs:
        for t in range(s.T - 1):
            row = []
            for j in range(3):
                d = s.frames[t + 1, 3 * j:3 * j + 3] - s.frames[t, 3 * j:3 * j + 3]
                row.append(math.sqrt(sum(v * v for v in d)))
            speeds.append(row)
    n = len(speeds)
    mean = [sum(r[j] for r in speeds) / n for j in range(3)]
    oracle = [[abs(sum((r[a] - mean[a]) * (r[b] - mean[b]) for r in speeds) / (n - 1))
               for b in range(3)] for a in range(3)]
    np.testing.assert_allclose(joint_covariance(seqs), oracle, rtol=1e-12, atol=0)


def test_covariance_skips_single_frames():
    rng = np.random.default_rng(4)
    good = seq(rng.normal(size=(6, 6)))
    with pytest.warns(UserWarning, match="single-frame"):
        C = joint_covariance([good, seq(rng.normal(size=(1, 6)))])
    np.testing.assert_array_equal(C, joint_covariance([good]))


# -- manifest ---------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    m = DatasetManifest([ManifestEntry("a.csv", 0, 0), ManifestEntry("b.csv", 1, 1)], ["walk", "drink"])
    write_manifest(m, tmp_path / "m.jsonl")
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    assert json.loads(lines[1]) == {"path": "b.csv", "label": 1, "class": "drink", "fold": 1}
    back = read_manifest(tmp_path / "m.jsonl")
    assert back.classes == ["walk", "drink"]
    assert [(e.path, e.label, e.fold) for e in back.entries] == [("a.csv", 0, 0), ("b.csv", 1, 1)]


def test_manifest_invariants(tmp_path):
    with pytest.raises(ValueError):
        DatasetManifest([ManifestEntry("a.csv", 0), ManifestEntry("a.csv", 0)], ["x"])
    with pytest.raises(ValueError):
        DatasetManifest([ManifestEntry("a.csv", 2)], ["x", "y"])
    (tmp_path / "m.jsonl").write_text('{"path": "a.csv", "label": 0, "extra": 1}\n')
    with pytest.raises(ValueError, match="unknown"):
        read_manifest(tmp_path / "m.jsonl")
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(ValueError, match="empty"):
        read_manifest(tmp_path / "e.jsonl")


# -- synthetic data ---------------------------------------------------------------

def test_synth_noise_free_is_sinusoid():
    spec = SynthSpec(noise=0.0, samples_per_class=2)
    m, seqs = synth_generate(spec)
    for e, s in zip(m.entries, seqs):
        pos = s.positions()
        active = np.array(spec.active_joints[e.label]) - 1
        rest = pos[0] - (pos[0] - pos[0])  # keep dtype/shape
        moving = pos[:, active, :] - pos[:1, active, :]
        # every active coordinate is a*sin(w t + phi) - a*sin(phi) along one direction
        t = np.arange(s.T)
        omega = 2 * np.pi * spec.frequencies[e.label] / spec.fps
        basis = np.stack([np.sin(omega * t), np.cos(omega * t), np.ones(s.T)], axis=1)
        for j in range(len(active)):
            for a in range(3):
                coef, res, *_ = np.linalg.lstsq(basis, moving[:, j, a], rcond=None)
                assert np.allclose(basis @ coef, moving[:, j, a], atol=1e-12)
        inactive = np.setdiff1d(np.arange(spec.joints), active)
        np.testing.assert_array_equal(pos[:, inactive, :], np.broadcast_to(rest[inactive], (s.T, len(inactive), 3)))


def test_synth_block_structure():
    spec = SynthSpec(samples_per_class=20, noise=0.05)
    m, seqs = synth_generate(spec)
    for c, active in enumerate(spec.active_joints):
        C = joint_covariance([s for s, e in zip(seqs, m.entries) if e.label == c])
        block = np.zeros(C.shape, dtype=bool)
        idx = np.array(active) - 1
        block[np.ix_(idx, idx)] = True
        assert C[~block].max() < 0.1 * C[block].mean()


def test_synth_deterministic_and_folds():
    a = synth_generate(SynthSpec(seed=5))
    b = synth_generate(SynthSpec(seed=5))
    for s, t in zip(a[1], b[1]):
        assert s.frames.tobytes() == t.frames.tobytes()
    assert [e.fold for e in a[0].entries][:6] == [0, 1, 2, 3, 4, 0]
    c = synth_generate(SynthSpec(seed=6))
    assert a[1][0].frames.tobytes() != c[1][0].frames.tobytes()


def test_synth_spec_validation():
    for bad in ({"active_joints": [[0], [5], [9]]}, {"active_joints": [[1], [], [9]]},
                {"samples_per_class": 0}, {"length_range": (1, 3)}, {"frequencies": [1.0]}):
        with pytest.raises(ValueError):
            SynthSpec(**bad)
    with pytest.raises(ValueError, match="unknown"):
        SynthSpec.from_dict({"bogus": 1})
