import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmp.data import (DataFormatError, SkeletonSequence, build_dataset, chunk_bounds, load_dataset,
                      normalized_adjacency, read_sequences, skeleton_edges, standardize, synth_dataset,
                      synth_sequences, temporal_chunking, write_dataset, write_sequences)


def test_constant_trajectory_is_repeated():
    c = np.array([0.3, -1.2, 2.0])
    coords = np.broadcast_to(c, (17, 4, 3)).copy()
    sig = temporal_chunking(coords, 5)
    assert sig.shape == (15, 4)
    for i in range(5):
        np.testing.assert_array_equal(sig[3 * i:3 * i + 3], np.tile(c[:, None], (1, 4)))


def test_two_frames_per_chunk(rng):
    coords = rng.normal(size=(64, 3, 3))
    sig = temporal_chunking(coords, 32)
    for i in range(32):
        assert chunk_bounds(64, 32)[i] == (2 * i, 2 * i + 2)
        np.testing.assert_allclose(sig[3 * i:3 * i + 3], coords[2 * i:2 * i + 2].mean(axis=0).T, atol=1e-15)


def test_single_frame_fills_every_chunk(rng):
    coords = rng.normal(size=(1, 2, 3))
    sig = temporal_chunking(coords, 4)
    for i in range(4):
        np.testing.assert_array_equal(sig[3 * i:3 * i + 3], coords[0].T)


def test_empty_chunks_copy_the_preceding_one(rng):
    coords = rng.normal(size=(3, 2, 3))
    # bounds for T=3, M=5: [0,0),[0,1),[1,1),[1,2),[2,3)
    sig = temporal_chunking(coords, 5).reshape(5, 3, 2)
    np.testing.assert_array_equal(sig[0], coords[0].T)   # leading gap takes the first non-empty
    np.testing.assert_array_equal(sig[2], sig[1])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 200), st.integers(1, 64))
def test_chunks_partition_frames(T, M):
    bounds = chunk_bounds(T, M)
    covered = [t for lo, hi in bounds for t in range(lo, hi)]
    assert covered == list(range(T))
    assert temporal_chunking(np.zeros((T, 2, 3)), M).shape == (3 * M, 2)


def test_zero_joints_rejected():
    with pytest.raises(DataFormatError):
        temporal_chunking(np.zeros((4, 0, 3)), 2)


def test_adjacency_is_row_stochastic():
    a = normalized_adjacency(14, skeleton_edges(14))
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(a > 0, (a > 0).T)


def test_skeleton_is_a_tree_with_branches():
    e = skeleton_edges(14)
    assert len(e) == 13
    assert sum(1 for i, _ in e if i == 0) > 1


def test_standardize_per_axis(rng):
    z = standardize(rng.normal(3.0, 2.0, size=(50, 6, 3)))
    np.testing.assert_allclose(z.mean(axis=(0, 1)), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=(0, 1)), 1, atol=1e-12)


def test_synth_is_deterministic():
    a, b = synth_dataset(seed=5, per_class=6), synth_dataset(seed=5, per_class=6)
    for s, t in zip(a.train + a.test, b.train + b.test):
        assert s.label == t.label and s.node_signal.tobytes() == t.node_signal.tobytes()


def test_noise_free_samples_are_identical_within_class():
    seqs = synth_sequences(classes=3, per_class=4, noise_std=0.0)
    for c in range(3):
        group = [s.coords for s in seqs if s.label == c]
        for g in group[1:]:
            np.testing.assert_array_equal(g, group[0])


def test_synth_split_and_sizes():
    ds = synth_dataset(n_joints=6, classes=3, per_class=10, chunks=8)
    assert (ds.n, ds.s, ds.classes) == (6, 24, 3)
    assert len(ds.train) == 15 and len(ds.test) == 15
    x, y = ds.arrays("train")
    assert x.shape == (15, 24, 6) and sorted(set(y)) == [0, 1, 2]


@pytest.mark.parametrize("fmt", ["jsonl", "csv"])
def test_round_trip(tmp_path, fmt):
    ds = synth_dataset(n_joints=5, classes=2, per_class=3, frames=9, chunks=4)
    path = write_dataset(ds, tmp_path / f"d.{fmt}")
    back = load_dataset(path, chunks=4)
    assert back.class_names == (ds.class_names if fmt == "jsonl" else [])
    np.testing.assert_array_equal(back.adjacency, ds.adjacency)
    for split in ("train", "test"):
        x0, y0 = ds.arrays(split)
        x1, y1 = back.arrays(split)
        assert x0.tobytes() == x1.tobytes() and np.array_equal(y0, y1)
    for s, t in zip(ds.sequences, back.sequences):
        assert s.coords.tobytes() == t.coords.tobytes() and s.edges == t.edges and s.split == t.split


def test_two_sequence_fixture(tmp_path):
    recs = []
    for label in (0, 1):
        coords = np.arange(2 * 3 * 3, dtype=float) * (label + 1)
        recs.append({"label": label, "split": "train" if label else "test", "n_joints": 3, "n_frames": 2,
                     "edges": [[0, 1], [1, 2]], "coords": coords.tolist()})
    p = tmp_path / "two.jsonl"
    p.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    ds = load_dataset(p, chunks=2)
    assert [s.label for s in ds.train] == [1] and [s.label for s in ds.test] == [0]
    seqs, _ = read_sequences(p)
    # frame-major then joint-major layout: frame 1, joint 2, axis z sits at (1*3+2)*3+2
    assert seqs[0].coords[1, 2, 2] == 17.0


def test_empty_file_is_a_schema_error(tmp_path):
    for name in ("e.jsonl", "e.csv"):
        p = tmp_path / name
        p.write_text("")
        with pytest.raises(DataFormatError):
            load_dataset(p)


def test_malformed_record_reports_line(tmp_path):
    good = json.dumps({"label": 0, "n_joints": 1, "n_frames": 1, "edges": [], "coords": [0, 0, 0]})
    p = tmp_path / "bad.jsonl"
    p.write_text(good + "\n" + good + "\n{broken\n")
    with pytest.raises(DataFormatError, match=r"bad.jsonl:3"):
        read_sequences(p)
    p.write_text(good + "\n" + json.dumps({"label": 0, "n_joints": 2, "n_frames": 1, "edges": [],
                                           "coords": [0, 0, 0]}) + "\n")
    with pytest.raises(DataFormatError, match=r":2: expected 6 coordinates"):
        read_sequences(p)


def test_inconsistent_joint_counts(tmp_path):
    a = SkeletonSequence(np.zeros((2, 3, 3)), [(0, 1)], 0)
    b = SkeletonSequence(np.zeros((2, 4, 3)), [(0, 1)], 1)
    p = write_sequences([a, b], tmp_path / "x.csv")
    with pytest.raises(DataFormatError, match="joints"):
        read_sequences(p)


def test_sequence_validation():
    with pytest.raises(DataFormatError):
        SkeletonSequence(np.zeros((2, 3, 2)), [], 0)
    with pytest.raises(DataFormatError):
        SkeletonSequence(np.zeros((2, 3, 3)), [(0, 5)], 0)
    with pytest.raises(DataFormatError):
        build_dataset([SkeletonSequence(np.zeros((2, 3, 3)), [], 0, split="dev")])


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "d.txt")
