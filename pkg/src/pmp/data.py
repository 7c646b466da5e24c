"""Skeleton sequences, temporal chunking, dataset files and a synthetic generator.

Dataset file schema (version 1), one record per sequence.

JSONL: one JSON object per line::

    {"schema": "pmp-skeleton", "version": 1, "label": 3, "split": "train",
     "n_joints": 21, "n_frames": 120, "edges": [[0, 1], [1, 2], ...],
     "coords": [x, y, z, x, y, z, ...]}

``coords`` is frame-major then joint-major: entry ``(t, j, d)`` sits at
``(t * n_joints + j) * 3 + d``. An optional ``class_names`` list may appear in
any record; the first one seen wins.

CSV: header ``label,split,n_joints,n_frames,edges,coords`` where ``edges`` is
``i-j`` pairs joined by ``;`` and ``coords`` is space-separated floats in the
same order as above.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

SCHEMA = "pmp-skeleton"
SCHEMA_VERSION = 1
CSV_FIELDS = ("label", "split", "n_joints", "n_frames", "edges", "coords")


class DataFormatError(ValueError):
    pass


@dataclass
class SkeletonSequence:
    coords: np.ndarray            # (T_f, n, 3)
    edges: list[tuple[int, int]]
    label: int
    split: str = "train"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise DataFormatError(f"coords must be (frames, joints, 3), got {self.coords.shape}")
        if self.coords.shape[0] < 1:
            raise DataFormatError("a sequence needs at least one frame")
        n = self.coords.shape[1]
        self.edges = [(int(i), int(j)) for i, j in self.edges]
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise DataFormatError(f"edge ({i}, {j}) references a joint outside [0, {n})")

    @property
    def n_joints(self) -> int:
        return self.coords.shape[1]

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]


@dataclass
class GraphSample:
    node_signal: np.ndarray  # s x n
    label: int


@dataclass
class Dataset:
    train: list[GraphSample]
    test: list[GraphSample]
    adjacency: np.ndarray
    chunks: int
    class_names: list[str] = field(default_factory=list)
    sequences: list[SkeletonSequence] = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def s(self) -> int:
        return 3 * self.chunks

    @property
    def classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        return 1 + max(s.label for s in self.train + self.test)

    def arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        samples = self.train if split == "train" else self.test
        if not samples:
            return np.zeros((0, self.s, self.n)), np.zeros(0, dtype=np.int64)
        x = np.stack([s.node_signal for s in samples])
        y = np.array([s.label for s in samples], dtype=np.int64)
        return x, y


# ----------------------------------------------------------------- chunking

def chunk_bounds(n_frames: int, M: int) -> list[tuple[int, int]]:
    """Chunk i covers frame indices [floor(i T/M), floor((i+1) T/M))."""
    return [((i * n_frames) // M, ((i + 1) * n_frames) // M) for i in range(M)]


def temporal_chunking(seq: SkeletonSequence | np.ndarray, M: int = 32) -> np.ndarray:
    """Per-chunk mean joint positions concatenated over chunks: a 3M x n signal.

    Empty chunks (fewer frames than chunks) copy the nearest preceding
    non-empty chunk, or the first non-empty one when none precedes.
    """
    coords = seq.coords if isinstance(seq, SkeletonSequence) else np.asarray(seq, dtype=np.float64)
    if coords.ndim != 3 or coords.shape[1] == 0:
        raise DataFormatError("temporal chunking needs at least one joint")
    if M < 1:
        raise ValueError("chunk count M must be >= 1")
    T, n, _ = coords.shape
    means: list[np.ndarray | None] = []
    for lo, hi in chunk_bounds(T, M):
        means.append(coords[lo:hi].mean(axis=0) if hi > lo else None)
    first = next(m for m in means if m is not None)
    prev = first
    for i, m in enumerate(means):
        if m is None:
            means[i] = prev
        else:
            prev = m
    # (M, n, 3) -> (M, 3, n) -> (3M, n)
    return np.stack(means).transpose(0, 2, 1).reshape(3 * M, n)


def standardize(coords: np.ndarray) -> np.ndarray:
    """Zero mean / unit variance per axis over all joints and frames."""
    mu = coords.mean(axis=(0, 1), keepdims=True)
    sd = coords.std(axis=(0, 1), keepdims=True)
    sd = np.where(sd > 0, sd, 1.0)
    return (coords - mu) / sd


def normalized_adjacency(n: int, edges: Iterable[tuple[int, int]]) -> np.ndarray:
    """Row-normalized (undirected skeleton edges + self loops)."""
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    return a / a.sum(axis=1, keepdims=True)


def build_dataset(sequences: Sequence[SkeletonSequence], M: int = 32,
                  class_names: Sequence[str] | None = None, standardize_coords: bool = True) -> Dataset:
    if not sequences:
        raise DataFormatError("dataset contains no sequences")
    n = sequences[0].n_joints
    edges = sequences[0].edges
    train, test = [], []
    for k, seq in enumerate(sequences):
        if seq.n_joints != n:
            raise DataFormatError(f"sequence {k} has {seq.n_joints} joints, expected {n}")
        coords = standardize(seq.coords) if standardize_coords else seq.coords
        sample = GraphSample(temporal_chunking(coords, M), seq.label)
        if seq.split == "test":
            test.append(sample)
        elif seq.split == "train":
            train.append(sample)
        else:
            raise DataFormatError(f"sequence {k}: unknown split {seq.split!r}")
    return Dataset(train, test, normalized_adjacency(n, edges), M, list(class_names or []),
                   list(sequences))


# ----------------------------------------------------------------- synthetic

def skeleton_edges(n_joints: int, branch_len: int = 3) -> list[tuple[int, int]]:
    """Root joint 0 with branches of up to ``branch_len`` chained joints (hand-like)."""
    edges = []
    j = 1
    while j < n_joints:
        parent = 0
        for _ in range(branch_len):
            if j >= n_joints:
                break
            edges.append((parent, j))
            parent = j
            j += 1
    return edges


def synth_sequences(n_joints: int = 14, classes: int = 5, per_class: int = 60, frames: int = 64,
                    noise_std: float = 0.01, seed: int = 0, test_fraction: float = 0.5,
                    jitter: float = 0.0) -> list[SkeletonSequence]:
    """Class prototypes are per-joint sinusoidal motions; samples add Gaussian noise.

    ``jitter`` perturbs each sample's per-joint phases (radians, std) to make
    classes overlap; 0 leaves samples as prototype + noise.
    """
    if min(n_joints, classes, per_class, frames) <= 0:
        raise ValueError("synthetic dataset sizes must be positive")
    rng = np.random.default_rng(seed)
    edges = skeleton_edges(n_joints)
    base = rng.normal(0.0, 1.0, size=(n_joints, 3))
    t = np.linspace(0.0, 1.0, frames)[:, None, None]
    freq = rng.integers(1, 4, size=(classes, n_joints, 3)).astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi, size=(classes, n_joints, 3))
    amp = rng.uniform(0.2, 0.6, size=(classes, n_joints, 3))
    n_test = int(round(per_class * test_fraction))
    out = []
    for c in range(classes):
        for k in range(per_class):
            ph = phase[c]
            if jitter > 0:
                ph = ph + rng.normal(0.0, jitter, size=ph.shape)
            motion = base[None] + amp[c][None] * np.sin(2 * np.pi * freq[c][None] * t + ph[None])
            if noise_std > 0:
                motion = motion + rng.normal(0.0, noise_std, size=motion.shape)
            split = "test" if k < n_test else "train"
            out.append(SkeletonSequence(motion, edges, c, split))
    return out


def synth_dataset(n_joints: int = 14, classes: int = 5, per_class: int = 60, frames: int = 64,
                  noise_std: float = 0.01, seed: int = 0, chunks: int = 32,
                  test_fraction: float = 0.5, jitter: float = 0.0) -> Dataset:
    seqs = synth_sequences(n_joints, classes, per_class, frames, noise_std, seed, test_fraction, jitter)
    return build_dataset(seqs, chunks, [f"class{c}" for c in range(classes)])


# ----------------------------------------------------------------- file I/O

def _record(seq: SkeletonSequence) -> dict:
    return {"schema": SCHEMA, "version": SCHEMA_VERSION, "label": int(seq.label), "split": seq.split,
            "n_joints": seq.n_joints, "n_frames": seq.n_frames,
            "edges": [list(e) for e in seq.edges], "coords": seq.coords.reshape(-1).tolist()}


def _from_record(rec: dict, where: str) -> SkeletonSequence:
    try:
        n, T = int(rec["n_joints"]), int(rec["n_frames"])
        coords = np.asarray(rec["coords"], dtype=np.float64)
        label = int(rec["label"])
        edges = [tuple(e) for e in rec["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{where}: malformed record ({exc})") from None
    if rec.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise DataFormatError(f"{where}: unsupported schema version {rec.get('version')}")
    if coords.size != T * n * 3:
        raise DataFormatError(f"{where}: expected {T * n * 3} coordinates, got {coords.size}")
    if label < 0:
        raise DataFormatError(f"{where}: negative label")
    try:
        return SkeletonSequence(coords.reshape(T, n, 3), edges, label, rec.get("split", "train"))
    except DataFormatError as exc:
        raise DataFormatError(f"{where}: {exc}") from None


def write_sequences(sequences: Sequence[SkeletonSequence], path, fmt: str | None = None,
                    class_names: Sequence[str] | None = None) -> Path:
    path = Path(path)
    fmt = fmt or _guess_format(path)
    if fmt == "jsonl":
        with open(path, "w") as fh:
            for k, seq in enumerate(sequences):
                rec = _record(seq)
                if k == 0 and class_names:
                    rec["class_names"] = list(class_names)
                fh.write(json.dumps(rec) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for seq in sequences:
                w.writerow([seq.label, seq.split, seq.n_joints, seq.n_frames,
                            ";".join(f"{i}-{j}" for i, j in seq.edges),
                            " ".join(repr(float(v)) for v in seq.coords.reshape(-1))])
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    return path


def read_sequences(path, fmt: str | None = None) -> tuple[list[SkeletonSequence], list[str]]:
    path = Path(path)
    fmt = fmt or _guess_format(path)
    seqs: list[SkeletonSequence] = []
    names: list[str] = []
    if fmt == "jsonl":
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
                if not isinstance(rec, dict):
                    raise DataFormatError(f"{path}:{lineno}: record is not an object")
                if not names and rec.get("class_names"):
                    names = [str(c) for c in rec["class_names"]]
                seqs.append(_from_record(rec, f"{path}:{lineno}"))
    elif fmt == "csv":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataFormatError(f"{path}: empty file")
            if tuple(header) != CSV_FIELDS:
                raise DataFormatError(f"{path}:1: expected header {','.join(CSV_FIELDS)}")
            for lineno, row in enumerate(reader, 2):
                if not row:
                    continue
                if len(row) != len(CSV_FIELDS):
                    raise DataFormatError(f"{path}:{lineno}: expected {len(CSV_FIELDS)} fields")
                rec = dict(zip(CSV_FIELDS, row))
                try:
                    rec["edges"] = [tuple(int(v) for v in e.split("-")) for e in rec["edges"].split(";") if e]
                    rec["coords"] = [float(v) for v in rec["coords"].split()]
                except ValueError as exc:
                    raise DataFormatError(f"{path}:{lineno}: malformed field ({exc})") from None
                seqs.append(_from_record(rec, f"{path}:{lineno}"))
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    if not seqs:
        raise DataFormatError(f"{path}: no sequences")
    n = seqs[0].n_joints
    for k, s in enumerate(seqs):
        if s.n_joints != n:
            raise DataFormatError(f"{path}: sequence {k} has {s.n_joints} joints, expected {n}")
    return seqs, names


def load_dataset(path, fmt: str | None = None, chunks: int = 32) -> Dataset:
    seqs, names = read_sequences(path, fmt)
    return build_dataset(seqs, chunks, names)


def write_dataset(dataset: Dataset, path, fmt: str | None = None) -> Path:
    if not dataset.sequences:
        raise ValueError("dataset has no raw sequences to write")
    return write_sequences(dataset.sequences, path, fmt, dataset.class_names)


def _guess_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("jsonl", "csv"):
        return suffix
    raise ValueError(f"cannot infer dataset format from {path.name!r}; pass jsonl or csv")
