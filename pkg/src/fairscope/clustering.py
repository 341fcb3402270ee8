"""Per-class clustering of frame features, optionally with temporal shift.

Clustering inputs are built per video. For the temporal ("PC") variant
each reduced feature vector gets one extra coordinate, the feature shift
``d[t] = 1 - cos(h[t-1], h[t])`` with ``d[0] = 0``; the naive ("NC")
variant uses the reduced features alone. Each class is then split into
``K`` clusters with k-means, and environments pair one real cluster with
one fake cluster through a random bijection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import InvalidInputError, cosine_similarity, make_rng

MODES = ("NC", "PC")


def temporal_difference(sequence) -> np.ndarray:
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2 or len(seq) < 1:
        raise InvalidInputError("expected a (T, d) sequence with T >= 1")
    d = np.zeros(len(seq))
    for t in range(1, len(seq)):
        d[t] = 1.0 - cosine_similarity(seq[t - 1], seq[t])
    return d


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


def build_cluster_inputs(reduced_by_video, mode: str = "PC") -> list[np.ndarray]:
    """One ``(T, d')`` or ``(T, d'+1)`` array per video, in frame order."""
    if mode not in MODES:
        raise InvalidInputError(f"unknown clustering mode {mode!r}")
    out = []
    for seq in reduced_by_video:
        seq = np.asarray(seq, dtype=np.float64)
        if mode == "NC":
            out.append(seq.copy())
        else:
            out.append(np.hstack([seq, temporal_difference(seq)[:, None]]))
    return out


def kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[i] = X[idx]
        closest = np.minimum(closest, np.sum((X - centers[i]) ** 2, axis=1))
    return centers


def _sq_dists(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans(X, k: int, seed: int, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(centroids, labels, objective_trace)``. A cluster that goes
    empty receives the point of the largest cluster lying farthest from
    that cluster's centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) < k:
        raise InvalidInputError(f"need at least {k} samples, got {len(X)}")
    rng = make_rng(seed)
    centers = kmeans_pp_init(X, k, rng)
    labels = np.argmin(_sq_dists(X, centers), axis=1)
    trace = []
    for _ in range(max_iter):
        labels = _repair_empty(X, labels, centers, k)
        for j in range(k):
            centers[j] = X[labels == j].mean(axis=0)
        d = _sq_dists(X, centers)
        labels = np.argmin(d, axis=1)
        labels = _repair_empty(X, labels, centers, k)
        obj = float(sum(np.sum((X[labels == j] - X[labels == j].mean(axis=0)) ** 2) for j in range(k)))
        trace.append(obj)
        if len(trace) > 1 and abs(trace[-2] - obj) <= tol * max(trace[-2], 1e-300):
            break
    for j in range(k):
        centers[j] = X[labels == j].mean(axis=0)
    return centers, labels, trace


def _repair_empty(X, labels, centers, k):
    labels = labels.copy()
    for j in range(k):
        if np.any(labels == j):
            continue
        sizes = np.bincount(labels, minlength=k)
        big = int(np.argmax(sizes))
        members = np.flatnonzero(labels == big)
        far = members[np.argmax(np.sum((X[members] - centers[big]) ** 2, axis=1))]
        labels[far] = j
        centers[j] = X[far]
    return labels


@dataclass
class ClusterModel:
    """Per-class k-means result over a fixed list of training frames.

    ``members[y][k]`` holds the (global) frame indices of cluster ``C_k^y``.
    """

    k: int
    centroids: dict[int, np.ndarray]
    members: dict[int, list[np.ndarray]]
    assignment: np.ndarray  # cluster index of every frame
    labels: np.ndarray  # class of every frame
    traces: dict[int, list[float]] = field(default_factory=dict)

    def sizes(self) -> dict[tuple[int, int], int]:
        return {(k, y): len(m) for y, ms in self.members.items() for k, m in enumerate(ms)}

    def cluster_of(self, index: int) -> tuple[int, int]:
        return int(self.assignment[index]), int(self.labels[index])

    def to_records(self, video_ids, frame_idx) -> list[dict]:
        return [
            {"video": str(v), "frame": int(t), "class": int(y), "cluster": int(c)}
            for v, t, y, c in zip(video_ids, frame_idx, self.labels, self.assignment)
        ]

    def dump(self, path, video_ids, frame_idx) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_records(video_ids, frame_idx)), encoding="utf-8")
        return path


def fit_clusters(vectors, labels, k: int, seed: int = 0) -> ClusterModel:
    """Run k-means separately on the frames of each class."""
    X = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if k < 1:
        raise InvalidInputError("k must be positive")
    assignment = np.full(len(X), -1, dtype=int)
    centroids, members, traces = {}, {}, {}
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise InvalidInputError(f"class {cls} has {len(idx)} samples, fewer than k={k}")
        c, lab, trace = kmeans(X[idx], k, seed + cls)
        centroids[cls] = c
        members[cls] = [idx[lab == j] for j in range(k)]
        assignment[idx] = lab
        traces[cls] = trace
    return ClusterModel(k, centroids, members, assignment, y.copy(), traces)


@dataclass(frozen=True)
class Environment:
    """Union of real cluster ``real_cluster`` and fake cluster ``fake_cluster``."""

    index: int
    real_cluster: int
    fake_cluster: int

    def members(self, model: ClusterModel) -> np.ndarray:
        return np.concatenate([model.members[0][self.real_cluster], model.members[1][self.fake_cluster]])

    def contains(self, model: ClusterModel, frame_index: int) -> bool:
        k, y = model.cluster_of(frame_index)
        return k == (self.real_cluster if y == 0 else self.fake_cluster)


def form_environments(model: ClusterModel, rng: np.random.Generator) -> list[Environment]:
    perm = rng.permutation(model.k)
    return [Environment(k, k, int(perm[k])) for k in range(model.k)]


def environment_of(envs: list[Environment], model: ClusterModel, frame_indices) -> np.ndarray:
    """Environment index for each frame under the given pairing."""
    lookup = {}
    for e in envs:
        lookup[(e.real_cluster, 0)] = e.index
        lookup[(e.fake_cluster, 1)] = e.index
    return np.array([lookup[model.cluster_of(int(i))] for i in frame_indices], dtype=int)
