"""Trajectory vocabulary built by K-means over expert trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import TRAJ_DT, TRAJ_LEN, Trajectory, wrap_angle


def traj_to_vector(traj: Trajectory) -> np.ndarray:
    """Flatten a trajectory to the 16-dim clustering representation.

    Positions only: (x_1, y_1, ..., x_8, y_8).  Headings are excluded
    because they are recoverable from consecutive position deltas.
    """
    return traj.xy().reshape(-1)


def vector_to_traj(vec: np.ndarray) -> Trajectory:
    """Rebuild a trajectory from a 16-dim vector.

    Headings come from finite differences of consecutive waypoints; the
    last step copies its predecessor, and stationary steps copy the
    previous heading (0 at the start).
    """
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (2 * TRAJ_LEN,):
        raise ValueError(f"expected a {2 * TRAJ_LEN}-dim vector, got shape {vec.shape}")
    xy = vec.reshape(TRAJ_LEN, 2)
    headings = np.zeros(TRAJ_LEN)
    prev = 0.0
    for i in range(TRAJ_LEN - 1):
        dx, dy = xy[i + 1] - xy[i]
        if math.hypot(dx, dy) > 1e-9:
            prev = wrap_angle(math.atan2(dy, dx))
        headings[i] = prev
    headings[TRAJ_LEN - 1] = headings[TRAJ_LEN - 2]
    arr = np.column_stack([xy, headings])
    return Trajectory.from_array(arr)


@dataclass
class Vocabulary:
    """M centroid trajectories plus how they were built."""

    entries: list[Trajectory]
    build_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("vocabulary must hold at least one trajectory")

    @property
    def size(self) -> int:
        return len(self.entries)

    def vectors(self) -> np.ndarray:
        return np.stack([traj_to_vector(t) for t in self.entries])


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ initial centroids."""
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    dist2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = dist2.sum()
        if total <= 0:
            centroids[i] = points[rng.integers(n)]
            continue
        probs = dist2 / total
        centroids[i] = points[rng.choice(n, p=probs)]
        dist2 = np.minimum(dist2, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iters: int) -> tuple[np.ndarray, np.ndarray, float, list[float], int]:
    """Lloyd iterations; returns (centroids, labels, inertia, history, iters)."""
    k = len(centroids)
    labels = np.zeros(len(points), dtype=int)
    history: list[float] = []
    iters = 0
    for iters in range(1, max_iters + 1):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)

        new_centroids = centroids.copy()
        for j in range(k):
            members = points[new_labels == j]
            if len(members) > 0:
                new_centroids[j] = members.mean(axis=0)
            else:
                # Re-seed an empty cluster with the globally farthest point.
                far = int(np.argmax(d2[np.arange(len(points)), new_labels]))
                new_centroids[j] = points[far]
                new_labels[far] = j

        d2_after = np.sum((points - new_centroids[new_labels]) ** 2, axis=1)
        inertia = float(d2_after.sum())
        history.append(inertia)
        converged = np.array_equal(new_labels, labels) and np.allclose(new_centroids, centroids)
        centroids, labels = new_centroids, new_labels
        if converged:
            break
    return centroids, labels, history[-1], history, iters


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    restarts: int = 8,
    max_iters: int = 100,
) -> tuple[np.ndarray, float, list[float], int]:
    """Best-of-restarts k-means; returns (centroids, inertia, history, iters).

    Deterministic for a fixed seed: restarts draw from independent
    spawned generators and ties keep the earliest restart.
    """
    points = np.asarray(points, dtype=float)
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(points) < k:
        raise ValueError(f"need at least {k} points, got {len(points)}")
    best = None
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        init = _kmeans_pp_seed(points, k, rng)
        centroids, _, inertia, history, iters = _lloyd(points, init, max_iters)
        if best is None or inertia < best[1] - 1e-15:
            best = (centroids, inertia, history, iters)
    return best


def build_vocabulary(
    experts: list[Trajectory],
    m: int,
    seed: int = 0,
    restarts: int = 8,
    max_iters: int = 100,
) -> Vocabulary:
    """Cluster expert trajectories into an M-entry vocabulary.

    Centroid headings are recomputed from consecutive waypoint deltas.
    """
    if m < 1:
        raise ValueError("vocabulary size must be at least 1")
    if len(experts) < m:
        raise ValueError(f"need at least {m} expert trajectories, got {len(experts)}")
    points = np.stack([traj_to_vector(t) for t in experts])
    centroids, inertia, history, iters = kmeans(points, m, seed=seed, restarts=restarts, max_iters=max_iters)
    entries = [vector_to_traj(c) for c in centroids]
    meta = {
        "m": m,
        "seed": seed,
        "restarts": restarts,
        "iterations": iters,
        "inertia": inertia,
        "inertia_history": history,
        "num_experts": len(experts),
    }
    return Vocabulary(entries=entries, build_meta=meta)


def nearest(vocab: Vocabulary, traj: Trajectory) -> tuple[int, float]:
    """Index and Euclidean distance of the closest vocabulary entry.

    Distances compare traj_to_vector representations; ties resolve to
    the lowest index via argmin.
    """
    if vocab.size == 0:
        raise ValueError("empty vocabulary")
    query = traj_to_vector(traj)
    d = np.linalg.norm(vocab.vectors() - query, axis=1)
    idx = int(np.argmin(d))
    return idx, float(d[idx])
