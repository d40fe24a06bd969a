"""Skill partitioning.

Base stage: spectral clustering over pooled segment features with a
silhouette sweep to pick the number of skills. Lifelong stage: serial,
threshold-based silhouette assignment of each new segment to an existing
partition or to a freshly created one. Cosine distance is the metric
everywhere in the pipeline; Euclidean support exists for tests that check
the silhouette formula itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import BadK, SingleCluster, TooFewSegments, UnknownPartition, ZeroNorm
from .segmentation import Segment

_EPS = 1e-12
_SIGMA_FLOOR = 1e-6
_KMEANS_RESTARTS = 10
_KMEANS_MAX_ITER = 100


@dataclass
class Partition:
    skill_id: int
    members: list[Segment]
    created_at_step: int

    @property
    def pooled_matrix(self) -> np.ndarray:
        return np.stack([s.pooled for s in self.members])


@dataclass
class ClusteringState:
    partitions: list[Partition] = field(default_factory=list)
    sil_threshold: float = 0.1

    @property
    def num_skills(self) -> int:
        return len(self.partitions)


# ---------------------------------------------------------------------------
# distances


def _normalize_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms <= _EPS):
        raise ZeroNorm("cosine distance undefined for (near-)zero vectors")
    return X / norms[:, None]


def pairwise_cosine_distance(X: np.ndarray) -> np.ndarray:
    Xn = _normalize_rows(np.asarray(X, dtype=np.float64))
    D = 1.0 - Xn @ Xn.T
    np.fill_diagonal(D, 0.0)
    return np.clip(D, 0.0, 2.0)


def cosine_distance_to(x: np.ndarray, X: np.ndarray) -> np.ndarray:
    xn = np.linalg.norm(x)
    if xn <= _EPS:
        raise ZeroNorm("cosine distance undefined for (near-)zero vectors")
    Xn = _normalize_rows(np.asarray(X, dtype=np.float64))
    return np.clip(1.0 - Xn @ (x / xn), 0.0, 2.0)


def _pairwise_euclidean(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def _distance_matrix(points: np.ndarray, metric) -> np.ndarray:
    if callable(metric):
        return metric(points)
    if metric == "cosine":
        return pairwise_cosine_distance(points)
    if metric == "euclidean":
        return _pairwise_euclidean(points)
    raise ValueError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# spectral clustering


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(
            np.stack([((X - c) ** 2).sum(axis=1) for c in centers]), axis=0
        )
        total = d2.sum()
        if total <= _EPS:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(X[idx])
    return np.stack(centers)


def _lloyd(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, float]:
    k = centers.shape[0]
    labels = None
    for _it in range(_KMEANS_MAX_ITER):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        new_labels = d2.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            mask = labels == j
            if mask.any():
                centers[j] = X[mask].mean(axis=0)
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    inertia = float(d2[np.arange(X.shape[0]), labels].sum())
    return labels, inertia


def _seeded_kmeans(X: np.ndarray, k: int, seed: int) -> np.ndarray:
    best_labels = None
    best_inertia = np.inf
    for restart in range(_KMEANS_RESTARTS):
        rng = np.random.default_rng([seed, restart])
        centers = _kmeans_pp_init(X, k, rng).copy()
        labels, inertia = _lloyd(X, centers)
        if inertia < best_inertia - _EPS:  # ties keep the lowest restart index
            best_inertia = inertia
            best_labels = labels
    return best_labels


def _canonicalize(labels: np.ndarray) -> list[int]:
    remap: dict[int, int] = {}
    out = []
    for lab in labels:
        lab = int(lab)
        if lab not in remap:
            remap[lab] = len(remap)
        out.append(remap[lab])
    return out


def spectral_cluster(segments: Sequence[Segment], K: int, seed: int) -> list[int]:
    """Cluster segments by pooled feature; labels canonicalized by first appearance."""
    n = len(segments)
    if n < 3:
        raise TooFewSegments(f"need >= 3 segments, got {n}")
    if not 2 <= K <= n - 1:
        raise BadK(f"K={K} outside [2, {n - 1}]")
    P = np.stack([s.pooled for s in segments])
    D = pairwise_cosine_distance(P)
    iu = np.triu_indices(n, k=1)
    sigma = max(float(np.median(D[iu])), _SIGMA_FLOOR)
    A = np.exp(-D / sigma)
    deg = A.sum(axis=1)
    dinv = 1.0 / np.sqrt(deg)
    L = np.eye(n) - dinv[:, None] * A * dinv[None, :]
    _, vecs = np.linalg.eigh(L)
    emb = vecs[:, :K]
    norms = np.linalg.norm(emb, axis=1)
    nonzero = norms > _EPS
    emb = emb.copy()
    emb[nonzero] /= norms[nonzero, None]  # zero rows stay zero
    labels = _seeded_kmeans(emb, K, seed)
    return _canonicalize(labels)


# ---------------------------------------------------------------------------
# silhouettes


def mean_silhouette(
    points: Sequence[np.ndarray] | np.ndarray,
    labels: Sequence[int],
    metric: str | Callable = "cosine",
) -> float:
    """Mean silhouette s(i) = (b - a) / max(a, b); singleton clusters score 0."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    labels = np.asarray(labels, dtype=int)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise SingleCluster("silhouette needs >= 2 distinct labels")
    D = _distance_matrix(points, metric)
    n = points.shape[0]
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        if own.sum() == 1:
            scores[i] = 0.0  # singleton convention
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == lab].mean() for lab in uniq if lab != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom <= _EPS else (b - a) / denom
    return float(scores.mean())


class SelectKResult(NamedTuple):
    k: int
    labels: list[int]
    scores: dict[int, float]


def select_k(segments: Sequence[Segment], k_max_sweep: int, seed: int) -> SelectKResult:
    """Sweep K in 2..min(k_max_sweep, n-1), keep the highest mean silhouette."""
    n = len(segments)
    if n < 3:
        raise TooFewSegments(f"need >= 3 segments, got {n}")
    P = np.stack([s.pooled for s in segments])
    scores: dict[int, float] = {}
    labelings: dict[int, list[int]] = {}
    for K in range(2, min(k_max_sweep, n - 1) + 1):
        labels = spectral_cluster(segments, K, seed)
        labelings[K] = labels
        scores[K] = mean_silhouette(P, labels, metric="cosine")
    best = max(scores, key=lambda K: (scores[K], -K))  # ties -> smallest K
    return SelectKResult(k=best, labels=labelings[best], scores=scores)


def candidate_silhouette(
    x: np.ndarray,
    k: int,
    state: ClusteringState,
    metric: str | Callable = "cosine",
) -> float:
    """Silhouette of point x if it were assigned to partition k."""
    if k < 0 or k >= state.num_skills or not state.partitions[k].members:
        raise UnknownPartition(f"partition {k} does not exist or is empty")

    def mean_dist(part: Partition) -> float:
        M = part.pooled_matrix
        if callable(metric):
            return float(metric(x, M))
        if metric == "cosine":
            return float(cosine_distance_to(x, M).mean())
        return float(np.sqrt(((M - x) ** 2).sum(axis=1)).mean())

    a = mean_dist(state.partitions[k])
    if state.num_skills == 1:
        b = 1.0  # cosine-distance scale fallback for a lone partition
    else:
        b = min(mean_dist(p) for j, p in enumerate(state.partitions) if j != k)
    denom = max(a, b)
    return 0.0 if denom <= _EPS else (b - a) / denom


class AssignResult(NamedTuple):
    labels: list[int]
    silhouettes: list[float]


def incremental_assign(
    new_segments: Sequence[Segment],
    state: ClusteringState,
    step: int,
    allow_new: bool = True,
) -> AssignResult:
    """Serially assign segments to partitions, creating new ones below threshold.

    Mutates `state` in place. With allow_new=False every segment joins its
    best-scoring existing partition regardless of the threshold.
    """
    labels: list[int] = []
    values: list[float] = []
    for seg in new_segments:
        scores = [
            candidate_silhouette(seg.pooled, k, state)
            for k in range(state.num_skills)
        ]
        if scores:
            best = int(np.argmax(scores))  # ties -> lowest skill_id
            best_val = scores[best]
        else:
            best, best_val = -1, -np.inf
        if scores and (not allow_new or best_val >= state.sil_threshold):
            state.partitions[best].members.append(seg)
            labels.append(best)
            values.append(float(best_val))
        else:
            new_id = state.num_skills
            state.partitions.append(
                Partition(skill_id=new_id, members=[seg], created_at_step=step)
            )
            labels.append(new_id)
            values.append(float(best_val) if scores else float("nan"))
    return AssignResult(labels=labels, silhouettes=values)
