"""Temporal segmentation of demonstrations.

Bottom-up agglomerative merging of adjacent windows: start from fixed-width
windows, repeatedly merge the adjacent pair whose mean-pooled features are
most cosine-similar, and cut the merge sequence at the first step where the
best available merge drops below the threshold (subject to count and length
clamps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DemoTooShort, EmptySlice, ZeroNorm
from .trajectory_store import Demonstration, Frame

_EPS = 1e-12


@dataclass(frozen=True)
class Segment:
    demo_id: str
    task_id: str
    start: int  # inclusive
    end: int  # exclusive
    pooled: np.ndarray

    def __len__(self) -> int:
        return self.end - self.start


@dataclass
class SegmentationConfig:
    window: int = 5
    merge_threshold: float = 0.85
    min_segments: int = 1
    max_segments: int = 10
    min_length: int = 5

    def __post_init__(self) -> None:
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.min_segments < 1:
            raise ValueError("min_segments must be >= 1")
        if self.max_segments < self.min_segments:
            raise ValueError("max_segments must be >= min_segments")
        if self.min_length < 1:
            raise ValueError("min_length must be >= 1")
        if not -1.0 <= self.merge_threshold <= 1.0:
            raise ValueError("merge_threshold must lie in [-1, 1]")


def pool_features(frames) -> np.ndarray:
    """Component-wise arithmetic mean of the frames' feature vectors."""
    if len(frames) == 0:
        raise EmptySlice("cannot pool an empty slice of frames")
    if isinstance(frames[0], Frame):
        mat = np.stack([f.feature for f in frames])
    else:
        mat = np.asarray(frames, dtype=np.float64)
    return mat.mean(axis=0)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= _EPS or nv <= _EPS:
        raise ZeroNorm("cosine similarity undefined for (near-)zero vectors")
    return float(np.dot(u, v) / (nu * nv))


def _initial_cuts(n: int, window: int) -> list[int]:
    # Window starts; the trailing remainder is kept only if it has >= 2 frames,
    # otherwise it is folded into its predecessor.
    cuts = list(range(0, n, window))
    if len(cuts) > 1 and n - cuts[-1] < 2:
        cuts.pop()
    return cuts


def segment_demo(
    demo: Demonstration,
    cfg: SegmentationConfig,
    return_trace: bool = False,
):
    """Split one demonstration into disjoint covering segments.

    Returns the ordered segment list, or (segments, merge-similarity trace)
    when return_trace is set.
    """
    n = len(demo.frames)
    if n < 2:
        raise DemoTooShort(f"{demo.demo_id}: length {n} < 2")
    feats = np.stack([f.feature for f in demo.frames])

    cuts = _initial_cuts(n, cfg.window)
    bounds = cuts + [n]  # segment i spans [bounds[i], bounds[i+1])
    pooled = [feats[bounds[i] : bounds[i + 1]].mean(axis=0) for i in range(len(cuts))]
    trace: list[float] = []

    def adjacent_sims() -> np.ndarray:
        return np.array(
            [cosine_similarity(pooled[i], pooled[i + 1]) for i in range(len(pooled) - 1)]
        )

    while len(pooled) > cfg.min_segments and len(pooled) > 1:
        sims = adjacent_sims()
        best = int(np.argmax(sims))  # ties resolve to the smallest start index
        lengths = np.diff(bounds)
        constraints_ok = len(pooled) <= cfg.max_segments and lengths.min() >= cfg.min_length
        if sims[best] < cfg.merge_threshold and constraints_ok:
            break
        trace.append(float(sims[best]))
        del bounds[best + 1]
        # Pooled features recomputed from raw frames, not child averages.
        pooled[best] = feats[bounds[best] : bounds[best + 1]].mean(axis=0)
        del pooled[best + 1]

    segments = [
        Segment(
            demo_id=demo.demo_id,
            task_id=demo.task_id,
            start=bounds[i],
            end=bounds[i + 1],
            pooled=pooled[i],
        )
        for i in range(len(pooled))
    ]
    if return_trace:
        return segments, trace
    return segments
