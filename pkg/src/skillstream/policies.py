"""Surrogate hierarchical policies.

Skill policies are inverse-distance-weighted k-NN regressors over
(feature, proprio, subgoal) rows; the meta-controller is a masked
nearest-exemplar classifier over (feature, proprio, language) rows. Both
keep the interfaces a neural implementation would expose (goal
conditioning, logit masking, per-step skill selection) while training in
milliseconds and staying fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadMaskWidth, EmptyTrainingSet, Untrained
from .segmentation import Segment
from .trajectory_store import Frame

_EXACT_MATCH = 1e-9
DEFAULT_LOOKAHEAD = 10
DEFAULT_GOAL_WINDOW = 3


@dataclass(frozen=True)
class TrainingRow:
    demo_id: str
    t: int  # absolute step index; (demo_id, t) is the dedup key
    feature: np.ndarray
    proprio: np.ndarray
    action: np.ndarray
    omega: np.ndarray  # subgoal embedding

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.feature, self.proprio, self.omega])


def make_training_rows(
    segment: Segment,
    frames: Sequence[Frame],
    lookahead: int = DEFAULT_LOOKAHEAD,
    goal_window: int = DEFAULT_GOAL_WINDOW,
) -> list[TrainingRow]:
    """Rows for one segment; `frames` are exactly the segment's frames.

    The subgoal for frame i is the mean-pooled feature of the window of up to
    `goal_window` frames ending `lookahead` steps ahead, clamped to the
    segment.
    """
    m = len(frames)
    feats = np.stack([f.feature for f in frames])
    rows = []
    for i in range(m):
        g = min(i + lookahead, m - 1)
        lo = max(0, g - goal_window + 1)
        omega = feats[lo : g + 1].mean(axis=0)
        fr = frames[i]
        rows.append(
            TrainingRow(
                demo_id=segment.demo_id,
                t=fr.t,
                feature=fr.feature,
                proprio=fr.proprio,
                action=fr.action,
                omega=omega,
            )
        )
    return rows


class SkillPolicy:
    """k-NN regressor from (feature ⊕ proprio ⊕ subgoal) to action."""

    def __init__(self, skill_id: int, knn_k: int = 5):
        self.skill_id = skill_id
        self.knn_k = knn_k
        self.rows: list[TrainingRow] = []
        self.trained_at_steps: list[int] = []
        self._keys: set[tuple[str, int]] = set()
        self._X: np.ndarray | None = None
        self._mu: np.ndarray | None = None
        self._sigma: np.ndarray | None = None

    def _refresh(self) -> None:
        X = np.stack([r.x for r in self.rows])
        self._mu = X.mean(axis=0)
        sigma = X.std(axis=0)
        sigma[sigma <= _EXACT_MATCH] = 1.0
        self._sigma = sigma
        self._X = (X - self._mu) / self._sigma

    def train(self, rows: Sequence[TrainingRow], step: int = 0) -> "SkillPolicy":
        if not rows:
            raise EmptyTrainingSet(f"skill {self.skill_id}: no training rows")
        self.rows = list(rows)
        self._keys = {(r.demo_id, r.t) for r in self.rows}
        self.trained_at_steps = [step]
        self._refresh()
        return self

    def finetune(self, rows: Sequence[TrainingRow], step: int = 0) -> "SkillPolicy":
        fresh = [r for r in rows if (r.demo_id, r.t) not in self._keys]
        if not fresh:
            return self  # empty partition: leave the policy untouched
        self.rows.extend(fresh)
        self._keys.update((r.demo_id, r.t) for r in fresh)
        self.trained_at_steps.append(step)
        self._refresh()
        return self

    def predict(
        self, feature: np.ndarray, proprio: np.ndarray, omega: np.ndarray
    ) -> np.ndarray:
        if self._X is None:
            raise Untrained(f"skill {self.skill_id} has no training rows")
        x = np.concatenate([feature, proprio, omega])
        z = (x - self._mu) / self._sigma
        d = np.linalg.norm(self._X - z, axis=1)
        hit = np.nonzero(d < _EXACT_MATCH)[0]
        if hit.size:
            return self.rows[int(hit[0])].action
        k = min(self.knn_k, len(self.rows))
        idx = np.argpartition(d, k - 1)[:k]
        w = 1.0 / d[idx]
        acts = np.stack([self.rows[int(i)].action for i in idx])
        return (w[:, None] * acts).sum(axis=0) / w.sum()


def train_skill(skill_id: int, rows: Sequence[TrainingRow], knn_k: int = 5, step: int = 0) -> SkillPolicy:
    return SkillPolicy(skill_id, knn_k=knn_k).train(rows, step=step)


def finetune_skill(policy: SkillPolicy, rows: Sequence[TrainingRow], step: int = 0) -> SkillPolicy:
    return policy.finetune(rows, step=step)


def predict_skill_action(
    policy: SkillPolicy, feature: np.ndarray, proprio: np.ndarray, omega: np.ndarray
) -> np.ndarray:
    return policy.predict(feature, proprio, omega)


def masked_skill_logits(z: np.ndarray, k_current: int) -> np.ndarray:
    """Softmax over the first k_current logits; masked entries get exact zeros."""
    z = np.asarray(z, dtype=np.float64)
    k_max = z.shape[0]
    if not 1 <= k_current <= k_max:
        raise BadMaskWidth(f"k_current={k_current} outside [1, {k_max}]")
    live = z[:k_current]
    m = np.max(live)
    if not np.isfinite(m):
        raise BadMaskWidth("no finite logit among unmasked entries")
    e = np.exp(live - m)
    probs = np.zeros(k_max)
    probs[:k_current] = e / e.sum()
    return probs


@dataclass(frozen=True)
class MetaRow:
    q: np.ndarray  # feature ⊕ proprio ⊕ language embedding
    label: int
    omega: np.ndarray


class MetaController:
    """Masked nearest-exemplar skill selector and subgoal predictor."""

    def __init__(self, k_max: int = 64, temperature: float = 1.0):
        self.k_max = k_max
        self.temperature = temperature
        self.k_current = 0
        self.rows: list[MetaRow] = []
        self._Q: np.ndarray | None = None
        self._labels: np.ndarray | None = None

    def fit(self, rows: Sequence[MetaRow], k_current: int) -> "MetaController":
        if not rows:
            raise EmptyTrainingSet("meta-controller: no training rows")
        if not 1 <= k_current <= self.k_max:
            raise BadMaskWidth(f"k_current={k_current} outside [1, {self.k_max}]")
        bad = [r.label for r in rows if r.label >= k_current]
        if bad:
            raise BadMaskWidth(f"labels {sorted(set(bad))} >= k_current={k_current}")
        self.rows = list(rows)
        self.k_current = k_current
        self._Q = np.stack([r.q for r in rows])
        self._labels = np.array([r.label for r in rows], dtype=int)
        return self

    def widen(self, k_current: int) -> None:
        # The mask only ever widens; evaluation of earlier tasks keeps it wide.
        if k_current < self.k_current:
            raise BadMaskWidth("mask width must not shrink")
        if k_current > self.k_max:
            raise BadMaskWidth(f"k_current={k_current} exceeds k_max={self.k_max}")
        self.k_current = k_current

    def predict(
        self, feature: np.ndarray, proprio: np.ndarray, lang: np.ndarray
    ) -> tuple[int, np.ndarray]:
        if self._Q is None:
            raise Untrained("meta-controller has no rows")
        q = np.concatenate([feature, proprio, lang])
        d = np.linalg.norm(self._Q - q, axis=1)
        z = np.full(self.k_max, -np.inf)
        for k in range(self.k_current):
            mask = self._labels == k
            if mask.any():
                z[k] = -self.temperature * float(d[mask].min())
        probs = masked_skill_logits(z, self.k_current)
        k_hat = int(np.argmax(probs))  # ties -> lowest skill index
        own = np.nonzero(self._labels == k_hat)[0]
        nearest = own[int(np.argmin(d[own]))]
        return k_hat, self.rows[int(nearest)].omega


def predict_meta(
    mc: MetaController, feature: np.ndarray, proprio: np.ndarray, lang: np.ndarray
) -> tuple[int, np.ndarray]:
    return mc.predict(feature, proprio, lang)
