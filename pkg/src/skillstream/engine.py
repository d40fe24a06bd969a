"""Lifelong pipeline orchestration.

Base stage: segment all base demonstrations, pick the initial skill count
by silhouette sweep, train one surrogate skill per partition plus the
masked meta-controller. Lifelong stage: one task per step; segments are
serially assigned to existing or new partitions, touched skills are
fine-tuned with replayed exemplars, and the meta-controller is re-fit
under a monotonically widening mask. Evaluation fills a lower-triangular
success matrix.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .clustering import (
    ClusteringState,
    Partition,
    incremental_assign,
    select_k,
)
from .config import RunConfig
from .errors import (
    BadEpisodeCount,
    MissingDemos,
    OutOfOrderTask,
    TooFewSegments,
    UnlearnedTask,
)
from .metrics import SuccessMatrix
from .policies import (
    MetaController,
    MetaRow,
    SkillPolicy,
    TrainingRow,
    make_training_rows,
)
from .replay import ReplayBuffer
from .segmentation import Segment, SegmentationConfig, segment_demo
from .trajectory_store import Demonstration, Suite, TaskSpec

log = logging.getLogger("skillstream")


@dataclass
class LifelongState:
    step: int
    clustering: ClusteringState
    library: dict[int, SkillPolicy]
    meta: MetaController
    buffer: ReplayBuffer
    seed: int
    task_lang: dict[str, np.ndarray] = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)


def _seg_config(cfg: RunConfig) -> SegmentationConfig:
    return SegmentationConfig(
        window=cfg.window,
        merge_threshold=cfg.merge_threshold,
        min_segments=cfg.min_segments,
        max_segments=cfg.max_segments,
        min_length=cfg.min_length,
    )


def _segment_task(task: TaskSpec, cfg: RunConfig) -> list[tuple[Segment, tuple]]:
    """Segments of one task with their frame slices, ordered by (demo_id, start)."""
    seg_cfg = _seg_config(cfg)
    demos = sorted(task.demos, key=lambda d: d.demo_id)

    def one(demo: Demonstration):
        segs = segment_demo(demo, seg_cfg)
        return [(s, demo.frames[s.start : s.end]) for s in segs]

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_demo = list(pool.map(one, demos))
    else:
        per_demo = [one(d) for d in demos]
    out = []
    for chunk in per_demo:
        out.extend(chunk)
    return out


def _rows_for(seg: Segment, frames, cfg: RunConfig) -> list[TrainingRow]:
    return make_training_rows(seg, frames, cfg.lookahead, cfg.goal_window)


def _meta_rows(rows: list[TrainingRow], label: int, lang: np.ndarray) -> list[MetaRow]:
    return [
        MetaRow(q=np.concatenate([r.feature, r.proprio, lang]), label=label, omega=r.omega)
        for r in rows
    ]


def _buffer_meta_rows(state: LifelongState, cfg: RunConfig) -> list[MetaRow]:
    out: list[MetaRow] = []
    for buf in state.buffer.all_segments():
        lang = state.task_lang[buf.segment.task_id]
        rows = make_training_rows(buf.segment, buf.frames, cfg.lookahead, cfg.goal_window)
        out.extend(_meta_rows(rows, buf.skill_id, lang))
    return out


def run_base_stage(suite: Suite, config: RunConfig) -> LifelongState:
    base = suite.base_tasks
    for task in base:
        if not task.demos:
            raise MissingDemos(f"base task {task.task_id} has no demonstrations")

    items: list[tuple[TaskSpec, Segment, tuple]] = []
    for task in base:
        for seg, frames in _segment_task(task, config):
            items.append((task, seg, frames))
    segments = [seg for _, seg, _ in items]
    if len(segments) < 3 and not config.single_skill:
        raise TooFewSegments(f"base stage produced {len(segments)} segments, need >= 3")

    if config.single_skill:
        k1 = 1
        labels = [0] * len(segments)
        sweep_scores: dict[int, float] = {}
    else:
        res = select_k(segments, config.k_max_sweep, config.seed)
        k1, labels, sweep_scores = res.k, res.labels, res.scores
        if max(sweep_scores.values()) <= 0.0:
            log.warning(
                "DegenerateClustering: silhouette sweep found no structure "
                "(best score %.4f); keeping K=%d",
                max(sweep_scores.values()),
                k1,
            )

    clustering = ClusteringState(sil_threshold=config.sil_threshold)
    for k in range(k1):
        clustering.partitions.append(Partition(skill_id=k, members=[], created_at_step=0))
    for seg, lab in zip(segments, labels):
        clustering.partitions[lab].members.append(seg)

    rows_by_skill: dict[int, list[TrainingRow]] = {k: [] for k in range(k1)}
    meta_rows: list[MetaRow] = []
    for (task, seg, frames), lab in zip(items, labels):
        rows = _rows_for(seg, frames, config)
        rows_by_skill[lab].extend(rows)
        meta_rows.extend(_meta_rows(rows, lab, task.language_embedding))

    last_order = max(t.order for t in base)
    library = {
        k: SkillPolicy(k, knn_k=config.knn_k).train(rows_by_skill[k], step=last_order)
        for k in range(k1)
    }
    meta = MetaController(k_max=config.k_max, temperature=config.temperature)
    meta.fit(meta_rows, k_current=k1)

    state = LifelongState(
        step=last_order,
        clustering=clustering,
        library=library,
        meta=meta,
        buffer=ReplayBuffer(),
        seed=config.seed,
    )
    for task in base:
        state.task_lang[task.task_id] = task.language_embedding
        task_pairs = [(seg, lab) for (t, seg, _), lab in zip(items, labels) if t is task]
        state.buffer.record_task_exemplars(
            task, [s for s, _ in task_pairs], [l for _, l in task_pairs], config.n_save
        )

    sizes = {p.skill_id: len(p.members) for p in clustering.partitions}
    state.records.append(
        {
            "step": last_order,
            "stage": "base",
            "tasks": [t.task_id for t in base],
            "k_current": k1,
            "new_skills": list(range(k1)),
            "partition_sizes": sizes,
            "silhouette_sweep": {str(k): v for k, v in sorted(sweep_scores.items())},
            "skill_usage": _usage_by_task(items, labels),
        }
    )
    return state


def _usage_by_task(items, labels) -> dict[str, dict[str, int]]:
    usage: dict[str, dict[str, int]] = {}
    for (task, seg, _), lab in zip(items, labels):
        per = usage.setdefault(task.task_id, {})
        per[str(lab)] = per.get(str(lab), 0) + (seg.end - seg.start)
    return usage


def run_lifelong_step(state: LifelongState, task: TaskSpec, config: RunConfig) -> LifelongState:
    if task.order != state.step + 1:
        raise OutOfOrderTask(f"task order {task.order}, expected {state.step + 1}")
    if not task.demos:
        raise MissingDemos(f"task {task.task_id} has no demonstrations")

    items = [(task, seg, frames) for seg, frames in _segment_task(task, config)]
    segments = [seg for _, seg, _ in items]

    k_before = state.clustering.num_skills
    if config.single_skill:
        for seg in segments:
            state.clustering.partitions[0].members.append(seg)
        labels = [0] * len(segments)
        sils = [float("nan")] * len(segments)
    else:
        labels, sils = incremental_assign(
            segments,
            state.clustering,
            step=task.order,
            allow_new=config.allow_new_skills,
        )
    k_after = state.clustering.num_skills
    new_skills = list(range(k_before, k_after))

    rows_by_skill: dict[int, list[TrainingRow]] = {}
    new_meta_rows: list[MetaRow] = []
    for (t, seg, frames), lab in zip(items, labels):
        rows = _rows_for(seg, frames, config)
        rows_by_skill.setdefault(lab, []).extend(rows)
        new_meta_rows.extend(_meta_rows(rows, lab, task.language_embedding))

    for k in sorted(rows_by_skill):
        if k in state.library:
            replayed = state.buffer.partition_view(k, config.lookahead, config.goal_window)
            state.library[k].finetune(rows_by_skill[k] + replayed, step=task.order)
        else:
            state.library[k] = SkillPolicy(k, knn_k=config.knn_k).train(
                rows_by_skill[k], step=task.order
            )

    buffer_meta = _buffer_meta_rows(state, config)
    state.meta = MetaController(k_max=config.k_max, temperature=config.temperature)
    state.meta.fit(new_meta_rows + buffer_meta, k_current=k_after)

    state.task_lang[task.task_id] = task.language_embedding
    state.buffer.record_task_exemplars(task, segments, labels, config.n_save)
    state.step = task.order

    state.records.append(
        {
            "step": task.order,
            "stage": "lifelong",
            "tasks": [task.task_id],
            "k_current": k_after,
            "new_skills": new_skills,
            "partition_sizes": {p.skill_id: len(p.members) for p in state.clustering.partitions},
            "silhouettes": [None if np.isnan(s) else s for s in sils],
            "skill_usage": _usage_by_task(items, labels),
        }
    )
    return state


def evaluate_policy(state: LifelongState, task: TaskSpec, episodes: int, env) -> float:
    """Success rate of the current hierarchical policy over seeded episodes."""
    if episodes <= 0:
        raise BadEpisodeCount(f"episodes={episodes}")
    if task.order > state.step:
        raise UnlearnedTask(f"task {task.task_id} (order {task.order}) not yet learned")
    lang = task.language_embedding
    successes = 0
    for ep in range(episodes):
        feature, proprio = env.reset(task.init_seed + ep)
        for _ in range(task.horizon):
            k, omega = state.meta.predict(feature, proprio, lang)
            action = state.library[k].predict(feature, proprio, omega)
            feature, proprio = env.step(action)
            if env.goal_reached:
                successes += 1
                break
    return successes / episodes


def build_success_matrix(
    suite: Suite,
    config: RunConfig,
    env_factory: Callable[[TaskSpec], object],
) -> tuple[SuccessMatrix, LifelongState]:
    state = run_base_stage(suite, config)
    n_base = len(suite.base_tasks)
    matrix = SuccessMatrix(M=len(suite.tasks), episodes_per_cell=config.episodes)

    # The base stage is one learning event; rows 1..n_base share its evaluation.
    base_rates = {}
    for task in suite.base_tasks:
        base_rates[task.order] = evaluate_policy(
            state, task, config.episodes, env_factory(task)
        )
    for i in range(1, n_base + 1):
        for j in range(1, i + 1):
            matrix.set(i, j, base_rates[j])

    for task in suite.lifelong_tasks:
        run_lifelong_step(state, task, config)
        for j in range(1, task.order + 1):
            prev = suite.task_at(j)
            rate = evaluate_policy(state, prev, config.episodes, env_factory(prev))
            matrix.set(task.order, j, rate)
    return matrix, state


# ---------------------------------------------------------------------------
# state persistence


def _vec(a: np.ndarray) -> list[float]:
    return [float(x) for x in a]


def serialize_policy(policy: SkillPolicy) -> str:
    doc = {
        "skill_id": policy.skill_id,
        "knn_k": policy.knn_k,
        "trained_at_steps": policy.trained_at_steps,
        "rows": [
            {
                "demo_id": r.demo_id,
                "t": r.t,
                "feature": _vec(r.feature),
                "proprio": _vec(r.proprio),
                "action": _vec(r.action),
                "omega": _vec(r.omega),
            }
            for r in policy.rows
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def _deserialize_policy(doc: dict) -> SkillPolicy:
    policy = SkillPolicy(doc["skill_id"], knn_k=doc["knn_k"])
    rows = [
        TrainingRow(
            demo_id=r["demo_id"],
            t=r["t"],
            feature=np.asarray(r["feature"]),
            proprio=np.asarray(r["proprio"]),
            action=np.asarray(r["action"]),
            omega=np.asarray(r["omega"]),
        )
        for r in doc["rows"]
    ]
    policy.train(rows)
    policy.trained_at_steps = list(doc["trained_at_steps"])
    return policy


def save_state(state: LifelongState, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for k in sorted(state.library):
        with open(os.path.join(out_dir, f"skill_{k:03d}.json"), "w", encoding="utf-8") as fh:
            fh.write(serialize_policy(state.library[k]))
            fh.write("\n")
    meta_doc = {
        "k_max": state.meta.k_max,
        "k_current": state.meta.k_current,
        "temperature": state.meta.temperature,
        "rows": [
            {"q": _vec(r.q), "label": r.label, "omega": _vec(r.omega)}
            for r in state.meta.rows
        ],
    }
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta_doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    clus_doc = {
        "step": state.step,
        "seed": state.seed,
        "sil_threshold": state.clustering.sil_threshold,
        "task_lang": {k: _vec(v) for k, v in state.task_lang.items()},
        "partitions": [
            {
                "skill_id": p.skill_id,
                "created_at_step": p.created_at_step,
                "members": [
                    {
                        "demo_id": s.demo_id,
                        "task_id": s.task_id,
                        "start": s.start,
                        "end": s.end,
                        "pooled": _vec(s.pooled),
                    }
                    for s in p.members
                ],
            }
            for p in state.clustering.partitions
        ],
    }
    with open(os.path.join(out_dir, "clustering.json"), "w", encoding="utf-8") as fh:
        json.dump(clus_doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    state.buffer.save(os.path.join(out_dir, "buffer"))


def load_state(in_dir: str) -> LifelongState:
    library: dict[int, SkillPolicy] = {}
    for name in sorted(os.listdir(in_dir)):
        if name.startswith("skill_") and name.endswith(".json"):
            with open(os.path.join(in_dir, name), "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            library[doc["skill_id"]] = _deserialize_policy(doc)
    with open(os.path.join(in_dir, "meta.json"), "r", encoding="utf-8") as fh:
        mdoc = json.load(fh)
    meta = MetaController(k_max=mdoc["k_max"], temperature=mdoc["temperature"])
    meta.fit(
        [
            MetaRow(
                q=np.asarray(r["q"]), label=r["label"], omega=np.asarray(r["omega"])
            )
            for r in mdoc["rows"]
        ],
        k_current=mdoc["k_current"],
    )
    with open(os.path.join(in_dir, "clustering.json"), "r", encoding="utf-8") as fh:
        cdoc = json.load(fh)
    clustering = ClusteringState(sil_threshold=cdoc["sil_threshold"])
    for pdoc in cdoc["partitions"]:
        clustering.partitions.append(
            Partition(
                skill_id=pdoc["skill_id"],
                created_at_step=pdoc["created_at_step"],
                members=[
                    Segment(
                        demo_id=m["demo_id"],
                        task_id=m["task_id"],
                        start=m["start"],
                        end=m["end"],
                        pooled=np.asarray(m["pooled"]),
                    )
                    for m in pdoc["members"]
                ],
            )
        )
    buffer = ReplayBuffer.load(os.path.join(in_dir, "buffer"))
    return LifelongState(
        step=cdoc["step"],
        clustering=clustering,
        library=library,
        meta=meta,
        buffer=buffer,
        seed=cdoc["seed"],
        task_lang={k: np.asarray(v) for k, v in cdoc["task_lang"].items()},
    )
