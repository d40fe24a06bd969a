"""Demonstration data model and suite loading.

A suite lives on disk as a `suite.json` manifest plus one JSON-Lines file
per demonstration (one frame per line). All numeric payloads are float64
in memory regardless of file precision so that comparisons in tests are
deterministic across platforms.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingFile,
    NonContiguousOrder,
    NonMonotoneTime,
    ShortDemo,
    UnknownTask,
)

STAGE_BASE = "base"
STAGE_LIFELONG = "lifelong"


@dataclass(frozen=True)
class Dims:
    F: int  # feature width
    P: int  # proprioception width
    A: int  # action width
    L: int  # language-embedding width


@dataclass(frozen=True)
class Frame:
    t: int
    feature: np.ndarray
    proprio: np.ndarray
    action: np.ndarray
    gt_skill: Optional[int] = None
    gt_boundary: Optional[bool] = None


@dataclass(frozen=True)
class Demonstration:
    demo_id: str
    task_id: str
    frames: tuple[Frame, ...]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    order: int
    stage: str
    language_embedding: np.ndarray
    goal_id: str
    init_seed: int
    horizon: int
    demos: tuple[Demonstration, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class Suite:
    suite_id: str
    tasks: tuple[TaskSpec, ...]
    dims: Dims

    @property
    def base_tasks(self) -> tuple[TaskSpec, ...]:
        return tuple(t for t in self.tasks if t.stage == STAGE_BASE)

    @property
    def lifelong_tasks(self) -> tuple[TaskSpec, ...]:
        return tuple(t for t in self.tasks if t.stage == STAGE_LIFELONG)

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise UnknownTask(task_id)

    def task_at(self, order: int) -> TaskSpec:
        if not 1 <= order <= len(self.tasks):
            raise UnknownTask(f"order {order}")
        return self.tasks[order - 1]


def validate_demo(demo: Demonstration, dims: Dims, horizon: int | None = None) -> None:
    """Check monotone time, uniform vector widths, and minimal length."""
    if len(demo.frames) < 2:
        raise ShortDemo(f"{demo.demo_id}: {len(demo.frames)} frame(s), need >= 2")
    prev_t = None
    for fr in demo.frames:
        if prev_t is not None and fr.t <= prev_t:
            raise NonMonotoneTime(f"{demo.demo_id}: t={fr.t} after t={prev_t}")
        prev_t = fr.t
        for name, vec, want in (
            ("feature", fr.feature, dims.F),
            ("proprio", fr.proprio, dims.P),
            ("action", fr.action, dims.A),
        ):
            if vec.shape != (want,):
                raise DimensionMismatch(
                    f"{demo.demo_id} t={fr.t}: {name} has shape {vec.shape}, expected ({want},)"
                )
    if horizon is not None and len(demo.frames) >= horizon:
        raise ShortDemo(
            f"{demo.demo_id}: length {len(demo.frames)} exceeds horizon {horizon}"
        )


def _frame_from_record(rec: dict) -> Frame:
    return Frame(
        t=int(rec["t"]),
        feature=np.asarray(rec["feature"], dtype=np.float64),
        proprio=np.asarray(rec["proprio"], dtype=np.float64),
        action=np.asarray(rec["action"], dtype=np.float64),
        gt_skill=rec.get("gt_skill"),
        gt_boundary=rec.get("gt_boundary"),
    )


def _frame_to_record(fr: Frame) -> dict:
    rec = {
        "t": fr.t,
        "feature": [float(x) for x in fr.feature],
        "proprio": [float(x) for x in fr.proprio],
        "action": [float(x) for x in fr.action],
    }
    if fr.gt_skill is not None:
        rec["gt_skill"] = int(fr.gt_skill)
    if fr.gt_boundary is not None:
        rec["gt_boundary"] = bool(fr.gt_boundary)
    return rec


def load_demo(path: str, demo_id: str, task_id: str) -> Demonstration:
    if not os.path.isfile(path):
        raise MissingFile(path)
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                frames.append(_frame_from_record(json.loads(line)))
    return Demonstration(demo_id=demo_id, task_id=task_id, frames=tuple(frames))


def save_demo(demo: Demonstration, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for fr in demo.frames:
            fh.write(json.dumps(_frame_to_record(fr)) + "\n")


def load_suite(manifest_path: str) -> Suite:
    """Load and fully validate a suite from its `suite.json` manifest."""
    if not os.path.isfile(manifest_path):
        raise MissingFile(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, "r", encoding="utf-8") as fh:
        man = json.load(fh)
    dims = Dims(
        F=int(man["dims"]["F"]),
        P=int(man["dims"]["P"]),
        A=int(man["dims"]["A"]),
        L=int(man["dims"]["L"]),
    )

    tasks = []
    for trec in man["tasks"]:
        demos = []
        for i, rel in enumerate(trec["demos"]):
            demo_id = os.path.splitext(os.path.basename(rel))[0]
            demo = load_demo(os.path.join(root, rel), demo_id, trec["task_id"])
            demos.append(demo)
        lang = np.asarray(trec["language_embedding"], dtype=np.float64)
        if lang.shape != (dims.L,):
            raise DimensionMismatch(
                f"{trec['task_id']}: language embedding shape {lang.shape}, expected ({dims.L},)"
            )
        tasks.append(
            TaskSpec(
                task_id=trec["task_id"],
                order=int(trec["order"]),
                stage=trec["stage"],
                language_embedding=lang,
                goal_id=trec["goal_id"],
                init_seed=int(trec["init_seed"]),
                horizon=int(trec["horizon"]),
                demos=tuple(demos),
            )
        )

    tasks.sort(key=lambda t: t.order)
    orders = [t.order for t in tasks]
    if orders != list(range(1, len(tasks) + 1)):
        raise NonContiguousOrder(f"task orders {orders} are not 1..{len(tasks)}")
    seen_lifelong = False
    for t in tasks:
        if t.stage == STAGE_LIFELONG:
            seen_lifelong = True
        elif t.stage == STAGE_BASE and seen_lifelong:
            raise NonContiguousOrder(
                f"base task {t.task_id} ordered after a lifelong task"
            )
        elif t.stage not in (STAGE_BASE, STAGE_LIFELONG):
            raise NonContiguousOrder(f"{t.task_id}: unknown stage {t.stage!r}")
    if not any(t.stage == STAGE_BASE for t in tasks):
        raise NonContiguousOrder("suite has no base task")
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise NonContiguousOrder("duplicate task_ids in suite")

    for t in tasks:
        for demo in t.demos:
            validate_demo(demo, dims, horizon=t.horizon)

    return Suite(suite_id=man["suite_id"], tasks=tuple(tasks), dims=dims)


def save_suite(suite: Suite, out_dir: str) -> str:
    """Write `suite.json` + per-demo JSONL files under out_dir; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    tasks = []
    for t in suite.tasks:
        rels = []
        for demo in t.demos:
            rel = os.path.join("demos", f"{demo.demo_id}.jsonl")
            save_demo(demo, os.path.join(out_dir, rel))
            rels.append(rel)
        tasks.append(
            {
                "task_id": t.task_id,
                "order": t.order,
                "stage": t.stage,
                "language_embedding": [float(x) for x in t.language_embedding],
                "goal_id": t.goal_id,
                "init_seed": t.init_seed,
                "horizon": t.horizon,
                "demos": rels,
            }
        )
    man = {
        "suite_id": suite.suite_id,
        "dims": {"F": suite.dims.F, "P": suite.dims.P, "A": suite.dims.A, "L": suite.dims.L},
        "tasks": tasks,
    }
    path = os.path.join(out_dir, "suite.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2)
        fh.write("\n")
    return path


def iter_demos(suite: Suite) -> Iterable[Demonstration]:
    for t in suite.tasks:
        yield from t.demos
