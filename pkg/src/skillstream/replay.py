"""Experience-replay buffer.

Keeps exemplar demonstrations per task plus per-skill views of their
segments for fine-tuning. Exemplar selection is deterministic (first
n_save demos by demo_id) and nothing is ever evicted.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UnknownSkillLabel
from .policies import TrainingRow, make_training_rows
from .segmentation import Segment, pool_features
from .trajectory_store import Demonstration, Frame, TaskSpec, load_demo, save_demo


@dataclass(frozen=True)
class BufferedSegment:
    segment: Segment
    frames: tuple[Frame, ...]
    skill_id: int


@dataclass
class ReplayBuffer:
    by_task: dict[str, list[Demonstration]] = field(default_factory=dict)
    by_skill: dict[int, list[BufferedSegment]] = field(default_factory=dict)
    step: int = 0

    def record_task_exemplars(
        self,
        task: TaskSpec,
        segments: Sequence[Segment],
        labels: Sequence[int],
        n_save: int,
    ) -> None:
        """Store the first n_save demos (by demo_id) and their labeled segments."""
        by_demo: dict[str, list[tuple[Segment, int]]] = {}
        for seg, lab in zip(segments, labels):
            if lab < 0:
                raise UnknownSkillLabel(f"segment {seg.demo_id}[{seg.start}:{seg.end}] has label {lab}")
            by_demo.setdefault(seg.demo_id, []).append((seg, lab))

        saved = sorted(task.demos, key=lambda d: d.demo_id)[: max(0, n_save)]
        for demo in saved:
            if demo.demo_id not in by_demo:
                raise UnknownSkillLabel(f"no labeled segments for saved demo {demo.demo_id}")
            self.by_task.setdefault(task.task_id, []).append(demo)
            for seg, lab in sorted(by_demo[demo.demo_id], key=lambda p: p[0].start):
                frames = demo.frames[seg.start : seg.end]
                self.by_skill.setdefault(lab, []).append(
                    BufferedSegment(segment=seg, frames=frames, skill_id=lab)
                )
        self.step += 1

    def partition_view(
        self, skill_id: int, lookahead: int = 10, goal_window: int = 3
    ) -> list[TrainingRow]:
        rows: list[TrainingRow] = []
        for buf in self.by_skill.get(skill_id, []):
            rows.extend(
                make_training_rows(buf.segment, buf.frames, lookahead, goal_window)
            )
        return rows

    def all_segments(self) -> list[BufferedSegment]:
        out = []
        for k in sorted(self.by_skill):
            out.extend(self.by_skill[k])
        return out

    # ------------------------------------------------------------------
    # persistence: index.json + per-demo JSONL under <dir>/demos/

    def save(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        demos_dir = os.path.join(out_dir, "demos")
        index = {
            "step": self.step,
            "tasks": {},
            "skills": {},
        }
        for task_id in sorted(self.by_task):
            ids = []
            for demo in self.by_task[task_id]:
                save_demo(demo, os.path.join(demos_dir, f"{demo.demo_id}.jsonl"))
                ids.append(demo.demo_id)
            index["tasks"][task_id] = ids
        for k in sorted(self.by_skill):
            index["skills"][str(k)] = [
                {
                    "demo_id": b.segment.demo_id,
                    "task_id": b.segment.task_id,
                    "start": b.segment.start,
                    "end": b.segment.end,
                }
                for b in self.by_skill[k]
            ]
        with open(os.path.join(out_dir, "index.json"), "w", encoding="utf-8") as fh:
            json.dump(index, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, in_dir: str) -> "ReplayBuffer":
        with open(os.path.join(in_dir, "index.json"), "r", encoding="utf-8") as fh:
            index = json.load(fh)
        buf = cls(step=int(index["step"]))
        demo_map: dict[str, Demonstration] = {}
        task_of_demo: dict[str, str] = {}
        for task_id, ids in index["tasks"].items():
            for demo_id in ids:
                demo = load_demo(
                    os.path.join(in_dir, "demos", f"{demo_id}.jsonl"), demo_id, task_id
                )
                buf.by_task.setdefault(task_id, []).append(demo)
                demo_map[demo_id] = demo
                task_of_demo[demo_id] = task_id
        for k_str, entries in index["skills"].items():
            k = int(k_str)
            for e in entries:
                demo = demo_map[e["demo_id"]]
                frames = demo.frames[e["start"] : e["end"]]
                seg = Segment(
                    demo_id=e["demo_id"],
                    task_id=e["task_id"],
                    start=e["start"],
                    end=e["end"],
                    pooled=pool_features(frames),
                )
                buf.by_skill.setdefault(k, []).append(
                    BufferedSegment(segment=seg, frames=frames, skill_id=k)
                )
        return buf
