"""Lifelong transfer metrics over a lower-triangular success matrix.

r[(i, j)] is the success rate on task j after the first i tasks have been
learned, defined for 1 <= j <= i <= M.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import IncompleteMatrix


@dataclass
class SuccessMatrix:
    M: int
    r: dict[tuple[int, int], float] = field(default_factory=dict)
    episodes_per_cell: int = 20

    def set(self, i: int, j: int, value: float) -> None:
        if not 1 <= j <= i <= self.M:
            raise ValueError(f"cell ({i},{j}) outside the lower triangle, M={self.M}")
        self.r[(i, j)] = float(value)

    def get(self, i: int, j: int) -> float:
        try:
            return self.r[(i, j)]
        except KeyError:
            raise IncompleteMatrix(f"missing cell ({i},{j})") from None

    def is_complete(self) -> bool:
        return all((i, j) in self.r for i in range(1, self.M + 1) for j in range(1, i + 1))

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "episodes_per_cell": self.episodes_per_cell,
            "r": {f"{i},{j}": v for (i, j), v in sorted(self.r.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SuccessMatrix":
        m = cls(M=int(obj["M"]), episodes_per_cell=int(obj.get("episodes_per_cell", 20)))
        for key, v in obj["r"].items():
            i, j = (int(x) for x in key.split(","))
            m.set(i, j, float(v))
        return m

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "SuccessMatrix":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass
class LifelongMetrics:
    fwt: float
    nbt: float
    auc: float
    nbt_m: list[float]
    auc_m: list[float]

    def to_json(self, percent: bool = False) -> dict:
        scale = 100.0 if percent else 1.0
        return {
            "fwt": self.fwt * scale,
            "nbt": self.nbt * scale,
            "auc": self.auc * scale,
            "nbt_m": [v * scale for v in self.nbt_m],
            "auc_m": [v * scale for v in self.auc_m],
        }


def compute_lifelong_metrics(
    matrix: SuccessMatrix, nbt_includes_final: bool = True
) -> LifelongMetrics:
    """Exact formula evaluation of FWT, NBT, and AUC.

    The final task's backward-transfer term is an empty sum; it is defined as
    0 and, by default, still counted in the NBT average. Set
    nbt_includes_final=False to average NBT over the first M-1 tasks instead.
    """
    if not matrix.is_complete():
        missing = [
            (i, j)
            for i in range(1, matrix.M + 1)
            for j in range(1, i + 1)
            if (i, j) not in matrix.r
        ]
        raise IncompleteMatrix(f"missing cells {missing[:5]}{'...' if len(missing) > 5 else ''}")
    M = matrix.M
    fwt = sum(matrix.get(m, m) for m in range(1, M + 1)) / M

    nbt_m = []
    auc_m = []
    for m in range(1, M + 1):
        later = [matrix.get(q, m) for q in range(m + 1, M + 1)]
        if later:
            nbt_m.append(sum(matrix.get(m, m) - r for r in later) / (M - m))
        else:
            nbt_m.append(0.0)  # empty-sum convention at m = M
        auc_m.append((matrix.get(m, m) + sum(later)) / (M - m + 1))

    if nbt_includes_final or M == 1:
        nbt = sum(nbt_m) / M
    else:
        nbt = sum(nbt_m[:-1]) / (M - 1)
    auc = sum(auc_m) / M
    return LifelongMetrics(fwt=fwt, nbt=nbt, auc=auc, nbt_m=nbt_m, auc_m=auc_m)


def auc_over_steps(matrix: SuccessMatrix) -> dict[int, float]:
    """Mean success over learned tasks after each step with evaluations."""
    out = {}
    for i in range(1, matrix.M + 1):
        vals = [matrix.r[(i, j)] for j in range(1, i + 1) if (i, j) in matrix.r]
        if vals:
            out[i] = sum(vals) / len(vals)
    return out
