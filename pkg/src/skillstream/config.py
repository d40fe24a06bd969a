"""Run configuration with documented defaults.

An empty JSON config runs the bundled synthetic suite end to end; every
knob below can be overridden from the config file or CLI flags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class RunConfig:
    # segmentation
    window: int = 5
    merge_threshold: float = 0.85
    min_segments: int = 1
    max_segments: int = 10
    min_length: int = 5
    # clustering
    sil_threshold: float = 0.1
    k_max_sweep: int = 8
    # policies
    knn_k: int = 5
    lookahead: int = 10
    goal_window: int = 3
    temperature: float = 1.0
    k_max: int = 64
    # replay / evaluation
    n_save: int = 5
    episodes: int = 20
    # ablation switches
    allow_new_skills: bool = True
    single_skill: bool = False
    # misc
    nbt_includes_final: bool = True
    seed: int = 0
    threads: int = 1
    suite_path: str | None = None  # suite.json; generated when absent

    def __post_init__(self) -> None:
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if not -1.0 <= self.sil_threshold or self.episodes < 0:
            raise ConfigError("bad threshold or episode count")
        if self.window < 2 or self.min_segments < 1 or self.max_segments < self.min_segments:
            raise ConfigError("bad segmentation clamps")
        if self.min_length < 1 or self.knn_k < 1 or self.lookahead < 0 or self.goal_window < 1:
            raise ConfigError("bad policy window settings")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
