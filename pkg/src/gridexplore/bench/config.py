"""Experiment configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..agents import AGENT_NAMES
from ..world import PRESETS

DEFAULT_T_EXP = {"small-cluttered": 200, "large-open": 500}


@dataclass
class ExperimentConfig:
    preset: str = "small-cluttered"
    agents: list = field(default_factory=lambda: list(AGENT_NAMES))
    env_seeds: list = field(default_factory=lambda: list(range(10)))
    episode_seeds: list = field(default_factory=lambda: list(range(5)))
    T_exp: int | None = None
    etas: list = field(default_factory=lambda: [0.0])
    p_flip: float = 0.0            # per-scan label-flip noise (noisy occupancy condition)
    gamma: float = 0.99            # kept for completeness; planners ignore it
    master_seed: int = 0
    workers: int = 1
    checkpoints: list | None = None
    metrics: list = field(default_factory=lambda: ["area", "objects", "landmarks"])
    tasks: list = field(default_factory=list)   # any of nav, loc, recon
    out_dir: str = "runs/default"
    save_logs: bool = True
    save_maps: bool = True
    agent_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if not self.env_seeds or not self.episode_seeds:
            raise ValueError("seeds must be nonempty")
        if any(e < 0 for e in self.etas) or self.p_flip < 0:
            raise ValueError("noise levels must be non-negative")
        bad = [a for a in self.agents if a not in AGENT_NAMES]
        if bad:
            raise ValueError(f"unknown agents {bad}")
        if self.T_exp is None:
            self.T_exp = DEFAULT_T_EXP[self.preset]
        if self.T_exp <= 0:
            raise ValueError("T_exp must be positive")
        if self.checkpoints is None:
            T = self.T_exp
            self.checkpoints = sorted({max(1, T // 8), max(1, T // 4), max(1, T // 2), T})

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        # JSON is a subset of YAML, so one loader covers both
        return cls.from_dict(yaml.safe_load(text) or {})

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
