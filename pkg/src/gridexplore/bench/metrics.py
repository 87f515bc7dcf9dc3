"""Visitation metrics, oracle normalization, noise robustness and skill values."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..world import (GridEnvironment, Pose, Sensor, center_depth, distance_field,
                     heading_angle, line_of_sight, snap)

OBJECT_RANGE = 3.0
OBJECT_BEARING = math.radians(60)
# (max bearing difference, max geodesic distance, depth tolerance or None)
LANDMARK_RULES = {
    "small-cluttered": (math.radians(30), 1.0, None),
    "large-open": (math.radians(20), 2.0, 0.5),
}


def _angdiff(a: float, b: float) -> float:
    return abs((a - b + math.pi) % (2 * math.pi) - math.pi)


def object_visited(env: GridEnvironment, pose: Pose, obj_cell, sensor: Sensor | None = None) -> bool:
    """Close, roughly faced, inside the view cone and not hidden behind an obstacle."""
    sensor = sensor or Sensor()
    dx = (obj_cell[0] - pose.x) * env.cell_size
    dy = (obj_cell[1] - pose.y) * env.cell_size
    d = math.hypot(dx, dy)
    if d >= OBJECT_RANGE:
        return False
    if d == 0:
        return True
    theta = _angdiff(math.atan2(dy, dx), heading_angle(pose.heading, sensor.n_headings))
    if theta > OBJECT_BEARING + 1e-9 or theta > math.radians(sensor.fov_deg) / 2 + 1e-9:
        return False
    return line_of_sight(env, (pose.x, pose.y), tuple(obj_cell))


def landmark_focus(env: GridEnvironment, lm: Pose, sensor: Sensor | None = None) -> tuple[float, float]:
    """Metric point struck by the landmark view's center ray."""
    sensor = sensor or Sensor()
    d = center_depth(env, lm, sensor)
    th = heading_angle(lm.heading, sensor.n_headings)
    return (lm.x * env.cell_size + d * float(snap(math.cos(th))),
            lm.y * env.cell_size + d * float(snap(math.sin(th))))


def landmark_visited(env: GridEnvironment, pose: Pose, lm: Pose, preset: str, geo: np.ndarray | None = None,
                     sensor: Sensor | None = None, focus=None, agent_depth: float | None = None) -> bool:
    """Pose matches the landmark view closely enough to be counted as having seen it.

    geo is the step-distance field from the landmark cell. On the large preset the
    agent's center-ray depth must also agree with its distance to the landmark's focus
    point, which fails when something stands between them.
    """
    sensor = sensor or Sensor()
    max_theta, max_d, depth_tol = LANDMARK_RULES[preset]
    H = sensor.n_headings
    # headings are multiples of 2*pi/H, so compare with a tolerance for the boundary case
    if _angdiff(heading_angle(pose.heading, H), heading_angle(lm.heading, H)) >= max_theta - 1e-9:
        return False
    if geo is None:
        geo = distance_field(env, (lm.x, lm.y))
    steps = geo[pose.y, pose.x]
    if steps < 0 or steps * env.cell_size >= max_d:
        return False
    if depth_tol is None:
        return True
    if focus is None:
        focus = landmark_focus(env, lm, sensor)
    d1 = agent_depth if agent_depth is not None else center_depth(env, pose, sensor)
    d2 = math.hypot(focus[0] - pose.x * env.cell_size, focus[1] - pose.y * env.cell_size)
    return abs(d1 - d2) < depth_tol


@dataclass
class VisitTracker:
    """Accumulates area / object / landmark visitation along a true trajectory."""

    env: GridEnvironment
    preset: str
    sensor: Sensor
    landmark_geo: list
    landmark_focus: list

    def __post_init__(self):
        self.seen = np.zeros(self.env.occupancy.shape, bool)
        self.objects = set()
        self.landmarks = set()
        self._obj = np.array([c for c, _ in self.env.objects], np.int64).reshape(-1, 2)

    def update(self, pose: Pose, obs) -> None:
        vis = obs.visible
        self.seen[vis[:, 1], vis[:, 0]] = True
        if len(self._obj):
            near = np.hypot(self._obj[:, 0] - pose.x, self._obj[:, 1] - pose.y) * self.env.cell_size
            for i in np.nonzero(near < OBJECT_RANGE)[0]:
                if i not in self.objects and object_visited(self.env, pose, self._obj[i], self.sensor):
                    self.objects.add(int(i))
        for i, lm in enumerate(self.env.landmark_views):
            if i in self.landmarks:
                continue
            if landmark_visited(self.env, pose, lm, self.preset, self.landmark_geo[i], self.sensor,
                                self.landmark_focus[i], obs.center_depth):
                self.landmarks.add(i)

    def area(self) -> float:
        return float((self.seen & ~self.env.occupancy).sum()) * self.env.cell_size ** 2

    def scores(self) -> dict:
        return {"area": self.area(), "objects": len(self.objects), "landmarks": len(self.landmarks)}


def normalize(raw: float, best_oracle: float):
    """(value, flag): raw / best oracle, or raw itself flagged when the oracle scored 0."""
    if best_oracle <= 0:
        return float(raw), True
    return float(raw) / best_oracle, False


def visitation_metrics(scores: dict, oracle_scores: list[dict]) -> dict:
    """Normalize each metric by the best oracle score for the same episode."""
    out = {}
    for k, v in scores.items():
        best = max((o[k] for o in oracle_scores), default=0.0)
        val, flag = normalize(v, best)
        out[k] = val
        out[k + "_absolute"] = flag
    return out


def nrc(noisy: float, clean: float) -> float:
    """Noise robustness coefficient: noisy-condition score over clean-condition score."""
    if clean == 0:
        raise ValueError("clean-condition score is zero")
    return noisy / clean


def skill_value(method: float, random: float, oracle: float) -> float:
    """(method - random) / (oracle - random); NaN with a warning if the range is empty."""
    if oracle == random:
        warnings.warn("degenerate skill normalization: oracle equals random")
        return math.nan
    return (method - random) / (oracle - random)


skill_values = skill_value
