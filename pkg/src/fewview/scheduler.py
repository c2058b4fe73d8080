"""Anchor selection, target grouping, and generation-plan assembly.

A plan is an ordered list of steps, each pairing conditioning view ids with
target pose ids. Ids are global: observed views take 0..M-1, target poses
M..M+N-1. Every step respects the model budget |cond| + |targets| <= 8.
Distances are always between camera centers; orientations are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import Pose, View

MAX_VIEWS_PER_STEP = 8
ANCHOR_COUNT = 7
GROUP_SIZE = 5
CONDITIONING_SIZE = 3


class StepStage(str, Enum):
    ANCHOR = "anchor"
    GROUP = "group"


@dataclass(frozen=True)
class Step:
    conditioning_ids: tuple
    target_ids: tuple
    stage: StepStage

    def __post_init__(self):
        object.__setattr__(self, "conditioning_ids", tuple(self.conditioning_ids))
        object.__setattr__(self, "target_ids", tuple(self.target_ids))
        object.__setattr__(self, "stage", StepStage(self.stage))
        if len(self.conditioning_ids) + len(self.target_ids) > MAX_VIEWS_PER_STEP:
            raise ValueError("step exceeds the 8-view conditioning+target budget")


@dataclass(frozen=True)
class SamplingPlan:
    steps: tuple
    pose_table: tuple  # target Pose per target id (index = id - len(observed_ids))
    observed_ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "pose_table", tuple(self.pose_table))
        object.__setattr__(self, "observed_ids", tuple(self.observed_ids))
        self.validate()

    @property
    def target_ids(self) -> tuple:
        base = len(self.observed_ids)
        return tuple(range(base, base + len(self.pose_table)))

    def pose_for(self, target_id: int) -> Pose:
        return self.pose_table[target_id - len(self.observed_ids)]

    def validate(self):
        seen = []
        available = set(self.observed_ids)
        for step in self.steps:
            for cid in step.conditioning_ids:
                if cid not in available:
                    raise ValueError(
                        f"conditioning id {cid} is neither observed nor generated earlier")
            seen.extend(step.target_ids)
            available.update(step.target_ids)
        if sorted(seen) != sorted(self.target_ids):
            raise ValueError("step targets do not partition the target pose set")

    def to_json(self) -> dict:
        return {
            "observed_ids": list(self.observed_ids),
            "pose_table": [_pose_json(p) for p in self.pose_table],
            "steps": [{
                "stage": s.stage.value,
                "conditioning_ids": list(s.conditioning_ids),
                "target_ids": list(s.target_ids),
            } for s in self.steps],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SamplingPlan":
        steps = tuple(Step(s["conditioning_ids"], s["target_ids"], s["stage"])
                      for s in data["steps"])
        poses = tuple(_pose_from_json(p) for p in data["pose_table"])
        return cls(steps=steps, pose_table=poses,
                   observed_ids=tuple(data["observed_ids"]))


def _pose_json(p: Pose) -> dict:
    return {"rotation": [float(x) for x in p.rotation.ravel()],
            "translation": [float(x) for x in p.translation]}


def _pose_from_json(d: dict) -> Pose:
    return Pose(np.asarray(d["rotation"], dtype=float).reshape(3, 3),
                np.asarray(d["translation"], dtype=float))


def select_anchors(candidates: np.ndarray, observed: np.ndarray, k: int) -> list[int]:
    """Greedy furthest-point indices into `candidates`, seeded by `observed`.

    Ties break toward the lowest index; indices come back in selection order.
    """
    candidates = np.asarray(candidates, dtype=float).reshape(-1, 3)
    observed = np.asarray(observed, dtype=float).reshape(-1, 3)
    if k > len(candidates):
        raise ValueError(f"k={k} exceeds candidate count {len(candidates)}")
    if len(observed) == 0:
        raise ValueError("observed set must be non-empty")
    d = np.min(np.linalg.norm(candidates[:, None, :] - observed[None, :, :], axis=2),
               axis=1)
    chosen = []
    for _ in range(k):
        pick = int(np.argmax(d))  # argmax returns the first (lowest-index) max
        chosen.append(pick)
        d = np.minimum(d, np.linalg.norm(candidates - candidates[pick], axis=1))
        d[pick] = -1.0
    return chosen


def group_targets(positions: np.ndarray, group_size: int) -> list[list[int]]:
    """Greedy proximity grouping: seed at the lowest unassigned index, gather
    its nearest unassigned neighbors, repeat until everything is assigned."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    unassigned = list(range(len(positions)))
    groups = []
    while unassigned:
        seed = unassigned.pop(0)
        dists = [(float(np.linalg.norm(positions[j] - positions[seed])), j)
                 for j in unassigned]
        dists.sort()
        taken = [j for _, j in dists[:group_size - 1]]
        for j in taken:
            unassigned.remove(j)
        groups.append(sorted([seed] + taken))
    return groups


def nearest_conditioning(group_positions: np.ndarray, pool: list, m: int) -> list:
    """Ids of the m pool entries nearest the group centroid (ties by id)."""
    if m > len(pool):
        raise ValueError(f"m={m} exceeds pool size {len(pool)}")
    centroid = np.asarray(group_positions, dtype=float).reshape(-1, 3).mean(axis=0)
    ranked = sorted((float(np.linalg.norm(np.asarray(pos, dtype=float) - centroid)), vid)
                    for vid, pos in pool)
    return [vid for _, vid in ranked[:m]]


def build_plan(observed: list[View], targets: list[Pose], mode: str) -> SamplingPlan:
    """Full generation plan: anchor step (single-image only) plus group steps."""
    if mode not in ("single_image", "few_view"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "single_image" and len(observed) != 1:
        raise ValueError("single_image mode requires exactly 1 observed view")
    if mode == "few_view" and len(observed) < 2:
        raise ValueError("few_view mode requires at least 2 observed views")

    n_obs = len(observed)
    obs_pos = np.array([v.pose.translation for v in observed])
    tgt_pos = np.array([p.translation for p in targets]).reshape(-1, 3)
    tgt_ids = list(range(n_obs, n_obs + len(targets)))

    steps = []
    if mode == "single_image":
        k = min(ANCHOR_COUNT, len(targets))
        anchor_local = select_anchors(tgt_pos, obs_pos, k)
        steps.append(Step(conditioning_ids=[0],
                          target_ids=[tgt_ids[i] for i in anchor_local],
                          stage=StepStage.ANCHOR))
        pool = [(i, obs_pos[i]) for i in range(n_obs)]
        pool += [(tgt_ids[i], tgt_pos[i]) for i in anchor_local]
        remaining = [i for i in range(len(targets)) if i not in set(anchor_local)]
    else:
        pool = [(i, obs_pos[i]) for i in range(n_obs)]
        remaining = list(range(len(targets)))

    if remaining:
        rem_pos = tgt_pos[remaining]
        m = min(CONDITIONING_SIZE, len(pool))
        for group in group_targets(rem_pos, GROUP_SIZE):
            gids = [tgt_ids[remaining[i]] for i in group]
            cond = nearest_conditioning(rem_pos[group], pool, m)
            steps.append(Step(conditioning_ids=cond, target_ids=gids,
                              stage=StepStage.GROUP))

    return SamplingPlan(steps=tuple(steps), pose_table=tuple(targets),
                        observed_ids=tuple(range(n_obs)))
