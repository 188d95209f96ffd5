"""Three-arm shared-workspace simulator.

Kinematic point end-effectors under per-axis velocity commands, integrated at
a fixed control period and clamped to the workspace box. The active
instruction determines per-arm targets and phase flags, which appear inside
the observation — task conditioning happens through the state, so a single
15->9 policy can serve every instruction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .geometry import HOMES, SLOTS
from .instruction import Instruction

Array = np.ndarray

OBS_DIM = 15
ACT_DIM = 9
N_ARMS = 3


class Phase(IntEnum):
    WAITING = 0
    EXECUTING = 1
    COMPLETED = 2


@dataclass
class EnvConfig:
    workspace_lo: Array = field(default_factory=lambda: np.zeros(3))
    workspace_hi: Array = field(default_factory=lambda: np.ones(3))
    dt: float = 0.05
    v_max: float = 0.5
    eps_target: float = 0.05
    d_coll: float = 0.08
    horizon: int = 300
    gamma: float = 0.99
    c1: float = 1.0          # active-arm distance weight
    c2: float = 0.1          # inactive-arm return-home shaping
    bonus: float = 10.0      # waypoint completion
    collision_penalty: float = 5.0

    def __post_init__(self):
        self.workspace_lo = np.asarray(self.workspace_lo, dtype=np.float64)
        self.workspace_hi = np.asarray(self.workspace_hi, dtype=np.float64)
        edge = float(np.min(self.workspace_hi - self.workspace_lo))
        if not self.eps_target < self.d_coll < edge:
            raise ValueError("need eps_target < d_coll < workspace edge")
        if not self.dt * self.v_max < edge:
            raise ValueError("dt * v_max must be below the workspace edge")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown EnvConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class WaypointCompleted:
    arm: int          # 1-based
    index: int        # waypoint position within the instruction

    def label(self) -> str:
        return f"waypoint_completed:{self.arm}:{self.index}"


@dataclass(frozen=True)
class Collision:
    pair: tuple[int, int]   # 1-based, ordered

    def label(self) -> str:
        return f"collision:{self.pair[0]}-{self.pair[1]}"


@dataclass(frozen=True)
class InstructionSatisfied:
    instruction_id: int

    def label(self) -> str:
        return f"instruction_satisfied:{self.instruction_id}"


Event = WaypointCompleted | Collision | InstructionSatisfied


@dataclass
class StepResult:
    obs: Array
    reward: float
    done: bool
    events: list


def check_collisions(positions: Array, d_coll: float) -> list[tuple[int, int]]:
    """All unordered 1-based arm pairs closer than d_coll."""
    out = []
    for i in range(N_ARMS):
        for j in range(i + 1, N_ARMS):
            if np.linalg.norm(positions[i] - positions[j]) < d_coll:
                out.append((i + 1, j + 1))
    return out


class ArmEnv:
    """Single-threaded environment instance; run copies for parallel tasks."""

    def __init__(self, config: Optional[EnvConfig] = None,
                 homes: Array = HOMES, slots: Array = SLOTS):
        self.config = config or EnvConfig()
        self.homes = np.asarray(homes, dtype=np.float64)
        self.slots = np.asarray(slots, dtype=np.float64)
        self.positions = self.homes.copy()
        self.task: Optional[Instruction] = None
        self.cursor = 0
        self.steps = 0
        self._hold_phases = np.zeros(N_ARMS, dtype=np.int64)

    # -- task assignment -------------------------------------------------

    def _assigned_targets(self) -> Array:
        """Per arm: target of its next waypoint at/after the cursor, else home."""
        targets = self.homes.copy()
        if self.task is not None:
            seen = set()
            for wp in self.task.waypoints[self.cursor:]:
                if wp.arm not in seen:
                    targets[wp.arm - 1] = wp.target
                    seen.add(wp.arm)
        return targets

    def _active_arm(self) -> Optional[int]:
        """0-based index of the arm executing the current waypoint."""
        if self.task is None or self.cursor >= len(self.task):
            return None
        return self.task.waypoints[self.cursor].arm - 1

    def _phases(self) -> Array:
        if self.task is None:
            return self._hold_phases.copy()
        phases = np.zeros(N_ARMS, dtype=np.int64)
        active = self._active_arm()
        arms_later = {wp.arm - 1 for wp in self.task.waypoints[self.cursor:]}
        arms_before = {wp.arm - 1 for wp in self.task.waypoints[:self.cursor]}
        for i in range(N_ARMS):
            if i == active:
                phases[i] = Phase.EXECUTING
            elif i in arms_before and i not in arms_later:
                phases[i] = Phase.COMPLETED
        return phases

    def observe(self) -> Array:
        targets = self._assigned_targets()
        d = np.linalg.norm(self.positions - targets, axis=1)
        phases = self._phases()
        obs = np.empty(OBS_DIM)
        for i in range(N_ARMS):
            obs[5 * i:5 * i + 3] = self.positions[i]
            obs[5 * i + 3] = d[i]
            obs[5 * i + 4] = float(phases[i])
        return obs

    # -- lifecycle -------------------------------------------------------

    def reset(self, task: Instruction, seed: Optional[int] = None) -> Array:
        if task is None or not task.waypoints:
            raise ValueError("reset requires an instruction with waypoints")
        self.positions = self.homes.copy()
        self.set_task(task)
        return self.observe()

    def set_task(self, task: Optional[Instruction]) -> None:
        """Swap the active instruction without touching positions (live use).

        Passing None enters Hold: no active arm, all targets home, phases
        frozen at their last values.
        """
        if task is None:
            frozen = self._phases()
            # no arm is Executing in Hold; an interrupted arm goes to Waiting
            frozen[frozen == Phase.EXECUTING] = Phase.WAITING
            self._hold_phases = frozen
        self.task = task
        self.cursor = 0
        self.steps = 0

    def step(self, action: Array) -> StepResult:
        cfg = self.config
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (ACT_DIM,):
            raise ValueError(f"action shape {a.shape}, expected ({ACT_DIM},)")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite action")
        v = np.clip(a.reshape(N_ARMS, 3), -cfg.v_max, cfg.v_max)
        self.positions = np.clip(self.positions + v * cfg.dt,
                                 cfg.workspace_lo, cfg.workspace_hi)

        events: list = []
        active = self._active_arm()
        targets = self._assigned_targets()
        d = np.linalg.norm(self.positions - targets, axis=1)

        pairs = check_collisions(self.positions, cfg.d_coll)
        events.extend(Collision(p) for p in pairs)

        reward = 0.0
        completed = False
        if active is not None:
            reward -= cfg.c1 * d[active]
            for i in range(N_ARMS):
                if i != active:
                    reward -= cfg.c2 * float(
                        np.linalg.norm(self.positions[i] - self.homes[i]))
            if d[active] <= cfg.eps_target:
                completed = True
                reward += cfg.bonus
                events.append(WaypointCompleted(active + 1, self.cursor))
        else:
            for i in range(N_ARMS):
                reward -= cfg.c2 * float(
                    np.linalg.norm(self.positions[i] - self.homes[i]))
        if pairs:
            reward -= cfg.collision_penalty

        if completed:
            self.cursor += 1
            if self.cursor == len(self.task):
                events.append(InstructionSatisfied(self.task.id))

        self.steps += 1
        satisfied = self.task is not None and self.cursor == len(self.task)
        done = satisfied or self.steps >= cfg.horizon
        return StepResult(self.observe(), float(reward), done, events)


def episode_metrics(rewards: list, events: list, n_waypoints: int,
                    gamma: float) -> dict:
    """Aggregate one episode: discounted return, success, collision flag."""
    completed = sum(1 for evs in events for e in evs
                    if isinstance(e, WaypointCompleted))
    collided = any(isinstance(e, Collision) for evs in events for e in evs)
    ret = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        ret = rewards[t] + gamma * ret
    return {
        "return": float(ret),
        "success": completed >= n_waypoints,
        "collided": collided,
        "steps": len(rewards),
    }


TRAJECTORY_HEADER = ["step", "arm", "px", "py", "pz", "d", "phase",
                     "reward", "event"]


def write_trajectory_csv(path, records: list) -> None:
    """records: per step dicts with positions (3,3), d (3,), phases (3,),
    reward, events. One row per arm per step; events are attributed to the
    arms they involve."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for rec in records:
            by_arm: dict[int, list[str]] = {1: [], 2: [], 3: []}
            for e in rec["events"]:
                if isinstance(e, WaypointCompleted):
                    by_arm[e.arm].append(e.label())
                elif isinstance(e, Collision):
                    by_arm[e.pair[0]].append(e.label())
                    by_arm[e.pair[1]].append(e.label())
                else:
                    for arm in by_arm:
                        by_arm[arm].append(e.label())
            for i in range(N_ARMS):
                p = rec["positions"][i]
                w.writerow([rec["step"], i + 1,
                            f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}",
                            f"{rec['d'][i]:.6f}", int(rec["phases"][i]),
                            f"{rec['reward']:.6f}",
                            ";".join(by_arm[i + 1])])
