"""Instructions, the machine text syntax, task sampling, and the FIFO queue.

An instruction is an ordered waypoint list; the queue holds pending
instructions with satisfaction-gated removal of the head. The queue is safe
for exactly one producer and one consumer thread.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import ARM_COUNT, SLOT_NAMES, slot_position

MAX_WAYPOINTS = 10

_id_counter = itertools.count(1)
_id_lock = threading.Lock()


def next_instruction_id() -> int:
    with _id_lock:
        return next(_id_counter)


class Source(str, Enum):
    MACHINE = "machine"
    AUDIO = "audio"
    VISUAL = "visual"
    AUDIOVISUAL = "audiovisual"


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


# inclusive waypoint-count brackets per difficulty
DIFFICULTY_BRACKETS = {
    Difficulty.EASY: (1, 3),
    Difficulty.MEDIUM: (4, 6),
    Difficulty.HARD: (7, 10),
}


def difficulty_of(m: int) -> Difficulty:
    for diff, (lo, hi) in DIFFICULTY_BRACKETS.items():
        if lo <= m <= hi:
            return diff
    raise ValueError(f"waypoint count {m} outside 1..{MAX_WAYPOINTS}")


@dataclass(frozen=True)
class Waypoint:
    """(arm, target) pair; slot is the letter when the target is a named slot."""
    arm: int
    target: np.ndarray
    slot: str | None = None

    @classmethod
    def from_slot(cls, arm: int, slot: str) -> "Waypoint":
        return cls(arm=arm, target=slot_position(arm, slot), slot=slot.upper())

    def __post_init__(self):
        if not 1 <= self.arm <= ARM_COUNT:
            raise ValueError(f"arm index {self.arm} out of range 1..{ARM_COUNT}")
        t = np.asarray(self.target, dtype=np.float64)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("waypoint target must be a finite 3-vector")
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError(f"waypoint target {t} outside workspace")
        object.__setattr__(self, "target", t)

    def label(self) -> str:
        slot = self.slot if self.slot else "?"
        return f"{self.arm}@{slot}"


@dataclass
class Instruction:
    waypoints: list[Waypoint]
    source: Source = Source.MACHINE
    id: int = field(default_factory=next_instruction_id)
    created_at: int = 0

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("instruction needs at least one waypoint")
        if len(self.waypoints) > MAX_WAYPOINTS:
            raise ValueError(
                f"instruction has {len(self.waypoints)} waypoints, "
                f"max {MAX_WAYPOINTS}")

    def __len__(self) -> int:
        return len(self.waypoints)

    def text(self) -> str:
        return "seq: " + ", ".join(w.label() for w in self.waypoints)


@dataclass(frozen=True)
class TaskSpec:
    instruction: Instruction
    difficulty: Difficulty

    @classmethod
    def of(cls, instruction: Instruction) -> "TaskSpec":
        return cls(instruction, difficulty_of(len(instruction)))


class ParseError(ValueError):
    def __init__(self, pos: int, reason: str):
        super().__init__(f"col {pos}: {reason}")
        self.pos = pos
        self.reason = reason


def parse_instruction(text: str, source: Source = Source.MACHINE,
                      created_at: int = 0) -> Instruction:
    """Parse `seq: 2@A, 3@B, 1@C` into an Instruction.

    Errors carry the column of the offending token.
    """
    if not isinstance(text, str) or not text.strip():
        raise ParseError(0, "empty instruction text")
    head, sep, body = text.partition(":")
    if not sep or head.strip().lower() != "seq":
        raise ParseError(0, "expected 'seq:' prefix")
    body_offset = len(head) + 1
    waypoints = []
    pos = 0
    for item in body.split(","):
        col = body_offset + pos
        pos += len(item) + 1
        tok = item.strip()
        if not tok:
            raise ParseError(col, "empty waypoint entry")
        arm_s, at, slot_s = tok.partition("@")
        if not at:
            raise ParseError(col, f"waypoint {tok!r} missing '@'")
        try:
            arm = int(arm_s.strip())
        except ValueError:
            raise ParseError(col, f"arm {arm_s.strip()!r} is not an integer")
        slot = slot_s.strip().upper()
        if slot not in SLOT_NAMES:
            raise ParseError(col, f"unknown slot {slot_s.strip()!r}")
        if not 1 <= arm <= ARM_COUNT:
            raise ParseError(col, f"arm {arm} out of range 1..{ARM_COUNT}")
        waypoints.append(Waypoint.from_slot(arm, slot))
    if len(waypoints) > MAX_WAYPOINTS:
        raise ParseError(0, f"too many waypoints ({len(waypoints)})")
    return Instruction(waypoints, source=source, created_at=created_at)


def sample_task(rng: np.random.Generator,
                difficulty: Difficulty | None = None,
                forbid_consecutive: bool = False,
                source: Source = Source.MACHINE) -> TaskSpec:
    """Draw a task: M uniform in the difficulty bracket (1..10 when
    unspecified), arms i.i.d. uniform, slots uniform per waypoint."""
    if difficulty is None:
        lo, hi = 1, MAX_WAYPOINTS
    else:
        lo, hi = DIFFICULTY_BRACKETS[Difficulty(difficulty)]
    m = int(rng.integers(lo, hi + 1))
    waypoints = []
    prev_arm = None
    for _ in range(m):
        arm = int(rng.integers(1, ARM_COUNT + 1))
        while forbid_consecutive and arm == prev_arm:
            arm = int(rng.integers(1, ARM_COUNT + 1))
        slot = SLOT_NAMES[int(rng.integers(len(SLOT_NAMES)))]
        waypoints.append(Waypoint.from_slot(arm, slot))
        prev_arm = arm
    return TaskSpec.of(Instruction(waypoints, source=source))


class QueueFullError(RuntimeError):
    """Soft capacity reached; caller should apply back-pressure."""


class InstructionQueue:
    """FIFO of pending instructions; the head is removed only once satisfied.

    Thread contract: one producer calls enqueue, one consumer calls
    advance/dequeue_if_satisfied; every method takes the internal lock, so
    reads are safe from either side.
    """

    def __init__(self, soft_limit: int = 64):
        self._lock = threading.Lock()
        self._pending: list[Instruction] = []
        self._cursor = 0
        self.soft_limit = soft_limit
        self.tick = 0

    def enqueue(self, instruction: Instruction) -> None:
        if not isinstance(instruction, Instruction):
            raise TypeError("enqueue expects an Instruction")
        if not instruction.waypoints:
            raise ValueError("instruction needs at least one waypoint")
        with self._lock:
            if len(self._pending) >= self.soft_limit:
                raise QueueFullError(
                    f"queue at soft limit {self.soft_limit}")
            instruction.created_at = self.tick
            self._pending.append(instruction)

    def active(self) -> Instruction | None:
        with self._lock:
            return self._pending[0] if self._pending else None

    def cursor(self) -> int:
        with self._lock:
            return self._cursor

    def advance(self, k: int = 1) -> None:
        """Move the head's waypoint cursor forward (never past M)."""
        with self._lock:
            if not self._pending:
                return
            self._cursor = min(self._cursor + k, len(self._pending[0]))

    def satisfied(self) -> bool:
        with self._lock:
            return bool(self._pending) and self._cursor == len(self._pending[0])

    def dequeue_if_satisfied(self) -> Instruction | None:
        with self._lock:
            if not self._pending or self._cursor != len(self._pending[0]):
                return None
            done = self._pending.pop(0)
            self._cursor = 0
            return done

    def force_dequeue(self) -> Instruction | None:
        """Drop the head regardless of progress (timeout path)."""
        with self._lock:
            if not self._pending:
                return None
            dropped = self._pending.pop(0)
            self._cursor = 0
            return dropped

    def set_tick(self, tick: int) -> None:
        with self._lock:
            self.tick = tick

    def snapshot(self) -> tuple[list[Instruction], int]:
        with self._lock:
            return list(self._pending), self._cursor

    def __len__(self) -> int:
        with self._lock:
            return len(self._pending)
