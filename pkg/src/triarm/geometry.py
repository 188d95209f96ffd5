"""Fixed workspace geometry: arm home positions and the named target slots.

The slot table was chosen (by offline constrained search) so that
  - straight-line paths of different arms (home<->slot and slot<->slot) stay
    >= 0.20 apart, far above the collision threshold, at any timing;
  - every path keeps >= 0.58 clearance from other arms' homes;
  - per-arm home->slot distances are pairwise distinct by >= 0.083, so the
    distance observation identifies the assigned slot from home;
  - from any decision point (home or slot), distances to the other slots
    differ pairwise by >= 0.06;
  - all slots keep >= 0.05 wall clearance and sit 0.15-0.59 from their home.
"""

from __future__ import annotations

import numpy as np

ARM_COUNT = 3
SLOT_NAMES = ("A", "B", "C", "D")

# row i = home of arm i+1
HOMES = np.array([
    [0.1, 0.1, 0.1],
    [0.9, 0.1, 0.1],
    [0.5, 0.9, 0.1],
])

# SLOTS[arm-1][slot index] = xyz target
SLOTS = np.array([
    [[0.18, 0.24, 0.13], [0.32, 0.26, 0.20], [0.31, 0.42, 0.38], [0.46, 0.38, 0.46]],
    [[0.74, 0.15, 0.13], [0.80, 0.34, 0.18], [0.65, 0.32, 0.40], [0.72, 0.39, 0.51]],
    [[0.62, 0.95, 0.18], [0.43, 0.78, 0.29], [0.53, 0.63, 0.33], [0.47, 0.65, 0.61]],
])


def slot_index(name: str) -> int:
    try:
        return SLOT_NAMES.index(name.upper())
    except ValueError:
        raise KeyError(f"unknown slot {name!r}, expected one of {SLOT_NAMES}")


def slot_position(arm: int, slot: str) -> np.ndarray:
    """Target coordinates for 1-based arm index and slot letter."""
    if not 1 <= arm <= ARM_COUNT:
        raise KeyError(f"arm index {arm} out of range 1..{ARM_COUNT}")
    return SLOTS[arm - 1, slot_index(slot)].copy()


def home_position(arm: int) -> np.ndarray:
    if not 1 <= arm <= ARM_COUNT:
        raise KeyError(f"arm index {arm} out of range 1..{ARM_COUNT}")
    return HOMES[arm - 1].copy()
