/** Fixed workspace geometry, mirrored from the simulator. */

export const ARM_COUNT = 3;
export const SLOT_NAMES = ["A", "B", "C", "D"] as const;
export const EPS_TARGET = 0.05;

/** HOMES[arm-1] = [x, y, z] */
export const HOMES: ReadonlyArray<readonly [number, number, number]> = [
  [0.1, 0.1, 0.1],
  [0.9, 0.1, 0.1],
  [0.5, 0.9, 0.1],
];

/** SLOTS[arm-1][slot index] = [x, y, z] */
export const SLOTS: ReadonlyArray<
  ReadonlyArray<readonly [number, number, number]>
> = [
  [
    [0.18, 0.24, 0.13],
    [0.32, 0.26, 0.2],
    [0.31, 0.42, 0.38],
    [0.46, 0.38, 0.46],
  ],
  [
    [0.74, 0.15, 0.13],
    [0.8, 0.34, 0.18],
    [0.65, 0.32, 0.4],
    [0.72, 0.39, 0.51],
  ],
  [
    [0.62, 0.95, 0.18],
    [0.43, 0.78, 0.29],
    [0.53, 0.63, 0.33],
    [0.47, 0.65, 0.61],
  ],
];

export const ARM_COLORS = ["#4fc3f7", "#ffb74d", "#aed581"] as const;
