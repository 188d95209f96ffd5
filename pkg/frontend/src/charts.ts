/** Pure chart math: sparkline paths, timeline segments, 2-D projection. */

import type { Activation, Bucket } from "./history.js";

/** SVG path for a series scaled into width x height; y grows downward. */
export function sparklinePath(
  values: number[],
  width: number,
  height: number,
  yMax: number,
): string {
  if (values.length === 0) return "";
  const dx = values.length > 1 ? width / (values.length - 1) : 0;
  return values
    .map((v, i) => {
      const y = height * (1 - Math.min(v, yMax) / yMax);
      return `${i === 0 ? "M" : "L"}${(i * dx).toFixed(1)} ${y.toFixed(1)}`;
    })
    .join(" ");
}

export function yForValue(v: number, height: number, yMax: number): number {
  return height * (1 - Math.min(v, yMax) / yMax);
}

export const ACTIVATION_COLORS: Record<Activation, string> = {
  approaching: "#e57373",
  holding: "#455a64",
  returning: "#7986cb",
};

export interface TimelineRect {
  x: number;
  w: number;
  color: string;
  value: Activation;
}

export function timelineRects(
  buckets: Bucket<Activation>[],
  total: number,
  width: number,
): TimelineRect[] {
  if (total === 0) return [];
  const scale = width / total;
  return buckets.map((b) => ({
    x: b.from * scale,
    w: (b.to - b.from) * scale,
    color: ACTIVATION_COLORS[b.value],
    value: b.value,
  }));
}

/** Top-down (x, y) projection into pixel space; z drives marker size. */
export function projectXY(
  p: readonly [number, number, number],
  width: number,
  height: number,
): { x: number; y: number; r: number } {
  return {
    x: p[0] * width,
    y: (1 - p[1]) * height,
    r: 3 + p[2] * 6,
  };
}
