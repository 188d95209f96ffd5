/**
 * Rolling telemetry history: per-arm distances and activation classes
 * for the last 2000 ticks, deduplicated by tick number so reconnects
 * never double-count.
 */

import { EPS_TARGET, HOMES } from "./geometry.js";
import type { StateMsg } from "./protocol.js";

export const HISTORY_TICKS = 2000;

export type Activation = "approaching" | "holding" | "returning";

/** Same classification the trajectory CSV records: an executing arm is
 * approaching its target; an idle arm holds at home or returns to it. */
export function activationClass(
  phase: number,
  pos: readonly [number, number, number],
  home: readonly [number, number, number],
  eps: number = EPS_TARGET,
): Activation {
  if (phase === 1) return "approaching";
  const dx = pos[0] - home[0];
  const dy = pos[1] - home[1];
  const dz = pos[2] - home[2];
  return Math.sqrt(dx * dx + dy * dy + dz * dz) <= eps
    ? "holding"
    : "returning";
}

export interface HistoryRow {
  tick: number;
  dist: [number, number, number];
  act: [Activation, Activation, Activation];
  phase: [number, number, number];
}

export class History {
  private rows: HistoryRow[] = [];

  lastTick(): number | null {
    return this.rows.length ? this.rows[this.rows.length - 1].tick : null;
  }

  /** Returns false when the tick was already recorded (stale replay). A
   * tick far in the past means a fresh server session: start over. */
  push(msg: StateMsg): boolean {
    const last = this.lastTick();
    if (last !== null && msg.tick <= last) {
      if (msg.tick < last - HISTORY_TICKS) {
        this.rows = [];
      } else {
        return false;
      }
    }
    const dist = msg.arms.map((a) => a.d) as [number, number, number];
    const act = msg.arms.map((a, i) =>
      activationClass(a.phase, a.p, HOMES[i]),
    ) as [Activation, Activation, Activation];
    const phase = msg.arms.map((a) => a.phase) as [number, number, number];
    this.rows.push({ tick: msg.tick, dist, act, phase });
    if (this.rows.length > HISTORY_TICKS) {
      this.rows.splice(0, this.rows.length - HISTORY_TICKS);
    }
    return true;
  }

  size(): number {
    return this.rows.length;
  }

  distances(arm: number): number[] {
    return this.rows.map((r) => r.dist[arm - 1]);
  }

  activations(arm: number): Activation[] {
    return this.rows.map((r) => r.act[arm - 1]);
  }

  ticks(): number[] {
    return this.rows.map((r) => r.tick);
  }
}

export interface Bucket<T> {
  value: T;
  from: number; // inclusive index
  to: number; // exclusive
}

/** Merge consecutive equal values into buckets; the timeline unit. */
export function toBuckets<T>(values: T[]): Bucket<T>[] {
  const out: Bucket<T>[] = [];
  for (let i = 0; i < values.length; i++) {
    const last = out[out.length - 1];
    if (last && last.value === values[i]) {
      last.to = i + 1;
    } else {
      out.push({ value: values[i], from: i, to: i + 1 });
    }
  }
  return out;
}

/** Activation timelines from a recorded trajectory CSV (columns
 * step,d1,d2,d3,act1,act2,act3,...), for replay comparison. */
export function csvActivations(csv: string): Activation[][] {
  const lines = csv.trim().split(/\r?\n/);
  const header = lines[0].split(",");
  const cols = [1, 2, 3].map((a) => header.indexOf(`act${a}`));
  if (cols.some((c) => c < 0)) {
    throw new Error("not a trajectory CSV: missing act columns");
  }
  const per: Activation[][] = [[], [], []];
  for (const line of lines.slice(1)) {
    const parts = line.split(",");
    cols.forEach((c, i) => per[i].push(parts[c] as Activation));
  }
  return per;
}
