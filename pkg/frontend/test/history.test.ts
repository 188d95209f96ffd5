import { describe, expect, it } from "vitest";

import {
  HISTORY_TICKS,
  History,
  activationClass,
  csvActivations,
  toBuckets,
} from "../src/history.js";
import type { StateMsg } from "../src/protocol.js";

function stateAt(tick: number, phase = 1): StateMsg {
  return {
    type: "state",
    tick,
    arms: [1, 2, 3].map((id) => ({
      id,
      p: [0.5, 0.5, 0.5] as [number, number, number],
      d: 0.1 * id,
      phase,
    })),
    reward: -0.5,
    active_id: 1,
    adapting: false,
  };
}

describe("activation classes", () => {
  it("maps the executing phase to approaching", () => {
    expect(activationClass(1, [0.5, 0.5, 0.5], [0.1, 0.1, 0.1])).toBe(
      "approaching",
    );
  });

  it("separates holding from returning by home proximity", () => {
    const home: [number, number, number] = [0.1, 0.1, 0.1];
    expect(activationClass(0, [0.1, 0.1, 0.14], home)).toBe("holding");
    expect(activationClass(0, [0.1, 0.1, 0.2], home)).toBe("returning");
    expect(activationClass(2, [0.4, 0.4, 0.4], home)).toBe("returning");
  });
});

describe("ring buffer", () => {
  it("keeps at most the window size", () => {
    const h = new History();
    for (let t = 0; t < HISTORY_TICKS + 500; t++) h.push(stateAt(t));
    expect(h.size()).toBe(HISTORY_TICKS);
    expect(h.lastTick()).toBe(HISTORY_TICKS + 499);
  });

  it("drops duplicate and stale ticks", () => {
    const h = new History();
    expect(h.push(stateAt(5))).toBe(true);
    expect(h.push(stateAt(5))).toBe(false);
    expect(h.push(stateAt(4))).toBe(false);
    expect(h.size()).toBe(1);
  });

  it("starts over when the server session restarted", () => {
    const h = new History();
    h.push(stateAt(HISTORY_TICKS + 3000));
    expect(h.push(stateAt(0))).toBe(true);
    expect(h.size()).toBe(1);
    expect(h.lastTick()).toBe(0);
  });
});

describe("bucketing", () => {
  it("merges consecutive equal values", () => {
    expect(toBuckets(["a", "a", "b", "a", "a", "a"])).toEqual([
      { value: "a", from: 0, to: 2 },
      { value: "b", from: 2, to: 3 },
      { value: "a", from: 3, to: 6 },
    ]);
  });

  it("handles the empty series", () => {
    expect(toBuckets([])).toEqual([]);
  });
});

describe("csv parsing", () => {
  it("extracts the per-arm activation columns", () => {
    const csv = [
      "step,d1,d2,d3,act1,act2,act3,active_id,phase,boundary",
      "0,0.1,0.2,0.3,approaching,holding,holding,1,1,0",
      "1,0.1,0.2,0.3,approaching,returning,holding,1,1,0",
    ].join("\n");
    const per = csvActivations(csv);
    expect(per[0]).toEqual(["approaching", "approaching"]);
    expect(per[1]).toEqual(["holding", "returning"]);
    expect(per[2]).toEqual(["holding", "holding"]);
  });

  it("rejects a foreign csv", () => {
    expect(() => csvActivations("a,b\n1,2")).toThrow();
  });
});
