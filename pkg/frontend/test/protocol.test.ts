import { describe, expect, it } from "vitest";

import { isControlEcho, parseServerMsg } from "../src/protocol.js";

describe("parseServerMsg", () => {
  it("accepts every server type", () => {
    for (const type of ["state", "queue", "event", "ack", "error"]) {
      expect(parseServerMsg(JSON.stringify({ type }))).toEqual({ type });
    }
  });

  it("rejects garbage and client types", () => {
    expect(parseServerMsg("not json {")).toBeNull();
    expect(parseServerMsg("[1]")).toBeNull();
    expect(parseServerMsg('"state"')).toBeNull();
    expect(parseServerMsg('{"type": "enqueue"}')).toBeNull();
    expect(parseServerMsg('{"tick": 3}')).toBeNull();
  });

  it("distinguishes control acks from enqueue echoes", () => {
    expect(isControlEcho({ mode: "paused", noise: false })).toBe(true);
    expect(
      isControlEcho({ id: 1, text: "seq: 1@A", waypoints: [], source: "machine" }),
    ).toBe(false);
    expect(isControlEcho(undefined)).toBe(false);
  });
});
