import { describe, expect, it } from "vitest";

import {
  MAX_WAYPOINTS,
  addPick,
  buildAudioEnqueue,
  buildTextEnqueue,
  canSend,
  echoDiff,
  emptyDraft,
  removePick,
  serialize,
} from "../src/composer.js";
import { WINDOW } from "../src/audio.js";

const echoOf = (waypoints: { arm: number; slot: string }[]) => ({
  id: 7,
  text: "seq: whatever",
  waypoints,
  source: "audio",
});

describe("draft lifecycle", () => {
  it("accumulates picks and normalizes slot case", () => {
    let d = emptyDraft();
    expect(canSend(d)).toBe(false);
    d = addPick(d, 2, "a");
    d = addPick(d, 3, "B");
    expect(d.picks).toEqual([
      { arm: 2, slot: "A" },
      { arm: 3, slot: "B" },
    ]);
    expect(canSend(d)).toBe(true);
  });

  it("removes by index", () => {
    let d = addPick(addPick(emptyDraft(), 1, "A"), 2, "B");
    d = removePick(d, 0);
    expect(d.picks).toEqual([{ arm: 2, slot: "B" }]);
  });

  it("caps the pick count", () => {
    let d = emptyDraft();
    for (let i = 0; i < MAX_WAYPOINTS + 5; i++) d = addPick(d, 1, "A");
    expect(d.picks.length).toBe(MAX_WAYPOINTS);
  });

  it("does not mutate the input draft", () => {
    const d = addPick(emptyDraft(), 1, "A");
    addPick(d, 2, "B");
    removePick(d, 0);
    expect(d.picks).toEqual([{ arm: 1, slot: "A" }]);
  });
});

describe("request building", () => {
  it("serializes to the text grammar", () => {
    const d = addPick(addPick(emptyDraft(), 2, "A"), 3, "D");
    expect(serialize(d)).toBe("seq: 2@A, 3@D");
    expect(buildTextEnqueue("r1", d)).toEqual({
      type: "enqueue",
      req_id: "r1",
      text: "seq: 2@A, 3@D",
    });
  });

  it("builds an audio modality request with the expected clip size", () => {
    const d = addPick(addPick(emptyDraft(), 1, "A"), 2, "B");
    const req = buildAudioEnqueue("r2", d, true, () => 0.5);
    expect(req.req_id).toBe("r2");
    expect(req.noise).toBe(true);
    const b64 = req.modality!.audio!;
    // 2 tokens + stop, 8 bytes per sample
    expect(atob(b64).length).toBe(3 * WINDOW * 8);
  });
});

describe("echo diff", () => {
  const draft = [
    { arm: 1, slot: "A" },
    { arm: 2, slot: "B" },
  ];

  it("matches a faithful echo", () => {
    const diff = echoDiff(draft, echoOf(draft));
    expect(diff.match).toBe(true);
    expect(diff.rows.every((r) => r.ok)).toBe(true);
  });

  it("flags a corrupted waypoint", () => {
    const diff = echoDiff(
      draft,
      echoOf([
        { arm: 1, slot: "A" },
        { arm: 2, slot: "C" },
      ]),
    );
    expect(diff.match).toBe(false);
    expect(diff.rows[0].ok).toBe(true);
    expect(diff.rows[1]).toEqual({ sent: "2@B", got: "2@C", ok: false });
  });

  it("pads when the decoder dropped or invented waypoints", () => {
    const diff = echoDiff(draft, echoOf([{ arm: 1, slot: "A" }]));
    expect(diff.match).toBe(false);
    expect(diff.rows[1]).toEqual({ sent: "2@B", got: "-", ok: false });
  });
});
