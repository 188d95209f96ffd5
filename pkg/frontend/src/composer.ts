/**
 * Instruction composer: an ordered draft of (arm, slot) picks, its
 * machine-syntax serialization, and the enqueue payload builders. The
 * composer never touches panel state directly; it only produces wire
 * messages, and the queue view reflects acknowledged broadcasts alone.
 */

import { base64FromFloat64, synthesizeAudio, tokenOf } from "./audio.js";
import type { EnqueueEcho, EnqueueReq, QueueWaypoint } from "./protocol.js";

export const MAX_WAYPOINTS = 10;

export interface Draft {
  picks: QueueWaypoint[];
}

export function emptyDraft(): Draft {
  return { picks: [] };
}

export function addPick(draft: Draft, arm: number, slot: string): Draft {
  if (draft.picks.length >= MAX_WAYPOINTS) return draft;
  return { picks: [...draft.picks, { arm, slot: slot.toUpperCase() }] };
}

export function removePick(draft: Draft, index: number): Draft {
  return { picks: draft.picks.filter((_, i) => i !== index) };
}

export function canSend(draft: Draft): boolean {
  return draft.picks.length >= 1;
}

export function serialize(draft: Draft): string {
  return "seq: " + draft.picks.map((p) => `${p.arm}@${p.slot}`).join(", ");
}

export function buildTextEnqueue(reqId: string, draft: Draft): EnqueueReq {
  return { type: "enqueue", req_id: reqId, text: serialize(draft) };
}

export function buildAudioEnqueue(
  reqId: string,
  draft: Draft,
  noise: boolean,
  rand: () => number = Math.random,
): EnqueueReq {
  const tokens = draft.picks.map((p) => tokenOf(p.arm, p.slot));
  return {
    type: "enqueue",
    req_id: reqId,
    modality: { audio: base64FromFloat64(synthesizeAudio(tokens, rand)) },
    noise,
  };
}

/** Per-waypoint agreement between what was drafted and what the decoder
 * echoed; used to highlight divergence under noise. */
export function echoDiff(
  draft: QueueWaypoint[],
  echo: EnqueueEcho,
): { match: boolean; rows: { sent: string; got: string; ok: boolean }[] } {
  const n = Math.max(draft.length, echo.waypoints.length);
  const rows = [];
  let match = true;
  for (let i = 0; i < n; i++) {
    const s = draft[i] ? `${draft[i].arm}@${draft[i].slot}` : "-";
    const g = echo.waypoints[i]
      ? `${echo.waypoints[i].arm}@${echo.waypoints[i].slot}`
      : "-";
    const ok = s === g;
    match &&= ok;
    rows.push({ sent: s, got: g, ok });
  }
  return { match, rows };
}
