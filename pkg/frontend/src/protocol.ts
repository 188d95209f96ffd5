/**
 * Wire schema of the tick service, one JSON object per message.
 * Field names are bit-exact; the panel has no private protocol.
 */

export interface ArmState {
  id: number;
  p: [number, number, number];
  d: number;
  phase: number; // 0 waiting, 1 executing, 2 completed
}

export interface StateMsg {
  type: "state";
  tick: number;
  arms: ArmState[];
  reward: number;
  active_id: number | null;
  adapting: boolean;
}

export interface QueueWaypoint {
  arm: number;
  slot: string;
}

export interface QueueItem {
  id: number;
  waypoints: QueueWaypoint[];
  source: string;
}

export interface QueueMsg {
  type: "queue";
  tick: number;
  pending: QueueItem[];
}

export interface EventMsg {
  type: "event";
  tick: number;
  kind: string;
  [extra: string]: unknown;
}

export interface EnqueueEcho {
  id: number;
  text: string;
  waypoints: QueueWaypoint[];
  source: string;
}

export interface AckMsg {
  type: "ack";
  req_id: string | number | null;
  echo?: EnqueueEcho | { mode: string; noise: boolean };
}

export interface ErrorMsg {
  type: "error";
  req_id?: string | number | null;
  reason: string;
}

export type ServerMsg = StateMsg | QueueMsg | EventMsg | AckMsg | ErrorMsg;

export interface EnqueueReq {
  type: "enqueue";
  req_id: string;
  text?: string;
  modality?: { audio?: string; frames?: string };
  noise?: boolean;
}

export interface ControlReq {
  type: "control";
  req_id: string;
  action: "pause" | "resume" | "reset" | "toggle_noise";
}

const SERVER_TYPES = new Set(["state", "queue", "event", "ack", "error"]);

/** Parse one line from the stream; null for anything unusable. */
export function parseServerMsg(line: string): ServerMsg | null {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) return null;
  const type = (obj as { type?: unknown }).type;
  if (typeof type !== "string" || !SERVER_TYPES.has(type)) return null;
  return obj as ServerMsg;
}

export function isControlEcho(
  echo: AckMsg["echo"],
): echo is { mode: string; noise: boolean } {
  return !!echo && "mode" in echo;
}
