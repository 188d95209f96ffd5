/**
 * Panel state: latest telemetry, acknowledged queue contents, request
 * tracking, and the connection watchdog. Pure application logic — the
 * DOM layer subscribes and renders, the socket layer feeds messages in.
 */

import { History } from "./history.js";
import {
  AckMsg,
  EnqueueEcho,
  ErrorMsg,
  EventMsg,
  QueueItem,
  QueueWaypoint,
  ServerMsg,
  StateMsg,
  isControlEcho,
} from "./protocol.js";

export type Connection = "connecting" | "live" | "stalled" | "closed";

export const DEFAULT_TICK_MS = 50;
const EVENT_LIMIT = 200;

export interface EchoRecord {
  draft: QueueWaypoint[];
  echo: EnqueueEcho;
}

export class PanelStore {
  connection: Connection = "connecting";
  lastState: StateMsg | null = null;
  queue: QueueItem[] = [];
  queueTick = -1;
  history = new History();
  events: EventMsg[] = [];
  paused = false;
  noiseOn = false;
  lastEcho: EchoRecord | null = null;
  lastError: ErrorMsg | null = null;

  private reqCounter = 0;
  private pendingDrafts = new Map<string, QueueWaypoint[]>();
  private lastStateAtMs: number | null = null;
  private prevStateAtMs: number | null = null;
  private listeners: (() => void)[] = [];

  subscribe(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  nextReqId(): string {
    return `r${++this.reqCounter}`;
  }

  /** Remember the draft an enqueue carried so its ack can be compared. */
  trackEnqueue(reqId: string, draft: QueueWaypoint[]): void {
    this.pendingDrafts.set(reqId, draft);
  }

  apply(msg: ServerMsg, nowMs: number): void {
    switch (msg.type) {
      case "state":
        this.prevStateAtMs = this.lastStateAtMs;
        this.lastStateAtMs = nowMs;
        this.connection = "live";
        this.lastState = msg;
        this.history.push(msg);
        break;
      case "queue":
        this.queue = msg.pending;
        this.queueTick = msg.tick;
        break;
      case "event":
        this.events.push(msg);
        if (this.events.length > EVENT_LIMIT) {
          this.events.splice(0, this.events.length - EVENT_LIMIT);
        }
        break;
      case "ack":
        this.applyAck(msg);
        break;
      case "error":
        this.lastError = msg;
        if (typeof msg.req_id === "string") {
          this.pendingDrafts.delete(msg.req_id);
        }
        break;
    }
    this.emit();
  }

  private applyAck(msg: AckMsg): void {
    if (isControlEcho(msg.echo)) {
      this.paused = msg.echo.mode === "paused";
      this.noiseOn = msg.echo.noise;
      return;
    }
    if (msg.echo && typeof msg.req_id === "string") {
      const draft = this.pendingDrafts.get(msg.req_id);
      this.pendingDrafts.delete(msg.req_id);
      if (draft) {
        this.lastEcho = { draft, echo: msg.echo };
        this.lastError = null;
      }
    }
  }

  /** Estimated broadcast interval from the last two arrivals. */
  tickIntervalMs(): number {
    if (this.lastStateAtMs === null || this.prevStateAtMs === null) {
      return DEFAULT_TICK_MS;
    }
    const gap = this.lastStateAtMs - this.prevStateAtMs;
    return gap > 0 ? gap : DEFAULT_TICK_MS;
  }

  /** Watchdog: flag the stream as stalled after two missed ticks. A
   * paused stream is silent on purpose and stays "live". */
  checkStale(nowMs: number): void {
    if (this.connection !== "live" || this.paused) return;
    if (
      this.lastStateAtMs !== null &&
      nowMs - this.lastStateAtMs > 2 * this.tickIntervalMs()
    ) {
      this.connection = "stalled";
      this.emit();
    }
  }

  markClosed(): void {
    this.connection = "closed";
    this.emit();
  }

  markConnecting(): void {
    this.connection = "connecting";
    this.emit();
  }
}
