/** WebSocket transport: parse-and-apply inbound, JSON-encode outbound,
 * reconnect with capped backoff, and a staleness watchdog. */

import { parseServerMsg } from "./protocol.js";
import type { ControlReq, EnqueueReq } from "./protocol.js";
import { PanelStore } from "./store.js";

const BACKOFF_MIN_MS = 500;
const BACKOFF_MAX_MS = 8000;
const WATCHDOG_MS = 250;

export class PanelClient {
  private ws: WebSocket | null = null;
  private backoffMs = BACKOFF_MIN_MS;
  private stopped = false;
  private watchdog: ReturnType<typeof setInterval> | null = null;

  constructor(
    private store: PanelStore,
    private url: string,
  ) {}

  start(): void {
    this.stopped = false;
    this.watchdog = setInterval(
      () => this.store.checkStale(Date.now()),
      WATCHDOG_MS,
    );
    this.open();
  }

  stop(): void {
    this.stopped = true;
    if (this.watchdog !== null) clearInterval(this.watchdog);
    this.ws?.close();
  }

  send(req: EnqueueReq | ControlReq): boolean {
    if (this.ws === null || this.ws.readyState !== WebSocket.OPEN) {
      return false;
    }
    this.ws.send(JSON.stringify(req));
    return true;
  }

  private open(): void {
    this.store.markConnecting();
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = BACKOFF_MIN_MS;
    };
    ws.onmessage = (ev) => {
      if (typeof ev.data !== "string") return;
      const msg = parseServerMsg(ev.data);
      if (msg !== null) this.store.apply(msg, Date.now());
    };
    ws.onclose = () => {
      if (this.stopped) return;
      this.store.markClosed();
      setTimeout(() => {
        if (!this.stopped) this.open();
      }, this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_MAX_MS);
    };
    ws.onerror = () => {
      ws.close();
    };
  }
}
