/** DOM wiring: renders the store on every change and translates button
 * presses into protocol requests. No state lives here. */

import { synthesizeAudio } from "./audio.js";
import { PanelClient } from "./client.js";
import {
  sparklinePath,
  timelineRects,
  projectXY,
  yForValue,
} from "./charts.js";
import {
  addPick,
  buildAudioEnqueue,
  buildTextEnqueue,
  canSend,
  echoDiff,
  emptyDraft,
  removePick,
  serialize,
  type Draft,
} from "./composer.js";
import {
  ARM_COLORS,
  ARM_COUNT,
  EPS_TARGET,
  HOMES,
  SLOT_NAMES,
  SLOTS,
} from "./geometry.js";
import { toBuckets } from "./history.js";
import { PanelStore } from "./store.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const SPARK_W = 280;
const SPARK_H = 48;
const LANE_H = 10;
const DIST_MAX = 0.6;
const EVENTS_SHOWN = 40;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

function svgEl(tag: string, attrs: Record<string, string>): SVGElement {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  return node;
}

function wsUrl(): string {
  const q = new URLSearchParams(location.search).get("ws");
  if (q !== null) return q;
  const host = location.hostname || "127.0.0.1";
  return `ws://${host}:8765`;
}

const store = new PanelStore();
const client = new PanelClient(store, wsUrl());
let draft: Draft = emptyDraft();

// -- static controls ---------------------------------------------------------

const armPick = el<HTMLSelectElement>("arm-pick");
const slotPick = el<HTMLSelectElement>("slot-pick");
for (let a = 1; a <= ARM_COUNT; a++) {
  armPick.add(new Option(`arm ${a}`, String(a)));
}
for (const s of SLOT_NAMES) {
  slotPick.add(new Option(`slot ${s}`, s));
}

el("add-pick").onclick = () => {
  draft = addPick(draft, Number(armPick.value), slotPick.value);
  render();
};

el("send-text").onclick = () => {
  if (!canSend(draft)) return;
  const reqId = store.nextReqId();
  store.trackEnqueue(reqId, draft.picks);
  client.send(buildTextEnqueue(reqId, draft));
  draft = emptyDraft();
  render();
};

el("send-audio").onclick = () => {
  if (!canSend(draft)) return;
  const reqId = store.nextReqId();
  store.trackEnqueue(reqId, draft.picks);
  client.send(buildAudioEnqueue(reqId, draft, store.noiseOn));
  draft = emptyDraft();
  render();
};

el("pause").onclick = () => {
  client.send({
    type: "control",
    req_id: store.nextReqId(),
    action: store.paused ? "resume" : "pause",
  });
};

el("reset").onclick = () => {
  client.send({ type: "control", req_id: store.nextReqId(), action: "reset" });
};

el<HTMLInputElement>("noise").onchange = () => {
  client.send({
    type: "control",
    req_id: store.nextReqId(),
    action: "toggle_noise",
  });
};

// -- rendering ---------------------------------------------------------------

function renderHeader(): void {
  const conn = el("conn");
  conn.textContent = store.connection;
  conn.className = `badge ${store.connection}`;
  const s = store.lastState;
  el("tick").textContent = s === null ? "tick —" : `tick ${s.tick}`;
  el("reward").textContent = s === null ? "" : `r ${s.reward.toFixed(3)}`;
  el("adapting").hidden = !(s !== null && s.adapting);
  el("pause").textContent = store.paused ? "Resume" : "Pause";
  el<HTMLInputElement>("noise").checked = store.noiseOn;
}

function renderQueue(): void {
  const list = el("queue");
  list.replaceChildren();
  const activeId = store.lastState?.active_id ?? null;
  for (const item of store.queue) {
    const li = document.createElement("li");
    if (item.id === activeId) li.classList.add("active");
    li.textContent = item.waypoints
      .map((w) => `${w.arm}@${w.slot}`)
      .join(", ");
    const src = document.createElement("span");
    src.className = "src";
    src.textContent = item.source;
    li.appendChild(src);
    list.appendChild(li);
  }
  if (store.queue.length === 0) {
    const li = document.createElement("li");
    li.textContent = "(empty — arms hold)";
    list.appendChild(li);
  }
}

function renderComposer(): void {
  const picks = el("picks");
  picks.replaceChildren();
  draft.picks.forEach((p, i) => {
    const li = document.createElement("li");
    li.textContent = `${p.arm}@${p.slot}`;
    const rm = document.createElement("button");
    rm.textContent = "remove";
    rm.onclick = () => {
      draft = removePick(draft, i);
      render();
    };
    li.appendChild(rm);
    picks.appendChild(li);
  });
  const ready = canSend(draft) && store.connection === "live";
  el<HTMLButtonElement>("send-text").disabled = !ready;
  el<HTMLButtonElement>("send-audio").disabled = !ready;

  const echo = el("echo");
  echo.replaceChildren();
  if (store.lastEcho !== null) {
    const diff = echoDiff(store.lastEcho.draft, store.lastEcho.echo);
    const table = document.createElement("table");
    const head = table.insertRow();
    head.className = "head";
    for (const t of ["sent", "decoded"]) head.insertCell().textContent = t;
    for (const row of diff.rows) {
      const tr = table.insertRow();
      tr.insertCell().textContent = row.sent;
      const got = tr.insertCell();
      got.textContent = row.got;
      if (!row.ok) got.className = "bad";
    }
    echo.appendChild(table);
  }
  el("error").textContent =
    store.lastError === null ? "" : store.lastError.reason;
}

function renderTelemetry(): void {
  const host = el("telemetry");
  host.replaceChildren();
  for (let arm = 1; arm <= ARM_COUNT; arm++) {
    const spark = svgEl("svg", {
      class: "spark",
      width: String(SPARK_W),
      height: String(SPARK_H),
    });
    const epsY = yForValue(EPS_TARGET, SPARK_H, DIST_MAX);
    spark.appendChild(
      svgEl("line", {
        class: "eps",
        x1: "0",
        y1: String(epsY),
        x2: String(SPARK_W),
        y2: String(epsY),
      }),
    );
    spark.appendChild(
      svgEl("path", {
        d: sparklinePath(
          store.history.distances(arm),
          SPARK_W,
          SPARK_H,
          DIST_MAX,
        ),
        stroke: ARM_COLORS[arm - 1],
      }),
    );
    host.appendChild(spark);

    const lane = svgEl("svg", {
      class: "lane",
      width: String(SPARK_W),
      height: String(LANE_H),
    });
    const acts = store.history.activations(arm);
    for (const r of timelineRects(toBuckets(acts), acts.length, SPARK_W)) {
      lane.appendChild(
        svgEl("rect", {
          x: String(r.x),
          y: "0",
          width: String(Math.max(r.w, 0.5)),
          height: String(LANE_H),
          fill: r.color,
        }),
      );
    }
    host.appendChild(lane);
  }
}

function renderWorkspace(): void {
  const svg = el("workspace") as unknown as SVGSVGElement;
  svg.replaceChildren();
  const W = 320;
  for (let i = 0; i < ARM_COUNT; i++) {
    for (let k = 0; k < SLOT_NAMES.length; k++) {
      const q = projectXY(SLOTS[i][k], W, W);
      svg.appendChild(
        svgEl("rect", {
          x: String(q.x - 3),
          y: String(q.y - 3),
          width: "6",
          height: "6",
          fill: "none",
          stroke: ARM_COLORS[i],
        }),
      );
      const label = svgEl("text", {
        x: String(q.x + 5),
        y: String(q.y + 3),
        "font-size": "8",
        fill: "#9e9e9e",
      });
      label.textContent = SLOT_NAMES[k];
      svg.appendChild(label);
    }
    const h = projectXY(HOMES[i], W, W);
    svg.appendChild(
      svgEl("circle", {
        cx: String(h.x),
        cy: String(h.y),
        r: "2",
        fill: "#9e9e9e",
      }),
    );
  }
  const s = store.lastState;
  if (s === null) return;
  for (const arm of s.arms) {
    const q = projectXY(arm.p, W, W);
    if (arm.id === s.active_id) {
      svg.appendChild(
        svgEl("circle", {
          cx: String(q.x),
          cy: String(q.y),
          r: String(q.r + 3),
          fill: "none",
          stroke: "#212121",
        }),
      );
    }
    svg.appendChild(
      svgEl("circle", {
        cx: String(q.x),
        cy: String(q.y),
        r: String(q.r),
        fill: ARM_COLORS[arm.id - 1],
      }),
    );
  }
}

function renderEvents(): void {
  const list = el("events");
  list.replaceChildren();
  for (const ev of store.events.slice(-EVENTS_SHOWN).reverse()) {
    const li = document.createElement("li");
    const rest = Object.entries(ev)
      .filter(([k]) => k !== "type" && k !== "kind" && k !== "tick")
      .map(([k, v]) => `${k}=${JSON.stringify(v)}`)
      .join(" ");
    li.textContent = `#${ev.tick} ${ev.kind} ${rest}`;
    list.appendChild(li);
  }
}

function render(): void {
  renderHeader();
  renderQueue();
  renderComposer();
  renderTelemetry();
  renderWorkspace();
  renderEvents();
}

store.subscribe(render);
render();
client.start();

// dev hook: lets a console session poke the same singletons the UI uses
declare global {
  interface Window {
    panel: { store: PanelStore; client: PanelClient; serialize: typeof serialize; synthesizeAudio: typeof synthesizeAudio };
  }
}
window.panel = { store, client, serialize, synthesizeAudio };
