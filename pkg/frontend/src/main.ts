/** Console wiring: WebSocket (or replay) feed -> dashboard state -> DOM.
 *  Two tabs: "Race" is the at-a-glance board (map, speeds, flags, health
 *  tiles), "Detail" is the live time-series feed. */

import { CommandTracker } from "./ack.js";
import { DashboardState } from "./dashboard.js";
import { drawChart } from "./charts.js";
import { TILES, gpsUnitLevel, healthOf, tileLevel } from "./health.js";
import { parseStream, startReplay } from "./replay.js";
import { TrackMap } from "./trackmap.js";
import type { CommandKind, TelemetryMessage } from "./types.js";
import { FLAG_CODES, MPS_TO_MPH } from "./types.js";

const state = new DashboardState();
const commands = new CommandTracker();
let socket: WebSocket | null = null;

const $ = (id: string) => document.getElementById(id)!;

function sendCommand(kind: CommandKind, payload: number): void {
  commands.send(kind, payload, performance.now(),
                state.latest ? state.latest.sim_time : null);
  if (socket && socket.readyState === WebSocket.OPEN) {
    socket.send(JSON.stringify({ kind, payload }));
  }
  renderCommands();
}

function onMessage(msg: TelemetryMessage): void {
  state.update(msg, performance.now());
  commands.onTelemetry(msg);
}

function connect(): void {
  const params = new URLSearchParams(location.search);
  const replayUrl = params.get("replay");
  if (replayUrl) {
    $("conn-label").textContent = `replaying ${replayUrl}`;
    fetch(replayUrl)
      .then((r) => r.text())
      .then((text) => startReplay(parseStream(text), onMessage));
    return;
  }
  const url = params.get("bridge") ?? `ws://${location.hostname}:15602`;
  $("conn-label").textContent = url;
  socket = new WebSocket(url);
  socket.onmessage = (ev) => onMessage(JSON.parse(ev.data) as TelemetryMessage);
  socket.onclose = () => {
    socket = null;
    setTimeout(connect, 1000); // keep retrying; staleness banner covers the gap
  };
}

// -- rendering ---------------------------------------------------------------

const map = new TrackMap($("track-map") as HTMLCanvasElement);

function fmt(v: number | undefined, digits = 1): string {
  return v === undefined ? "--" : v.toFixed(digits);
}

function renderPrimary(): void {
  const msg = state.latest;
  const stale = state.isStale(performance.now());
  $("stale-banner").classList.toggle("hidden", !stale);
  map.draw(msg);
  if (!msg) return;
  $("v-speed").textContent = fmt(msg.ego_speed);
  $("v-speed-mph").textContent = fmt(msg.ego_speed * MPS_TO_MPH, 0);
  $("v-target").textContent = fmt(msg.target_speed);
  $("v-cte").textContent = fmt(msg.cte, 2);
  $("v-gap-rate").textContent = (state.gapRate() * 100).toFixed(1) + "%";
  $("v-sim-time").textContent = fmt(msg.sim_time);
  $("v-opp").textContent = msg.opp_present
    ? `${fmt(msg.opp_speed)} m/s`
    : "not tracked";
  const flag = $("v-flag");
  flag.textContent = msg.flag.replace("_", " ");
  flag.className = `flag flag-${msg.flag}`;
  $("v-role").textContent = msg.role;

  const health = healthOf(msg);
  const tiles = $("health-tiles");
  tiles.innerHTML = "";
  for (const spec of TILES) {
    const div = document.createElement("div");
    div.className = `tile tile-${tileLevel(spec, health)}`;
    div.textContent = spec.label;
    tiles.appendChild(div);
  }
  for (const unit of ["a", "b"] as const) {
    const div = document.createElement("div");
    div.className = `tile tile-${gpsUnitLevel(health, unit)}`;
    div.textContent = `GPS ${unit.toUpperCase()} redundancy`;
    tiles.appendChild(div);
  }
}

function renderDetail(): void {
  drawChart($("chart-speed") as HTMLCanvasElement, {
    title: "speed [m/s]",
    series: [
      { data: state.speed, color: "#e4463c", label: "actual" },
      { data: state.targetSpeed, color: "#8b8f98", label: "target" },
    ],
    yMin: 0,
  });
  drawChart($("chart-cte") as HTMLCanvasElement, {
    title: "cross-track error [m]",
    series: [{ data: state.cte, color: "#4c8dd4", label: "cte" }],
  });
  drawChart($("chart-controls") as HTMLCanvasElement, {
    title: "controls",
    series: [
      { data: state.throttle, color: "#3ca45c", label: "throttle" },
      { data: state.brake, color: "#e4463c", label: "brake" },
      { data: state.steer, color: "#d4a93c", label: "steer [rad]" },
    ],
  });
}

function renderCommands(): void {
  commands.expire(performance.now());
  const list = $("command-history");
  list.innerHTML = "";
  for (const rec of [...commands.history].reverse().slice(0, 12)) {
    const li = document.createElement("li");
    li.className = `cmd-${rec.status}`;
    const what = rec.kind === "set_round_speed"
      ? `${rec.kind} ${rec.payload.toFixed(1)} m/s`
      : rec.kind === "set_flag"
        ? `${rec.kind} ${rec.payload}`
        : rec.kind;
    li.textContent = `${what} — ${rec.status}`;
    if (rec.status === "unacknowledged") {
      const retry = document.createElement("button");
      retry.textContent = "retry";
      retry.onclick = () => sendCommand(rec.kind, rec.payload);
      li.appendChild(retry);
    }
    list.appendChild(li);
  }
}

function bindControls(): void {
  ($("btn-flag-set") as HTMLButtonElement).onclick = () => {
    const sel = $("flag-select") as HTMLSelectElement;
    sendCommand("set_flag", FLAG_CODES[sel.value as keyof typeof FLAG_CODES]);
  };
  ($("btn-speed-set") as HTMLButtonElement).onclick = () => {
    const input = $("speed-input") as HTMLInputElement;
    const v = parseFloat(input.value);
    if (Number.isFinite(v) && v >= 0) sendCommand("set_round_speed", v);
  };
  ($("btn-estop") as HTMLButtonElement).onclick = () =>
    sendCommand("emergency_stop", 0);
  ($("btn-reset") as HTMLButtonElement).onclick = () =>
    sendCommand("reset_latch", 0);

  document.querySelectorAll<HTMLButtonElement>(".tab-button").forEach((btn) => {
    btn.onclick = () => {
      document.querySelectorAll(".tab-button").forEach((b) =>
        b.classList.toggle("active", b === btn));
      document.querySelectorAll<HTMLElement>(".tab").forEach((tab) =>
        tab.classList.toggle("hidden", tab.id !== btn.dataset.tab));
    };
  });
}

bindControls();
connect();
setInterval(() => {
  renderPrimary();
  renderDetail();
  renderCommands();
}, 100);
