// Dashboard bootstrap: wire the telemetry link, render queue, store and
// panels together. All clinical numbers come from service messages; this
// file is plumbing and paint.

import { tiBadgeColor, tiBadgeLabel } from "./badge";
import { drawFatigue, drawMedianIqrPair, drawSpectrum, drawStrip } from "./charts";
import {
  initialControls,
  resetSafety,
  restControlApi,
  setAssistLevel,
  startSession,
  stopSession,
  canAdjustAssistLevel,
  canResetSafety,
  canSelectTaskAndCondition,
  canStart,
  canStop,
} from "./controls";
import { LAMP_KINDS } from "./lamps";
import { RenderQueue } from "./queue";
import { TelemetryLink, type LinkState, type SocketLike } from "./reconnect";
import { applyMessage, displayTrend, initialState } from "./store";
import { fetchExportCsv, fetchSummary, formatContrastCell, formatMedianIqr, OUTCOME_LABELS, type ReportDoc } from "./summary";

const state = initialState();
state.controls = initialControls();
const queue = new RenderQueue(256);
const api = restControlApi();

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const canvases = {
  emg: $("strip-emg") as HTMLCanvasElement,
  accel: $("strip-accel") as HTMLCanvasElement,
  angle: $("strip-angle") as HTMLCanvasElement,
  force: $("strip-force") as HTMLCanvasElement,
  spectrum: $("spectrum") as HTMLCanvasElement,
  fatigue: $("fatigue") as HTMLCanvasElement,
};

function linkStateChanged(link: LinkState): void {
  const banner = $("link-banner");
  banner.textContent = link === "live" ? "live" : link;
  banner.className = link === "live" ? "live" : link === "reconnecting" ? "reconnecting" : "";
}

const link = new TelemetryLink({
  connect: () => {
    const proto = location.protocol === "https:" ? "wss" : "ws";
    return new WebSocket(`${proto}://${location.host}/ws/telemetry`) as unknown as SocketLike;
  },
  onMessage: (msg) => queue.push(msg),
  onState: linkStateChanged,
});
link.open();

function renderLamps(): void {
  const box = $("lamps");
  box.innerHTML = "";
  for (const kind of LAMP_KINDS) {
    const el = document.createElement("span");
    el.className = state.safety.lamps[kind] ? "lamp on" : "lamp";
    el.textContent = kind.replace("_", "/");
    box.appendChild(el);
  }
}

function renderEventLog(): void {
  const log = $("event-log");
  log.innerHTML = "";
  for (const entry of state.safety.log.slice(-30)) {
    const li = document.createElement("li");
    li.textContent = `${entry.t_s.toFixed(2)}s — ${entry.text}`;
    if (entry.severity === "alarm") li.className = "alarm";
    log.appendChild(li);
  }
}

function renderControls(): void {
  ($("btn-start") as HTMLButtonElement).disabled = !canStart(state.controls);
  ($("btn-stop") as HTMLButtonElement).disabled = !canStop(state.controls);
  ($("btn-reset") as HTMLButtonElement).disabled = !canResetSafety(state.controls);
  ($("task-select") as HTMLSelectElement).disabled = !canSelectTaskAndCondition(state.controls);
  ($("condition-select") as HTMLSelectElement).disabled = !canSelectTaskAndCondition(state.controls);
  ($("assist-level") as HTMLInputElement).disabled = !canAdjustAssistLevel(state.controls);
  $("toast").textContent = state.controls.lastError ?? "";
  $("session-indicator").textContent =
    state.controls.session === "idle"
      ? ""
      : `${state.controls.session}: ${state.controls.task} / ${state.controls.condition}`;
}

function renderFrame(): void {
  const frame = state.lastFrame;
  const badge = $("ti-badge");
  badge.textContent = tiBadgeLabel(state.ti);
  badge.style.background = tiBadgeColor(state.badge);
  if (!frame) return;
  $("need-value").textContent = frame.assist.need.toFixed(2);
  $("torque-value").textContent = frame.assist.torque.toFixed(2);
  const engaged = $("engaged-value");
  engaged.textContent = frame.assist.engaged ? "engaged" : "DISENGAGED";
  engaged.style.color = frame.assist.engaged ? "inherit" : "var(--alarm)";
  const kin = state.kinematics;
  $("rom-value").textContent = kin ? kin.rom_deg.toFixed(1) : "--";
  $("reps-value").textContent = kin ? `${kin.reps} (${kin.reps_per_min.toFixed(1)})` : "--";
  $("pacing-value").textContent = kin && kin.pacing !== null ? `${(kin.pacing * 100).toFixed(0)}%` : "--";

  const ctx = (c: HTMLCanvasElement) => {
    c.width = c.clientWidth || 400;
    return c.getContext("2d")!;
  };
  drawStrip(ctx(canvases.emg), frame.snippets["emg_triceps"] ?? [], canvases.emg.width, 70, "sEMG triceps (mV)");
  drawStrip(ctx(canvases.accel), frame.snippets["imu_accel"] ?? [], canvases.accel.width, 70, "IMU accel (m/s2)");
  drawStrip(ctx(canvases.angle), frame.snippets["joint_angle"] ?? [], canvases.angle.width, 70, "joint angle (deg)");
  drawStrip(ctx(canvases.force), frame.snippets["force_flex"] ?? [], canvases.force.width, 70, "force/flex (N)");
  if (frame.psd) {
    drawSpectrum(ctx(canvases.spectrum), frame.psd.freqs_hz, frame.psd.power, canvases.spectrum.width, 110);
  }
  drawFatigue(ctx(canvases.fatigue), state.fmedSeries, displayTrend(state.fmedSeries), canvases.fatigue.width, 110);
}

function renderDropouts(): void {
  const drops = queue.takeDropouts();
  if (drops.length === 0) return;
  const missed = drops.reduce((acc, d) => acc + d.missed, 0);
  $("dropout-indicator").textContent = `dropout: ${missed} frame(s) missed`;
  setTimeout(() => ($("dropout-indicator").textContent = ""), 3000);
}

function pump(): void {
  for (const msg of queue.drain()) {
    applyMessage(state, msg);
  }
  renderDropouts();
  renderFrame();
  renderLamps();
  renderEventLog();
  renderControls();
  requestAnimationFrame(pump);
}
requestAnimationFrame(pump);

// -- control wiring ---------------------------------------------------------

$("task-select").addEventListener("change", (e) => {
  state.controls.task = (e.target as HTMLSelectElement).value;
});
$("condition-select").addEventListener("change", (e) => {
  state.controls.condition = (e.target as HTMLSelectElement).value as "baseline" | "assisted";
});
$("assist-level").addEventListener("input", (e) => {
  const level = Number((e.target as HTMLInputElement).value);
  $("assist-level-value").textContent = level.toFixed(2);
  void setAssistLevel(state.controls, api, level);
});
$("btn-start").addEventListener("click", () => void startSession(state.controls, api).then(renderControls));
$("btn-stop").addEventListener("click", () => void stopSession(state.controls, api).then(refreshSummary));
$("btn-reset").addEventListener("click", () => void resetSafety(state.controls, api));

// -- summary / export -------------------------------------------------------

function renderSummary(report: ReportDoc): void {
  $("summary-hint").textContent = `paired analysis over ${report.n_subjects} subjects`;
  const rows = report.contrasts
    .map(
      (c) => `<tr>
        <td>${OUTCOME_LABELS[c.outcome_name] ?? c.outcome_name}</td>
        <td>${formatMedianIqr(c.baseline_median, c.baseline_iqr)}</td>
        <td>${formatMedianIqr(c.assisted_median, c.assisted_iqr)}</td>
        <td>${formatContrastCell(c)}</td>
      </tr>`,
    )
    .join("");
  const responders = report.responders
    .map((r) => `<tr><td>${r.criterion}</td><td>${r.n_responders} / ${r.n_total}</td><td>${r.proportion_pct.toFixed(1)}%</td></tr>`)
    .join("");
  const excluded = (report.excluded_sessions ?? [])
    .map((e) => `<tr style="color:var(--gray)"><td>${e.subject_id} ${e.task}/${e.condition}</td><td colspan="2">excluded: ${e.reason}</td></tr>`)
    .join("");
  $("summary-table").innerHTML = `
    <table>
      <tr><th>Outcome</th><th>Baseline</th><th>Assisted</th><th>Delta (95% CI), p, effect</th></tr>
      ${rows}
      <tr><th colspan="4">Responders (prespecified)</th></tr>
      ${responders}
      ${excluded}
    </table>`;
  const smalls = $("small-multiples");
  smalls.innerHTML = "";
  for (const c of report.contrasts) {
    if (!["ti", "rom_deg", "reps"].includes(c.outcome_name)) continue;
    if (c.baseline_median === null || !c.baseline_iqr || c.assisted_median === null || !c.assisted_iqr) continue;
    const canvas = document.createElement("canvas");
    canvas.height = 120;
    smalls.appendChild(canvas);
    canvas.width = canvas.clientWidth || 160;
    drawMedianIqrPair(
      canvas.getContext("2d")!,
      { median: c.baseline_median, iqr: c.baseline_iqr },
      { median: c.assisted_median, iqr: c.assisted_iqr },
      canvas.width,
      120,
      OUTCOME_LABELS[c.outcome_name] ?? c.outcome_name,
    );
  }
  ($("btn-dl-outcomes") as HTMLButtonElement).disabled = false;
  ($("btn-dl-trajectories") as HTMLButtonElement).disabled = false;
}

async function refreshSummary(): Promise<void> {
  try {
    const report = await fetchSummary();
    if (report) renderSummary(report);
  } catch (e) {
    $("summary-hint").textContent = String(e);
  }
}

function download(name: string, text: string): void {
  const blob = new Blob([text], { type: "text/csv" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = name;
  a.click();
  URL.revokeObjectURL(a.href);
}

$("btn-dl-outcomes").addEventListener("click", async () => {
  const text = await fetchExportCsv("outcomes");
  if (text !== null) download("outcome_median_iqr.csv", text);
});
$("btn-dl-trajectories").addEventListener("click", async () => {
  const text = await fetchExportCsv("trajectories");
  if (text !== null) download("paired_trajectories.csv", text);
});

void refreshSummary();
