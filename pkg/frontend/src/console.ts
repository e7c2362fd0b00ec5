// Browser entry: form wiring, canvas painting of the render plan, report panels.

import { analyze, validateForm } from "./flow.js";
import type { AnalysisOutcome, ConsoleForm, FieldErrors } from "./flow.js";
import { MAJOR_DIVISION_MV, MAJOR_DIVISION_S, MINOR_PER_MAJOR } from "./render.js";
import type { RenderPlan } from "./render.js";
import { AnalyzeFailure } from "./wire.js";

const PX_PER_MM = 3;
const GRID_MAJOR = "#e8a0a8";
const GRID_MINOR = "#f6d4d8";
const TRACE_COLOR = "#1a1a1a";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function readForm(): ConsoleForm {
  return {
    sampleRateText: el<HTMLInputElement>("sample-rate").value,
    adcGainText: el<HTMLInputElement>("adc-gain").value,
    baselineText: el<HTMLInputElement>("baseline").value,
    csvText: el<HTMLTextAreaElement>("csv-text").value,
  };
}

function setFieldErrors(errors: FieldErrors) {
  const byField: Record<string, string | undefined> = { ...errors };
  for (const field of ["sampleRate", "adcGain", "baseline", "csv"]) {
    const slot = document.getElementById(`error-${field}`);
    if (slot) slot.textContent = byField[field] ?? "";
  }
}

function refreshFormState() {
  const result = validateForm(readForm());
  setFieldErrors(result.ok ? {} : result.errors);
  el<HTMLButtonElement>("analyze").disabled = !result.ok || pending;
}

function drawWaveforms(plan: RenderPlan) {
  const canvas = el<HTMLCanvasElement>("waveforms");
  const bandPx = plan.grid.bandHeightMm * PX_PER_MM;
  canvas.width = Math.max(600, Math.ceil(plan.grid.widthMm * PX_PER_MM));
  canvas.height = Math.ceil(bandPx * plan.traces.length);
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.fillStyle = "#fff";
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  // millimeter mesh: minor lines every 0.04 s / 0.1 mV, major every fifth
  const minorXPx = (MAJOR_DIVISION_S / MINOR_PER_MAJOR) * plan.mmPerSecond * PX_PER_MM;
  const minorYPx = (MAJOR_DIVISION_MV / MINOR_PER_MAJOR) * plan.mmPerMv * PX_PER_MM;
  for (let i = 0; i * minorXPx <= canvas.width; i++) {
    ctx.strokeStyle = i % MINOR_PER_MAJOR === 0 ? GRID_MAJOR : GRID_MINOR;
    ctx.lineWidth = i % MINOR_PER_MAJOR === 0 ? 1.2 : 0.5;
    ctx.beginPath();
    ctx.moveTo(i * minorXPx, 0);
    ctx.lineTo(i * minorXPx, canvas.height);
    ctx.stroke();
  }
  for (let j = 0; j * minorYPx <= canvas.height; j++) {
    ctx.strokeStyle = j % MINOR_PER_MAJOR === 0 ? GRID_MAJOR : GRID_MINOR;
    ctx.lineWidth = j % MINOR_PER_MAJOR === 0 ? 1.2 : 0.5;
    ctx.beginPath();
    ctx.moveTo(0, j * minorYPx);
    ctx.lineTo(canvas.width, j * minorYPx);
    ctx.stroke();
  }

  ctx.strokeStyle = TRACE_COLOR;
  ctx.lineWidth = 1.1;
  ctx.font = "12px sans-serif";
  ctx.fillStyle = TRACE_COLOR;
  plan.traces.forEach((trace, band) => {
    const mid = band * bandPx + bandPx / 2;
    ctx.fillText(trace.lead, 4, band * bandPx + 14);
    ctx.beginPath();
    trace.timesS.forEach((t, i) => {
      const x = t * plan.mmPerSecond * PX_PER_MM;
      const y = mid - trace.valuesMv[i] * plan.mmPerMv * PX_PER_MM;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  });
}

function renderReport(outcome: AnalysisOutcome) {
  el("report").hidden = false;
  el("report-model").textContent = outcome.report.model;

  const findings = el("findings");
  findings.innerHTML = "";
  for (const row of outcome.report.findings) {
    const item = document.createElement("tr");
    if (row.highlighted) item.className = "highlighted";
    item.innerHTML = `<td>${row.code}</td><td>${row.name}</td>` +
      `<td>${(row.probability * 100).toFixed(1)}%</td>`;
    findings.appendChild(item);
  }

  const meas = el("measurements");
  if (outcome.report.measurements) {
    const m = outcome.report.measurements;
    meas.textContent =
      `Heart rate ${m.heartRateBpm.toFixed(0)} bpm · ` +
      `RR mean ${m.rrMeanMs.toFixed(0)} ms · RR std ${m.rrStdMs.toFixed(0)} ms`;
  } else {
    meas.textContent = "Rhythm measurements unavailable for this recording.";
  }

  drawWaveforms(outcome.renderPlan);
}

function showBanner(message: string, retriable: boolean) {
  const banner = el("banner");
  banner.hidden = false;
  banner.textContent = retriable ? `${message} — try again.` : message;
}

let pending = false;

async function onAnalyze() {
  const result = validateForm(readForm());
  if (!result.ok) {
    setFieldErrors(result.errors);
    return;
  }
  pending = true;
  el<HTMLButtonElement>("analyze").disabled = true;
  el("banner").hidden = true;
  try {
    const outcome = await analyze(result.value, "", el<HTMLInputElement>("token").value);
    renderReport(outcome);
  } catch (err) {
    if (err instanceof AnalyzeFailure) {
      showBanner(`${err.code}: ${err.message}`, err.retriable);
    } else {
      showBanner(String(err), false);
    }
  } finally {
    pending = false;
    refreshFormState();
  }
}

async function loadExample(name: string) {
  if (!name) return;
  const response = await fetch(`examples/${name}`);
  el<HTMLTextAreaElement>("csv-text").value = await response.text();
  el<HTMLInputElement>("sample-rate").value = "250";
  el<HTMLInputElement>("adc-gain").value = "200";
  el<HTMLInputElement>("baseline").value = "0";
  refreshFormState();
}

function onFilePicked(input: HTMLInputElement) {
  const file = input.files?.[0];
  if (!file) return;
  const reader = new FileReader();
  reader.onload = () => {
    el<HTMLTextAreaElement>("csv-text").value = String(reader.result ?? "");
    refreshFormState();
  };
  reader.readAsText(file);
}

export function start() {
  for (const id of ["sample-rate", "adc-gain", "baseline", "csv-text", "token"]) {
    el(id).addEventListener("input", refreshFormState);
  }
  el<HTMLButtonElement>("analyze").addEventListener("click", () => void onAnalyze());
  el<HTMLSelectElement>("example").addEventListener("change", (event) =>
    void loadExample((event.target as HTMLSelectElement).value));
  el<HTMLInputElement>("csv-file").addEventListener("change", (event) =>
    onFilePicked(event.target as HTMLInputElement));
  refreshFormState();
}

if (typeof document !== "undefined" && document.getElementById("analyze")) {
  start();
}
