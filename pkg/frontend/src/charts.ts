// Canvas drawing for the live panels. Clinical palette: blues/teals for
// signal, gray grid, restrained accents; the tremor band is shaded on the
// spectral view.

import { minMaxBins } from "./decimate";
import type { FmedPoint } from "./store";

export const PALETTE = {
  signal: "#2b6f9e", // clinical blue
  accent: "#2a9d8f", // teal
  grid: "#dde3e8",
  text: "#42505c",
  band: "rgba(42, 157, 143, 0.18)",
  alarm: "#c44536",
  trend: "#1d3557",
};

export function clearPanel(ctx: CanvasRenderingContext2D, w: number, h: number): void {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = PALETTE.grid;
  ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
}

/** Waveform strip: min/max envelope of the latest snippet, gaps left open. */
export function drawStrip(
  ctx: CanvasRenderingContext2D,
  values: Array<number | null>,
  w: number,
  h: number,
  label: string,
): void {
  clearPanel(ctx, w, h);
  const bins = minMaxBins(values, Math.max(16, Math.floor(w / 3)));
  const finite = bins.filter((b): b is { min: number; max: number } => b !== null);
  if (finite.length > 0) {
    let lo = Math.min(...finite.map((b) => b.min));
    let hi = Math.max(...finite.map((b) => b.max));
    if (hi - lo < 1e-9) {
      hi += 0.5;
      lo -= 0.5;
    }
    const y = (v: number) => h - 4 - ((v - lo) / (hi - lo)) * (h - 8);
    const dx = w / bins.length;
    ctx.strokeStyle = PALETTE.signal;
    ctx.beginPath();
    bins.forEach((b, i) => {
      if (b === null) return; // dropout: no line across the gap
      const x = i * dx + dx / 2;
      ctx.moveTo(x, y(b.min));
      ctx.lineTo(x, y(b.max) - 0.5);
    });
    ctx.stroke();
  }
  ctx.fillStyle = PALETTE.text;
  ctx.font = "11px system-ui";
  ctx.fillText(label, 6, 13);
}

/** Spectral panel with the tremor band (4-12 Hz) shaded. */
export function drawSpectrum(
  ctx: CanvasRenderingContext2D,
  freqs: number[],
  power: number[],
  w: number,
  h: number,
): void {
  clearPanel(ctx, w, h);
  if (freqs.length < 2) return;
  const fMax = freqs[freqs.length - 1];
  const x = (f: number) => (f / fMax) * (w - 8) + 4;
  ctx.fillStyle = PALETTE.band;
  ctx.fillRect(x(4), 1, x(12) - x(4), h - 2);
  const pMax = Math.max(...power, 1e-12);
  const y = (p: number) => h - 4 - (p / pMax) * (h - 20);
  ctx.strokeStyle = PALETTE.signal;
  ctx.beginPath();
  freqs.forEach((f, i) => {
    if (i === 0) ctx.moveTo(x(f), y(power[i]));
    else ctx.lineTo(x(f), y(power[i]));
  });
  ctx.stroke();
  ctx.fillStyle = PALETTE.text;
  ctx.font = "10px system-ui";
  ctx.fillText("4", x(4) - 3, h - 2 + 10);
  ctx.fillText("12", x(12) - 5, h - 2 + 10);
}

/** Median-frequency trend with the display smoothing line. */
export function drawFatigue(
  ctx: CanvasRenderingContext2D,
  series: FmedPoint[],
  trend: FmedPoint[],
  w: number,
  h: number,
): void {
  clearPanel(ctx, w, h);
  if (series.length < 2) return;
  const t0 = series[0].t_s;
  const t1 = series[series.length - 1].t_s;
  const hzs = series.map((p) => p.hz);
  const lo = Math.min(...hzs);
  const hi = Math.max(...hzs);
  const x = (t: number) => ((t - t0) / Math.max(t1 - t0, 1e-9)) * (w - 10) + 5;
  const y = (v: number) => h - 5 - ((v - lo) / Math.max(hi - lo, 1e-9)) * (h - 10);
  ctx.fillStyle = PALETTE.signal;
  for (const p of series) {
    ctx.fillRect(x(p.t_s) - 1, y(p.hz) - 1, 2, 2);
  }
  ctx.strokeStyle = PALETTE.trend;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  trend.forEach((p, i) => {
    if (i === 0) ctx.moveTo(x(p.t_s), y(p.hz));
    else ctx.lineTo(x(p.t_s), y(p.hz));
  });
  ctx.stroke();
  ctx.lineWidth = 1;
}

/** Small-multiple dot + IQR bar pair (baseline vs assisted). */
export function drawMedianIqrPair(
  ctx: CanvasRenderingContext2D,
  baseline: { median: number; iqr: [number, number] },
  assisted: { median: number; iqr: [number, number] },
  w: number,
  h: number,
  label: string,
): void {
  clearPanel(ctx, w, h);
  const values = [baseline.iqr[0], baseline.iqr[1], assisted.iqr[0], assisted.iqr[1]];
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const y = (v: number) => h - 16 - ((v - lo) / Math.max(hi - lo, 1e-9)) * (h - 34);
  const columns = [
    { x: w * 0.33, d: baseline, color: PALETTE.signal },
    { x: w * 0.67, d: assisted, color: PALETTE.accent },
  ];
  for (const c of columns) {
    ctx.strokeStyle = c.color;
    ctx.beginPath();
    ctx.moveTo(c.x, y(c.d.iqr[0]));
    ctx.lineTo(c.x, y(c.d.iqr[1]));
    ctx.stroke();
    ctx.fillStyle = c.color;
    ctx.beginPath();
    ctx.arc(c.x, y(c.d.median), 3.5, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.fillStyle = PALETTE.text;
  ctx.font = "11px system-ui";
  ctx.fillText(label, 6, 13);
  ctx.font = "10px system-ui";
  ctx.fillText("base", w * 0.33 - 12, h - 4);
  ctx.fillText("assist", w * 0.67 - 14, h - 4);
}
