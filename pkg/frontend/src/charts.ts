/** Minimal canvas strip charts for the detail tab; no dependencies. */

import type { Series } from "./dashboard.js";

export interface ChartSpec {
  title: string;
  series: { data: Series; color: string; label: string }[];
  yMin?: number;
  yMax?: number;
}

export function drawChart(canvas: HTMLCanvasElement, spec: ChartSpec): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#3a3e46";
  ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
  ctx.fillStyle = "#c8ccd4";
  ctx.font = "12px sans-serif";
  ctx.fillText(spec.title, 8, 14);

  const all = spec.series.flatMap((s) => s.data.points);
  if (all.length < 2) return;
  const t0 = Math.min(...all.map((p) => p.t));
  const t1 = Math.max(...all.map((p) => p.t));
  let lo = spec.yMin ?? Math.min(...all.map((p) => p.v));
  let hi = spec.yMax ?? Math.max(...all.map((p) => p.v));
  if (hi - lo < 1e-6) {
    hi += 0.5;
    lo -= 0.5;
  }
  const margin = 18;
  const tx = (t: number) => margin + ((t - t0) / Math.max(t1 - t0, 1e-9)) * (w - 2 * margin);
  const ty = (v: number) => h - margin - ((v - lo) / (hi - lo)) * (h - 2 * margin - 6);

  spec.series.forEach((s, i) => {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 1.25;
    ctx.beginPath();
    s.data.points.forEach((p, j) => {
      if (j === 0) ctx.moveTo(tx(p.t), ty(p.v));
      else ctx.lineTo(tx(p.t), ty(p.v));
    });
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, w - 90, 14 + 14 * i);
  });
  ctx.fillStyle = "#8b8f98";
  ctx.fillText(hi.toFixed(1), 2, margin);
  ctx.fillText(lo.toFixed(1), 2, h - 6);
}
