/** Canvas track map: stadium outline with live car markers. The outline is
 *  a static backdrop matching the bundled track config; car positions come
 *  straight from packet fields. */

import type { TelemetryMessage } from "./types.js";

export interface TrackShape {
  straightLength: number;
  turnRadius: number;
  width: number;
}

export const DEFAULT_TRACK: TrackShape = {
  straightLength: 300,
  turnRadius: 190,
  width: 15,
};

function boundary(shape: TrackShape, radius: number): [number, number][] {
  const pts: [number, number][] = [];
  const half = shape.straightLength / 2;
  const n = 48;
  for (let i = 0; i <= n; i++) {
    const a = -Math.PI / 2 + (Math.PI * i) / n;
    pts.push([half + radius * Math.cos(a), radius * Math.sin(a)]);
  }
  for (let i = 0; i <= n; i++) {
    const a = Math.PI / 2 + (Math.PI * i) / n;
    pts.push([-half + radius * Math.cos(a), radius * Math.sin(a)]);
  }
  pts.push(pts[0]);
  return pts;
}

export class TrackMap {
  private scale = 1;
  private cx = 0;
  private cy = 0;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly shape: TrackShape = DEFAULT_TRACK,
  ) {}

  private fit(): void {
    const extentX = this.shape.straightLength + 2 * this.shape.turnRadius + 60;
    const extentY = 2 * this.shape.turnRadius + 60;
    this.scale = Math.min(this.canvas.width / extentX, this.canvas.height / extentY);
    this.cx = this.canvas.width / 2;
    this.cy = this.canvas.height / 2;
  }

  private toPx(x: number, y: number): [number, number] {
    return [this.cx + x * this.scale, this.cy - y * this.scale];
  }

  private path(ctx: CanvasRenderingContext2D, pts: [number, number][]): void {
    ctx.beginPath();
    pts.forEach(([x, y], i) => {
      const [px, py] = this.toPx(x, y);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
  }

  draw(msg: TelemetryMessage | null): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    this.fit();
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.lineWidth = 1.5;
    ctx.strokeStyle = "#8b8f98";
    const { turnRadius, width } = this.shape;
    this.path(ctx, boundary(this.shape, turnRadius - width / 2));
    this.path(ctx, boundary(this.shape, turnRadius + width / 2));

    if (!msg) return;
    this.marker(ctx, msg.ego_x, msg.ego_y, msg.ego_psi, "#e4463c", "ego");
    if (msg.opp_present) {
      this.marker(ctx, msg.opp_x, msg.opp_y, null, "#3ca45c", "opp");
    }
  }

  private marker(ctx: CanvasRenderingContext2D, x: number, y: number,
                 psi: number | null, color: string, label: string): void {
    const [px, py] = this.toPx(x, y);
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.arc(px, py, 5, 0, 2 * Math.PI);
    ctx.fill();
    if (psi !== null) {
      ctx.strokeStyle = color;
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.moveTo(px, py);
      ctx.lineTo(px + 14 * Math.cos(-psi), py + 14 * Math.sin(-psi));
      ctx.stroke();
    }
    ctx.fillStyle = "#c8ccd4";
    ctx.font = "11px sans-serif";
    ctx.fillText(label, px + 8, py - 8);
  }
}
