/** Dashboard state: latest snapshot, staleness, link quality, and bounded
 *  time-series history for the detail tab. Pure logic, no DOM. */

import type { TelemetryMessage } from "./types.js";

export const STALE_AFTER_MS = 1000;

export interface SeriesPoint {
  t: number; // sim seconds
  v: number;
}

export class Series {
  points: SeriesPoint[] = [];
  constructor(readonly capacity = 600) {}

  push(t: number, v: number): void {
    this.points.push({ t, v });
    if (this.points.length > this.capacity) {
      this.points.splice(0, this.points.length - this.capacity);
    }
  }

  last(): SeriesPoint | undefined {
    return this.points[this.points.length - 1];
  }
}

export class DashboardState {
  latest: TelemetryMessage | null = null;
  received = 0;
  lastWallMs = -Infinity;
  readonly speed = new Series();
  readonly targetSpeed = new Series();
  readonly cte = new Series();
  readonly steer = new Series();
  readonly throttle = new Series();
  readonly brake = new Series();

  update(msg: TelemetryMessage, wallMs: number): void {
    // Out-of-order UDP delivery: keep the newest sequence only.
    if (this.latest !== null && msg.seq <= this.latest.seq) {
      return;
    }
    this.latest = msg;
    this.received += 1;
    this.lastWallMs = wallMs;
    this.speed.push(msg.sim_time, msg.ego_speed);
    this.targetSpeed.push(msg.sim_time, msg.target_speed);
    this.cte.push(msg.sim_time, msg.cte);
    this.steer.push(msg.sim_time, msg.steer);
    this.throttle.push(msg.sim_time, msg.throttle);
    this.brake.push(msg.sim_time, msg.brake);
  }

  /** Data older than a second gets the prominent stale banner. */
  isStale(wallMs: number): boolean {
    return this.latest === null || wallMs - this.lastWallMs > STALE_AFTER_MS;
  }

  /** Sequence-gap rate over everything seen so far, in [0, 1]. */
  gapRate(): number {
    if (this.latest === null) return 0;
    const gaps = this.latest.gap_count;
    const total = this.received + gaps;
    return total > 0 ? gaps / total : 0;
  }
}
