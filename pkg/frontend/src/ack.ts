/** Command history with acknowledgment tracking.
 *
 *  A command counts as acknowledged when a later telemetry packet reflects
 *  it (flag echo, target-speed echo, safe-stop latch transition). Commands
 *  that see no echo within the timeout are marked for manual retry.
 */

import type { CommandKind, TelemetryMessage } from "./types.js";
import { FLAG_BY_CODE } from "./types.js";
import { healthOf } from "./health.js";

export type AckStatus = "pending" | "acknowledged" | "unacknowledged";

export interface CommandRecord {
  kind: CommandKind;
  payload: number;
  sentWallMs: number;
  sentSimTime: number | null; // sim time of the last packet before sending
  status: AckStatus;
  ackSimTime: number | null;
}

export const ACK_TIMEOUT_MS = 3000;
const SPEED_TOLERANCE = 1.5; // m/s; defender echoes round speed directly

function reflects(cmd: CommandRecord, msg: TelemetryMessage): boolean {
  switch (cmd.kind) {
    case "set_flag":
      return msg.flag === FLAG_BY_CODE[cmd.payload | 0];
    case "set_round_speed":
      return Math.abs(msg.target_speed - cmd.payload) <= SPEED_TOLERANCE;
    case "emergency_stop":
      return healthOf(msg).safe_stop_latched;
    case "reset_latch":
      return !healthOf(msg).safe_stop_latched;
  }
}

export class CommandTracker {
  history: CommandRecord[] = [];

  send(kind: CommandKind, payload: number, wallMs: number,
       lastSimTime: number | null): CommandRecord {
    const rec: CommandRecord = {
      kind, payload, sentWallMs: wallMs, sentSimTime: lastSimTime,
      status: "pending", ackSimTime: null,
    };
    this.history.push(rec);
    return rec;
  }

  /** Match telemetry against pending commands; returns records acked now. */
  onTelemetry(msg: TelemetryMessage): CommandRecord[] {
    const acked: CommandRecord[] = [];
    for (const rec of this.history) {
      if (rec.status !== "pending") continue;
      if (rec.sentSimTime !== null && msg.sim_time <= rec.sentSimTime) continue;
      if (reflects(rec, msg)) {
        rec.status = "acknowledged";
        rec.ackSimTime = msg.sim_time;
        acked.push(rec);
      }
    }
    return acked;
  }

  /** Expire pending commands past the timeout (manual retry from the UI). */
  expire(wallMs: number): CommandRecord[] {
    const expired: CommandRecord[] = [];
    for (const rec of this.history) {
      if (rec.status === "pending" && wallMs - rec.sentWallMs > ACK_TIMEOUT_MS) {
        rec.status = "unacknowledged";
        expired.push(rec);
      }
    }
    return expired;
  }

  pending(): CommandRecord[] {
    return this.history.filter((r) => r.status === "pending");
  }
}
