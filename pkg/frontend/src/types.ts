/** Bridge message and command types. Field names mirror docs/wire_format.md;
 *  the console never derives state beyond unit conversion and display. */

export type FlagName = "green" | "waving_green" | "yellow" | "red";
export type RoleName = "attacker" | "defender";

export interface HealthFlags {
  unit_a_pose_ok: boolean;
  unit_a_velocity_ok: boolean;
  unit_a_heading_ok: boolean;
  unit_b_pose_ok: boolean;
  unit_b_velocity_ok: boolean;
  unit_b_heading_ok: boolean;
  fused_cov_ok: boolean;
  safe_stop_latched: boolean;
  lidar_rate_ok: boolean;
  camera_rate_ok: boolean;
  opponent_tracked: boolean;
  traction_lost: boolean;
  planner_healthy: boolean;
  localization_rate_ok: boolean;
  spinout_detected: boolean;
  telemetry_socket_ok: boolean;
}

export interface TelemetryMessage {
  seq: number;
  sim_time: number;
  ego_x: number;
  ego_y: number;
  ego_psi: number;
  ego_speed: number;
  target_speed: number;
  flag: FlagName;
  role: RoleName;
  opp_present: boolean;
  opp_x: number;
  opp_y: number;
  opp_speed: number;
  health_bits: number;
  health: HealthFlags;
  cte: number;
  steer: number;
  throttle: number;
  brake: number;
  gap_count: number;
}

export type CommandKind =
  | "set_flag"
  | "set_round_speed"
  | "emergency_stop"
  | "reset_latch";

export interface CommandMessage {
  kind: CommandKind;
  payload: number;
}

export const FLAG_CODES: Record<FlagName, number> = {
  green: 0,
  waving_green: 1,
  yellow: 2,
  red: 3,
};

export const FLAG_BY_CODE: FlagName[] = ["green", "waving_green", "yellow", "red"];

export const MPS_TO_MPH = 2.23694;
