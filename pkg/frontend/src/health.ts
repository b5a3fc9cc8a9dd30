/** Health-tile model: maps packet health bits to the three-level
 *  good / warning / bad color scheme used on the wall display. */

import type { HealthFlags, TelemetryMessage } from "./types.js";

export type Level = "good" | "warning" | "bad";

export interface TileSpec {
  key: keyof HealthFlags;
  label: string;
  group: "gps" | "sensors" | "stack" | "vehicle";
  /** Severity when the bit reports unhealthy. */
  offLevel: Level;
  /** Bits where `true` is the unhealthy state (e.g. traction_lost). */
  inverted?: boolean;
}

export const TILES: TileSpec[] = [
  { key: "unit_a_pose_ok", label: "GPS A pose", group: "gps", offLevel: "bad" },
  { key: "unit_a_velocity_ok", label: "GPS A velocity", group: "gps", offLevel: "bad" },
  { key: "unit_a_heading_ok", label: "GPS A heading", group: "gps", offLevel: "warning" },
  { key: "unit_b_pose_ok", label: "GPS B pose", group: "gps", offLevel: "bad" },
  { key: "unit_b_velocity_ok", label: "GPS B velocity", group: "gps", offLevel: "bad" },
  { key: "unit_b_heading_ok", label: "GPS B heading", group: "gps", offLevel: "warning" },
  { key: "fused_cov_ok", label: "Fused covariance", group: "stack", offLevel: "bad" },
  { key: "safe_stop_latched", label: "Safe stop", group: "stack", offLevel: "bad", inverted: true },
  { key: "lidar_rate_ok", label: "LiDAR rate", group: "sensors", offLevel: "bad" },
  { key: "camera_rate_ok", label: "Camera rate", group: "sensors", offLevel: "warning" },
  { key: "opponent_tracked", label: "Opponent track", group: "sensors", offLevel: "warning" },
  { key: "localization_rate_ok", label: "Odometry rate", group: "stack", offLevel: "bad" },
  { key: "planner_healthy", label: "Planner", group: "stack", offLevel: "bad" },
  { key: "traction_lost", label: "Traction", group: "vehicle", offLevel: "warning", inverted: true },
  { key: "spinout_detected", label: "Spin-out", group: "vehicle", offLevel: "bad", inverted: true },
  { key: "telemetry_socket_ok", label: "Telemetry link", group: "stack", offLevel: "warning" },
];

export function tileLevel(spec: TileSpec, health: HealthFlags): Level {
  const raw = health[spec.key];
  const healthy = spec.inverted ? !raw : raw;
  return healthy ? "good" : spec.offLevel;
}

/** Redundancy view: one GPS unit down is a warning, both down is bad. */
export function gpsUnitLevel(health: HealthFlags, unit: "a" | "b"): Level {
  const mine =
    unit === "a"
      ? health.unit_a_pose_ok && health.unit_a_velocity_ok
      : health.unit_b_pose_ok && health.unit_b_velocity_ok;
  if (mine) return "good";
  const other =
    unit === "a"
      ? health.unit_b_pose_ok && health.unit_b_velocity_ok
      : health.unit_a_pose_ok && health.unit_a_velocity_ok;
  return other ? "warning" : "bad";
}

export function decodeHealthBits(bits: number): HealthFlags {
  const names: (keyof HealthFlags)[] = [
    "unit_a_pose_ok", "unit_a_velocity_ok", "unit_a_heading_ok",
    "unit_b_pose_ok", "unit_b_velocity_ok", "unit_b_heading_ok",
    "fused_cov_ok", "safe_stop_latched",
    "lidar_rate_ok", "camera_rate_ok", "opponent_tracked",
    "traction_lost", "planner_healthy", "localization_rate_ok",
    "spinout_detected", "telemetry_socket_ok",
  ];
  const out = {} as HealthFlags;
  names.forEach((name, i) => {
    out[name] = ((bits >> i) & 1) === 1;
  });
  return out;
}

/** Accept either the decoded block or raw bits, so the console can replay
 *  packet captures that carry only `health_bits`. */
export function healthOf(msg: TelemetryMessage): HealthFlags {
  return msg.health ?? decodeHealthBits(msg.health_bits);
}
