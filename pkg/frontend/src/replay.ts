/** Recorded-stream replay: drives the dashboard from a JSONL capture of the
 *  bridge, so the console can be exercised with no simulator running. */

import type { TelemetryMessage } from "./types.js";

export function parseStream(jsonl: string): TelemetryMessage[] {
  return jsonl
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0)
    .map((line) => JSON.parse(line) as TelemetryMessage);
}

export function startReplay(
  messages: TelemetryMessage[],
  onMessage: (msg: TelemetryMessage) => void,
  speedup = 1,
): () => void {
  if (messages.length === 0) return () => undefined;
  let idx = 0;
  let timer: ReturnType<typeof setTimeout> | null = null;
  const step = () => {
    onMessage(messages[idx]);
    idx += 1;
    if (idx >= messages.length) idx = 0; // loop the capture
    const next = messages[idx];
    const prev = messages[(idx + messages.length - 1) % messages.length];
    const dt = Math.max(next.sim_time - prev.sim_time, 0.02);
    timer = setTimeout(step, (dt * 1000) / speedup);
  };
  step();
  return () => {
    if (timer !== null) clearTimeout(timer);
  };
}
