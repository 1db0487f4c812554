// Wire types for the bridge protocol (feedsim-protocol/1).
// One JSON object per WebSocket text frame; see docs/protocol.md.

export type CommandName =
  | "scoop"
  | "wipe"
  | "feed"
  | "stop"
  | "dry_run"
  | "re_estimate_mouth"
  | "feedback";

export type CalibrationDirection = "left" | "right" | "up" | "down" | "in" | "out";

export interface CommandMessage {
  type: "command";
  payload: { command: CommandName; label?: string };
}

export interface CalibrationMessage {
  type: "calibration";
  payload: { direction: CalibrationDirection };
}

export type ClientMessage = CommandMessage | CalibrationMessage;

export interface PoseJson {
  position: [number, number, number];
  wxyz: [number, number, number, number];
}

export interface StatePayload {
  state: string;
  banner: string;
  buttons_enabled: boolean;
  active_subtask: string | null;
  calibration_steps: [number, number, number];
  mouth_open: boolean;
  transition?: { from: string; to: string; trigger: string; source: string };
  protocol?: string;
  scene_static?: SceneStatic;
}

export interface SceneStatic {
  bowl_center: [number, number, number];
  bowl_diameter: number;
  guard_height: number;
  bar: [[number, number, number], [number, number, number]];
  mouth_nominal: PoseJson;
  utensil: { name: string; kind: string };
  grid_n: number;
}

export interface ScenePayload {
  t: number;
  state: string;
  banner: string;
  theta: number[];
  tip: PoseJson;
  tilt_deg: number;
  food_total_g: number;
  food_grid: number[][];
  utensil_load_g: number;
  eaten_g: number;
  spilled_g: number;
  mouth: PoseJson;
  mouth_open: boolean;
  mouth_estimate: {
    pose: PoseJson;
    confidence: number;
    open: boolean;
    timestamp: number;
    stale: boolean;
  } | null;
  calibration_steps: [number, number, number];
  progress: number;
}

export interface ServerMessage {
  type: "state" | "scene" | "estimate" | "calibration" | "feedback_request" | "error";
  payload: Record<string, unknown>;
  seq?: number;
  t?: number;
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const msg = doc as Partial<ServerMessage>;
  if (typeof msg.type !== "string" || typeof msg.payload !== "object" || msg.payload === null) {
    return null;
  }
  return msg as ServerMessage;
}

export function encode(msg: ClientMessage): string {
  return JSON.stringify(msg);
}

export function commandMessage(command: CommandName, label?: string): CommandMessage {
  return { type: "command", payload: label === undefined ? { command } : { command, label } };
}

export function calibrationMessage(direction: CalibrationDirection): CalibrationMessage {
  return { type: "calibration", payload: { direction } };
}
