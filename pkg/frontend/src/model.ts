// UI state: a pure reducer over server messages so rendering stays a
// function of state and every invariant is testable without a DOM.

import { ScenePayload, SceneStatic, ServerMessage, StatePayload } from "./protocol.js";

export interface FeedbackPrompt {
  execution: number;
  subtask: string;
  success: boolean;
  reason: string;
}

export interface UiState {
  connected: boolean;
  fsmState: string;
  banner: string;
  buttonsEnabled: boolean;
  subtaskActive: boolean;
  calibrationSteps: [number, number, number];
  mouthOpen: boolean;
  sceneStatic: SceneStatic | null;
  scene: ScenePayload | null;
  pendingFeedback: FeedbackPrompt | null;
  lastError: string | null;
  // optimistic lock: pressed button stays disabled until the next state
  pressedLock: boolean;
}

export function initialState(): UiState {
  return {
    connected: false,
    fsmState: "Idle",
    banner: "connecting…",
    buttonsEnabled: false,
    subtaskActive: false,
    calibrationSteps: [0, 0, 0],
    mouthOpen: false,
    sceneStatic: null,
    scene: null,
    pendingFeedback: null,
    lastError: null,
    pressedLock: false,
  };
}

export function applyMessage(state: UiState, msg: ServerMessage): UiState {
  switch (msg.type) {
    case "state": {
      const p = msg.payload as unknown as StatePayload;
      return {
        ...state,
        fsmState: p.state,
        banner: p.banner,
        buttonsEnabled: p.buttons_enabled,
        subtaskActive: p.state !== "Idle",
        calibrationSteps: p.calibration_steps,
        mouthOpen: p.mouth_open,
        sceneStatic: p.scene_static ?? state.sceneStatic,
        pressedLock: false,
      };
    }
    case "scene": {
      const p = msg.payload as unknown as ScenePayload;
      return { ...state, scene: p, mouthOpen: p.mouth_open };
    }
    case "calibration": {
      const steps = msg.payload["steps"] as [number, number, number];
      return { ...state, calibrationSteps: steps };
    }
    case "feedback_request": {
      const p = msg.payload as unknown as FeedbackPrompt;
      return { ...state, pendingFeedback: p };
    }
    case "error": {
      return { ...state, lastError: String(msg.payload["reason"] ?? "error") };
    }
    default:
      return state;
  }
}

export function setConnected(state: UiState, connected: boolean): UiState {
  return {
    ...state,
    connected,
    banner: connected ? state.banner : "disconnected — reconnecting…",
  };
}

/** Subtask buttons are usable only in Idle, connected, and not just pressed. */
export function buttonsUsable(state: UiState): boolean {
  return state.connected && state.buttonsEnabled && !state.pressedLock;
}

/** The full-screen stop overlay shows whenever a subtask is active. */
export function overlayVisible(state: UiState): boolean {
  return state.subtaskActive;
}
