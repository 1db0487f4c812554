// Operator console: subtask buttons, full-screen stop overlay, calibration
// tab, feedback prompts, and the schematic scene view.  All authority flows
// through protocol messages; the console holds no state the headless CLI
// could not reproduce.

import {
  applyMessage,
  buttonsUsable,
  initialState,
  overlayVisible,
  setConnected,
  UiState,
} from "./model.js";
import {
  CalibrationDirection,
  calibrationMessage,
  commandMessage,
  ServerMessage,
} from "./protocol.js";
import { SceneView } from "./scene.js";
import { Transport } from "./transport.js";

const SUBTASK_BUTTONS: Array<{ id: string; label: string; command: "scoop" | "wipe" | "feed" }> = [
  { id: "btn-scoop", label: "Scoop / Stab", command: "scoop" },
  { id: "btn-wipe", label: "Clean spoon", command: "wipe" },
  { id: "btn-feed", label: "Feeding", command: "feed" },
];

const ARROWS: Array<{ id: string; label: string; direction: CalibrationDirection }> = [
  { id: "cal-up", label: "▲ up", direction: "up" },
  { id: "cal-down", label: "▼ down", direction: "down" },
  { id: "cal-left", label: "◀ left", direction: "left" },
  { id: "cal-right", label: "right ▶", direction: "right" },
  { id: "cal-in", label: "in ⊕", direction: "in" },
  { id: "cal-out", label: "out ⊖", direction: "out" },
];

export class App {
  state: UiState = initialState();
  private transport: Transport;
  private root: HTMLElement;
  private sceneView!: SceneView;   // assigned in build()
  private els: Record<string, HTMLElement> = {};

  constructor(root: HTMLElement, transport: Transport) {
    this.root = root;
    this.transport = transport;
    this.build();
    transport.onMessage((msg) => this.handleMessage(msg));
    transport.onStatus((up) => {
      this.state = setConnected(this.state, up);
      this.render();
    });
    this.render();
  }

  // ------------------------------------------------------------------ DOM

  private build(): void {
    this.root.innerHTML = "";

    const header = el("header", "header");
    this.els.status = el("span", "status");
    this.els.status.id = "conn-status";
    this.els.banner = el("span", "banner");
    this.els.banner.id = "state-banner";
    header.append(this.els.status, this.els.banner);

    const main = el("main", "main");
    const canvas = document.createElement("canvas");
    canvas.id = "scene";
    canvas.width = 640;
    canvas.height = 480;
    this.sceneView = new SceneView(canvas);

    const controls = el("div", "controls");
    for (const spec of SUBTASK_BUTTONS) {
      const b = button(spec.id, spec.label, () => this.sendSubtask(spec.command));
      controls.append(b);
      this.els[spec.id] = b;
    }

    const tabs = el("div", "tabs");
    this.els.tabFeed = button("tab-feeding", "Feeding", () => this.showTab("feeding"));
    this.els.tabCal = button("tab-calibration", "Calibration", () => this.showTab("calibration"));
    tabs.append(this.els.tabFeed, this.els.tabCal);

    const calPane = el("div", "cal-pane");
    calPane.id = "calibration-pane";
    calPane.hidden = true;
    for (const spec of ARROWS) {
      const b = button(spec.id, spec.label, () => this.sendCalibration(spec.direction));
      calPane.append(b);
      this.els[spec.id] = b;
    }
    this.els.calOffset = el("div", "cal-offset");
    this.els.calOffset.id = "cal-offset";
    const dry = button("btn-dry-run", "Dry run (no food)", () => this.sendSubtask("dry_run"));
    const reest = button("btn-re-estimate", "Re-estimate mouth", () =>
      this.sendSubtask("re_estimate_mouth"),
    );
    calPane.append(this.els.calOffset, dry, reest);
    this.els["btn-dry-run"] = dry;
    this.els["btn-re-estimate"] = reest;

    const feedback = el("div", "feedback");
    feedback.id = "feedback-prompt";
    feedback.hidden = true;
    this.els.feedbackText = el("span", "feedback-text");
    const yes = button("fb-success", "Success", () => this.sendFeedback("success"));
    const no = button("fb-failure", "Failure", () => this.sendFeedback("failure"));
    const dismiss = button("fb-dismiss", "Dismiss", () => this.sendFeedback("unlabeled"));
    feedback.append(this.els.feedbackText, yes, no, dismiss);
    this.els.feedback = feedback;

    // full-screen stop: covers the whole viewport while a subtask runs;
    // clicking anywhere sends the stop command
    const overlay = el("div", "stop-overlay");
    overlay.id = "stop-overlay";
    overlay.hidden = true;
    Object.assign(overlay.style, {
      position: "fixed",
      top: "0",
      left: "0",
      width: "100vw",
      height: "100vh",
      zIndex: "100",
    });
    overlay.append(el("div", "stop-label", "STOP"));
    overlay.addEventListener("click", () => this.sendStop());
    this.els.overlay = overlay;

    this.els.error = el("div", "error-toast");
    this.els.error.id = "error-toast";
    this.els.error.hidden = true;

    main.append(canvas, controls);
    this.root.append(header, tabs, main, calPane, feedback, overlay, this.els.error);
    this.els.canvas = canvas;
  }

  private showTab(which: "feeding" | "calibration"): void {
    const cal = this.root.querySelector<HTMLElement>("#calibration-pane")!;
    cal.hidden = which !== "calibration";
  }

  // ------------------------------------------------------------- outbound

  private sendSubtask(command: "scoop" | "wipe" | "feed" | "dry_run" | "re_estimate_mouth"): void {
    if (!buttonsUsable(this.state)) return;
    this.state = { ...this.state, pressedLock: true };
    this.transport.send(commandMessage(command));
    this.render();
  }

  private sendStop(): void {
    this.transport.send(commandMessage("stop"));
  }

  private sendCalibration(direction: CalibrationDirection): void {
    if (!buttonsUsable(this.state)) return;
    this.transport.send(calibrationMessage(direction));
  }

  private sendFeedback(label: string): void {
    this.transport.send(commandMessage("feedback", label));
    this.state = { ...this.state, pendingFeedback: null };
    this.render();
  }

  // -------------------------------------------------------------- inbound

  handleMessage(msg: ServerMessage): void {
    this.state = applyMessage(this.state, msg);
    this.render();
  }

  // -------------------------------------------------------------- render

  render(): void {
    const s = this.state;
    this.els.status.textContent = s.connected ? "● connected" : "○ offline";
    this.els.status.className = s.connected ? "status up" : "status down";
    // the banner shows the last state broadcast verbatim
    this.els.banner.textContent = s.banner;

    const usable = buttonsUsable(s);
    for (const spec of SUBTASK_BUTTONS) {
      (this.els[spec.id] as HTMLButtonElement).disabled = !usable;
    }
    for (const spec of ARROWS) {
      (this.els[spec.id] as HTMLButtonElement).disabled = !usable;
    }
    (this.els["btn-dry-run"] as HTMLButtonElement).disabled = !usable;
    (this.els["btn-re-estimate"] as HTMLButtonElement).disabled = !usable;

    const [sx, sy, sz] = s.calibrationSteps;
    this.els.calOffset.textContent =
      `offset: x ${(sx / 100).toFixed(2)} m, y ${(sy / 100).toFixed(2)} m, ` +
      `z ${(sz / 100).toFixed(2)} m`;

    this.els.overlay.hidden = !overlayVisible(s);

    if (s.pendingFeedback) {
      this.els.feedback.hidden = false;
      const p = s.pendingFeedback;
      this.els.feedbackText.textContent =
        `${p.subtask} #${p.execution}: ${p.reason} — label this execution?`;
    } else {
      this.els.feedback.hidden = true;
    }

    if (s.lastError) {
      this.els.error.hidden = false;
      this.els.error.textContent = s.lastError;
    }

    this.sceneView.render(s.sceneStatic, s.scene);
  }
}

function el(tag: string, cls: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = cls;
  if (text) node.textContent = text;
  return node;
}

function button(id: string, label: string, onClick: () => void): HTMLButtonElement {
  const b = document.createElement("button");
  b.id = id;
  b.textContent = label;
  b.addEventListener("click", onClick);
  return b;
}
