import { beforeEach, describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { join } from "node:path";

import { App } from "../src/app.js";
import { ClientMessage, ServerMessage } from "../src/protocol.js";
import { Transport } from "../src/transport.js";

class FakeTransport implements Transport {
  sent: ClientMessage[] = [];
  private messageHandler: ((msg: ServerMessage) => void) | null = null;
  private statusHandler: ((up: boolean) => void) | null = null;

  send(msg: ClientMessage): void {
    this.sent.push(JSON.parse(JSON.stringify(msg)));
  }
  onMessage(h: (msg: ServerMessage) => void): void {
    this.messageHandler = h;
  }
  onStatus(h: (up: boolean) => void): void {
    this.statusHandler = h;
  }
  connect(): void {
    this.statusHandler?.(true);
  }
  push(msg: ServerMessage): void {
    this.messageHandler?.(msg);
  }
}

function statePayload(state: string, extra: Record<string, unknown> = {}) {
  return {
    type: "state" as const,
    payload: {
      state,
      banner: `${state} (T_N)`,
      buttons_enabled: state === "Idle",
      active_subtask: state === "Idle" ? null : "scoop",
      calibration_steps: [0, 0, 0],
      mouth_open: true,
      ...extra,
    },
  };
}

describe("operator console", () => {
  let root: HTMLElement;
  let transport: FakeTransport;
  let app: App;

  beforeEach(() => {
    document.body.innerHTML = '<div id="app"></div>';
    root = document.getElementById("app")!;
    transport = new FakeTransport();
    app = new App(root, transport);
    transport.connect();
    transport.push(statePayload("Idle"));
  });

  function byId<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    expect(node, `#${id} exists`).not.toBeNull();
    return node as T;
  }

  it("renders the banner verbatim from the last state broadcast", () => {
    transport.push({
      type: "state",
      payload: { ...statePayload("InitScoop").payload, banner: "InitScoop (T_N)" },
    });
    expect(byId("state-banner").textContent).toBe("InitScoop (T_N)");
  });

  it("enables subtask buttons only in Idle", () => {
    expect(byId<HTMLButtonElement>("btn-scoop").disabled).toBe(false);
    transport.push(statePayload("Deliver"));
    expect(byId<HTMLButtonElement>("btn-scoop").disabled).toBe(true);
    expect(byId<HTMLButtonElement>("btn-wipe").disabled).toBe(true);
    expect(byId<HTMLButtonElement>("btn-feed").disabled).toBe(true);
    expect(byId<HTMLButtonElement>("cal-up").disabled).toBe(true);
  });

  it("optimistically locks buttons after a press until the next state", () => {
    byId("btn-scoop").click();
    expect(transport.sent).toEqual([{ type: "command", payload: { command: "scoop" } }]);
    expect(byId<HTMLButtonElement>("btn-feed").disabled).toBe(true);
    byId("btn-feed").click();   // locked: nothing goes out
    expect(transport.sent.length).toBe(1);
    transport.push(statePayload("InitScoop"));
    expect(byId<HTMLButtonElement>("btn-feed").disabled).toBe(true); // still active
  });

  it("shows a viewport-covering stop overlay during any active subtask", () => {
    const overlay = byId("stop-overlay");
    expect(overlay.hidden).toBe(true);
    for (const state of ["InitScoop", "EstimateFood", "Scoop", "InitWipe", "Wipe",
                         "InitDeliver", "EstimateMouth", "Deliver", "TiltAndRetract",
                         "AbortReturn"]) {
      transport.push(statePayload(state));
      expect(overlay.hidden, `overlay visible in ${state}`).toBe(false);
      expect(overlay.style.position).toBe("fixed");
      expect(overlay.style.top).toBe("0px");
      expect(overlay.style.left).toBe("0px");
      expect(overlay.style.width).toBe("100vw");
      expect(overlay.style.height).toBe("100vh");
    }
    transport.push(statePayload("Idle"));
    expect(overlay.hidden).toBe(true);
  });

  it("clicking anywhere on the overlay sends stop", () => {
    transport.push(statePayload("Deliver"));
    byId("stop-overlay").click();
    expect(transport.sent).toEqual([{ type: "command", payload: { command: "stop" } }]);
  });

  it("calibration arrows send one message each and display the echoed offset", () => {
    byId("cal-left").click();
    byId("cal-left").click();
    expect(transport.sent).toEqual([
      { type: "calibration", payload: { direction: "left" } },
      { type: "calibration", payload: { direction: "left" } },
    ]);
    transport.push({ type: "calibration", payload: { steps: [2, 0, 0], offset_m: [0.02, 0, 0] } });
    expect(byId("cal-offset").textContent).toContain("x 0.02 m");
  });

  it("feedback prompt sends the chosen label and dismiss means unlabeled", () => {
    transport.push({
      type: "feedback_request",
      payload: { execution: 1, subtask: "scoop", success: true, reason: "scooped" },
    });
    expect(byId("feedback-prompt").hidden).toBe(false);
    byId("fb-success").click();
    expect(transport.sent.pop()).toEqual({
      type: "command",
      payload: { command: "feedback", label: "success" },
    });
    expect(byId("feedback-prompt").hidden).toBe(true);

    transport.push({
      type: "feedback_request",
      payload: { execution: 2, subtask: "scoop", success: true, reason: "scooped" },
    });
    byId("fb-dismiss").click();
    expect(transport.sent.pop()).toEqual({
      type: "command",
      payload: { command: "feedback", label: "unlabeled" },
    });
  });

  it("errors from the server surface in the toast", () => {
    transport.push({ type: "error", payload: { reason: "command rejected: busy" } });
    const toast = byId("error-toast");
    expect(toast.hidden).toBe(false);
    expect(toast.textContent).toContain("busy");
  });

  it("disconnection shows reconnect state and blocks commands", () => {
    transport.connect();
    transport.push(statePayload("Idle"));
    (transport as unknown as { statusHandler: (up: boolean) => void });
    // simulate drop
    (app as unknown as { state: { connected: boolean } });
    transportStatus(transport, false);
    expect(byId("conn-status").textContent).toContain("offline");
    byId("btn-scoop").click();
    expect(transport.sent.length).toBe(0);
  });

  it("replays the scripted session and emits exactly the frozen fixture", () => {
    const fixture = JSON.parse(
      readFileSync(join(__dirname, "fixtures", "scripted_session.json"), "utf-8"),
    );
    // 1. click Scoop from Idle
    byId("btn-scoop").click();
    // 2. the run starts; hit the stop overlay mid-run
    transport.push(statePayload("InitScoop"));
    expect(byId("stop-overlay").hidden).toBe(false);
    byId("stop-overlay").click();
    // 3. abort completes, back to Idle
    transport.push(statePayload("AbortReturn"));
    transport.push(statePayload("Idle"));
    // 4. two calibration arrows
    byId("cal-left").click();
    byId("cal-left").click();
    // 5. answer the feedback prompt with success
    transport.push({
      type: "feedback_request",
      payload: { execution: 1, subtask: "abort", success: true, reason: "aborted scoop" },
    });
    byId("fb-success").click();

    expect(transport.sent).toEqual(fixture.outbound);
  });
});

function transportStatus(t: FakeTransport, up: boolean): void {
  (t as unknown as { statusHandler: ((up: boolean) => void) | null }).statusHandler?.(up);
}
