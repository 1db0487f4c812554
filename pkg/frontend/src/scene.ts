// Schematic top/side dual-view renderer: arm reach line, bowl with food
// level, wiping bar, utensil tip, and the mouth marker with open/closed
// badge.  No camera imagery exists in the simulation; this is a diagram.

import { ScenePayload, SceneStatic } from "./protocol.js";

const TOP = { x0: 0.0, x1: 1.1, y0: -0.45, y1: 0.45 };   // world x/y box
const SIDE = { x0: 0.0, x1: 1.1, z0: -0.35, z1: 0.35 };  // world x/z box

export class SceneView {
  private canvas: HTMLCanvasElement;

  constructor(canvas: HTMLCanvasElement) {
    this.canvas = canvas;
  }

  render(stat: SceneStatic | null, scene: ScenePayload | null): void {
    let ctx: CanvasRenderingContext2D | null;
    try {
      ctx = this.canvas.getContext("2d");
    } catch {
      return; // canvas-less environment (jsdom)
    }
    if (!ctx) return;
    const w = this.canvas.width;
    const h = this.canvas.height;
    ctx.clearRect(0, 0, w, h);
    ctx.fillStyle = "#10141c";
    ctx.fillRect(0, 0, w, h);
    if (!stat) return;
    const half = h / 2;
    this.panel(ctx, stat, scene, 0, half, "top");
    ctx.strokeStyle = "#2a3142";
    ctx.beginPath();
    ctx.moveTo(0, half);
    ctx.lineTo(w, half);
    ctx.stroke();
    this.panel(ctx, stat, scene, half, half, "side");
  }

  private panel(
    ctx: CanvasRenderingContext2D,
    stat: SceneStatic,
    scene: ScenePayload | null,
    yOff: number,
    height: number,
    view: "top" | "side",
  ): void {
    const w = this.canvas.width;
    const map = (p: [number, number, number]): [number, number] => {
      if (view === "top") {
        const u = ((p[0] - TOP.x0) / (TOP.x1 - TOP.x0)) * w;
        const v = yOff + height - ((p[1] - TOP.y0) / (TOP.y1 - TOP.y0)) * height;
        return [u, v];
      }
      const u = ((p[0] - SIDE.x0) / (SIDE.x1 - SIDE.x0)) * w;
      const v = yOff + height - ((p[2] - SIDE.z0) / (SIDE.z1 - SIDE.z0)) * height;
      return [u, v];
    };

    ctx.fillStyle = "#5c677d";
    ctx.font = "11px sans-serif";
    ctx.fillText(view === "top" ? "top view (x→, y↑)" : "side view (x→, z↑)", 8, yOff + 14);

    // arm base
    const base = map([0, 0, 0]);
    ctx.fillStyle = "#8899bb";
    ctx.beginPath();
    ctx.arc(base[0], base[1], 6, 0, Math.PI * 2);
    ctx.fill();

    // bowl + food level
    const bowl = map(stat.bowl_center);
    const rPx = (stat.bowl_diameter / 2 / (TOP.x1 - TOP.x0)) * w;
    ctx.strokeStyle = "#b08d57";
    ctx.lineWidth = 2;
    if (view === "top") {
      ctx.beginPath();
      ctx.arc(bowl[0], bowl[1], rPx, 0, Math.PI * 2);
      ctx.stroke();
      if (scene) {
        const frac = Math.min(1, scene.food_total_g / 200);
        ctx.fillStyle = "rgba(220, 190, 120, 0.65)";
        ctx.beginPath();
        ctx.arc(bowl[0], bowl[1], rPx * Math.sqrt(frac), 0, Math.PI * 2);
        ctx.fill();
      }
    } else {
      ctx.strokeRect(bowl[0] - rPx, bowl[1] - 10, rPx * 2, 10);
      if (scene) {
        const frac = Math.min(1, scene.food_total_g / 200);
        ctx.fillStyle = "rgba(220, 190, 120, 0.65)";
        ctx.fillRect(bowl[0] - rPx, bowl[1] - 10 * frac, rPx * 2, 10 * frac);
      }
    }

    // wiping bar
    const b0 = map(stat.bar[0]);
    const b1 = map(stat.bar[1]);
    ctx.strokeStyle = "#7f8c8d";
    ctx.beginPath();
    ctx.moveTo(b0[0], b0[1]);
    ctx.lineTo(b1[0], b1[1]);
    ctx.stroke();

    // mouth marker + open/closed badge
    const mouthPose = scene ? scene.mouth : stat.mouth_nominal;
    const m = map(mouthPose.position);
    const open = scene ? scene.mouth_open : false;
    ctx.strokeStyle = open ? "#4cd964" : "#e74c3c";
    ctx.lineWidth = 2;
    ctx.beginPath();
    if (open) {
      ctx.arc(m[0], m[1], 7, 0, Math.PI * 2);
    } else {
      ctx.moveTo(m[0] - 7, m[1]);
      ctx.lineTo(m[0] + 7, m[1]);
    }
    ctx.stroke();

    if (scene) {
      // arm: stylized two-segment reach line from base to the tip
      const tip = map(scene.tip.position);
      const elbow: [number, number] = [
        base[0] + (tip[0] - base[0]) * 0.5,
        base[1] + (tip[1] - base[1]) * 0.5 - (view === "side" ? 22 : 14),
      ];
      ctx.strokeStyle = "#aab7d4";
      ctx.lineWidth = 3;
      ctx.beginPath();
      ctx.moveTo(base[0], base[1]);
      ctx.lineTo(elbow[0], elbow[1]);
      ctx.lineTo(tip[0], tip[1]);
      ctx.stroke();
      ctx.fillStyle = scene.utensil_load_g > 0 ? "#f5d76e" : "#dfe6f3";
      ctx.beginPath();
      ctx.arc(tip[0], tip[1], 4, 0, Math.PI * 2);
      ctx.fill();

      // estimated mouth pose, when present
      if (scene.mouth_estimate) {
        const e = map(scene.mouth_estimate.pose.position);
        ctx.strokeStyle = scene.mouth_estimate.stale ? "#777" : "#58b2dc";
        ctx.strokeRect(e[0] - 5, e[1] - 5, 10, 10);
      }
    }
  }
}
