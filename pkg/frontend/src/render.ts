// Top-down 2D scene rendering. The geometry (world -> screen boxes) is a
// pure function so it can be unit-tested; the canvas pass just draws the
// computed primitives.

import type { WorldState } from "./types.js";

export interface Viewport {
  width: number;
  height: number;
  /** world-units shown across each axis, centered on (0.5, 0) */
  worldSpan: number;
}

export interface Box {
  label: string;
  x: number; // screen px, top-left
  y: number;
  w: number;
  h: number;
  kind: "object" | "container" | "gripper" | "held";
  z: number; // world height, for draw order
}

const CENTER_X = 0.5;
const CENTER_Y = 0.0;

export function worldToScreen(
  wx: number,
  wy: number,
  vp: Viewport,
): { x: number; y: number } {
  const scale = vp.width / vp.worldSpan;
  return {
    x: vp.width / 2 + (wx - CENTER_X) * scale,
    // screen y grows downward; world y grows "up" the table
    y: vp.height / 2 - (wy - CENTER_Y) * scale,
  };
}

export function sceneBoxes(world: WorldState, vp: Viewport): Box[] {
  const scale = vp.width / vp.worldSpan;
  const boxes: Box[] = [];
  for (const obj of world.objects) {
    const center = worldToScreen(obj.pose[0], obj.pose[1], vp);
    const w = obj.dims[0] * scale;
    const h = obj.dims[1] * scale;
    boxes.push({
      label: obj.label,
      x: center.x - w / 2,
      y: center.y - h / 2,
      w,
      h,
      kind:
        obj.label === world.gripper.held
          ? "held"
          : obj.container
            ? "container"
            : "object",
      z: obj.pose[2],
    });
  }
  // low objects first so higher ones draw on top
  boxes.sort((a, b) => a.z - b.z);
  const g = worldToScreen(world.gripper.pose[0], world.gripper.pose[1], vp);
  const gs = 0.02 * scale;
  boxes.push({
    label: world.gripper.held ? `gripper [${world.gripper.held}]` : "gripper",
    x: g.x - gs / 2,
    y: g.y - gs / 2,
    w: gs,
    h: gs,
    kind: "gripper",
    z: world.gripper.pose[2],
  });
  return boxes;
}

export function jointSummaries(world: WorldState): string[] {
  return world.joints.map((j) => {
    const [lo, hi] = j.range;
    const span = hi - lo || 1;
    const pct = Math.round(((j.position - lo) / span) * 100);
    return `${j.name}: ${j.position.toFixed(2)} (${pct}% open)`;
  });
}

const FILL: Record<Box["kind"], string> = {
  object: "#4a90d9",
  container: "#8d6e63",
  gripper: "#e53935",
  held: "#f9a825",
};

export function drawScene(
  ctx: CanvasRenderingContext2D,
  world: WorldState,
  vp: Viewport,
): void {
  ctx.clearRect(0, 0, vp.width, vp.height);
  ctx.fillStyle = "#f5f1e8"; // table
  ctx.fillRect(0, 0, vp.width, vp.height);
  ctx.font = "11px sans-serif";
  for (const box of sceneBoxes(world, vp)) {
    ctx.fillStyle = FILL[box.kind];
    ctx.globalAlpha = box.kind === "container" ? 0.5 : 0.9;
    ctx.fillRect(box.x, box.y, box.w, box.h);
    ctx.globalAlpha = 1;
    ctx.strokeStyle = "#333";
    ctx.strokeRect(box.x, box.y, box.w, box.h);
    ctx.fillStyle = "#222";
    ctx.fillText(box.label, box.x, box.y - 3);
  }
}
