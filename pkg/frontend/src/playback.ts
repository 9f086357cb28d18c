// Canvas playback of trajectory frame sets: workspace outline, pan and
// spoon markers, the visited trail, and the robot point with its gripper
// state. Rendering goes through a minimal 2D-context interface so tests
// can record draw calls without a browser.

import { Frame, FrameSet } from "./api.js";

export interface Ctx2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  globalAlpha: number;
  clearRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  rect(x: number, y: number, w: number, h: number): void;
  stroke(): void;
  fill(): void;
}

export type Viewport = { x: number; y: number; width: number; height: number };

const MARGIN = 12;

/** Clamped, integer frame index access. */
export function clampFrame(frames: Frame[], t: number): number {
  if (frames.length === 0) return 0;
  return Math.min(frames.length - 1, Math.max(0, Math.round(t)));
}

export function frameAt(frames: Frame[], t: number): Frame {
  return frames[clampFrame(frames, t)];
}

/** Workspace coords -> viewport pixels (y flipped: canvas grows downward). */
export function makeMapper(set: FrameSet, vp: Viewport) {
  const [[xMin, yMin], [xMax, yMax]] = set.bounds;
  const sx = (vp.width - 2 * MARGIN) / (xMax - xMin || 1);
  const sy = (vp.height - 2 * MARGIN) / (yMax - yMin || 1);
  return (x: number, y: number): [number, number] => [
    vp.x + MARGIN + (x - xMin) * sx,
    vp.y + vp.height - MARGIN - (y - yMin) * sy,
  ];
}

function drawDisc(ctx: Ctx2D, x: number, y: number, r: number, filled: boolean) {
  ctx.beginPath();
  ctx.arc(x, y, r, 0, Math.PI * 2);
  if (filled) ctx.fill();
  else ctx.stroke();
}

export function drawFrameSet(ctx: Ctx2D, set: FrameSet, t: number, vp: Viewport) {
  const map = makeMapper(set, vp);
  const idx = clampFrame(set.frames, t);

  ctx.strokeStyle = "#888";
  ctx.lineWidth = 1;
  ctx.strokeRect(vp.x + MARGIN, vp.y + MARGIN, vp.width - 2 * MARGIN, vp.height - 2 * MARGIN);

  const pan = set.objects["pan"];
  if (pan) {
    ctx.fillStyle = "#c96";
    drawDisc(ctx, ...map(pan[0], pan[1]), 7, true);
  }
  const spoon = set.objects["spoon"];
  if (spoon) {
    const [sx, sy] = map(spoon[0], spoon[1]);
    ctx.fillStyle = "#69c";
    ctx.beginPath();
    ctx.rect(sx - 4, sy - 4, 8, 8);
    ctx.fill();
  }

  // trail up to the current frame
  if (idx > 0) {
    ctx.strokeStyle = "#3a7";
    ctx.lineWidth = 1.5;
    ctx.globalAlpha = 0.6;
    ctx.beginPath();
    const [x0, y0] = map(set.frames[0].x, set.frames[0].y);
    ctx.moveTo(x0, y0);
    for (let i = 1; i <= idx; i++) {
      const [x, y] = map(set.frames[i].x, set.frames[i].y);
      ctx.lineTo(x, y);
    }
    ctx.stroke();
    ctx.globalAlpha = 1;
  }

  const frame = set.frames[idx];
  const [rx, ry] = map(frame.x, frame.y);
  ctx.fillStyle = "#175";
  ctx.strokeStyle = "#175";
  ctx.lineWidth = 2;
  // closed gripper renders solid, open renders as a ring
  drawDisc(ctx, rx, ry, 5, frame.gripper);
}

/** One or two frame sets, side by side when two. */
export function renderPlayback(
  ctx: Ctx2D,
  sets: FrameSet[],
  t: number,
  width: number,
  height: number,
) {
  ctx.clearRect(0, 0, width, height);
  if (sets.length === 0) return;
  const paneWidth = width / sets.length;
  sets.forEach((set, i) => {
    drawFrameSet(ctx, set, t, { x: i * paneWidth, y: 0, width: paneWidth, height });
  });
}

/** Playback clock: advances through frames at a fixed rate, stops at the
 *  last frame, and supports direct scrubbing. */
export class PlaybackEngine {
  t = 0;
  playing = false;

  constructor(
    public frameCount: number,
    readonly framesPerSecond = 12,
  ) {}

  reset(frameCount: number) {
    this.frameCount = frameCount;
    this.t = 0;
    this.playing = false;
  }

  get lastFrame(): number {
    return Math.max(0, this.frameCount - 1);
  }

  play() {
    if (this.t >= this.lastFrame) this.t = 0; // replay from the start
    this.playing = true;
  }

  pause() {
    this.playing = false;
  }

  scrub(t: number) {
    this.t = Math.min(this.lastFrame, Math.max(0, t));
    this.playing = false;
  }

  /** Advance by dt seconds; returns the integer frame to draw. */
  tick(dt: number): number {
    if (this.playing) {
      this.t = Math.min(this.lastFrame, this.t + dt * this.framesPerSecond);
      if (this.t >= this.lastFrame) this.playing = false;
    }
    return Math.round(this.t);
  }
}
