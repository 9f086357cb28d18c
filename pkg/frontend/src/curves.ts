// Rating-curve helpers for the metrics panel. The area computation must
// agree with the server's session metric so the two never disagree on
// what a session scored.

export type Point = { x: number; y: number };

/** Trapezoid area under the curve, normalized by the x-span. */
export function areaUnderCurve(points: Point[]): number {
  if (points.length < 2) {
    throw new Error("area needs at least two points");
  }
  const sorted = [...points].sort((a, b) => a.x - b.x);
  const span = sorted[sorted.length - 1].x - sorted[0].x;
  if (span <= 0) {
    throw new Error("area needs a positive x-span");
  }
  let area = 0;
  for (let i = 1; i < sorted.length; i++) {
    const dx = sorted[i].x - sorted[i - 1].x;
    area += ((sorted[i].y + sorted[i - 1].y) / 2) * dx;
  }
  return area / span;
}

/** Checkpoint ratings (1..5) -> plot points on a 0..1 scale. */
export function ratingCurve(ratings: { checkpoint: number; rating: number }[]): Point[] {
  return [...ratings]
    .sort((a, b) => a.checkpoint - b.checkpoint)
    .map((r) => ({ x: r.checkpoint, y: (r.rating - 1) / 4 }));
}

/** Polyline for an inline SVG path, mapping data space to pixel space. */
export function curvePath(
  points: Point[],
  width: number,
  height: number,
  pad = 6,
): string {
  if (points.length === 0) return "";
  const xs = points.map((p) => p.x);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const spanX = xMax - xMin || 1;
  const toPx = (p: Point): [number, number] => [
    pad + ((p.x - xMin) / spanX) * (width - 2 * pad),
    height - pad - Math.min(1, Math.max(0, p.y)) * (height - 2 * pad),
  ];
  return points
    .map((p, i) => {
      const [x, y] = toPx(p);
      return `${i === 0 ? "M" : "L"}${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}
