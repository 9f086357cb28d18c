import { describe, expect, it } from "vitest";

import { areaUnderCurve, curvePath, ratingCurve } from "../src/curves.js";

describe("areaUnderCurve", () => {
  it("returns the constant for a flat curve", () => {
    const pts = [
      { x: 0, y: 0.37 },
      { x: 10, y: 0.37 },
    ];
    expect(areaUnderCurve(pts)).toBeCloseTo(0.37, 12);
  });

  it("scores a linear ramp at one half", () => {
    const pts = [
      { x: 0, y: 0 },
      { x: 10, y: 1 },
    ];
    expect(areaUnderCurve(pts)).toBeCloseTo(0.5, 12);
  });

  it("handles uneven spacing", () => {
    const pts = [
      { x: 0, y: 0.0 },
      { x: 5, y: 0.4 },
      { x: 10, y: 0.8 },
      { x: 20, y: 1.0 },
    ];
    expect(areaUnderCurve(pts)).toBeCloseTo(0.65, 12);
  });

  it("sorts its input", () => {
    const pts = [
      { x: 20, y: 1.0 },
      { x: 0, y: 0.0 },
      { x: 10, y: 0.8 },
      { x: 5, y: 0.4 },
    ];
    expect(areaUnderCurve(pts)).toBeCloseTo(0.65, 12);
  });

  it("rejects degenerate curves", () => {
    expect(() => areaUnderCurve([])).toThrow();
    expect(() => areaUnderCurve([{ x: 0, y: 1 }])).toThrow();
    expect(() =>
      areaUnderCurve([
        { x: 3, y: 1 },
        { x: 3, y: 2 },
      ]),
    ).toThrow();
  });
});

describe("ratingCurve", () => {
  it("maps 1..5 ratings onto the unit scale in checkpoint order", () => {
    const pts = ratingCurve([
      { checkpoint: 10, rating: 5 },
      { checkpoint: 5, rating: 1 },
      { checkpoint: 20, rating: 3 },
    ]);
    expect(pts).toEqual([
      { x: 5, y: 0 },
      { x: 10, y: 1 },
      { x: 20, y: 0.5 },
    ]);
  });
});

describe("curvePath", () => {
  it("spans the padded plot area", () => {
    const d = curvePath(
      [
        { x: 0, y: 0 },
        { x: 10, y: 1 },
      ],
      320,
      120,
    );
    expect(d).toBe("M6.0,114.0 L314.0,6.0");
  });

  it("is empty with no points", () => {
    expect(curvePath([], 320, 120)).toBe("");
  });
});
