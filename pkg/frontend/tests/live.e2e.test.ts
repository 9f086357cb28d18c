// Exercises a running gateway over real HTTP. Skipped unless GATEWAY_URL
// points at one, e.g.:
//   trajlang serve --out <workspace> --port 8123 &
//   GATEWAY_URL=http://127.0.0.1:8123 npm test

import { describe, expect, it } from "vitest";

import { GatewayClient, HttpTransport } from "../src/api.js";
import { SessionController } from "../src/controller.js";

const base = process.env.GATEWAY_URL;

// phrasings the gateway's shipped vocabulary understands
const UTTERANCES = [
  "Move lower.",
  "Move higher.",
  "Keep the arm closer to the counter.",
  "Raise your hand more.",
];

describe.skipIf(!base)("live gateway", () => {
  const client = () => new GatewayClient(new HttpTransport(base!));

  it("improve: feedback moves the trajectory, satisfied ends", async () => {
    const controller = new SessionController(client());
    await controller.start("improve");
    let snap = controller.snapshot();
    expect(snap.frameSets).toHaveLength(1);
    const first = snap.frameSets[0].trajectory_id;

    controller.markRendered();
    await controller.submitText("Move lower.");
    snap = controller.snapshot();
    expect(snap.iteration).toBe(1);
    expect(snap.lastObjective).not.toBeNull();
    expect(snap.frameSets[0].trajectory_id).not.toBe(first);

    await controller.markSatisfied();
    snap = controller.snapshot();
    expect(snap.phase).toBe("ended");
    expect(snap.endReason).toBe("satisfied");

    const metrics = await client().fetchMetrics(snap.sessionId!);
    expect(metrics.iterations).toBe(1);
    expect(metrics.timings).toHaveLength(1);
    expect(metrics.timings[0]).toBeGreaterThanOrEqual(0);
  }, 60000);

  it("learn-language: 20 utterances, a rating at each checkpoint", async () => {
    const controller = new SessionController(client());
    await controller.start("learn-language");
    expect(controller.snapshot().maxIterations).toBe(20);

    const given = [2, 3, 4, 5];
    for (let i = 0; i < 20; i++) {
      controller.markRendered();
      await controller.submitText(UTTERANCES[i % UTTERANCES.length]);
      const snap = controller.snapshot();
      if (snap.ratingRequest) {
        expect(snap.ratingRequest.checkpoint % 5).toBe(0);
        await controller.submitRating(given[snap.ratingRequest.checkpoint / 5 - 1]);
      }
    }

    const snap = controller.snapshot();
    expect(snap.phase).toBe("ended");
    expect(snap.iteration).toBe(20);
    expect(snap.ratings.map((r) => r.checkpoint)).toEqual([5, 10, 15, 20]);

    const metrics = await client().fetchMetrics(snap.sessionId!);
    expect(metrics.iterations).toBe(20);
    expect(metrics.timings).toHaveLength(20);
    for (const t of metrics.timings) expect(t).toBeGreaterThanOrEqual(0);
    expect(metrics.rating_auc).toBeCloseTo(3.5, 6);
  }, 240000);

  it("comparison: choices advance through fresh pairs", async () => {
    const controller = new SessionController(client());
    await controller.start("learn-comparison");
    let snap = controller.snapshot();
    expect(snap.frameSets).toHaveLength(2);

    for (const side of ["a", "b", "a"] as const) {
      controller.markRendered();
      await controller.choose(side);
    }
    snap = controller.snapshot();
    expect(snap.iteration).toBe(3);
    expect(snap.frameSets).toHaveLength(2);
  }, 120000);
});
