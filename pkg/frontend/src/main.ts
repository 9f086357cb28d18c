// Page wiring. Everything stateful lives in SessionController; this file
// only translates snapshots into DOM and DOM events back into controller
// calls. Importable from non-browser test environments: the mount at the
// bottom is guarded.

import { GatewayClient, HttpTransport, MetricsDoc, Mode } from "./api.js";
import { SessionController, SessionSnapshot } from "./controller.js";
import { areaUnderCurve, curvePath, ratingCurve } from "./curves.js";
import { Ctx2D, PlaybackEngine, renderPlayback } from "./playback.js";

const PAGE = `
  <header>
    <h1>feedback studio</h1>
    <nav id="modes">
      <button data-mode="improve">improve</button>
      <button data-mode="learn-language">teach with language</button>
      <button data-mode="learn-comparison">teach with comparisons</button>
    </nav>
    <span id="status"></span>
  </header>
  <main>
    <canvas id="stage" width="840" height="360"></canvas>
    <div id="transport">
      <button id="play">play</button>
      <input id="scrub" type="range" min="0" max="0" value="0" step="1" />
      <span id="frame-label"></span>
    </div>
    <section id="feedback">
      <div id="text-row">
        <input id="text" type="text" placeholder="describe what should change" />
        <button id="send" disabled>send</button>
        <button id="satisfied">satisfied</button>
      </div>
      <div id="choice-row">
        <button id="choose-a">left is better</button>
        <button id="choose-b">right is better</button>
      </div>
      <div id="suggestion" hidden>
        <p id="suggestion-text"></p>
        <button id="suggestion-accept">yes, use that</button>
        <button id="suggestion-edit">let me rephrase</button>
      </div>
      <div id="rating" hidden>
        <span id="rating-label"></span>
        <span id="rating-buttons"></span>
      </div>
      <p id="error" hidden></p>
    </section>
    <section id="results" hidden>
      <h2>session results</h2>
      <dl id="metrics"></dl>
      <svg id="curve" width="320" height="120" viewBox="0 0 320 120"></svg>
    </section>
  </main>
`;

function el<T extends HTMLElement>(root: ParentNode, id: string): T {
  const node = root.querySelector(`#${id}`);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function mountApp(root: HTMLElement, client: GatewayClient): SessionController {
  root.innerHTML = PAGE;
  const controller = new SessionController(client);
  const engine = new PlaybackEngine(0);

  const canvas = el<HTMLCanvasElement>(root, "stage");
  const ctx = canvas.getContext("2d") as unknown as Ctx2D | null;
  const status = el<HTMLSpanElement>(root, "status");
  const playBtn = el<HTMLButtonElement>(root, "play");
  const scrub = el<HTMLInputElement>(root, "scrub");
  const frameLabel = el<HTMLSpanElement>(root, "frame-label");
  const textInput = el<HTMLInputElement>(root, "text");
  const sendBtn = el<HTMLButtonElement>(root, "send");
  const satisfiedBtn = el<HTMLButtonElement>(root, "satisfied");
  const chooseA = el<HTMLButtonElement>(root, "choose-a");
  const chooseB = el<HTMLButtonElement>(root, "choose-b");
  const suggestionBox = el<HTMLDivElement>(root, "suggestion");
  const suggestionText = el<HTMLParagraphElement>(root, "suggestion-text");
  const ratingBox = el<HTMLDivElement>(root, "rating");
  const ratingLabel = el<HTMLSpanElement>(root, "rating-label");
  const ratingButtons = el<HTMLSpanElement>(root, "rating-buttons");
  const errorLine = el<HTMLParagraphElement>(root, "error");
  const results = el<HTMLElement>(root, "results");
  const metricsList = el<HTMLDListElement>(root, "metrics");
  const curveSvg = el<SVGSVGElement & HTMLElement>(root, "curve");

  for (let n = 1; n <= 5; n++) {
    const b = document.createElement("button");
    b.textContent = String(n);
    b.addEventListener("click", () => {
      void controller.submitRating(n).catch(() => undefined);
    });
    ratingButtons.appendChild(b);
  }

  let shownTrajectories = "";
  let needsMarkRendered = false;
  let metricsFetchedFor: string | null = null;

  function applySnapshot(snap: SessionSnapshot) {
    const busy = snap.phase === "busy";
    status.textContent =
      snap.phase === "idle"
        ? "pick a mode to start"
        : `${snap.mode ?? ""} · iteration ${snap.iteration}/${snap.maxIterations}` +
          (snap.lastObjective !== null ? ` · objective ${snap.lastObjective.toFixed(3)}` : "") +
          (snap.phase === "ended" ? ` · ended (${snap.endReason ?? "done"})` : "");

    const key = snap.frameSets.map((s) => s.trajectory_id).join("|");
    if (key !== shownTrajectories) {
      shownTrajectories = key;
      const frames = snap.frameSets[0]?.frames.length ?? 0;
      engine.reset(frames);
      engine.play();
      scrub.max = String(engine.lastFrame);
      scrub.value = "0";
    }
    if (snap.phase === "awaiting-feedback") needsMarkRendered = true;

    const textAllowed =
      !busy &&
      snap.mode !== "learn-comparison" &&
      (snap.phase === "awaiting-feedback" || snap.phase === "confirming-suggestion");
    textInput.disabled = !textAllowed;
    sendBtn.disabled = !controller.canSubmitText(textInput.value);
    satisfiedBtn.hidden = snap.mode !== "improve";
    satisfiedBtn.disabled = busy || snap.phase !== "awaiting-feedback";

    const comparing = snap.mode === "learn-comparison";
    chooseA.hidden = chooseB.hidden = !comparing;
    chooseA.disabled = chooseB.disabled = busy || snap.phase !== "awaiting-feedback";

    suggestionBox.hidden = snap.phase !== "confirming-suggestion";
    if (snap.suggestion) {
      suggestionText.textContent = `did you mean: “${snap.suggestion.text}”?`;
    }

    ratingBox.hidden = snap.ratingRequest === null;
    if (snap.ratingRequest) {
      ratingLabel.textContent = `rate the model so far (checkpoint ${snap.ratingRequest.checkpoint}):`;
    }

    errorLine.hidden = snap.error === null;
    errorLine.textContent = snap.error ?? "";

    results.hidden = snap.phase !== "ended";
    if (snap.phase === "ended" && snap.sessionId && metricsFetchedFor !== snap.sessionId) {
      metricsFetchedFor = snap.sessionId;
      void client
        .fetchMetrics(snap.sessionId)
        .then((doc) => renderMetrics(doc))
        .catch(() => undefined);
    }
  }

  function renderMetrics(doc: MetricsDoc) {
    const mean =
      doc.timings.length > 0
        ? (doc.timings.reduce((a, b) => a + b, 0) / doc.timings.length).toFixed(2)
        : "n/a";
    const rows: [string, string][] = [
      ["iterations", String(doc.iterations)],
      ["mean seconds per response", mean],
      ["ratings", doc.ratings.map((r) => `${r.rating}@${r.checkpoint}`).join(", ") || "none"],
      ["rating area", doc.rating_auc === null ? "n/a" : doc.rating_auc.toFixed(3)],
    ];
    metricsList.innerHTML = "";
    for (const [k, v] of rows) {
      const dt = document.createElement("dt");
      dt.textContent = k;
      const dd = document.createElement("dd");
      dd.textContent = v;
      metricsList.appendChild(dt);
      metricsList.appendChild(dd);
    }
    const points = ratingCurve(doc.ratings);
    if (points.length >= 2) {
      const path = curvePath(points, 320, 120);
      curveSvg.innerHTML =
        `<path d="${path}" fill="none" stroke="#3a7" stroke-width="2"/>` +
        `<text x="8" y="16" font-size="11">area ${areaUnderCurve(points).toFixed(3)}</text>`;
    } else {
      curveSvg.innerHTML = "";
    }
  }

  controller.subscribe(applySnapshot);
  applySnapshot(controller.snapshot());

  root.querySelectorAll<HTMLButtonElement>("#modes button").forEach((btn) => {
    btn.addEventListener("click", () => {
      metricsFetchedFor = null;
      void controller.start(btn.dataset.mode as Mode).catch(() => undefined);
    });
  });
  textInput.addEventListener("input", () => {
    sendBtn.disabled = !controller.canSubmitText(textInput.value);
  });
  textInput.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter" && !sendBtn.disabled) sendBtn.click();
  });
  sendBtn.addEventListener("click", () => {
    const text = textInput.value;
    textInput.value = "";
    sendBtn.disabled = true;
    void controller.submitText(text).catch(() => undefined);
  });
  satisfiedBtn.addEventListener("click", () => void controller.markSatisfied().catch(() => undefined));
  chooseA.addEventListener("click", () => void controller.choose("a").catch(() => undefined));
  chooseB.addEventListener("click", () => void controller.choose("b").catch(() => undefined));
  el<HTMLButtonElement>(root, "suggestion-accept").addEventListener("click", () => {
    void controller.acceptSuggestion().catch(() => undefined);
  });
  el<HTMLButtonElement>(root, "suggestion-edit").addEventListener("click", () => {
    controller.dismissSuggestion();
    textInput.focus();
  });
  playBtn.addEventListener("click", () => {
    if (engine.playing) engine.pause();
    else engine.play();
  });
  scrub.addEventListener("input", () => engine.scrub(Number(scrub.value)));

  let last = performance.now();
  function loop(now: number) {
    const dt = Math.min(0.1, (now - last) / 1000);
    last = now;
    const frame = engine.tick(dt);
    const snap = controller.snapshot();
    if (ctx) renderPlayback(ctx, snap.frameSets, frame, canvas.width, canvas.height);
    if (!engine.playing) scrub.value = String(Math.round(engine.t));
    playBtn.textContent = engine.playing ? "pause" : "play";
    frameLabel.textContent = engine.frameCount > 0 ? `${frame + 1}/${engine.frameCount}` : "";
    if (needsMarkRendered) {
      // the decision timer starts only once the payload is actually drawn
      needsMarkRendered = false;
      controller.markRendered();
    }
    requestAnimationFrame(loop);
  }
  requestAnimationFrame(loop);

  return controller;
}

declare global {
  interface Window {
    GATEWAY_URL?: string;
  }
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) {
    const base = window.GATEWAY_URL ?? "http://127.0.0.1:8000";
    mountApp(root, new GatewayClient(new HttpTransport(base)));
  }
}
