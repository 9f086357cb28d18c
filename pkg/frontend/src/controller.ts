// Session state machine, deliberately free of DOM references. The page
// layer subscribes to snapshots and reports back when a payload has been
// rendered; everything else (timing, guards, transitions) lives here.

import {
  FrameSet,
  GatewayClient,
  Mode,
  RatingEntry,
  RatingRequest,
  SessionViewDoc,
  Suggestion,
} from "./api.js";

export type Phase =
  | "idle"
  | "busy"
  | "awaiting-feedback"
  | "confirming-suggestion"
  | "ended";

export type SessionSnapshot = {
  phase: Phase;
  mode: Mode | null;
  sessionId: string | null;
  iteration: number;
  maxIterations: number;
  frameSets: FrameSet[];
  suggestion: Suggestion | null;
  ratingRequest: RatingRequest | null;
  ratings: RatingEntry[];
  satisfied: boolean;
  endReason: string | null;
  lastObjective: number | null;
  error: string | null;
};

type Listener = (snap: SessionSnapshot) => void;

function blankSnapshot(): SessionSnapshot {
  return {
    phase: "idle",
    mode: null,
    sessionId: null,
    iteration: 0,
    maxIterations: 0,
    frameSets: [],
    suggestion: null,
    ratingRequest: null,
    ratings: [],
    satisfied: false,
    endReason: null,
    lastObjective: null,
    error: null,
  };
}

export class SessionController {
  private snap: SessionSnapshot = blankSnapshot();
  private listeners: Listener[] = [];
  private shownAt: number | null = null;

  constructor(
    private readonly client: GatewayClient,
    private readonly clock: () => number = () => Date.now(),
  ) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  snapshot(): SessionSnapshot {
    return { ...this.snap, frameSets: [...this.snap.frameSets], ratings: [...this.snap.ratings] };
  }

  private emit(patch: Partial<SessionSnapshot>) {
    this.snap = { ...this.snap, ...patch };
    for (const fn of this.listeners) fn(this.snapshot());
  }

  /** The page calls this once the current payload is on screen; the
   *  per-query timer starts here, not at response time. A confirmation
   *  round keeps the original timestamp so the whole exchange counts
   *  as one decision. */
  markRendered() {
    if (this.snap.phase === "awaiting-feedback" && this.shownAt === null) {
      this.shownAt = this.clock();
    }
  }

  private elapsedSeconds(): number | undefined {
    if (this.shownAt === null) return undefined;
    return (this.clock() - this.shownAt) / 1000;
  }

  async start(mode: Mode): Promise<void> {
    this.snap = blankSnapshot();
    this.shownAt = null;
    this.emit({ phase: "busy", mode });
    const doc = await this.client.createSession(mode);
    this.emit({
      phase: "awaiting-feedback",
      sessionId: doc.session_id,
      iteration: doc.iteration,
      maxIterations: doc.max_iterations,
      frameSets: doc.payload.frame_sets,
    });
  }

  /** Rebuild the view of an existing session, e.g. after a page reload. */
  async resume(sessionId: string): Promise<void> {
    this.shownAt = null;
    this.emit({ ...blankSnapshot(), phase: "busy" });
    const view: SessionViewDoc = await this.client.fetchView(sessionId);
    let phase: Phase = "awaiting-feedback";
    if (view.ended) phase = "ended";
    else if (view.pending_suggestion) phase = "confirming-suggestion";
    this.emit({
      phase,
      mode: view.mode,
      sessionId: view.session_id,
      iteration: view.iteration,
      maxIterations: view.max_iterations,
      frameSets: view.payload.frame_sets,
      suggestion: view.pending_suggestion,
      ratingRequest:
        view.pending_rating === null
          ? null
          : { checkpoint: view.pending_rating, frame_set: view.payload.frame_sets[0] },
      ratings: view.ratings,
      satisfied: view.satisfied,
      endReason: view.end_reason,
    });
  }

  canSubmitText(text: string): boolean {
    const ready =
      this.snap.phase === "awaiting-feedback" || this.snap.phase === "confirming-suggestion";
    return ready && this.snap.mode !== "learn-comparison" && text.trim().length > 0;
  }

  async submitText(text: string): Promise<void> {
    if (!this.canSubmitText(text)) {
      throw new Error("text feedback is not available right now");
    }
    await this.applyFeedback({ text: text.trim(), client_seconds: this.elapsedSeconds() });
  }

  async acceptSuggestion(): Promise<void> {
    if (this.snap.phase !== "confirming-suggestion") {
      throw new Error("no suggestion is pending");
    }
    await this.applyFeedback({ accept_suggestion: true, client_seconds: this.elapsedSeconds() });
  }

  /** Close the dialog and let the user rephrase; the server keeps its
   *  pending suggestion until the next text replaces it. */
  dismissSuggestion() {
    if (this.snap.phase === "confirming-suggestion") {
      this.emit({ phase: "awaiting-feedback", suggestion: null });
    }
  }

  async choose(side: "a" | "b"): Promise<void> {
    if (this.snap.mode !== "learn-comparison" || this.snap.phase !== "awaiting-feedback") {
      throw new Error("choices only apply to an active learn-comparison session");
    }
    await this.applyFeedback({ choice: side, client_seconds: this.elapsedSeconds() });
  }

  async markSatisfied(): Promise<void> {
    if (this.snap.mode !== "improve" || this.snap.phase !== "awaiting-feedback") {
      throw new Error("satisfied only applies to an active improve session");
    }
    await this.applyFeedback({ satisfied: true, client_seconds: this.elapsedSeconds() });
  }

  async submitRating(rating: number): Promise<void> {
    const request = this.snap.ratingRequest;
    if (!request) throw new Error("no rating checkpoint is open");
    if (!Number.isInteger(rating) || rating < 1 || rating > 5) {
      throw new Error("rating must be an integer from 1 to 5");
    }
    const sessionId = this.snap.sessionId!;
    const doc = await this.client.sendRating(sessionId, rating);
    const ratings = this.snap.ratings.filter((r) => r.checkpoint !== doc.checkpoint);
    ratings.push({ checkpoint: doc.checkpoint, rating: doc.rating });
    ratings.sort((a, b) => a.checkpoint - b.checkpoint);
    this.emit({ ratings, ratingRequest: null });
  }

  private async applyFeedback(body: {
    text?: string;
    choice?: "a" | "b";
    satisfied?: boolean;
    accept_suggestion?: boolean;
    client_seconds?: number;
  }): Promise<void> {
    const sessionId = this.snap.sessionId;
    if (!sessionId) throw new Error("no active session");
    const before = this.snap.phase;
    this.emit({ phase: "busy", error: null });
    let doc;
    try {
      doc = await this.client.sendFeedback(sessionId, body);
    } catch (err) {
      this.emit({ phase: before, error: err instanceof Error ? err.message : String(err) });
      throw err;
    }

    if (doc.status === "confirm") {
      // no iteration consumed; keep the timer running
      this.emit({ phase: "confirming-suggestion", suggestion: doc.suggestion ?? null });
      return;
    }

    this.shownAt = null;
    this.emit({
      phase: doc.status === "ended" ? "ended" : "awaiting-feedback",
      iteration: doc.iteration,
      frameSets: doc.payload.frame_sets ?? this.snap.frameSets,
      suggestion: null,
      ratingRequest: doc.rating_request ?? null,
      satisfied: body.satisfied === true ? true : this.snap.satisfied,
      endReason: doc.status === "ended" ? (body.satisfied ? "satisfied" : "max_iterations") : null,
      lastObjective: doc.objective ?? null,
    });
  }
}
