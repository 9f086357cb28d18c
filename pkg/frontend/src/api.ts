// Typed client for the session gateway. All network traffic goes through
// here; the Transport interface exists so tests can swap in a scripted
// in-memory server.

export type Mode = "improve" | "learn-language" | "learn-comparison";

export type Frame = { t: number; x: number; y: number; gripper: boolean };

export type FrameSet = {
  trajectory_id: string;
  frames: Frame[];
  objects: Record<string, number[]>;
  bounds: number[][];
};

export type Suggestion = {
  original_text?: string;
  text: string;
  feature: number;
  direction: number;
};

export type RatingRequest = { checkpoint: number; frame_set: FrameSet };

export type RatingEntry = { checkpoint: number; rating: number };

export type CreateDoc = {
  session_id: string;
  mode: Mode;
  iteration: number;
  max_iterations: number;
  payload: { frame_sets: FrameSet[] };
};

export type FeedbackDoc = {
  session_id: string;
  status: "ok" | "confirm" | "ended";
  iteration: number;
  ended: boolean;
  payload: { frame_sets: FrameSet[] | null };
  suggestion?: Suggestion;
  rating_request?: RatingRequest;
  objective?: number;
};

export type RatingDoc = {
  session_id: string;
  status: string;
  checkpoint: number;
  rating: number;
  overwrote: boolean;
};

export type SessionViewDoc = {
  session_id: string;
  mode: Mode;
  iteration: number;
  max_iterations: number;
  ended: boolean;
  end_reason: string | null;
  satisfied: boolean;
  current_trajectory_id: string | null;
  shown_pair: string[] | null;
  pending_rating: number | null;
  pending_suggestion: Suggestion | null;
  ratings: RatingEntry[];
  timings: number[];
  payload: { frame_sets: FrameSet[] };
  model_digest: string;
};

export type MetricsDoc = {
  session_id: string;
  mode: Mode;
  iterations: number;
  timings: number[];
  ratings: RatingEntry[];
  rating_auc: number | null;
};

export type FeedbackBody = {
  text?: string;
  choice?: "a" | "b";
  satisfied?: boolean;
  accept_suggestion?: boolean;
  client_seconds?: number;
};

export class GatewayError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "GatewayError";
  }
}

export interface Transport {
  post(path: string, body: unknown): Promise<unknown>;
  get(path: string): Promise<unknown>;
}

async function decode(resp: Response): Promise<unknown> {
  const doc = await resp.json().catch(() => null);
  if (!resp.ok) {
    const err = (doc as { error?: { code?: string; message?: string } } | null)?.error;
    throw new GatewayError(resp.status, err?.code ?? "http_error", err?.message ?? resp.statusText);
  }
  return doc;
}

export class HttpTransport implements Transport {
  constructor(readonly baseUrl: string) {}

  async post(path: string, body: unknown): Promise<unknown> {
    const resp = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return decode(resp);
  }

  async get(path: string): Promise<unknown> {
    return decode(await fetch(this.baseUrl + path));
  }
}

/** Gateway calls, serialized: one in flight per client at a time. */
export class GatewayClient {
  private chain: Promise<unknown> = Promise.resolve();

  constructor(private readonly transport: Transport) {}

  private enqueue<T>(run: () => Promise<T>): Promise<T> {
    const next = this.chain.then(run, run);
    // keep the chain alive whether or not this call fails
    this.chain = next.catch(() => undefined);
    return next;
  }

  createSession(mode: Mode): Promise<CreateDoc> {
    return this.enqueue(() => this.transport.post("/sessions", { mode })) as Promise<CreateDoc>;
  }

  sendFeedback(sessionId: string, body: FeedbackBody): Promise<FeedbackDoc> {
    return this.enqueue(() =>
      this.transport.post(`/sessions/${sessionId}/feedback`, body),
    ) as Promise<FeedbackDoc>;
  }

  sendRating(sessionId: string, rating: number): Promise<RatingDoc> {
    return this.enqueue(() =>
      this.transport.post(`/sessions/${sessionId}/rating`, { rating }),
    ) as Promise<RatingDoc>;
  }

  fetchView(sessionId: string): Promise<SessionViewDoc> {
    return this.enqueue(() => this.transport.get(`/sessions/${sessionId}`)) as Promise<SessionViewDoc>;
  }

  fetchMetrics(sessionId: string): Promise<MetricsDoc> {
    return this.enqueue(() =>
      this.transport.get(`/sessions/${sessionId}/metrics`),
    ) as Promise<MetricsDoc>;
  }
}
