"""HTTP gateway for live feedback sessions.

Three session modes mirror the experiment loops: improve steps a trajectory
through the pool with language feedback, learn-language fits a per-session
reward model from utterances, learn-comparison fits one from A/B choices.
Each session is an append-only event log; the live handlers and the replay
function run the same state transitions, so any session can be rebuilt
exactly from its log. Free text with unknown words is answered with the
nearest catalog utterance as a confirmation suggestion instead of failing.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .improver import improve_step
from .langcat import UNKNOWN_INDEX, Catalog, Utterance, normalize_words, tokenize
from .latent import EncoderPair, encode_language, encode_trajectory
from .rewardlab import (
    ComparisonQuery,
    LearningCurve,
    RewardModel,
    _continue_train,
    auc,
    comparison_loss,
    init_reward_model,
    make_language_query,
    reward_total_loss,
)
from .worldsim import TrajectoryPool

API_FORMAT_VERSION = 1
SESSION_LOG_FORMAT_VERSION = 1

MODES = ("improve", "learn-language", "learn-comparison")
MAX_ITERATIONS = {"improve": 10, "learn-language": 20, "learn-comparison": 20}
RATING_SPACING = 5


class ApiError(Exception):
    """Maps to the JSON error envelope."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class GatewayAssets:
    """Immutable server-wide state shared by every session."""

    pool: TrajectoryPool
    enc: EncoderPair
    catalog: Catalog
    server_seed: int
    improve_objective: str = "embedding_scaled"
    reward_hidden: tuple[int, ...] = (32, 32)
    reward_k: int = 5
    retrain_epochs: int = 30
    learning_rate: float = 1e-2
    reference_w: np.ndarray | None = None
    config_digest: str = ""
    ids: list[str] = field(default_factory=list)
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.ids = sorted(t.id for t in self.pool.trajectories)
        self.embeddings = {i: encode_trajectory(self.enc, self.pool.by_id[i]) for i in self.ids}

    def start_candidates(self) -> list[str]:
        """Bottom quartile by the reference reward, or the whole pool."""
        if self.reference_w is None:
            return list(self.ids)
        vals = np.array([self.reference_w @ self.pool.features_of(i) for i in self.ids])
        order = np.argsort(vals, kind="stable")
        quartile = max(1, len(self.ids) // 4)
        return [self.ids[int(j)] for j in order[:quartile]]

    def model_favorite(self, model: RewardModel) -> str:
        embs = np.stack([self.embeddings[i] for i in self.ids])
        return self.ids[int(np.argmax(model.rewards(embs)))]

    def nearest_catalog_utterance(self, tokens) -> Utterance:
        """Catalog sentence whose embedding is most cosine-similar."""
        psi = encode_language(self.enc, tokens)
        best, best_score = None, -np.inf
        for utt in self.catalog.all_utterances():
            cand = encode_language(self.enc, utt.tokens)
            denom = max(float(np.linalg.norm(psi) * np.linalg.norm(cand)), 1e-12)
            score = float(psi @ cand) / denom
            if score > best_score:
                best, best_score = utt, score
        return best


def frame_set(pool: TrajectoryPool, traj_id: str) -> dict:
    """Renderable view of one trajectory: point frames plus object markers."""
    traj = pool.by_id[traj_id]
    cfg = pool.config
    return {
        "trajectory_id": traj_id,
        "frames": [
            {"t": i, "x": float(s[0]), "y": float(s[1]), "gripper": bool(s[2] > 0.5)}
            for i, s in enumerate(traj.states)
        ],
        "objects": {"pan": list(cfg.pan), "spoon": list(cfg.spoon)},
        "bounds": [[cfg.x_min, cfg.y_min], [cfg.x_max, cfg.y_max]],
    }


def _resolve_utterance(assets: GatewayAssets, text: str):
    """Free text to an utterance, or a suggestion when words are unknown.

    Returns (utterance, suggestion): exactly one is set. Known text that is
    not a catalog sentence is embedded as-is and borrows the class of its
    nearest catalog neighbor (the class only scopes negative sampling).
    """
    tokens = tokenize(text, assets.catalog.vocab)
    if UNKNOWN_INDEX in tokens:
        nearest = assets.nearest_catalog_utterance(tokens)
        return None, nearest
    exact = assets.catalog.find(text)
    if exact is not None:
        return exact, None
    nearest = assets.nearest_catalog_utterance(tokens)
    return (
        Utterance(nearest.feature, nearest.direction, text, tuple(tokens)),
        None,
    )


@dataclass
class ApplyResult:
    """What one accepted event produced, for shaping the HTTP response."""

    status: str = "ok"  # ok | confirm | ended
    frame_sets: list[dict] = field(default_factory=list)
    suggestion: dict | None = None
    rating_request: dict | None = None
    extras: dict = field(default_factory=dict)


class SessionState:
    """One session's full state; mutates only through apply()."""

    def __init__(self, assets: GatewayAssets, created_event: dict):
        self.assets = assets
        self.session_id = created_event["session_id"]
        self.mode = created_event["mode"]
        self.seed_index = created_event["seed_index"]
        self.max_iterations = MAX_ITERATIONS[self.mode]
        self.rng = np.random.default_rng(
            np.random.SeedSequence([assets.server_seed, 7_000_000 + self.seed_index])
        )
        self.iteration = 0
        self.timings: list[float] = []
        self.ratings: dict[int, int] = {}
        self.pending_rating: int | None = None
        self.pending_suggestion: dict | None = None
        self.satisfied = False
        self.ended = False
        self.end_reason: str | None = None
        self.events: list[dict] = [created_event]
        self.last_sent_at = created_event["at"]
        self.lock = threading.Lock()
        self.flushed = False

        self.current_id: str | None = None
        self.shown_pair: tuple[str, str] | None = None
        self.model: RewardModel | None = None
        self.language_queries = []
        self.comparison_queries = []

        if self.mode == "improve":
            candidates = assets.start_candidates()
            self.current_id = candidates[int(self.rng.integers(len(candidates)))]
        else:
            self.model = init_reward_model(assets.enc.d_z, assets.reward_hidden, self.rng)
            self._draw_next_query()

    # -- sampling --

    def _draw_next_query(self):
        ids = self.assets.ids
        if self.mode == "learn-language":
            self.current_id = ids[int(self.rng.integers(len(ids)))]
        else:
            pick = self.rng.choice(len(ids), size=2, replace=False)
            self.shown_pair = (ids[int(pick[0])], ids[int(pick[1])])

    def current_frame_sets(self) -> list[dict]:
        if self.mode == "learn-comparison":
            return [frame_set(self.assets.pool, i) for i in self.shown_pair]
        return [frame_set(self.assets.pool, self.current_id)]

    # -- validation (state-dependent checks; pure, raises ApiError) --

    def validate_feedback(self, body: dict):
        if self.ended:
            raise ApiError(409, "session_ended", f"session {self.session_id} has ended")
        keys = {"text", "choice", "satisfied", "accept_suggestion", "client_seconds"}
        unknown = set(body) - keys
        if unknown:
            raise ApiError(400, "unknown_field", f"unexpected fields {sorted(unknown)}")
        if "client_seconds" in body and not isinstance(body["client_seconds"], (int, float)):
            raise ApiError(400, "invalid_timing", "client_seconds must be a number")
        given = [k for k in ("text", "choice", "satisfied", "accept_suggestion") if body.get(k)]
        if len(given) != 1:
            raise ApiError(400, "empty_feedback", "exactly one of text, choice, satisfied, accept_suggestion required")
        kind = given[0]
        if kind == "satisfied" and self.mode != "improve":
            raise ApiError(400, "mode_mismatch", "satisfied flag only applies to improve sessions")
        if kind == "choice":
            if self.mode != "learn-comparison":
                raise ApiError(400, "mode_mismatch", f"{self.mode} sessions do not take choices")
            if body["choice"] not in ("a", "b"):
                raise ApiError(400, "invalid_choice", "choice must be 'a' or 'b'")
        if kind == "text":
            if self.mode == "learn-comparison":
                raise ApiError(400, "mode_mismatch", "learn-comparison sessions never receive utterances")
            if not isinstance(body["text"], str) or not normalize_words(body["text"]):
                raise ApiError(400, "empty_feedback", "feedback text is empty")
        if kind == "accept_suggestion":
            if self.mode == "learn-comparison":
                raise ApiError(400, "mode_mismatch", "learn-comparison sessions never receive utterances")
            if self.pending_suggestion is None:
                raise ApiError(409, "no_suggestion", "no suggestion is pending confirmation")

    def validate_rating(self, body: dict):
        rating = body.get("rating")
        if not isinstance(rating, int) or isinstance(rating, bool) or not (1 <= rating <= 5):
            raise ApiError(400, "invalid_rating", "rating must be an integer from 1 to 5")
        if self.pending_rating is None:
            raise ApiError(409, "rating_not_requested", "no rating checkpoint is open")

    # -- transitions (assume validated events) --

    def record(self, event: dict) -> ApplyResult:
        """Append one validated event and apply its transition.

        The live handlers and replay_session both go through here, so a
        rebuilt session carries the identical event list.
        """
        self.events.append(event)
        return self.apply(event)

    def apply(self, event: dict) -> ApplyResult:
        kind = event["type"]
        if kind == "feedback":
            return self._apply_feedback(event)
        if kind == "rating":
            return self._apply_rating(event)
        raise ValueError(f"unknown event type {kind!r}")

    def _apply_feedback(self, event: dict) -> ApplyResult:
        body = event["body"]
        if body.get("satisfied"):
            self.satisfied = True
            self._end("satisfied")
            return ApplyResult(status="ended")

        if body.get("accept_suggestion"):
            suggestion = self.pending_suggestion
            self.pending_suggestion = None
            utterance = self.assets.catalog.find(suggestion["text"])
            return self._advance_with_utterance(event, utterance)

        if self.mode == "learn-comparison":
            a_id, b_id = self.shown_pair
            chosen = a_id if body["choice"] == "a" else b_id
            self.comparison_queries.append(ComparisonQuery(a_id, b_id, chosen))
            _continue_train(
                self.model,
                lambda m: comparison_loss(m, self.comparison_queries, self.assets.embeddings),
                self.assets.retrain_epochs,
                self.assets.learning_rate,
            )
            return self._finish_iteration(event)

        utterance, suggestion = _resolve_utterance(self.assets, body["text"])
        if suggestion is not None:
            self.pending_suggestion = {
                "original_text": body["text"],
                "text": suggestion.text,
                "feature": suggestion.feature,
                "direction": suggestion.direction,
            }
            return ApplyResult(status="confirm", suggestion=dict(self.pending_suggestion))
        self.pending_suggestion = None
        return self._advance_with_utterance(event, utterance)

    def _advance_with_utterance(self, event: dict, utterance: Utterance) -> ApplyResult:
        extras = {}
        if self.mode == "improve":
            chosen, objective = improve_step(
                self.assets.pool,
                self.current_id,
                utterance,
                self.assets.enc,
                mode=self.assets.improve_objective,
            )
            self.current_id = chosen
            extras = {"objective": objective}
        else:
            query = make_language_query(
                self.assets.pool,
                self.current_id,
                utterance,
                self.assets.enc,
                self.assets.catalog,
                self.assets.reward_k,
                self.rng,
            )
            self.language_queries.append(query)
            _continue_train(
                self.model,
                lambda m: reward_total_loss(m, self.language_queries, self.assets.reward_k),
                self.assets.retrain_epochs,
                self.assets.learning_rate,
            )
        return self._finish_iteration(event, extras)

    def _finish_iteration(self, event: dict, extras: dict | None = None) -> ApplyResult:
        self.iteration += 1
        self.timings.append(max(0.0, event["at"] - self.last_sent_at))
        result = ApplyResult(extras=extras or {})

        if self.mode != "improve":
            if self.iteration % RATING_SPACING == 0:
                self.pending_rating = self.iteration
                favorite = self.assets.model_favorite(self.model)
                result.rating_request = {
                    "checkpoint": self.iteration,
                    "frame_set": frame_set(self.assets.pool, favorite),
                }
            if self.iteration < self.max_iterations:
                self._draw_next_query()

        if self.iteration >= self.max_iterations:
            self._end("max_iterations")
            result.status = "ended"
            if self.mode == "improve":
                # still show where the final feedback landed
                result.frame_sets = self.current_frame_sets()
        else:
            result.frame_sets = self.current_frame_sets()
            self.last_sent_at = event["at"]
        return result

    def _apply_rating(self, event: dict) -> ApplyResult:
        checkpoint = self.pending_rating
        overwrote = checkpoint in self.ratings
        self.ratings[checkpoint] = int(event["body"]["rating"])
        return ApplyResult(
            extras={"checkpoint": checkpoint, "rating": self.ratings[checkpoint], "overwrote": overwrote}
        )

    def _end(self, reason: str):
        self.ended = True
        self.end_reason = reason

    # -- views --

    def model_digest(self) -> str:
        if self.model is None:
            basis = json.dumps({"current": self.current_id, "iteration": self.iteration})
        else:
            basis = json.dumps(self.model.ps.to_doc(), sort_keys=True)
        return hashlib.sha256(basis.encode()).hexdigest()[:16]

    def view(self) -> dict:
        return {
            "format_version": API_FORMAT_VERSION,
            "session_id": self.session_id,
            "mode": self.mode,
            "iteration": self.iteration,
            "max_iterations": self.max_iterations,
            "ended": self.ended,
            "end_reason": self.end_reason,
            "satisfied": self.satisfied,
            "current_trajectory_id": self.current_id,
            "shown_pair": list(self.shown_pair) if self.shown_pair else None,
            "pending_rating": self.pending_rating,
            "pending_suggestion": self.pending_suggestion,
            "ratings": [{"checkpoint": c, "rating": r} for c, r in sorted(self.ratings.items())],
            "timings": list(self.timings),
            "payload": {"frame_sets": self.current_frame_sets()},
            "model_digest": self.model_digest(),
            "events": [dict(e) for e in self.events],
        }

    def metrics(self) -> dict:
        curve = LearningCurve("rating", [(c, float(r)) for c, r in sorted(self.ratings.items())])
        return {
            "format_version": API_FORMAT_VERSION,
            "session_id": self.session_id,
            "mode": self.mode,
            "iterations": self.iteration,
            "timings": list(self.timings),
            "ratings": [{"checkpoint": c, "rating": r} for c, r in sorted(self.ratings.items())],
            "rating_auc": auc(curve) if len(curve.points) >= 2 else None,
        }

    def log_doc(self) -> dict:
        return {
            "format_version": SESSION_LOG_FORMAT_VERSION,
            "session_id": self.session_id,
            "mode": self.mode,
            "events": [dict(e) for e in self.events],
        }


def replay_session(assets: GatewayAssets, events: list[dict]) -> SessionState:
    """Rebuild a session purely from its event log."""
    if not events or events[0]["type"] != "created":
        raise ValueError("event log must start with a created event")
    state = SessionState(assets, events[0])
    for event in events[1:]:
        state.record(event)
    return state


class Gateway:
    """Session registry plus the shared assets."""

    def __init__(self, assets: GatewayAssets, session_log_dir=None):
        self.assets = assets
        self.session_log_dir = Path(session_log_dir) if session_log_dir else None
        self.sessions: dict[str, SessionState] = {}
        self._counter = 0
        self._create_lock = threading.Lock()

    def create_session(self, mode: str) -> SessionState:
        if mode not in MODES:
            raise ApiError(400, "unknown_mode", f"mode must be one of {list(MODES)}")
        with self._create_lock:
            index = self._counter
            self._counter += 1
            session_id = f"s{index:04d}"
            event = {
                "type": "created",
                "session_id": session_id,
                "mode": mode,
                "seed_index": index,
                "at": time.time(),
            }
            state = SessionState(self.assets, event)
            self.sessions[session_id] = state
        return state

    def get(self, session_id: str) -> SessionState:
        state = self.sessions.get(session_id)
        if state is None:
            raise ApiError(404, "session_not_found", f"no session {session_id!r}")
        return state

    def flush_session(self, state: SessionState):
        if self.session_log_dir is None or state.flushed:
            return
        self.session_log_dir.mkdir(parents=True, exist_ok=True)
        path = self.session_log_dir / f"{state.session_id}.json"
        path.write_text(json.dumps(state.log_doc(), sort_keys=True))
        state.flushed = True

    def flush_all(self):
        for state in self.sessions.values():
            state.flushed = False
            self.flush_session(state)


def build_app(
    cfg,
    pool: TrajectoryPool,
    enc: EncoderPair,
    catalog: Catalog,
    session_log_dir=None,
    reference_w=None,
):
    """FastAPI application over trained artifacts.

    `cfg` is the experiment configuration; its reward settings size the
    per-session models and its first simulated rater (when present) defines
    the suboptimal-start subset for improve sessions unless `reference_w`
    overrides it.
    """
    if reference_w is None and cfg.reward.humans:
        reference_w = np.asarray(cfg.reward.humans[0], dtype=np.float64)

    assets = GatewayAssets(
        pool=pool,
        enc=enc,
        catalog=catalog,
        server_seed=cfg.master_seed,
        improve_objective=cfg.improve.objective,
        reward_hidden=cfg.reward.hidden,
        reward_k=cfg.reward.k,
        retrain_epochs=cfg.reward.retrain_epochs,
        learning_rate=cfg.reward.learning_rate,
        reference_w=reference_w,
        config_digest=hashlib.sha256(
            json.dumps(cfg.to_doc(), sort_keys=True).encode()
        ).hexdigest()[:16],
    )
    gateway = Gateway(assets, session_log_dir=session_log_dir)

    @asynccontextmanager
    async def lifespan(app):
        yield
        gateway.flush_all()

    app = FastAPI(title="trajlang gateway", lifespan=lifespan)
    app.state.gateway = gateway

    def error_response(exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.exception_handler(ApiError)
    async def handle_api_error(request, exc: ApiError):
        return error_response(exc)

    async def read_json(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "invalid_json", "request body must be a JSON object")
        if not isinstance(body, dict):
            raise ApiError(400, "invalid_json", "request body must be a JSON object")
        return body

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "format_version": API_FORMAT_VERSION,
            "config_digest": assets.config_digest,
            "pool_size": len(assets.ids),
            "active_sessions": len(gateway.sessions),
        }

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await read_json(request)
        state = gateway.create_session(body.get("mode"))
        return {
            "format_version": API_FORMAT_VERSION,
            "session_id": state.session_id,
            "mode": state.mode,
            "iteration": state.iteration,
            "max_iterations": state.max_iterations,
            "payload": {"frame_sets": state.current_frame_sets()},
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        state = gateway.get(session_id)
        with state.lock:
            return state.view()

    @app.post("/sessions/{session_id}/feedback")
    async def submit_feedback(session_id: str, request: Request):
        state = gateway.get(session_id)
        body = await read_json(request)
        with state.lock:
            state.validate_feedback(body)
            event = {"type": "feedback", "body": body, "at": time.time()}
            result = state.record(event)
            if state.ended:
                gateway.flush_session(state)
            response = {
                "format_version": API_FORMAT_VERSION,
                "session_id": state.session_id,
                "status": result.status,
                "iteration": state.iteration,
                "ended": state.ended,
                "payload": {"frame_sets": result.frame_sets},
            }
            if result.suggestion is not None:
                response["suggestion"] = result.suggestion
            if result.rating_request is not None:
                response["rating_request"] = result.rating_request
            response.update(result.extras)
            return response

    @app.post("/sessions/{session_id}/rating")
    async def submit_rating(session_id: str, request: Request):
        state = gateway.get(session_id)
        body = await read_json(request)
        with state.lock:
            state.validate_rating(body)
            event = {"type": "rating", "body": {"rating": body["rating"]}, "at": time.time()}
            result = state.record(event)
            if state.ended:
                state.flushed = False
                gateway.flush_session(state)
            return {
                "format_version": API_FORMAT_VERSION,
                "session_id": state.session_id,
                "status": "ok",
                **result.extras,
            }

    @app.get("/sessions/{session_id}/metrics")
    def session_metrics(session_id: str):
        state = gateway.get(session_id)
        with state.lock:
            return state.metrics()

    return app
