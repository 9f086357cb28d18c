"""Iterative trajectory improvement driven by comparative feedback.

Each round scores every pool trajectory by how well its embedding shift
from the current trajectory aligns with the utterance embedding, then
jumps to the argmax. The current trajectory is always a candidate, so a
round can be a no-op.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .langcat import Utterance
from .latent import EncoderPair, encode_language, encode_trajectory
from .worldsim import TrajectoryPool, true_reward

log = logging.getLogger(__name__)

OBJECTIVE_MODES = ("embedding_scaled", "difference_cosine")


def improvement_objective(
    phi_cand: np.ndarray,
    phi_0: np.ndarray,
    psi: np.ndarray,
    mode: str = "embedding_scaled",
) -> float:
    """Alignment score of a candidate's embedding shift with the utterance.

    Default mode divides psi . (phi_cand - phi_0) by the product of the two
    embedding norms. The alternative mode is the true cosine between psi
    and the difference vector.
    """
    phi_cand = np.asarray(phi_cand, dtype=np.float64)
    phi_0 = np.asarray(phi_0, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    dot = float(psi @ (phi_cand - phi_0))
    if mode == "embedding_scaled":
        denom = float(np.linalg.norm(phi_cand) * np.linalg.norm(phi_0))
    elif mode == "difference_cosine":
        denom = float(np.linalg.norm(psi) * np.linalg.norm(phi_cand - phi_0))
    else:
        raise ValueError(f"unknown objective mode {mode!r}")
    if denom <= 0.0:
        raise ValueError("objective undefined for zero-norm embeddings")
    return dot / denom


def improve_step(
    pool: TrajectoryPool,
    current_id: str,
    utterance: Utterance,
    enc: EncoderPair,
    mode: str = "embedding_scaled",
) -> tuple[str, float]:
    """Argmax of the objective over the pool; ties go to the lowest id.

    Returns (chosen id, its objective value). Candidates with undefined
    objectives are skipped; if every candidate is skipped the current
    trajectory is kept with objective 0.
    """
    if len(pool) == 0:
        raise ValueError("candidate pool is empty")
    psi = encode_language(enc, utterance.tokens)
    phi_0 = encode_trajectory(enc, pool.by_id[current_id])

    best_id, best_val = None, -np.inf
    for traj in sorted(pool.trajectories, key=lambda t: t.id):
        phi = encode_trajectory(enc, traj)
        try:
            val = improvement_objective(phi, phi_0, psi, mode=mode)
        except ValueError:
            log.warning("skipping candidate %s: undefined objective", traj.id)
            continue
        if val > best_val:
            best_id, best_val = traj.id, val
    if best_id is None:
        log.warning("every candidate skipped; keeping %s", current_id)
        return current_id, 0.0
    return best_id, best_val


@dataclass
class TraceEntry:
    iteration: int
    shown_id: str
    utterance_text: str | None
    chosen_id: str
    objective: float
    true_reward: float | None = None


@dataclass
class ImprovementTrace:
    """Per-iteration record of one improvement session."""

    entries: list[TraceEntry] = field(default_factory=list)
    complete: bool = True

    def trajectory_ids(self) -> list[str]:
        # iteration 0 shows the start; afterwards each entry's chosen id
        return [self.entries[0].shown_id] + [e.chosen_id for e in self.entries[1:]]

    def rewards(self) -> list[float]:
        return [e.true_reward for e in self.entries]

    def to_rows(self) -> list[dict]:
        return [
            {
                "iteration": e.iteration,
                "shown_id": e.shown_id,
                "utterance": e.utterance_text if e.utterance_text is not None else "",
                "chosen_id": e.chosen_id,
                "objective": e.objective,
                "true_reward": e.true_reward if e.true_reward is not None else "",
            }
            for e in self.entries
        ]


def improve_loop(
    pool: TrajectoryPool,
    start_id: str,
    feedback_source,
    n_iterations: int,
    enc: EncoderPair,
    w: np.ndarray | None = None,
    mode: str = "embedding_scaled",
) -> ImprovementTrace:
    """Run n feedback rounds from start_id.

    `feedback_source(trajectory_id)` returns an Utterance, or None when
    satisfied (the round becomes a no-op). A raising source truncates the
    trace, which is then marked incomplete. Trace entry 0 is the start.
    """
    if n_iterations < 1:
        raise ValueError("need at least one iteration")

    def reward_of(tid):
        return true_reward(w, pool.by_id[tid], pool.config) if w is not None else None

    trace = ImprovementTrace()
    current = start_id
    trace.entries.append(TraceEntry(0, current, None, current, 0.0, reward_of(current)))

    for i in range(1, n_iterations + 1):
        try:
            utterance = feedback_source(current)
        except Exception:
            log.exception("feedback source failed at iteration %d", i)
            trace.complete = False
            break
        if utterance is None:
            trace.entries.append(TraceEntry(i, current, None, current, 0.0, reward_of(current)))
            continue
        chosen, objective = improve_step(pool, current, utterance, enc, mode=mode)
        trace.entries.append(
            TraceEntry(i, current, utterance.text, chosen, objective, reward_of(chosen))
        )
        current = chosen
    return trace
