"""Synthetic feedback: feature-softmax language hints and Boltzmann choices.

A simulated human holds a true weight vector w over trajectory features.
Language feedback samples a feature in proportion to how much fixing it
would help (softmax over w-weighted gaps to the optimal trajectory), then
names the direction that closes the gap. Pairwise choices follow the
standard exp-reward choice rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .langcat import Catalog, Utterance
from .worldsim import TrajectoryPool


def _softmax(v: np.ndarray) -> np.ndarray:
    z = v - v.max()
    e = np.exp(z)
    return e / e.sum()


def _choice_prob(score_a: float, score_b: float) -> float:
    # exp(a) / (exp(a) + exp(b)), shifted for stability
    m = max(score_a, score_b)
    ea, eb = np.exp(score_a - m), np.exp(score_b - m)
    return float(ea / (ea + eb))


@dataclass
class SimulatedHuman:
    """Feedback source defined by a weight vector and its optimal trajectory."""

    w: np.ndarray
    optimal_id: str
    beta: float = 1.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def make_simulated_human(pool: TrajectoryPool, w, beta: float = 1.0) -> SimulatedHuman:
    """Bind w to the pool: the optimal trajectory is the pool argmax of w·features."""
    w = np.asarray(w, dtype=np.float64)
    scores = pool.feature_matrix() @ w
    best = int(np.argmax(scores))
    return SimulatedHuman(w=w, optimal_id=pool.trajectories[best].id, beta=beta)


def language_feedback(
    h: SimulatedHuman,
    traj_id: str,
    pool: TrajectoryPool,
    catalog: Catalog,
    rng: np.random.Generator,
) -> Utterance | None:
    """Sample an utterance pushing one feature toward the optimum.

    Feature d is drawn from softmax(beta * w * (optimal - current)) over the
    features that actually differ; the direction is the sign of the gap.
    Returns None when the current trajectory's features equal the optimum's
    (nothing left to ask for).
    """
    theta_star = pool.features_of(h.optimal_id)
    theta_0 = pool.features_of(traj_id)
    gap = theta_star - theta_0

    support = np.flatnonzero(gap != 0.0)
    if support.size == 0:
        return None

    v = h.w * gap
    probs = _softmax(h.beta * v[support])
    d = int(support[rng.choice(support.size, p=probs)])
    direction = 1 if gap[d] > 0 else -1
    options = catalog.paraphrases(d, direction)
    return options[int(rng.integers(len(options)))]


def comparison_choice(
    h: SimulatedHuman,
    id_a: str,
    id_b: str,
    pool: TrajectoryPool,
    rng: np.random.Generator,
) -> str:
    """Pick A with probability exp(w·θA) / (exp(w·θA) + exp(w·θB))."""
    if id_a == id_b:
        raise ValueError("comparison requires two distinct trajectories")
    score_a = float(h.w @ pool.features_of(id_a))
    score_b = float(h.w @ pool.features_of(id_b))
    p_a = _choice_prob(score_a, score_b)
    return id_a if rng.uniform() < p_a else id_b
