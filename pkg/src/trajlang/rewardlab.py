"""Reward learning from comparative language and from pairwise choices.

A small MLP maps latent embeddings to scalar rewards. Language feedback
trains it through two preference terms: the imagined improved point
(embedding plus utterance vector) is preferred over the shown one, and
preferred over improvements along sampled other utterances. The baseline
trains on binary choices between trajectory pairs. Both are evaluated by
cross-entropy against the true choice model and by the true reward of the
model's favorite trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import (
    OptimizerConfig,
    ParamSet,
    as_tensor,
    init_mlp,
    mlp_forward,
    optimizer_step,
)
from .langcat import Catalog, Utterance
from .latent import EncoderPair, encode_language, encode_trajectory
from .worldsim import TrajectoryPool

REWARD_FORMAT_VERSION = 1


def _np_logsigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return -(np.maximum(-x, 0.0) + np.log1p(np.exp(-np.abs(x))))


@dataclass
class RewardModel:
    """Scalar reward head over latent embeddings."""

    ps: ParamSet
    d_z: int
    hidden: tuple[int, ...]

    @property
    def arch(self) -> list[int]:
        return [self.d_z, *self.hidden, 1]

    def reward(self, emb: np.ndarray) -> float:
        return float(self.rewards(np.asarray(emb, dtype=np.float64)[None, :])[0])

    def rewards(self, embs: np.ndarray) -> np.ndarray:
        h = np.asarray(embs, dtype=np.float64)
        n_layers = len(self.arch) - 1
        for i in range(n_layers):
            h = h @ self.ps[f"r_W{i}"].data + self.ps[f"r_b{i}"].data
            if i < n_layers - 1:
                h = np.tanh(h)
        return h[:, 0]

    def copy(self) -> "RewardModel":
        return RewardModel(ps=self.ps.copy(), d_z=self.d_z, hidden=self.hidden)

    def to_doc(self) -> dict:
        return {
            "format_version": REWARD_FORMAT_VERSION,
            "kind": "reward_model",
            "d_z": self.d_z,
            "hidden": list(self.hidden),
            "ps": self.ps.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "RewardModel":
        if doc.get("format_version") != REWARD_FORMAT_VERSION:
            raise ValueError(f"unsupported reward format_version {doc.get('format_version')!r}")
        return cls(ps=ParamSet.from_doc(doc["ps"]), d_z=doc["d_z"], hidden=tuple(doc["hidden"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_doc(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "RewardModel":
        return cls.from_doc(json.loads(Path(path).read_text()))


def init_reward_model(d_z: int, hidden=(32, 32), rng: np.random.Generator | None = None) -> RewardModel:
    rng = rng if rng is not None else np.random.default_rng(0)
    ps = ParamSet()
    init_mlp(ps, [d_z, *hidden, 1], rng, prefix="r_")
    return RewardModel(ps=ps, d_z=d_z, hidden=tuple(hidden))


def bt_prob(r_x: float, r_y: float) -> float:
    """P(X preferred over Y) = exp(rX) / (exp(rX) + exp(rY)), overflow-safe."""
    m = max(r_x, r_y)
    ex, ey = np.exp(r_x - m), np.exp(r_y - m)
    return float(ex / (ex + ey))


@dataclass
class LanguageQuery:
    """One language feedback round, with its imagined improvements."""

    traj_id: str
    utterance: Utterance
    phi: np.ndarray  # shown trajectory embedding
    psi: np.ndarray  # utterance embedding
    negatives: list[Utterance]
    psi_negatives: np.ndarray  # (k, d_z)

    @property
    def phi_hat(self) -> np.ndarray:
        return self.phi + self.psi

    @property
    def phi_negatives(self) -> np.ndarray:
        return self.phi[None, :] + self.psi_negatives

    def __post_init__(self):
        if len(self.negatives) < 1:
            raise ValueError("at least one negative utterance required")
        for neg in self.negatives:
            if (neg.feature, neg.direction) == (self.utterance.feature, self.utterance.direction):
                raise ValueError(
                    "negatives must come from a different (feature, direction) class"
                )


@dataclass
class ComparisonQuery:
    """One pairwise choice round."""

    a_id: str
    b_id: str
    chosen_id: str

    def __post_init__(self):
        if self.a_id == self.b_id:
            raise ValueError("comparison pair must be distinct")
        if self.chosen_id not in (self.a_id, self.b_id):
            raise ValueError("chosen id must be one of the pair")


def make_language_query(
    pool: TrajectoryPool,
    traj_id: str,
    utterance: Utterance,
    enc: EncoderPair,
    catalog: Catalog,
    k: int,
    rng: np.random.Generator,
) -> LanguageQuery:
    """Embed the round and draw k negatives from the other utterance classes."""
    if k < 1:
        raise ValueError("k must be at least 1")
    options = catalog.utterances_excluding(utterance.feature, utterance.direction)
    picks = rng.choice(len(options), size=k, replace=True)
    negatives = [options[int(i)] for i in picks]
    phi = encode_trajectory(enc, pool.by_id[traj_id])
    psi = encode_language(enc, utterance.tokens)
    psi_neg = np.stack([encode_language(enc, n.tokens) for n in negatives])
    return LanguageQuery(
        traj_id=traj_id,
        utterance=utterance,
        phi=phi,
        psi=psi,
        negatives=negatives,
        psi_negatives=psi_neg,
    )


# -- loss terms (tape-building) --


def _model_scores(model: RewardModel, embs: np.ndarray):
    out = mlp_forward(model.ps, as_tensor(embs), model.arch, "r_")
    return out.reshape(-1)


def explicit_loss(model: RewardModel, queries: list[LanguageQuery]):
    """Mean negative log-probability that each imagined point beats its origin."""
    if not queries:
        raise ValueError("need at least one query")
    phi_hat = np.stack([q.phi_hat for q in queries])
    phi = np.stack([q.phi for q in queries])
    z = _model_scores(model, phi_hat) - _model_scores(model, phi)
    return (-z).softplus().mean()


def implicit_loss(model: RewardModel, queries: list[LanguageQuery], k: int):
    """Mean negative log-probability that the given feedback's imagined point
    beats the imagined points of k other utterances."""
    if not queries:
        raise ValueError("need at least one query")
    for q in queries:
        if len(q.negatives) != k:
            raise ValueError(f"query for {q.traj_id} carries {len(q.negatives)} negatives, expected {k}")
    n = len(queries)
    phi_hat = np.stack([q.phi_hat for q in queries])
    phi_neg = np.stack([q.phi_negatives for q in queries])  # (n, k, d)
    r_hat = _model_scores(model, phi_hat).reshape(n, 1)
    r_neg = _model_scores(model, phi_neg.reshape(n * k, -1)).reshape(n, k)
    z = r_hat - r_neg
    return (-z).softplus().mean()


def reward_total_loss(model: RewardModel, queries: list[LanguageQuery], k: int):
    """Explicit plus implicit terms, summed exactly."""
    return explicit_loss(model, queries) + implicit_loss(model, queries, k)


def comparison_loss(model: RewardModel, queries: list[ComparisonQuery], embeddings: dict):
    """Mean negative log-probability of the recorded choices."""
    if not queries:
        raise ValueError("need at least one query")
    chosen = np.stack([embeddings[q.chosen_id] for q in queries])
    rejected = np.stack(
        [embeddings[q.b_id if q.chosen_id == q.a_id else q.a_id] for q in queries]
    )
    z = _model_scores(model, chosen) - _model_scores(model, rejected)
    return (-z).softplus().mean()


# -- evaluation --


def eval_cross_entropy(
    model: RewardModel,
    w: np.ndarray,
    pool: TrajectoryPool,
    eval_pairs: list[tuple[str, str]],
    enc: EncoderPair,
) -> float:
    """Mean cross-entropy between the true choice model and the learned one."""
    w = np.asarray(w, dtype=np.float64)
    ids = sorted({i for pair in eval_pairs for i in pair})
    emb = {i: encode_trajectory(enc, pool.by_id[i]) for i in ids}
    r = {i: model.reward(emb[i]) for i in ids}
    total = 0.0
    for a, b in eval_pairs:
        d_true = float(w @ pool.features_of(a) - w @ pool.features_of(b))
        d_model = r[a] - r[b]
        p_true = float(np.exp(_np_logsigmoid(d_true)))
        total += -(p_true * _np_logsigmoid(d_model) + (1 - p_true) * _np_logsigmoid(-d_model))
    return total / len(eval_pairs)


@dataclass
class BestOfPool:
    trajectory_id: str
    normalized_reward: float
    degenerate: bool = False


def best_of_pool(
    model: RewardModel,
    pool: TrajectoryPool,
    enc: EncoderPair,
    w: np.ndarray,
    ids: list[str] | None = None,
) -> BestOfPool:
    """The model's favorite trajectory and its min-max-normalized true reward."""
    ids = ids if ids is not None else [t.id for t in pool.trajectories]
    if not ids:
        raise ValueError("candidate id list is empty")
    ids = sorted(ids)
    w = np.asarray(w, dtype=np.float64)
    embs = np.stack([encode_trajectory(enc, pool.by_id[i]) for i in ids])
    scores = model.rewards(embs)
    chosen = ids[int(np.argmax(scores))]  # argmax returns the first (lowest id) tie

    true_vals = pool.feature_matrix(ids) @ w
    lo, hi = float(true_vals.min()), float(true_vals.max())
    chosen_val = float(w @ pool.features_of(chosen))
    if hi == lo:
        return BestOfPool(chosen, 1.0, degenerate=True)
    return BestOfPool(chosen, (chosen_val - lo) / (hi - lo))


@dataclass
class LearningCurve:
    """Metric values indexed by queries consumed."""

    metric: str
    points: list[tuple[int, float]] = field(default_factory=list)
    truncated: bool = False

    def add(self, queries: int, value: float):
        if self.points and queries <= self.points[-1][0]:
            raise ValueError("query counts must be strictly increasing")
        self.points.append((queries, float(value)))

    def xs(self):
        return [p[0] for p in self.points]

    def ys(self):
        return [p[1] for p in self.points]


def auc(curve: LearningCurve) -> float:
    """Trapezoidal area under the curve divided by its query span."""
    if len(curve.points) < 2:
        raise ValueError("AUC needs at least two points")
    xs = np.array(curve.xs(), dtype=np.float64)
    ys = np.array(curve.ys(), dtype=np.float64)
    area = float(np.sum((ys[:-1] + ys[1:]) / 2.0 * np.diff(xs)))
    return area / float(xs[-1] - xs[0])


# -- online learning loops --


@dataclass
class RewardLearnConfig:
    """Knobs of the online reward-learning loops."""

    n_queries: int = 20
    k: int = 5
    checkpoint_spacing: int = 5
    retrain_epochs: int = 30
    learning_rate: float = 1e-2
    hidden: tuple[int, ...] = (32, 32)
    loss_mode: str = "full"  # full | explicit | implicit
    from_scratch: bool = False  # reinitialize before each retrain instead of continuing

    def __post_init__(self):
        if self.n_queries < 0:
            raise ValueError("n_queries must be nonnegative")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.checkpoint_spacing < 1:
            raise ValueError("checkpoint_spacing must be at least 1")
        if self.loss_mode not in ("full", "explicit", "implicit"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        self.hidden = tuple(int(h) for h in self.hidden)


def _language_loss(model, queries, cfg: RewardLearnConfig):
    if cfg.loss_mode == "explicit":
        return explicit_loss(model, queries)
    if cfg.loss_mode == "implicit":
        return implicit_loss(model, queries, cfg.k)
    return reward_total_loss(model, queries, cfg.k)


def _continue_train(model: RewardModel, loss_builder, epochs: int, lr: float):
    opt = OptimizerConfig(learning_rate=lr)
    for _ in range(epochs):
        loss = loss_builder(model)
        if not np.isfinite(loss.data):
            raise RuntimeError("reward training diverged")
        model.ps.zero_grads()
        loss.backward()
        grads = {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in model.ps.params.items()
        }
        optimizer_step(model.ps, grads, opt)


def _training_ids(pool: TrajectoryPool) -> list[str]:
    ids = pool.split_ids("train")
    return ids if ids else [t.id for t in pool.trajectories]


def _record(curves: dict[str, LearningCurve], evaluator, model, queries_done: int):
    for metric, value in evaluator(model).items():
        if metric not in curves:
            curves[metric] = LearningCurve(metric=metric)
        curves[metric].add(queries_done, value)


def learn_reward_language(
    pool: TrajectoryPool,
    feedback_source,
    enc: EncoderPair,
    catalog: Catalog,
    cfg: RewardLearnConfig,
    evaluator,
    rng: np.random.Generator,
) -> tuple[RewardModel, dict[str, LearningCurve]]:
    """Online loop: show a random trajectory, get an utterance, add the query,
    continue-train on everything so far, and record metrics on a schedule.

    `feedback_source(trajectory_id)` returns an Utterance or None (satisfied).
    `evaluator(model)` returns {metric: value} and runs at every checkpoint.
    """
    model = init_reward_model(enc.d_z, cfg.hidden, rng)
    init_snapshot = model.copy() if cfg.from_scratch else None
    curves: dict[str, LearningCurve] = {}
    ids = _training_ids(pool)
    queries: list[LanguageQuery] = []

    _record(curves, evaluator, model, 0)
    for step in range(1, cfg.n_queries + 1):
        utterance, traj_id = None, None
        for _ in range(len(ids)):
            traj_id = ids[int(rng.integers(len(ids)))]
            utterance = feedback_source(traj_id)
            if utterance is not None:
                break
        if utterance is None:
            for curve in curves.values():
                curve.truncated = True
            break
        queries.append(make_language_query(pool, traj_id, utterance, enc, catalog, cfg.k, rng))
        if init_snapshot is not None:
            model = init_snapshot.copy()
        _continue_train(
            model, lambda m: _language_loss(m, queries, cfg), cfg.retrain_epochs, cfg.learning_rate
        )
        if step % cfg.checkpoint_spacing == 0:
            _record(curves, evaluator, model, step)
    return model, curves


def learn_reward_comparison(
    pool: TrajectoryPool,
    choice_source,
    enc: EncoderPair,
    cfg: RewardLearnConfig,
    evaluator,
    rng: np.random.Generator,
) -> tuple[RewardModel, dict[str, LearningCurve]]:
    """Online loop for the pairwise baseline.

    `choice_source(id_a, id_b)` returns the chosen id.
    """
    model = init_reward_model(enc.d_z, cfg.hidden, rng)
    init_snapshot = model.copy() if cfg.from_scratch else None
    curves: dict[str, LearningCurve] = {}
    ids = _training_ids(pool)
    if len(ids) < 2:
        raise ValueError("need at least two trajectories for comparisons")
    queries: list[ComparisonQuery] = []
    embeddings: dict[str, np.ndarray] = {}

    _record(curves, evaluator, model, 0)
    for step in range(1, cfg.n_queries + 1):
        pick = rng.choice(len(ids), size=2, replace=False)
        a_id, b_id = ids[int(pick[0])], ids[int(pick[1])]
        try:
            chosen = choice_source(a_id, b_id)
        except Exception:
            for curve in curves.values():
                curve.truncated = True
            break
        for tid in (a_id, b_id):
            if tid not in embeddings:
                embeddings[tid] = encode_trajectory(enc, pool.by_id[tid])
        queries.append(ComparisonQuery(a_id, b_id, chosen))
        if init_snapshot is not None:
            model = init_snapshot.copy()
        _continue_train(
            model,
            lambda m: comparison_loss(m, queries, embeddings),
            cfg.retrain_epochs,
            cfg.learning_rate,
        )
        if step % cfg.checkpoint_spacing == 0:
            _record(curves, evaluator, model, step)
    return model, curves
