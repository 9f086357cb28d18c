"""Shared latent space between trajectories and comparative utterances.

A per-step MLP encodes state-action pairs and mean-pools them into a
trajectory embedding. A token-embedding table with a linear pooling head
encodes utterances into the same space. Training aligns the embedding
difference of a labeled pair with the utterance embedding, in two phases:
first with the language side frozen, then co-finetuning both encoders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import (
    OptimizerConfig,
    ParamSet,
    Tensor,
    as_tensor,
    gather_rows,
    init_mlp,
    mlp_forward,
    optimizer_step,
)
from .langcat import TripletDataset
from .worldsim import Trajectory, TrajectoryPool

ENCODER_FORMAT_VERSION = 1

STATE_ACTION_DIM = 6  # x, y, gripper flag + dx, dy, gripper toggle


@dataclass
class LatentConfig:
    """Hyperparameters of the shared space and its training schedule."""

    d_z: int = 16
    hidden: tuple[int, ...] = (32, 32)
    norm_weight_traj: float = 1.0  # a: hinge on trajectory embedding norms
    norm_weight_lang: float = 1.0  # b: pull language embedding norm to 1
    phase1_epochs: int = 50
    phase2_epochs: int = 150
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.d_z < 2:
            raise ValueError("d_z must be at least 2")
        if self.norm_weight_traj < 0 or self.norm_weight_lang < 0:
            raise ValueError("norm weights must be nonnegative")
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_doc(self) -> dict:
        return {
            "d_z": self.d_z,
            "hidden": list(self.hidden),
            "norm_weight_traj": self.norm_weight_traj,
            "norm_weight_lang": self.norm_weight_lang,
            "phase1_epochs": self.phase1_epochs,
            "phase2_epochs": self.phase2_epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "LatentConfig":
        return cls(
            d_z=doc["d_z"],
            hidden=tuple(doc["hidden"]),
            norm_weight_traj=doc["norm_weight_traj"],
            norm_weight_lang=doc["norm_weight_lang"],
            phase1_epochs=doc["phase1_epochs"],
            phase2_epochs=doc["phase2_epochs"],
            learning_rate=doc["learning_rate"],
            batch_size=doc["batch_size"],
            seed=doc["seed"],
        )


@dataclass
class EncoderPair:
    """Trajectory encoder + language encoder sharing one latent width."""

    traj: ParamSet
    lang: ParamSet
    d_z: int
    hidden: tuple[int, ...]
    vocab_size: int

    @property
    def traj_arch(self) -> list[int]:
        return [STATE_ACTION_DIM, *self.hidden, self.d_z]

    @property
    def head_arch(self) -> list[int]:
        return [self.d_z, self.d_z]

    def copy(self) -> "EncoderPair":
        return EncoderPair(
            traj=self.traj.copy(),
            lang=self.lang.copy(),
            d_z=self.d_z,
            hidden=self.hidden,
            vocab_size=self.vocab_size,
        )

    def to_doc(self) -> dict:
        return {
            "format_version": ENCODER_FORMAT_VERSION,
            "kind": "encoder_pair",
            "d_z": self.d_z,
            "hidden": list(self.hidden),
            "vocab_size": self.vocab_size,
            "traj": self.traj.to_doc(),
            "lang": self.lang.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EncoderPair":
        if doc.get("format_version") != ENCODER_FORMAT_VERSION:
            raise ValueError(f"unsupported encoder format_version {doc.get('format_version')!r}")
        return cls(
            traj=ParamSet.from_doc(doc["traj"]),
            lang=ParamSet.from_doc(doc["lang"]),
            d_z=doc["d_z"],
            hidden=tuple(doc["hidden"]),
            vocab_size=doc["vocab_size"],
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_doc(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "EncoderPair":
        return cls.from_doc(json.loads(Path(path).read_text()))


def init_encoders(cfg: LatentConfig, vocab_size: int, rng: np.random.Generator | None = None) -> EncoderPair:
    """Fresh encoder pair; the token table is scaled like a dense layer input."""
    if vocab_size < 1:
        raise ValueError("vocab_size must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    traj = ParamSet()
    init_mlp(traj, [STATE_ACTION_DIM, *cfg.hidden, cfg.d_z], rng, prefix="traj_")
    lang = ParamSet()
    lang.add("embed", rng.standard_normal((vocab_size, cfg.d_z)) / np.sqrt(cfg.d_z))
    init_mlp(lang, [cfg.d_z, cfg.d_z], rng, prefix="head_")
    return EncoderPair(traj=traj, lang=lang, d_z=cfg.d_z, hidden=cfg.hidden, vocab_size=vocab_size)


def traj_input(traj: Trajectory) -> np.ndarray:
    """Per-step encoder input: concatenated state and action rows."""
    return np.concatenate([traj.states, traj.actions], axis=1)


# -- forward passes (numpy, no tape; used for inference and evaluation) --


def _np_mlp(ps: ParamSet, x: np.ndarray, arch: list[int], prefix: str) -> np.ndarray:
    h = x
    n_layers = len(arch) - 1
    for i in range(n_layers):
        h = h @ ps[f"{prefix}W{i}"].data + ps[f"{prefix}b{i}"].data
        if i < n_layers - 1:
            h = np.tanh(h)
    return h


def encode_trajectory(enc: EncoderPair, traj: Trajectory) -> np.ndarray:
    """Mean over per-step MLP outputs on (state, action) rows."""
    steps = _np_mlp(enc.traj, traj_input(traj), enc.traj_arch, "traj_")
    return steps.mean(axis=0)


def encode_language(enc: EncoderPair, tokens) -> np.ndarray:
    """Pooling head applied to the mean of the token embeddings."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("cannot encode an empty token list")
    if tokens.min() < 0 or tokens.max() >= enc.vocab_size:
        raise ValueError("token id outside the vocabulary")
    pooled = enc.lang["embed"].data[tokens].mean(axis=0)
    return _np_mlp(enc.lang, pooled[None, :], enc.head_arch, "head_")[0]


def _np_encode_traj_batch(enc: EncoderPair, stacked: np.ndarray) -> np.ndarray:
    b, t, d = stacked.shape
    flat = _np_mlp(enc.traj, stacked.reshape(b * t, d), enc.traj_arch, "traj_")
    return flat.reshape(b, t, enc.d_z).mean(axis=1)


def _np_encode_lang_batch(enc: EncoderPair, token_lists) -> np.ndarray:
    table = enc.lang["embed"].data
    pooled = np.stack([table[np.asarray(ts, dtype=np.int64)].mean(axis=0) for ts in token_lists])
    return _np_mlp(enc.lang, pooled, enc.head_arch, "head_")


# -- loss terms (tape-building; inputs are Tensors or arrays) --


def _as_batch(x) -> Tensor:
    t = as_tensor(x)
    return t.reshape(1, -1) if t.data.ndim == 1 else t


def align_loss(phi_a, phi_b, psi) -> Tensor:
    """-log sigmoid(psi . (phi_b - phi_a)), meaned over a batch."""
    phi_a, phi_b, psi = _as_batch(phi_a), _as_batch(phi_b), _as_batch(psi)
    z = ((phi_b - phi_a) * psi).sum(axis=1)
    return (-z).softplus().mean()


def norm_loss(phi_a, phi_b, psi, a: float, b: float) -> Tensor:
    """Hinge keeping trajectory norms below 1 plus a pull of |psi| toward 1."""
    if a < 0 or b < 0:
        raise ValueError("norm weights must be nonnegative")
    phi_a, phi_b, psi = _as_batch(phi_a), _as_batch(phi_b), _as_batch(psi)
    one = 1.0
    hinge = (phi_a.norm(axis=1) - one).relu() + (phi_b.norm(axis=1) - one).relu()
    pull = (psi.norm(axis=1) - one).square()
    return (hinge * a + pull * b).mean()


def total_loss(phi_a, phi_b, psi, a: float, b: float) -> Tensor:
    """Alignment plus norm regularization, summed exactly."""
    return align_loss(phi_a, phi_b, psi) + norm_loss(phi_a, phi_b, psi, a, b)


# -- tape-building batch encoders (training path) --


def _encode_traj_batch_t(enc: EncoderPair, stacked: np.ndarray) -> Tensor:
    b, t, d = stacked.shape
    flat = mlp_forward(enc.traj, as_tensor(stacked.reshape(b * t, d)), enc.traj_arch, "traj_")
    return flat.reshape(b, t, enc.d_z).mean(axis=1)


def _encode_lang_batch_t(enc: EncoderPair, token_lists) -> Tensor:
    flat, weights = [], []
    for row, ts in enumerate(token_lists):
        for tok in ts:
            flat.append(tok)
            weights.append((row, 1.0 / len(ts)))
    pool_mat = np.zeros((len(token_lists), len(flat)))
    for col, (row, wgt) in enumerate(weights):
        pool_mat[row, col] = wgt
    rows = gather_rows(enc.lang["embed"], np.array(flat, dtype=np.int64))
    pooled = as_tensor(pool_mat) @ rows
    return mlp_forward(enc.lang, pooled, enc.head_arch, "head_")


# -- evaluation --


def accuracy(enc: EncoderPair, pool: TrajectoryPool, triplets) -> float:
    """Fraction of triplets whose utterance embedding has positive dot
    with the encoded trajectory difference."""
    items = list(triplets)
    if not items:
        raise ValueError("cannot score an empty triplet list")
    inputs = {}
    for t in items:
        for tid in (t.a_id, t.b_id):
            if tid not in inputs:
                inputs[tid] = traj_input(pool.by_id[tid])
    ids = list(inputs)
    embedded = _np_encode_traj_batch(enc, np.stack([inputs[i] for i in ids]))
    phi = dict(zip(ids, embedded))
    psi = _np_encode_lang_batch(enc, [t.utterance.tokens for t in items])
    correct = 0
    for i, t in enumerate(items):
        z = float(psi[i] @ (phi[t.b_id] - phi[t.a_id]))
        correct += z > 0
    return correct / len(items)


def _np_total_loss(enc: EncoderPair, stacked_a, stacked_b, token_lists, a, b) -> float:
    phi_a = _np_encode_traj_batch(enc, stacked_a)
    phi_b = _np_encode_traj_batch(enc, stacked_b)
    psi = _np_encode_lang_batch(enc, token_lists)
    z = ((phi_b - phi_a) * psi).sum(axis=1)
    align = np.mean(np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z))))
    na = np.sqrt((phi_a**2).sum(axis=1) + 1e-12)
    nb = np.sqrt((phi_b**2).sum(axis=1) + 1e-12)
    npsi = np.sqrt((psi**2).sum(axis=1) + 1e-12)
    norm = np.mean(a * (np.maximum(na - 1, 0) + np.maximum(nb - 1, 0)) + b * (npsi - 1) ** 2)
    return float(align + norm)


# -- training --


def _collect_grads(ps: ParamSet) -> dict[str, np.ndarray]:
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in ps.params.items()
    }


def train_latent(
    pool: TrajectoryPool,
    dataset: TripletDataset,
    cfg: LatentConfig,
    init: EncoderPair | None = None,
) -> tuple[EncoderPair, list[dict]]:
    """Two-phase training; returns the best-validation-accuracy encoders.

    Phase 1 updates only the trajectory encoder; phase 2 co-finetunes both.
    History carries one row per epoch. Aborts on a non-finite loss.
    """
    train_items = dataset.split("train")
    if not train_items:
        raise ValueError("training split is empty")
    val_items = dataset.split("val")

    rng = np.random.default_rng(cfg.seed)
    vocab_size = (
        init.vocab_size
        if init is not None
        else max((max(t.utterance.tokens) for t in dataset.items), default=0) + 1
    )
    enc = init.copy() if init is not None else init_encoders(cfg, vocab_size, rng)

    inputs = {}
    for t in dataset.items:
        for tid in (t.a_id, t.b_id):
            if tid not in inputs:
                inputs[tid] = traj_input(pool.by_id[tid])

    stacked_a = np.stack([inputs[t.a_id] for t in train_items])
    stacked_b = np.stack([inputs[t.b_id] for t in train_items])
    tokens = [t.utterance.tokens for t in train_items]
    val_a = np.stack([inputs[t.a_id] for t in val_items]) if val_items else None
    val_b = np.stack([inputs[t.b_id] for t in val_items]) if val_items else None
    val_tokens = [t.utterance.tokens for t in val_items]

    opt = OptimizerConfig(learning_rate=cfg.learning_rate)
    a_w, b_w = cfg.norm_weight_traj, cfg.norm_weight_lang
    n = len(train_items)

    history: list[dict] = []
    best = enc.copy()
    best_acc = -1.0

    total_epochs = cfg.phase1_epochs + cfg.phase2_epochs
    for epoch in range(total_epochs):
        phase = 1 if epoch < cfg.phase1_epochs else 2
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            phi_a = _encode_traj_batch_t(enc, stacked_a[idx])
            phi_b = _encode_traj_batch_t(enc, stacked_b[idx])
            psi = _encode_lang_batch_t(enc, [tokens[i] for i in idx])
            loss = total_loss(phi_a, phi_b, psi, a_w, b_w)
            if not np.isfinite(loss.data):
                raise RuntimeError(f"training diverged at epoch {epoch}")
            enc.traj.zero_grads()
            enc.lang.zero_grads()
            loss.backward()
            optimizer_step(enc.traj, _collect_grads(enc.traj), opt)
            if phase == 2:
                optimizer_step(enc.lang, _collect_grads(enc.lang), opt)
            batch_losses.append(float(loss.data))

        row = {
            "epoch": epoch,
            "phase": phase,
            "train_loss": float(np.mean(batch_losses)),
        }
        if val_items:
            row["val_loss"] = _np_total_loss(enc, val_a, val_b, val_tokens, a_w, b_w)
            row["val_accuracy"] = accuracy(enc, pool, val_items)
            if row["val_accuracy"] > best_acc:
                best_acc = row["val_accuracy"]
                best = enc.copy()
        history.append(row)

    if not val_items or total_epochs == 0:
        best = enc.copy()
    return best, history
