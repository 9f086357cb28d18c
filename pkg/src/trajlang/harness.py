"""Experiment orchestration: config files, seeded pipelines, CSV metrics.

Five subcommands cover the whole workflow: gen-data builds the trajectory
pool and labeled triplets, train-latent fits the encoder pair, improve runs
the iterative feedback loops, learn-reward runs the online reward-learning
experiments, and serve exposes everything over HTTP. Every pipeline draws
randomness from named streams fanned out of one master seed, so repeated
runs produce byte-identical outputs and adding a pipeline never disturbs
the streams of existing ones.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .improver import OBJECTIVE_MODES, improve_loop
from .langcat import Catalog, TripletDataset, build_triplets, default_epsilons
from .latent import EncoderPair, LatentConfig, accuracy, init_encoders, train_latent
from .rewardlab import (
    RewardLearnConfig,
    auc,
    best_of_pool,
    eval_cross_entropy,
    learn_reward_comparison,
    learn_reward_language,
)
from .simhuman import comparison_choice, language_feedback, make_simulated_human
from .worldsim import (
    FEATURE_NAMES,
    TrajectoryPool,
    WorldConfig,
    generate_pool,
    split_pool,
)

CONFIG_FORMAT_VERSION = 1
METRICS_HEADER = ("experiment", "method", "seed", "x", "metric", "value")

REWARD_METHODS = ("language", "comparison", "ablation-explicit", "ablation-implicit")
_ABLATION_LOSS = {"language": "full", "ablation-explicit": "explicit", "ablation-implicit": "implicit"}

POOL_FILE = "pool.json"
TRIPLET_FILE = "triplets.json"


# -- seed fan-out --


def stream_seed(master_seed: int, stream: str) -> np.random.SeedSequence:
    """Named substream of the master seed.

    The stream name is hashed so new pipelines get independent streams
    without renumbering existing ones.
    """
    digest = hashlib.sha256(stream.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([int(master_seed), *words])


def stream_rng(master_seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master_seed, stream))


def stream_int(master_seed: int, stream: str) -> int:
    """Plain integer sub-seed for APIs that take one."""
    return int(stream_seed(master_seed, stream).generate_state(1, np.uint64)[0])


# -- configuration --


@dataclass
class ImproveSettings:
    """Iterative-improvement experiment shape."""

    n_iterations: int = 15
    seeds: int = 100
    beta: float = 1.0
    weight_scale: float = 4.0
    objective: str = "embedding_scaled"

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be at least 1")
        if self.seeds < 1:
            raise ValueError("seeds must be at least 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.objective not in OBJECTIVE_MODES:
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass
class RewardSettings:
    """Online reward-learning experiment shape plus the simulated raters."""

    n_queries: int = 20
    # desk-scale calibration: a small net and few negatives keep the margins
    # of the learned scores from outrunning 20 queries' worth of evidence
    k: int = 2
    checkpoint_spacing: int = 5
    retrain_epochs: int = 30
    learning_rate: float = 5e-3
    hidden: tuple[int, ...] = (16, 16)
    seeds: int = 3
    eval_pair_count: int = 200
    beta: float = 1.0
    humans: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("seeds must be at least 1")
        if self.eval_pair_count < 1:
            raise ValueError("eval_pair_count must be at least 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)
        self.humans = [list(map(float, w)) for w in self.humans]
        for w in self.humans:
            if len(w) != len(FEATURE_NAMES):
                raise ValueError(f"human weight vector needs {len(FEATURE_NAMES)} entries, got {len(w)}")

    def learn_config(self, loss_mode: str = "full") -> RewardLearnConfig:
        return RewardLearnConfig(
            n_queries=self.n_queries,
            k=self.k,
            checkpoint_spacing=self.checkpoint_spacing,
            retrain_epochs=self.retrain_epochs,
            learning_rate=self.learning_rate,
            hidden=self.hidden,
            loss_mode=loss_mode,
        )


@dataclass
class ExperimentConfig:
    """Everything a run needs, mirrored field-for-field by the JSON file."""

    world: WorldConfig = field(default_factory=WorldConfig)
    pool_size: int = 320
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    triplet_pairs: dict = field(default_factory=lambda: {"train": 900, "val": 115, "test": 115})
    extra_paraphrase_files: list[str] = field(default_factory=list)
    latent: LatentConfig = field(default_factory=LatentConfig)
    improve: ImproveSettings = field(default_factory=ImproveSettings)
    reward: RewardSettings = field(default_factory=RewardSettings)
    out_dir: str = "runs"
    master_seed: int = 0

    def __post_init__(self):
        if self.pool_size < 10:
            raise ValueError("pool_size must be at least 10")
        self.split_ratios = tuple(float(r) for r in self.split_ratios)

    def to_doc(self) -> dict:
        return {
            "format_version": CONFIG_FORMAT_VERSION,
            "world": self.world.to_doc(),
            "pool_size": self.pool_size,
            "split_ratios": list(self.split_ratios),
            "triplet_pairs": dict(self.triplet_pairs),
            "extra_paraphrase_files": list(self.extra_paraphrase_files),
            "latent": self.latent.to_doc(),
            "improve": {
                "n_iterations": self.improve.n_iterations,
                "seeds": self.improve.seeds,
                "beta": self.improve.beta,
                "weight_scale": self.improve.weight_scale,
                "objective": self.improve.objective,
            },
            "reward": {
                "n_queries": self.reward.n_queries,
                "k": self.reward.k,
                "checkpoint_spacing": self.reward.checkpoint_spacing,
                "retrain_epochs": self.reward.retrain_epochs,
                "learning_rate": self.reward.learning_rate,
                "hidden": list(self.reward.hidden),
                "seeds": self.reward.seeds,
                "eval_pair_count": self.reward.eval_pair_count,
                "beta": self.reward.beta,
                "humans": [list(w) for w in self.reward.humans],
            },
            "out_dir": self.out_dir,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ExperimentConfig":
        if doc.get("format_version") != CONFIG_FORMAT_VERSION:
            raise ValueError(f"unsupported config format_version {doc.get('format_version')!r}")
        return cls(
            world=WorldConfig.from_doc(doc["world"]),
            pool_size=doc["pool_size"],
            split_ratios=tuple(doc["split_ratios"]),
            triplet_pairs=dict(doc["triplet_pairs"]),
            extra_paraphrase_files=list(doc.get("extra_paraphrase_files", [])),
            latent=LatentConfig.from_doc(doc["latent"]),
            improve=ImproveSettings(**doc["improve"]),
            reward=RewardSettings(**doc["reward"]),
            out_dir=doc["out_dir"],
            master_seed=doc["master_seed"],
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_doc(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_doc(json.loads(Path(path).read_text()))


def draw_weight_vector(rng: np.random.Generator, scale: float) -> np.ndarray:
    """Random reward direction of fixed magnitude."""
    while True:
        w = rng.normal(size=len(FEATURE_NAMES))
        norm = float(np.linalg.norm(w))
        if norm > 1e-12:
            return scale * w / norm


def default_config(master_seed: int = 0) -> ExperimentConfig:
    """Full-size defaults with the simulated raters drawn from the seed."""
    cfg = ExperimentConfig(master_seed=master_seed)
    rng = stream_rng(master_seed, "humans")
    cfg.reward.humans = [
        draw_weight_vector(rng, cfg.improve.weight_scale).tolist() for _ in range(3)
    ]
    return cfg


# -- metric tables --


class MetricsTable:
    """Append-only (experiment, method, seed, x, metric, value) rows."""

    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, experiment: str, method: str, seed: int, x: int, metric: str, value: float):
        self.rows.append((str(experiment), str(method), int(seed), int(x), str(metric), float(value)))

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRICS_HEADER)
            for experiment, method, seed, x, metric, value in self.rows:
                writer.writerow([experiment, method, seed, x, metric, repr(value)])

    @classmethod
    def read(cls, path) -> "MetricsTable":
        table = cls()
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != METRICS_HEADER:
                raise ValueError(f"unexpected metrics header {header!r}")
            for row in reader:
                experiment, method, seed, x, metric, value = row
                table.add(experiment, method, int(seed), int(x), metric, float(value))
        return table

    def select(self, **filters) -> list[tuple]:
        idx = {name: i for i, name in enumerate(METRICS_HEADER)}
        out = self.rows
        for name, want in filters.items():
            out = [r for r in out if r[idx[name]] == want]
        return out


# -- shared artifact plumbing --


def catalog_for(cfg: ExperimentConfig) -> Catalog:
    return Catalog(extra_paraphrase_files=cfg.extra_paraphrase_files or None)


def load_pool(out_dir) -> TrajectoryPool:
    path = Path(out_dir) / POOL_FILE
    if not path.exists():
        raise SystemExit(f"no trajectory pool at {path}; run gen-data first")
    return TrajectoryPool.load(path)


def load_triplets(out_dir, catalog: Catalog) -> TripletDataset:
    path = Path(out_dir) / TRIPLET_FILE
    if not path.exists():
        raise SystemExit(f"no triplet dataset at {path}; run gen-data first")
    return TripletDataset.load(path, catalog)


def encoder_path(out_dir, frozen_language: bool = False) -> Path:
    name = "encoder_frozen.json" if frozen_language else "encoder.json"
    return Path(out_dir) / name


def load_encoder(out_dir) -> EncoderPair:
    path = encoder_path(out_dir)
    if not path.exists():
        raise SystemExit(f"no encoder checkpoint at {path}; run train-latent first")
    return EncoderPair.load(path)


def sample_eval_pairs(pool: TrajectoryPool, count: int, rng: np.random.Generator):
    """Distinct-id pairs from the held-out split (whole pool if unsplit)."""
    ids = pool.split_ids("test") or [t.id for t in pool.trajectories]
    if len(ids) < 2:
        raise ValueError("need at least two held-out trajectories")
    pairs = []
    for _ in range(count):
        pick = rng.choice(len(ids), size=2, replace=False)
        pairs.append((ids[int(pick[0])], ids[int(pick[1])]))
    return pairs


# -- pipelines --


def cmd_gen_data(cfg: ExperimentConfig, out_dir) -> dict:
    """Build the pool, split it, and label triplets; writes both files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pool = generate_pool(cfg.world, cfg.pool_size, seed=stream_int(cfg.master_seed, "pool"))
    pool = split_pool(pool, cfg.split_ratios, seed=stream_int(cfg.master_seed, "split"))
    pool.save(out_dir / POOL_FILE)

    catalog = catalog_for(cfg)
    epsilons = default_epsilons(pool)
    dataset = build_triplets(
        pool, catalog, epsilons, cfg.triplet_pairs, seed=stream_int(cfg.master_seed, "triplets")
    )
    dataset.save(out_dir / TRIPLET_FILE)

    summary = {
        "pool_file": str(out_dir / POOL_FILE),
        "triplet_file": str(out_dir / TRIPLET_FILE),
        "pool_size": len(pool.trajectories),
        "pool_splits": {tag: len(pool.split_ids(tag)) for tag in ("train", "val", "test")},
        "triplet_splits": {tag: len(dataset.split(tag)) for tag in ("train", "val", "test")},
    }
    return summary


def cmd_train_latent(
    cfg: ExperimentConfig,
    out_dir,
    frozen_language: bool = False,
    resume=None,
) -> dict:
    """Fit the encoder pair and record per-epoch history plus final scores."""
    out_dir = Path(out_dir)
    catalog = catalog_for(cfg)
    pool = load_pool(out_dir)
    dataset = load_triplets(out_dir, catalog)

    lcfg = cfg.latent
    if frozen_language:
        # same budget, but every epoch stays in the frozen-language phase
        lcfg = LatentConfig.from_doc(lcfg.to_doc())
        lcfg.phase1_epochs = cfg.latent.phase1_epochs + cfg.latent.phase2_epochs
        lcfg.phase2_epochs = 0

    init = EncoderPair.load(resume) if resume else None
    enc, history = train_latent(pool, dataset, lcfg, init=init)

    method = "frozen" if frozen_language else "cofinetune"
    table = MetricsTable()
    for row in history:
        for metric in ("train_loss", "val_loss", "val_accuracy"):
            table.add("latent", method, lcfg.seed, row["epoch"], metric, row[metric])
        table.add("latent", method, lcfg.seed, row["epoch"], "phase", float(row["phase"]))
    total_epochs = lcfg.phase1_epochs + lcfg.phase2_epochs
    best_val = max((r["val_accuracy"] for r in history), default=0.0)
    table.add("latent", method, lcfg.seed, total_epochs, "best_val_accuracy", best_val)
    test_triplets = dataset.split("test")
    test_acc = accuracy(enc, pool, test_triplets) if test_triplets else 0.0
    table.add("latent", method, lcfg.seed, total_epochs, "test_accuracy", test_acc)

    ckpt = encoder_path(out_dir, frozen_language)
    enc.save(ckpt)
    metrics_path = out_dir / ("latent_history_frozen.csv" if frozen_language else "latent_history.csv")
    table.write(metrics_path)
    return {
        "encoder_file": str(ckpt),
        "metrics_file": str(metrics_path),
        "best_val_accuracy": best_val,
        "test_accuracy": test_acc,
        "method": method,
    }


def run_improvement_trials(
    cfg: ExperimentConfig, pool: TrajectoryPool, enc: EncoderPair, catalog: Catalog
) -> MetricsTable:
    """All improvement seeds; returns per-seed traces plus aggregate rows.

    Each seed draws its own true reward direction and start trajectory, so
    the aggregate curve averages over tasks, not just noise.
    """
    settings = cfg.improve
    ids = [t.id for t in pool.trajectories]
    feats = pool.feature_matrix(ids)

    table = MetricsTable()
    per_iter: list[list[float]] = [[] for _ in range(settings.n_iterations + 1)]
    optima = []
    for seed in range(settings.seeds):
        rng = stream_rng(cfg.master_seed, f"improve/{seed}")
        w = draw_weight_vector(rng, settings.weight_scale)
        human = make_simulated_human(pool, w, beta=settings.beta)
        start_id = ids[int(rng.integers(len(ids)))]

        def feedback(traj_id):
            return language_feedback(human, traj_id, pool, catalog, rng)

        trace = improve_loop(
            pool, start_id, feedback, settings.n_iterations, enc, w=w, mode=settings.objective
        )
        vals = feats @ w
        lo, hi = float(vals.min()), float(vals.max())
        span = hi - lo if hi > lo else 1.0
        rewards = trace.rewards()
        for it, r in enumerate(rewards):
            norm = (r - lo) / span
            per_iter[it].append(norm)
            table.add("improve", settings.objective, seed, it, "true_reward_norm", norm)
        optima.append((float(vals.max()) - lo) / span)

    for it, vals in enumerate(per_iter):
        arr = np.array(vals)
        table.add("improve", settings.objective, -1, it, "true_reward_norm_mean", float(arr.mean()))
        table.add("improve", settings.objective, -1, it, "true_reward_norm_std", float(arr.std()))
    table.add(
        "improve",
        settings.objective,
        -1,
        settings.n_iterations,
        "pool_optimum_norm",
        float(np.mean(optima)),
    )
    return table


def cmd_improve(cfg: ExperimentConfig, out_dir, method: str | None = None) -> dict:
    out_dir = Path(out_dir)
    if method is not None:
        cfg.improve.objective = method
        cfg.improve.__post_init__()
    pool = load_pool(out_dir)
    enc = load_encoder(out_dir)
    catalog = catalog_for(cfg)

    table = run_improvement_trials(cfg, pool, enc, catalog)
    metrics_path = out_dir / "improve.csv"
    table.write(metrics_path)

    means = {x: v for (_, _, _, x, m, v) in table.rows if m == "true_reward_norm_mean"}
    return {
        "metrics_file": str(metrics_path),
        "mean_initial": means[0],
        "mean_final": means[cfg.improve.n_iterations],
        "seeds": cfg.improve.seeds,
    }


def run_reward_experiment(
    cfg: ExperimentConfig,
    pool: TrajectoryPool,
    enc: EncoderPair,
    catalog: Catalog,
    method: str,
) -> MetricsTable:
    """All (human, seed) runs of one reward-learning method.

    The composite seed column encodes 100*human_index + seed so runs of
    different methods line up row-for-row. Evaluation pairs depend on the
    (human, seed) cell only, never on the method, keeping cross-entropy
    numbers directly comparable.
    """
    if method not in REWARD_METHODS:
        raise ValueError(f"unknown reward method {method!r}")
    settings = cfg.reward
    if not settings.humans:
        raise ValueError("config carries no simulated humans")
    test_ids = pool.split_ids("test") or None

    table = MetricsTable()
    for h_idx, w_list in enumerate(settings.humans):
        w = np.asarray(w_list, dtype=np.float64)
        for s_idx in range(settings.seeds):
            run_id = 100 * h_idx + s_idx
            eval_rng = stream_rng(cfg.master_seed, f"reward/eval/{h_idx}/{s_idx}")
            eval_pairs = sample_eval_pairs(pool, settings.eval_pair_count, eval_rng)

            def evaluator(model):
                return {
                    "cross_entropy": eval_cross_entropy(model, w, pool, eval_pairs, enc),
                    "best_reward": best_of_pool(model, pool, enc, w, ids=test_ids).normalized_reward,
                }

            rng = stream_rng(cfg.master_seed, f"reward/{method}/{h_idx}/{s_idx}")
            human = make_simulated_human(pool, w, beta=settings.beta)
            if method == "comparison":
                def choice(a_id, b_id):
                    return comparison_choice(human, a_id, b_id, pool, rng)

                _, curves = learn_reward_comparison(
                    pool, choice, enc, settings.learn_config(), evaluator, rng
                )
            else:
                def feedback(traj_id):
                    return language_feedback(human, traj_id, pool, catalog, rng)

                _, curves = learn_reward_language(
                    pool,
                    feedback,
                    enc,
                    catalog,
                    settings.learn_config(_ABLATION_LOSS[method]),
                    evaluator,
                    rng,
                )

            for name, curve in sorted(curves.items()):
                for x, value in curve.points:
                    table.add("reward", method, run_id, x, name, value)
                if len(curve.points) >= 2:
                    table.add(
                        "reward", method, run_id, curve.points[-1][0], f"auc_{name}", auc(curve)
                    )
    return table


def cmd_learn_reward(cfg: ExperimentConfig, out_dir, method: str) -> dict:
    out_dir = Path(out_dir)
    pool = load_pool(out_dir)
    enc = load_encoder(out_dir)
    catalog = catalog_for(cfg)

    table = run_reward_experiment(cfg, pool, enc, catalog, method)
    metrics_path = out_dir / f"reward_{method.replace('-', '_')}.csv"
    table.write(metrics_path)

    aucs = [v for (_, _, _, _, m, v) in table.rows if m == "auc_cross_entropy"]
    return {
        "metrics_file": str(metrics_path),
        "runs": len(aucs),
        "mean_auc_cross_entropy": float(np.mean(aucs)) if aucs else None,
    }


def cmd_serve(cfg: ExperimentConfig, out_dir, port: int):
    """Run the HTTP gateway on the trained artifacts until interrupted."""
    out_dir = Path(out_dir)
    pool = load_pool(out_dir)
    enc = load_encoder(out_dir)
    catalog = catalog_for(cfg)

    import uvicorn

    from .gateway import build_app
    app = build_app(cfg, pool, enc, catalog, session_log_dir=out_dir / "sessions")
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


# -- CLI --


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajlang",
        description="Preference-learning workbench: data, encoders, improvement, rewards, serving.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="JSON experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", type=Path, default=Path("runs"), help="workspace directory")

    p = sub.add_parser("gen-data", help="generate the trajectory pool and labeled triplets")
    common(p)

    p = sub.add_parser("train-latent", help="train the trajectory/language encoder pair")
    common(p)
    p.add_argument("--frozen-language", action="store_true", help="keep the language encoder frozen throughout")
    p.add_argument("--resume", type=Path, default=None, help="continue from an encoder checkpoint")

    p = sub.add_parser("improve", help="run the iterative improvement experiment")
    common(p)
    p.add_argument("--method", choices=OBJECTIVE_MODES, default=None, help="improvement objective")

    p = sub.add_parser("learn-reward", help="run one online reward-learning method")
    common(p)
    p.add_argument("--method", choices=REWARD_METHODS, default="language")

    p = sub.add_parser("serve", help="serve the feedback gateway over HTTP")
    common(p)
    p.add_argument("--port", type=int, default=8000)

    return parser


def load_config(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
    else:
        cfg = default_config(args.seed if args.seed is not None else 0)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args)

    if args.command == "gen-data":
        summary = cmd_gen_data(cfg, args.out)
        print(f"pool: {summary['pool_size']} trajectories {summary['pool_splits']}")
        print(f"triplets: {summary['triplet_splits']}")
        print(f"wrote {summary['pool_file']} and {summary['triplet_file']}")
    elif args.command == "train-latent":
        summary = cmd_train_latent(cfg, args.out, frozen_language=args.frozen_language, resume=args.resume)
        print(
            f"{summary['method']}: best_val_accuracy={summary['best_val_accuracy']:.4f} "
            f"test_accuracy={summary['test_accuracy']:.4f}"
        )
        print(f"wrote {summary['encoder_file']} and {summary['metrics_file']}")
    elif args.command == "improve":
        summary = cmd_improve(cfg, args.out, method=args.method)
        print(
            f"improvement over {summary['seeds']} seeds: "
            f"mean reward {summary['mean_initial']:.3f} -> {summary['mean_final']:.3f}"
        )
        print(f"wrote {summary['metrics_file']}")
    elif args.command == "learn-reward":
        summary = cmd_learn_reward(cfg, args.out, method=args.method)
        print(f"{args.method}: {summary['runs']} runs, mean CE AUC {summary['mean_auc_cross_entropy']:.4f}")
        print(f"wrote {summary['metrics_file']}")
    elif args.command == "serve":
        cmd_serve(cfg, args.out, args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
