"""End-to-end acceptance runs at the shipped default configuration.

Each test is one deliverable-level criterion: gradient correctness of every
loss, the three desk-scale experiments (latent alignment, iterative
improvement, online reward learning plus its loss ablation), oracle
equivalences for the core primitives, byte-identical reproducibility of the
metric pipelines, and the gateway session contract over a real socket.

These run the real pipelines at their real sizes, so the module takes
several minutes; everything is deterministic.
"""

import collections
import json
import statistics
import threading
import time

import numpy as np
import pytest
from scipy import stats

from trajlang.diffcore import ParamSet, backward, finite_diff_check
from trajlang.gateway import build_app, replay_session
from trajlang.harness import (
    ExperimentConfig,
    ImproveSettings,
    RewardSettings,
    catalog_for,
    cmd_gen_data,
    cmd_improve,
    cmd_learn_reward,
    cmd_train_latent,
    default_config,
    load_encoder,
    load_pool,
    load_triplets,
    run_reward_experiment,
)
from trajlang.improver import improve_step, improvement_objective
from trajlang.langcat import Catalog, Utterance
from trajlang.latent import (
    LatentConfig,
    accuracy,
    align_loss,
    encode_language,
    encode_trajectory,
    init_encoders,
    norm_loss,
    total_loss,
    train_latent,
)
from trajlang.rewardlab import (
    LanguageQuery,
    LearningCurve,
    auc,
    bt_prob,
    explicit_loss,
    implicit_loss,
    init_reward_model,
    reward_total_loss,
)
from trajlang.simhuman import comparison_choice, language_feedback, make_simulated_human
from trajlang.worldsim import WorldConfig, generate_pool, split_pool

# ---------------------------------------------------------------------------
# shared artifacts: one full default-config data + encoder build


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    cfg = default_config(0)
    cmd_gen_data(cfg, out)
    started = time.monotonic()
    summary = cmd_train_latent(cfg, out)
    return {
        "cfg": cfg,
        "out": out,
        "latent_summary": summary,
        "latent_seconds": time.monotonic() - started,
    }


@pytest.fixture(scope="module")
def reward_tables(workspace):
    """All four reward-learning methods on the shared artifacts."""
    cfg = workspace["cfg"]
    pool = load_pool(workspace["out"])
    enc = load_encoder(workspace["out"])
    catalog = catalog_for(cfg)
    tables, seconds = {}, {}
    for method in ("language", "comparison", "ablation-explicit", "ablation-implicit"):
        started = time.monotonic()
        tables[method] = run_reward_experiment(cfg, pool, enc, catalog, method)
        seconds[method] = time.monotonic() - started
    return {"tables": tables, "seconds": seconds}


def curve_aucs(table, metric):
    return {run: v for (_, _, run, _, m, v) in table.rows if m == f"auc_{metric}"}


def final_values(table, metric):
    per = collections.defaultdict(dict)
    for (_, _, run, x, m, v) in table.rows:
        if m == metric:
            per[run][x] = v
    return {run: series[max(series)] for run, series in per.items()}


# ---------------------------------------------------------------------------
# criterion: analytic gradients of all six losses match central differences


def _random_latent_instance(rng, need_smooth_norms):
    d_z = int(rng.integers(2, 9))
    n = int(rng.integers(1, 4))
    ps = ParamSet()

    def sample(name):
        while True:
            x = rng.normal(size=(n, d_z)) * rng.uniform(0.3, 1.5)
            norms = np.linalg.norm(x, axis=1)
            if not need_smooth_norms:
                return ps.add(name, x)
            # stay away from the hinge kink at norm 1 and the cusp at 0
            if np.all(np.abs(norms - 1.0) > 0.05) and np.all(norms > 0.1):
                return ps.add(name, x)

    sample("phi_a"), sample("phi_b"), sample("psi")
    return ps


def _check(report):
    assert report.passed, report.failure
    assert report.max_relative_error < 1e-4, report.per_param_error


def _reward_instance(rng):
    d_z = int(rng.integers(2, 9))
    model = init_reward_model(d_z, (8,), rng)
    k = int(rng.integers(1, 4))
    queries = []
    for i in range(int(rng.integers(1, 4))):
        u = Utterance(feature=1, direction=1, text=f"u{i}", tokens=(1,))
        negs = tuple(
            Utterance(feature=0, direction=1, text=f"n{i}{j}", tokens=(2,)) for j in range(k)
        )
        queries.append(
            LanguageQuery(
                traj_id=f"t{i}",
                utterance=u,
                phi=rng.normal(size=d_z),
                psi=rng.normal(size=d_z) * 0.5,
                negatives=negs,
                psi_negatives=tuple(rng.normal(size=d_z) * 0.5 for _ in range(k)),
            )
        )
    return model, queries, k


def _check_model_grads(model, loss_fn):
    """Output bias cancels in every score difference: its true gradient is
    exactly zero, which central differences cannot resolve against the
    relative-error floor. Assert the zero analytically, difference the rest."""
    loss = loss_fn()
    grads = backward(loss, model.ps)
    bias_name = f"r_b{len(model.arch) - 2}"
    assert np.allclose(grads[bias_name], 0.0, atol=1e-12)

    subset = ParamSet()
    for name, tensor in model.ps.params.items():
        if name != bias_name:
            subset.params[name] = tensor
    _check(finite_diff_check(lambda _: loss_fn(), subset))


def test_gradient_suite_all_losses_match_finite_differences():
    rng = np.random.default_rng(2024)
    started = time.monotonic()

    for _ in range(50):
        ps = _random_latent_instance(rng, need_smooth_norms=False)
        _check(finite_diff_check(lambda p: align_loss(*p.params.values()), ps))

    for _ in range(50):
        a, b = float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.2, 2.0))
        ps = _random_latent_instance(rng, need_smooth_norms=True)
        _check(finite_diff_check(lambda p: norm_loss(*p.params.values(), a, b), ps))

    for _ in range(50):
        a, b = float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.2, 2.0))
        ps = _random_latent_instance(rng, need_smooth_norms=True)
        _check(finite_diff_check(lambda p: total_loss(*p.params.values(), a, b), ps))

    for _ in range(50):
        model, queries, _k = _reward_instance(rng)
        _check_model_grads(model, lambda: explicit_loss(model, queries))

    for _ in range(50):
        model, queries, k = _reward_instance(rng)
        _check_model_grads(model, lambda: implicit_loss(model, queries, k))

    for _ in range(50):
        model, queries, k = _reward_instance(rng)
        _check_model_grads(model, lambda: reward_total_loss(model, queries, k))

    assert time.monotonic() - started < 60.0


# ---------------------------------------------------------------------------
# criterion: latent alignment quality at the default desk scale


def test_latent_alignment_desk_scale(workspace):
    cfg = workspace["cfg"]
    out = workspace["out"]
    pool = load_pool(out)
    catalog = catalog_for(cfg)
    dataset = load_triplets(out, catalog)
    test_triplets = dataset.split("test")

    test_accs, val_margins, random_accs, per_seed_seconds = [], [], [], []
    for seed in (0, 1, 2):
        lcfg = LatentConfig.from_doc(cfg.latent.to_doc())
        lcfg.seed = seed
        if seed == 0:
            # the shared fixture already trained this seed
            summary = workspace["latent_summary"]
            test_accs.append(summary["test_accuracy"])
            best_val = summary["best_val_accuracy"]
            per_seed_seconds.append(workspace["latent_seconds"])
        else:
            started = time.monotonic()
            enc, history = train_latent(pool, dataset, lcfg)
            per_seed_seconds.append(time.monotonic() - started)
            test_accs.append(accuracy(enc, pool, test_triplets))
            best_val = max(r["val_accuracy"] for r in history)

        frozen_cfg = LatentConfig.from_doc(lcfg.to_doc())
        frozen_cfg.phase1_epochs = lcfg.phase1_epochs + lcfg.phase2_epochs
        frozen_cfg.phase2_epochs = 0
        _, frozen_history = train_latent(pool, dataset, frozen_cfg)
        frozen_val = max(r["val_accuracy"] for r in frozen_history)
        val_margins.append(best_val - frozen_val)

        random_accs.append(accuracy(init_encoders(lcfg, len(catalog.vocab)), pool, test_triplets))

    assert sum(acc >= 0.80 for acc in test_accs) >= 2, test_accs
    assert all(margin > 0 for margin in val_margins), val_margins
    assert abs(statistics.mean(random_accs) - 0.5) <= 0.05, random_accs
    assert max(per_seed_seconds) < 600.0, per_seed_seconds


# ---------------------------------------------------------------------------
# criterion: iterative improvement curve shape over 100 seeds


def test_iterative_improvement_curve(workspace):
    cfg = workspace["cfg"]
    assert cfg.improve.n_iterations == 15
    assert cfg.improve.seeds == 100

    started = time.monotonic()
    cmd_improve(cfg, workspace["out"])
    elapsed = time.monotonic() - started

    rows = (workspace["out"] / "improve.csv").read_text().splitlines()[1:]
    mean, std, optimum = {}, {}, None
    for line in rows:
        _, _, seed, x, metric, value = line.split(",")
        if metric == "true_reward_norm_mean":
            mean[int(float(x))] = float(value)
        elif metric == "true_reward_norm_std":
            std[int(float(x))] = float(value)
        elif metric == "pool_optimum_norm":
            optimum = float(value)

    assert mean[5] - mean[0] >= 0.1, (mean[0], mean[5])
    assert all(mean[i + 1] >= mean[i] - std[i] for i in range(5)), mean
    assert mean[max(mean)] <= optimum
    assert elapsed < 300.0


# ---------------------------------------------------------------------------
# criterion: language reward learning vs the pairwise-comparison baseline


def test_language_reward_learning_beats_comparison_majority(reward_tables):
    lang, comp = reward_tables["tables"]["language"], reward_tables["tables"]["comparison"]
    ce_l, ce_c = curve_aucs(lang, "cross_entropy"), curve_aucs(comp, "cross_entropy")
    br_l, br_c = curve_aucs(lang, "best_reward"), curve_aucs(comp, "best_reward")
    runs = sorted(ce_l)
    assert len(runs) == 9  # 3 simulated raters x 3 seeds

    ce_wins = sum(ce_l[r] <= ce_c[r] for r in runs)
    br_wins = sum(br_l[r] >= br_c[r] for r in runs)
    assert ce_wins > len(runs) / 2, (ce_wins, len(runs))
    assert br_wins > len(runs) / 2, (br_wins, len(runs))
    assert reward_tables["seconds"]["language"] + reward_tables["seconds"]["comparison"] < 900.0


def test_loss_ablation_full_beats_single_terms(reward_tables):
    def mean_final(method):
        return statistics.mean(
            final_values(reward_tables["tables"][method], "cross_entropy").values()
        )

    full = mean_final("language")
    explicit_only = mean_final("ablation-explicit")
    implicit_only = mean_final("ablation-implicit")
    assert full <= explicit_only, (full, explicit_only)
    assert full <= implicit_only, (full, implicit_only)


# ---------------------------------------------------------------------------
# criterion: oracle equivalences for the core primitives


def test_improve_step_matches_exhaustive_scoring():
    world = WorldConfig()
    pool = generate_pool(world, 100, seed=900)
    catalog = Catalog()
    enc = init_encoders(LatentConfig(d_z=6, hidden=(12,), seed=901), len(catalog.vocab))
    rng = np.random.default_rng(902)

    for _ in range(5):
        current = pool.trajectories[int(rng.integers(len(pool.trajectories)))].id
        utterance = catalog.all_utterances()[int(rng.integers(len(catalog.all_utterances())))]
        got_id, got_val = improve_step(pool, current, utterance, enc)

        psi = encode_language(enc, utterance.tokens)
        phi_0 = encode_trajectory(enc, pool.by_id[current])
        best_id, best_val = None, -np.inf
        for traj in sorted(pool.trajectories, key=lambda t: t.id):
            val = improvement_objective(encode_trajectory(enc, traj), phi_0, psi)
            if val > best_val:
                best_id, best_val = traj.id, val
        assert (got_id, got_val) == (best_id, pytest.approx(best_val))


def test_choice_probability_identities():
    assert bt_prob(3.2, 3.2) == pytest.approx(0.5)
    assert bt_prob(np.log(3.0), 0.0) == pytest.approx(0.75)
    rng = np.random.default_rng(903)
    for _ in range(100):
        ra, rb = rng.normal(scale=5, size=2)
        assert bt_prob(ra, rb) + bt_prob(rb, ra) == pytest.approx(1.0, abs=1e-12)


def test_auc_hand_cases():
    def curve(points):
        c = LearningCurve(metric="m")
        for x, v in points:
            c.add(x, v)
        return c

    assert auc(curve([(0, 0.37), (10, 0.37)])) == pytest.approx(0.37)
    assert auc(curve([(0, 0.0), (4, 1.0)])) == pytest.approx(0.5)
    assert auc(curve([(0, 0.0), (5, 0.4), (10, 0.8), (20, 1.0)])) == pytest.approx(0.65)
    with pytest.raises(ValueError):
        auc(curve([(0, 1.0)]))


def test_simulated_rater_distributions_chi_squared():
    world = WorldConfig()
    pool = generate_pool(world, 60, seed=904)
    catalog = Catalog()
    w = np.array([1.2, -0.8, 0.5, 1.6])
    human = make_simulated_human(pool, w)
    rng = np.random.default_rng(905)
    draws = 10_000

    theta_star = pool.features_of(human.optimal_id)
    traj_id = next(
        t.id for t in pool.trajectories
        if np.count_nonzero(theta_star - pool.features_of(t.id)) >= 3
    )
    gap = theta_star - pool.features_of(traj_id)
    support = np.flatnonzero(gap != 0.0)
    v = (human.w * gap)[support]
    expected = np.exp(v - v.max())
    expected = expected / expected.sum() * draws

    counts = collections.Counter(
        language_feedback(human, traj_id, pool, catalog, rng).feature for _ in range(draws)
    )
    observed = np.array([counts.get(int(f), 0) for f in support], dtype=float)
    assert stats.chisquare(observed, expected).pvalue > 0.01

    id_a, id_b = pool.trajectories[0].id, pool.trajectories[1].id
    score = lambda tid: float(w @ pool.features_of(tid))
    gap_ab = score(id_a) - score(id_b)
    p_a = 1.0 / (1.0 + np.exp(-gap_ab))
    picks_a = sum(comparison_choice(human, id_a, id_b, pool, rng) == id_a for _ in range(draws))
    expected_ab = np.array([p_a, 1.0 - p_a]) * draws
    assert stats.chisquare([picks_a, draws - picks_a], expected_ab).pvalue > 0.01


# ---------------------------------------------------------------------------
# criterion: byte-identical metric tables on re-run


def _small_config() -> ExperimentConfig:
    return ExperimentConfig(
        pool_size=32,
        triplet_pairs={"train": 40, "val": 6, "test": 6},
        latent=LatentConfig(d_z=6, hidden=(12,), phase1_epochs=2, phase2_epochs=2, batch_size=16, seed=5),
        improve=ImproveSettings(n_iterations=3, seeds=4),
        reward=RewardSettings(
            n_queries=4,
            k=2,
            checkpoint_spacing=2,
            retrain_epochs=2,
            hidden=(8,),
            seeds=1,
            eval_pair_count=8,
            humans=[[1.0, -1.0, 0.5, 2.0]],
        ),
        master_seed=17,
    )


def test_metric_pipelines_reproduce_byte_identically(tmp_path):
    cfg = _small_config()
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        cmd_gen_data(cfg, out)
        cmd_train_latent(cfg, out)
        cmd_improve(cfg, out)
        cmd_learn_reward(cfg, out, "language")
        cmd_learn_reward(cfg, out, "comparison")
        outputs.append(out)

    names = [
        "pool.json",
        "triplets.json",
        "encoder.json",
        "latent_history.csv",
        "improve.csv",
        "reward_language.csv",
        "reward_comparison.csv",
    ]
    for name in names:
        a, b = (out / name for out in outputs)
        assert a.read_bytes() == b.read_bytes(), f"{name} differs between identical runs"


# ---------------------------------------------------------------------------
# criterion: gateway session contract over a real socket


def test_gateway_contract_over_http(tmp_path):
    import httpx
    import uvicorn

    catalog = Catalog()
    world = WorldConfig()
    pool = split_pool(generate_pool(world, 24, seed=70), (0.8, 0.1, 0.1), seed=71)
    enc = init_encoders(LatentConfig(d_z=6, hidden=(12,), seed=72), len(catalog.vocab))
    cfg = _small_config()
    app = build_app(cfg, pool, enc, catalog, session_log_dir=tmp_path / "logs")

    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        for _ in range(200):
            if server.started:
                break
            time.sleep(0.02)
        assert server.started
        port = server.servers[0].sockets[0].getsockname()[1]
        texts = [u.text for u in catalog.all_utterances()]

        with httpx.Client(base_url=f"http://127.0.0.1:{port}", timeout=30.0) as client:
            # improve: feedback -> new trajectory -> satisfied
            sid = client.post("/sessions", json={"mode": "improve"}).json()["session_id"]
            out = client.post(f"/sessions/{sid}/feedback", json={"text": texts[0]}).json()
            assert out["iteration"] == 1 and len(out["payload"]["frame_sets"]) == 1
            out = client.post(f"/sessions/{sid}/feedback", json={"satisfied": True}).json()
            assert out["status"] == "ended"

            # learn-comparison: choices advance and cap at two shown trajectories
            sid = client.post("/sessions", json={"mode": "learn-comparison"}).json()["session_id"]
            for i, choice in enumerate(("a", "b", "a"), start=1):
                out = client.post(f"/sessions/{sid}/feedback", json={"choice": choice}).json()
                assert out["iteration"] == i and len(out["payload"]["frame_sets"]) == 2

            # learn-language: 20 feedbacks, rating checkpoints at 5/10/15/20
            sid = client.post("/sessions", json={"mode": "learn-language"}).json()["session_id"]
            checkpoints = []
            for i in range(1, 21):
                out = client.post(
                    f"/sessions/{sid}/feedback", json={"text": texts[i % len(texts)]}
                ).json()
                if out.get("rating_request"):
                    checkpoints.append(out["rating_request"]["checkpoint"])
                    rating = client.post(f"/sessions/{sid}/rating", json={"rating": 1 + i // 5})
                    assert rating.status_code == 200
            assert checkpoints == [5, 10, 15, 20]
            assert out["status"] == "ended"

            view = client.get(f"/sessions/{sid}").json()
            metrics = client.get(f"/sessions/{sid}/metrics").json()

        replayed = replay_session(app.state.gateway.assets, view["events"])
        assert replayed.view() == view
        assert metrics["iterations"] == 20
        assert len(metrics["timings"]) == 20
        assert [r["rating"] for r in metrics["ratings"]] == [2, 3, 4, 5]
    finally:
        server.should_exit = True
        thread.join(timeout=5)
