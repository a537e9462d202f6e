import hashlib
import math

import numpy as np
import pytest

from fedblur.blur import discount_trace, unrolled_update
from fedblur.data import AgentShard, PartitionSpec, generate_synthetic, partition
from fedblur.errors import ConfigError
from fedblur.federation import (
    STAGE_BATCH,
    TrainConfig,
    aggregate,
    local_update,
    run_experiment,
    sample_cohort,
    stream,
    theorem6_diagnostics,
)
from fedblur.mechanism import DpConfig
from fedblur.nn import MlpModel

from conftest import vec


def make_shard(rng, n=20, dim=4, classes=3, agent_id=0):
    return AgentShard(agent_id, rng.normal(size=(n, dim)), rng.integers(0, classes, size=n), np.arange(n))


def make_model(seed=0, sizes=(4, 8, 3)):
    model = MlpModel(sizes)
    model.init_params(seed)
    return model


def quadratic_setup(rng, dim=5, n=12):
    """Linear model with squared loss: a quadratic in the parameters."""
    model = MlpModel((dim, 1), "identity", "mse")
    model.init_params(int(rng.integers(1000)))
    X = rng.normal(size=(n, dim))
    y = rng.normal(size=(n, 1)) * 3
    return model, AgentShard(0, X, y, np.arange(n))


def vanilla_local(model, w0, shard, cfg, round_index):
    """Reference local SGD written independently of local_update."""
    rng = stream(cfg.seed, round_index, shard.agent_id, STAGE_BATCH)
    w = w0.values.copy()
    for _ in range(cfg.local_steps):
        if cfg.batch_size is None:
            X, y = shard.X, shard.y
        else:
            idx = rng.integers(0, shard.n, size=cfg.batch_size)
            X, y = shard.X[idx], shard.y[idx]
        _, g = model.loss_and_grad(w0.like(w), X, y)
        w = w - cfg.local_lr * g.values
    return w - w0.values


def test_cohort_full_participation(rng):
    np.testing.assert_array_equal(sample_cohort(17, 1.0, rng), np.arange(17))


def test_cohort_mean_size():
    gen = np.random.default_rng(5)
    sizes = [sample_cohort(1000, 0.05, gen).size for _ in range(10_000)]
    assert 45 <= np.mean(sizes) <= 55


def test_cohort_deterministic():
    a = [sample_cohort(50, 0.2, stream(3, t, 0, 0)).tolist() for t in range(10)]
    b = [sample_cohort(50, 0.2, stream(3, t, 0, 0)).tolist() for t in range(10)]
    assert a == b


def test_aggregate_examples():
    w = vec([1.0, 2.0])
    np.testing.assert_array_equal(aggregate(w, [vec([0.5, -1.0])], 1.0).values, [1.5, 1.0])
    np.testing.assert_array_equal(aggregate(w, [vec([0.5, -1.0]), vec([-0.5, 1.0])], 1.0).values, w.values)
    np.testing.assert_allclose(aggregate(w, [vec([0.3, 0.1])] * 3, 1.0).values, [1.3, 2.1], rtol=1e-15)
    np.testing.assert_allclose(aggregate(w, [vec([1.0, 1.0])], 0.5).values, [1.5, 2.5])
    with pytest.raises(ConfigError):
        aggregate(w, [], 1.0)
    with pytest.raises(ConfigError):
        aggregate(w, [vec([1.0], [2.0])], 1.0)


def test_theorem6_diagnostics():
    u = vec([3.0, 4.0])
    assert theorem6_diagnostics(u, u, 10.0) == (1.0, 1.0)
    assert theorem6_diagnostics(u, vec([0.0, 4.0]), 2.0, 0.1) == (0.5, 0.8)
    assert theorem6_diagnostics(vec([0.0, 0.0]), vec([0.0, 0.0]), 1.0) == (1.0, 1.0)


def test_disabled_mechanisms_reproduce_vanilla(rng):
    model, shard = make_model(), make_shard(rng)
    cfg = TrainConfig(local_lr=0.1, local_steps=7, batch_size=5, lam=0.0, sparsity=0.0, seed=4)
    upd, _ = local_update(model, model.params, shard, cfg, math.inf, 0.0, 3, 2)
    assert upd.values.tobytes() == vanilla_local(model, model.params, shard, cfg, 2).tobytes()


def test_lambda_zero_bit_equal_with_finite_clip(rng):
    model, shard = make_model(1), make_shard(rng)
    cfg = TrainConfig(local_lr=0.2, local_steps=10, batch_size=4, lam=0.0, seed=1)
    _, _, stages = local_update(model, model.params, shard, cfg, 0.05, 0.0, 1, 1, trace=True)
    assert stages["trained"].values.tobytes() == vanilla_local(model, model.params, shard, cfg, 1).tobytes()


def test_single_step_quadratic(rng):
    model, shard = quadratic_setup(rng)
    cfg = TrainConfig(local_lr=0.05, local_steps=1, batch_size=None)
    upd, _ = local_update(model, model.params, shard, cfg, math.inf, 0.0, 1, 1)
    _, g = model.loss_and_grad(model.params, shard.X, shard.y)
    np.testing.assert_array_equal(upd.values, (model.params - g * 0.05).values - model.params.values)


def test_sparsity_reduces_preclip_norm(rng):
    model = make_model(2)
    for agent in range(5):
        shard = make_shard(rng, agent_id=agent)
        dense = TrainConfig(local_lr=0.1, local_steps=10, sparsity=0.0, seed=9)
        sparse = TrainConfig(local_lr=0.1, local_steps=10, sparsity=0.9, seed=9)
        _, m0 = local_update(model, model.params, shard, dense, 1.0, 0.5, 3, 1)
        _, m1 = local_update(model, model.params, shard, sparse, 1.0, 0.5, 3, 1)
        assert m1.preclip_norm <= m0.preclip_norm
        assert m1.raw_norm == m0.raw_norm
        assert 0 < m1.beta <= 1


@pytest.mark.parametrize("rate", [0.1, 0.5, 0.9])
def test_regularized_trajectory_matches_unrolled_form(rng, rate):
    model, shard = quadratic_setup(rng)
    lr = 0.05
    lam = rate / lr
    S = 1e-3
    w0 = model.params
    w = w0.copy()
    grads, dists, us = [], [], [np.zeros(w0.total_dim)]
    for _ in range(50):
        _, g = model.loss_and_grad(w, shard.X, shard.y)
        grads.append(g.values.copy())
        u = w.values - w0.values
        dists.append(np.linalg.norm(u))
        reg = lam * u if np.linalg.norm(u) > S else 0.0
        w = w.like(w.values - lr * (g.values + reg))
        us.append(w.values - w0.values)
    # one-step recursion on every active step
    for q in range(1, 50):
        assert dists[q] > S
        expected = (1 - lam * lr) * us[q] - lr * grads[q]
        np.testing.assert_allclose(us[q + 1], expected, rtol=1e-12, atol=1e-15)
    for Q in (1, 2, 10, 25, 50):
        closed = unrolled_update(grads[:Q], discount_trace(dists[:Q], S, lam, lr), lr)
        err = np.linalg.norm(closed - us[Q]) / np.linalg.norm(us[Q])
        assert err < 1e-10


def test_local_update_regularized_path_matches_manual(rng):
    model, shard = quadratic_setup(rng)
    cfg = TrainConfig(local_lr=0.05, local_steps=20, batch_size=None, lam=4.0)
    S = 0.05
    upd, _, stages = local_update(model, model.params, shard, cfg, S, 0.0, 1, 1, trace=True)
    w = model.params.values.copy()
    for _ in range(20):
        _, g = model.loss_and_grad(model.params.like(w), shard.X, shard.y)
        u = w - model.params.values
        step = g.values + (cfg.lam * u if np.linalg.norm(u) > S else 0.0)
        w = w - cfg.local_lr * step
    np.testing.assert_allclose(stages["trained"].values, w - model.params.values, rtol=1e-13, atol=1e-16)


def test_regularizer_suppresses_norm_on_quadratic():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        model, shard = quadratic_setup(rng)
        base = TrainConfig(local_lr=0.02, local_steps=30, batch_size=None, lam=0.0)
        reg = TrainConfig(local_lr=0.02, local_steps=30, batch_size=None, lam=float(rng.uniform(0.5, 20)))
        S = float(rng.uniform(0.01, 0.5))
        _, m0 = local_update(model, model.params, shard, base, S, 0.0, 1, 1)
        _, m1 = local_update(model, model.params, shard, reg, S, 0.0, 1, 1)
        assert m1.raw_norm <= m0.raw_norm


def _digest(pv):
    return hashlib.sha256(pv.values.tobytes()).hexdigest()


def test_ablation_changes_only_its_stage(rng):
    model, shard = make_model(3), make_shard(rng, n=30)
    stages_order = ["trained", "sparsified", "clipped", "noised"]

    def hashes(lam=0.0, c=0.0, S=math.inf, sigma=0.0):
        cfg = TrainConfig(local_lr=0.1, local_steps=8, batch_size=6, lam=lam, sparsity=c, seed=11)
        _, _, st = local_update(model, model.params, shard, cfg, S, sigma, 4, 3, trace=True)
        return {k: _digest(v) for k, v in st.items()}

    base = hashes()
    assert len(set(base.values())) == 1
    # stage -> (shared context, the one knob turned on)
    knobs = {"trained": (dict(S=0.05), dict(lam=2.0)), "sparsified": ({}, dict(c=0.7)),
             "clipped": ({}, dict(S=0.05)), "noised": (dict(S=10.0), dict(sigma=1.0))}
    for first_changed, (ctx, knob) in knobs.items():
        ref = hashes(**ctx)
        got = hashes(**ctx, **knob)
        k = stages_order.index(first_changed)
        for name in stages_order[:k]:
            assert got[name] == ref[name], (first_changed, name)
        assert got[first_changed] != ref[first_changed]


def test_uploads_respect_clip(rng):
    model = make_model(4)
    S = 0.02
    for agent in range(10):
        shard = make_shard(rng, agent_id=agent)
        cfg = TrainConfig(local_lr=0.3, local_steps=15, lam=0.5, sparsity=0.5, seed=agent)
        _, m, st = local_update(model, model.params, shard, cfg, S, 1.0, 5, 1, trace=True)
        assert st["clipped"].norm() <= S
        assert m.clipped == (m.preclip_norm > S)


def small_problem(seed=0, agents=6):
    data = generate_synthetic(3, 4, 30, 2.0, seed)
    shards = partition(data, PartitionSpec("dirichlet", 0.5, agents, seed))
    model = make_model(seed, (4, 6, 3))
    return model, shards, data


def test_zero_rounds_returns_initial_model():
    model, shards, _ = small_problem()
    res = run_experiment(model, shards, TrainConfig(rounds=0), DpConfig(clip=1.0, noise_multiplier=1.0))
    assert res.metrics == [] and res.ledger.rounds == 0
    np.testing.assert_array_equal(res.params.values, model.params.values)


def test_run_is_deterministic():
    model, shards, data = small_problem()
    cfg = TrainConfig(rounds=5, local_steps=5, lam=0.4, sparsity=0.5, seed=2)
    dp = DpConfig(clip=0.5, noise_multiplier=1.0, sample_prob=0.5)
    a = run_experiment(model, shards, cfg, dp, data)
    b = run_experiment(model, shards, cfg, dp, data)
    assert [r.to_dict() for r in a.metrics] == [r.to_dict() for r in b.metrics]
    assert a.params.values.tobytes() == b.params.values.tobytes()


def test_privacy_spend_is_data_independent():
    cfg = TrainConfig(rounds=6, local_steps=3, seed=5)
    dp = DpConfig(clip=0.5, noise_multiplier=1.3, sample_prob=0.4)
    m1, s1, _ = small_problem(0)
    m2, s2, _ = small_problem(1)
    e1 = [r.epsilon for r in run_experiment(m1, s1, cfg, dp).metrics]
    e2 = [r.epsilon for r in run_experiment(m2, s2, cfg, dp).metrics]
    assert e1 == e2


def test_empty_cohort_rounds_are_free():
    model, shards, _ = small_problem(agents=3)
    cfg = TrainConfig(rounds=30, local_steps=2, seed=0)
    res = run_experiment(model, shards, cfg, DpConfig(clip=0.5, noise_multiplier=1.0, sample_prob=0.05))
    skipped = [r for r in res.metrics if r.skipped]
    assert skipped
    assert res.ledger.rounds == 30 - len(skipped)
    for r in skipped:
        assert r.cohort_size == 0 and r.preclip_norms == []


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failed_agent_is_excluded():
    model, shards, _ = small_problem(agents=3)
    shards[1].X = shards[1].X * 1e300
    cfg = TrainConfig(rounds=2, local_steps=2, seed=0)
    res = run_experiment(model, shards, cfg, DpConfig(clip=0.5, noise_multiplier=0.0, sample_prob=1.0))
    assert all(r.failed_agents == [1] for r in res.metrics)
    assert all(len(r.preclip_norms) == 2 for r in res.metrics)
    assert np.all(np.isfinite(res.params.values))


def test_run_validates_inputs():
    model, shards, _ = small_problem()
    with pytest.raises(ConfigError):
        run_experiment(make_model(0, (5, 3)), shards, TrainConfig(rounds=1), DpConfig(clip=1, noise_multiplier=0))
    with pytest.raises(ConfigError):
        TrainConfig(local_lr=1.0, lam=2.0)


def test_round_metric_ranges():
    model, shards, data = small_problem()
    cfg = TrainConfig(rounds=4, local_steps=5, lam=0.4, sparsity=0.7, seed=1)
    res = run_experiment(model, shards, cfg, DpConfig(clip=0.1, noise_multiplier=0.5, sample_prob=0.8), data)
    for r in res.metrics:
        if r.skipped:
            continue
        assert 0 <= r.clip_fraction <= 1
        assert 0 < r.alpha_bar <= 1
        assert all(0 <= b <= 1 for b in r.betas)
        assert r.epsilon > 0
    eps = [r.epsilon for r in res.metrics]
    assert eps == sorted(eps)


def test_centralized_equivalence_minibatch():
    data = generate_synthetic(3, 4, 20, 2.0, 0)
    shards = partition(data, PartitionSpec("iid", num_agents=1))
    model = make_model(0, (4, 6, 3))
    cfg = TrainConfig(local_lr=0.1, local_steps=5, rounds=6, batch_size=8, seed=3)
    res = run_experiment(model, shards, cfg, DpConfig(clip=1e12, noise_multiplier=0.0, sample_prob=1.0))
    w = model.params.values.copy()
    for t, row in enumerate(res.metrics, start=1):
        w = w + vanilla_local(model, model.params.like(w), shards[0], cfg, t)
        ref = model.loss_value(model.params.like(w), shards[0].X, shards[0].y)
        assert abs(row.train_loss - ref) <= 1e-10 * max(1.0, abs(ref))
