"""DP-FedAvg server loop with regularized, sparsified local updates.

One round: sample a cohort by independent coin flips, let every cohort member
run ``local_steps`` of regularized SGD from the frozen global model, sparsify
the resulting update by utility cost, clip it to ``S``, add its share of the
Gaussian noise, and average the uploads into the global model.

Random streams are keyed by ``(seed, round, agent, stage)`` so agent order or
parallel scheduling cannot change results, and switching one knob on never
perturbs the randomness another stage sees.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .accountant import PrivacyLedger, calibrate_sigma
from .blur import blur_gradient, check_lambda, discount_trace
from .data import AgentShard, Dataset
from .errors import AgentFailure, ConfigError
from .lus import SparsityConfig, build_mask, sparsify, utility_cost
from .mechanism import DpConfig, add_gaussian_noise, clip
from .nn import MlpModel
from .params import ParamVector

log = logging.getLogger(__name__)

STAGE_COHORT, STAGE_BATCH, STAGE_NOISE = 0, 1, 2


def stream(seed: int, round_index: int, agent_id: int, stage: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(round_index), int(agent_id), int(stage)]))


@dataclass(frozen=True)
class TrainConfig:
    local_lr: float = 0.1
    server_lr: float = 1.0
    local_steps: int = 30
    rounds: int = 100
    batch_size: Optional[int] = 32
    lam: float = 0.0
    sparsity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.local_lr > 0 or not self.server_lr > 0:
            raise ConfigError("learning rates must be > 0")
        if self.local_steps < 1:
            raise ConfigError("local_steps must be >= 1")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 (or null for full batch)")
        check_lambda(self.lam, self.local_lr)
        SparsityConfig(self.sparsity)


@dataclass
class AgentMetrics:
    agent_id: int
    raw_norm: float
    preclip_norm: float
    beta: float
    alpha: float
    clipped: bool
    active_fraction: float
    first_step_discount: float
    local_loss: float


@dataclass
class RoundMetrics:
    round: int
    cohort_size: int
    skipped: bool = False
    failed_agents: list = field(default_factory=list)
    preclip_norms: list = field(default_factory=list)
    raw_norms: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    clip_fraction: Optional[float] = None
    alpha_bar: Optional[float] = None
    mean_beta: Optional[float] = None
    train_loss: Optional[float] = None
    test_accuracy: Optional[float] = None
    epsilon: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    params: ParamVector
    metrics: list
    ledger: PrivacyLedger
    sigma: float


def sample_cohort(num_agents: int, sample_prob: float, rng) -> np.ndarray:
    """Agent ids included independently with probability ``sample_prob``."""
    if not 0 < sample_prob <= 1:
        raise ConfigError("sample_prob must lie in (0, 1]")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return np.flatnonzero(gen.random(num_agents) < sample_prob)


def theorem6_diagnostics(update: ParamVector, sparse_update: ParamVector, S: float,
                         local_lr: Optional[float] = None) -> tuple[float, float]:
    """Clip attenuation ``alpha = min(1, S/||sparse||)`` and norm ratio ``beta = ||sparse||/||update||``.

    ``local_lr`` is accepted but unused: both ratios are taken on realized
    updates, which already carry the learning rate and the discount factors.
    """
    raw, kept = update.norm(), sparse_update.norm()
    if raw == 0:
        log.info("zero-norm local update; beta set to 1")
        beta = 1.0
    else:
        beta = kept / raw
    alpha = 1.0 if kept <= S else S / kept
    return alpha, beta


def _batch_indices(rng, n: int, batch_size: Optional[int]):
    if batch_size is None:
        return None
    return rng.integers(0, n, size=batch_size)


def local_update(model: MlpModel, global_w: ParamVector, shard: AgentShard, cfg: TrainConfig,
                 clip_threshold: float, sigma: float, cohort_size: int, round_index: int,
                 trace: bool = False):
    """Regularized local training, sparsification, clipping and noising for one agent.

    Returns ``(noised_update, AgentMetrics)``, plus a dict of every stage's
    output when ``trace`` is true. Raises :class:`AgentFailure` if the local
    loss or weights stop being finite.
    """
    if shard.n == 0:
        raise ConfigError(f"agent {shard.agent_id} has no data")
    shard_X, shard_y = model.validate_data(shard.X, shard.y)
    batch_rng = stream(cfg.seed, round_index, shard.agent_id, STAGE_BATCH)
    w = global_w.copy()
    step_norms = []
    loss = math.nan
    for _ in range(cfg.local_steps):
        idx = _batch_indices(batch_rng, shard.n, cfg.batch_size)
        X, y = (shard_X, shard_y) if idx is None else (shard_X[idx], shard_y[idx])
        loss, grad = model.loss_and_grad(w, X, y, validate=False)
        if not math.isfinite(loss) or not grad.is_finite():
            raise AgentFailure(f"agent {shard.agent_id}: non-finite local loss")
        if cfg.lam > 0:
            step_norms.append((w - global_w).norm())
            grad = grad + blur_gradient(w, global_w, clip_threshold, cfg.lam)
        w = w - grad * cfg.local_lr
    delta = w - global_w
    if not delta.is_finite():
        raise AgentFailure(f"agent {shard.agent_id}: non-finite local update")

    if cfg.sparsity > 0:
        _, full_grad = model.loss_and_grad(w, shard.X, shard.y)
        mask = build_mask(utility_cost(full_grad, delta), SparsityConfig(cfg.sparsity))
        sparse = sparsify(delta, mask)
    else:
        sparse = delta
    clipped, _ = clip(sparse, clip_threshold)
    noise_rng = stream(cfg.seed, round_index, shard.agent_id, STAGE_NOISE)
    noised = add_gaussian_noise(clipped, clip_threshold, sigma, cohort_size, noise_rng)

    alpha, beta = theorem6_diagnostics(delta, sparse, clip_threshold, cfg.local_lr)
    if step_norms:
        gammas = discount_trace(step_norms, clip_threshold, cfg.lam, cfg.local_lr)
        active = float(np.mean([n > clip_threshold for n in step_norms]))
        first = gammas[0]
    else:
        active, first = 0.0, 1.0
    preclip = sparse.norm()
    metrics = AgentMetrics(
        agent_id=shard.agent_id,
        raw_norm=delta.norm(),
        preclip_norm=preclip,
        beta=beta,
        alpha=alpha,
        clipped=bool(preclip > clip_threshold),
        active_fraction=active,
        first_step_discount=first,
        local_loss=float(loss),
    )
    if trace:
        stages = {"trained": delta, "sparsified": sparse, "clipped": clipped, "noised": noised}
        return noised, metrics, stages
    return noised, metrics


def aggregate(global_w: ParamVector, updates: list, server_lr: float) -> ParamVector:
    """``global_w + server_lr * mean(updates)`` with uniform weights."""
    if not updates:
        raise ConfigError("nothing to aggregate")
    total = np.zeros(global_w.total_dim)
    for u in updates:
        global_w.check_layout(u)
        total += u.values
    return global_w.like(global_w.values + server_lr * (total / len(updates)))


def resolve_sigma(dp: DpConfig, rounds: int, num_agents: int) -> float:
    if dp.noise_multiplier is not None:
        return float(dp.noise_multiplier)
    delta = dp.delta if dp.delta is not None else 1.0 / num_agents
    return calibrate_sigma(dp.target_epsilon, delta, max(rounds, 1), dp.sample_prob).sigma


def run_experiment(model: MlpModel, shards: list, cfg: TrainConfig, dp: DpConfig,
                   test: Optional[Dataset] = None, on_round=None) -> ExperimentResult:
    """Run ``cfg.rounds`` rounds starting from ``model.params``.

    ``on_round`` is called with each :class:`RoundMetrics` as soon as it is
    available (the CLI streams rows to disk this way).
    """
    if not shards:
        raise ConfigError("no agents")
    for shard in shards:
        if shard.n == 0:
            raise ConfigError(f"agent {shard.agent_id} has no data")
        if shard.X.shape[1] != model.n_inputs:
            raise ConfigError(f"agent {shard.agent_id} feature dim {shard.X.shape[1]} != model input {model.n_inputs}")
    if sorted(s.agent_id for s in shards) != list(range(len(shards))):
        raise ConfigError("agent ids must be 0..N-1")
    shards = sorted(shards, key=lambda s: s.agent_id)
    N = len(shards)
    sigma = resolve_sigma(dp, cfg.rounds, N)
    delta = dp.delta if dp.delta is not None else 1.0 / N
    ledger = PrivacyLedger(delta)
    train_X = np.concatenate([s.X for s in shards])
    train_y = np.concatenate([s.y for s in shards])

    w = model.params.copy()
    series = []
    for t in range(1, cfg.rounds + 1):
        cohort = sample_cohort(N, dp.sample_prob, stream(cfg.seed, t, 0, STAGE_COHORT))
        row = RoundMetrics(round=t, cohort_size=int(cohort.size))
        if cohort.size == 0:
            log.info("round %d: empty cohort, skipped", t)
            row.skipped = True
        else:
            uploads, agents = [], []
            for a in cohort:
                try:
                    upd, m = local_update(model, w, shards[a], cfg, dp.clip, sigma, int(cohort.size), t)
                except AgentFailure as exc:
                    log.warning("round %d: %s", t, exc)
                    row.failed_agents.append(int(a))
                    continue
                uploads.append(upd)
                agents.append(m)
            ledger.record(dp.sample_prob, sigma)
            if uploads:
                w = aggregate(w, uploads, cfg.server_lr)
                row.preclip_norms = [m.preclip_norm for m in agents]
                row.raw_norms = [m.raw_norm for m in agents]
                row.betas = [m.beta for m in agents]
                row.clip_fraction = float(np.mean([m.clipped for m in agents]))
                row.alpha_bar = float(np.mean([m.alpha for m in agents]))
                row.mean_beta = float(np.mean(row.betas))
        loss = model.loss_value(w, train_X, train_y)
        row.train_loss = loss if math.isfinite(loss) else None
        if test is not None and model.loss == "cross_entropy":
            row.test_accuracy = model.accuracy(test.X, test.y, w)
        if ledger.rounds:
            eps = ledger.epsilon()
            row.epsilon = eps if math.isfinite(eps) else None
        else:
            row.epsilon = 0.0
        series.append(row)
        if on_round is not None:
            on_round(row)
    return ExperimentResult(w, series, ledger, sigma)
