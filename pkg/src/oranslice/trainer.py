"""Distributed-actor / global-critic training loop.

Per iteration: every actor runs ``n_evaluations`` episodes in its own DU
environment, the joint steps go to a shared replay buffer, then the critic
(attention group first, Q heads second) and every actor take their update
steps, in that order.

Seeding: all randomness derives from ``TrainConfig.seed`` through
``np.random.SeedSequence([seed, stream, index])`` with the stream ids below,
so a stream never depends on how rollouts are scheduled.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .actor import ActorNet, act, policy_update
from .config import ExperimentConfig, TrainConfig
from .critic import (AttentionCritic, AttentionStats, BaselineCritic, CriticTargetConfig,
                     CriticTrainer, critic_action_fn, critic_update)
from .mdp import action_to_allocation, compute_reward, encode_state
from .radio import DUEnvironment

log = logging.getLogger(__name__)

STREAM_ENV = 0
STREAM_POLICY = 1
STREAM_INIT = 2
STREAM_UPDATE = 3
STREAM_EVAL_ENV = 4
STREAM_EVAL_POLICY = 5

EnvFactory = Callable[[int, np.random.Generator], DUEnvironment]


def stream(seed: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, kind, index]))


def make_env_factory(cfg: ExperimentConfig) -> EnvFactory:
    def factory(agent: int, rng: np.random.Generator) -> DUEnvironment:
        from .radio import partition_population
        pops = partition_population(cfg.radio.n_ues, 3, rng, cfg.population_concentration)
        return DUEnvironment(cfg.radio, cfg.slices, rng, pops)
    return factory


@dataclass
class MetricsRecord:
    iteration: int
    mode: str
    per_agent_return: np.ndarray
    mean_return: float
    per_slice_violation: np.ndarray
    per_user_throughput_sample: list[tuple[int, float]]
    reward_min: float = 0.0
    reward_max: float = 0.0
    updates: int = 0


class ReplayBuffer:
    """FIFO ring of joint rows; row r holds every agent's transition for one step."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.shapes = {"obs": (n_agents, obs_dim), "act": (n_agents, act_dim),
                       "rew": (n_agents,), "next_obs": (n_agents, obs_dim)}
        self._alloc = min(capacity, 1024)
        self.data = {k: np.zeros((self._alloc, *s)) for k, s in self.shapes.items()}
        self.stamp = np.zeros(self._alloc, dtype=np.int64)   # insertion index, for FIFO audits
        self.ptr = 0
        self.size = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self.size

    def _grow(self, need: int) -> None:
        if need <= self._alloc or self._alloc == self.capacity:
            return
        new = min(self.capacity, max(need, 2 * self._alloc))
        for k, arr in self.data.items():
            grown = np.zeros((new, *arr.shape[1:]))
            grown[:self._alloc] = arr
            self.data[k] = grown
        stamp = np.zeros(new, dtype=np.int64)
        stamp[:self._alloc] = self.stamp
        self.stamp = stamp
        self._alloc = new

    def add(self, obs, act, rew, next_obs) -> None:
        """Append rows; each argument has a leading row axis."""
        rows = {"obs": obs, "act": act, "rew": rew, "next_obs": next_obs}
        m = len(obs)
        for k, v in rows.items():
            if np.shape(v) != (m, *self.shapes[k]):
                raise ValueError(f"{k}: expected shape {(m, *self.shapes[k])}, got {np.shape(v)}")
        for r in range(m):
            if self.size < self.capacity:
                self._grow(self.size + 1)
            idx = self.ptr
            for k, v in rows.items():
                self.data[k][idx] = v[r]
            self.stamp[idx] = self.inserted
            self.inserted += 1
            self.ptr = (self.ptr + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Uniform rows without replacement, returned agent-major: (N, B, ...)."""
        if batch_size > self.size:
            raise ValueError(f"cannot draw {batch_size} rows from {self.size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        out = {k: np.moveaxis(v[idx], 0, 1).copy() for k, v in self.data.items()}
        out["stamp"] = self.stamp[idx].copy()
        return out


@dataclass
class Rollout:
    obs: np.ndarray        # (E, H, D)
    act: np.ndarray        # (E, H, L)
    rew: np.ndarray        # (E, H)
    next_obs: np.ndarray   # (E, H, D)
    violations: np.ndarray  # (E, H, L)
    throughput: list[tuple[int, float]]


def discounted_return(rewards: np.ndarray, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    w = gamma ** np.arange(rewards.shape[-1])
    return rewards @ w


def run_episodes(actor: ActorNet, env: DUEnvironment, episodes: int, horizon: int,
                 rng: np.random.Generator | None, deterministic: bool = False) -> Rollout:
    """Roll out ``episodes`` episodes; every step goes through the RB constraint checks."""
    l = env.n_slices
    d = 3 * l
    obs = np.zeros((episodes, horizon, d))
    acts = np.zeros((episodes, horizon, l))
    rew = np.zeros((episodes, horizon))
    nxt = np.zeros((episodes, horizon, d))
    viol = np.zeros((episodes, horizon, l))
    samples: list[tuple[int, float]] = []
    k = env.cfg.total_rbs
    for e in range(episodes):
        env.reset()
        prev = np.zeros(l)
        o = encode_state(None, env.populations, prev, env.slices).vector
        for t in range(horizon):
            a, _ = act(actor, o, deterministic=deterministic, rng=rng)
            alloc = action_to_allocation(a, k, ue_slice=env.ue_slice, active=env.active)
            report, _ = env.step(alloc)
            r = compute_reward(report)
            o2 = encode_state(report, env.populations, a, env.slices).vector
            obs[e, t], acts[e, t], rew[e, t], nxt[e, t] = o, a, r, o2
            viol[e, t] = 1.0 - report.per_slice_satisfied_fraction
            o = o2
        samples.extend(zip(env.ue_slice.tolist(), report.per_user_throughput_bps.tolist()))
    return Rollout(obs, acts, rew, nxt, viol, samples)


@dataclass
class EvalResult:
    returns: np.ndarray            # (N, episodes)
    rewards: np.ndarray            # (N, episodes, H)
    throughput: list[tuple[int, float]]
    violations: np.ndarray         # (N, episodes, H, L)


def evaluate_policy(actors: Sequence[ActorNet], env_factory: EnvFactory, episodes: int, gamma: float,
                    horizon: int = 50, seed: int = 0) -> EvalResult:
    """Deterministic-mode episodes on fresh environments; touches no training state."""
    runs = [run_episodes(a, env_factory(i, stream(seed, STREAM_EVAL_ENV, i)), episodes, horizon,
                         None, deterministic=True) for i, a in enumerate(actors)]
    rewards = np.stack([r.rew for r in runs]) if runs else np.zeros((0, episodes, horizon))
    samples = [s for r in runs for s in r.throughput]
    viol = np.stack([r.violations for r in runs]) if runs else np.zeros((0, episodes, horizon, 3))
    return EvalResult(discounted_return(rewards, gamma), rewards, samples, viol)


@dataclass
class TrainResult:
    mode: str
    metrics: list[MetricsRecord]
    actors: list[ActorNet]
    critic: CriticTrainer
    attention: AttentionStats
    update_order: list[str] = field(default_factory=list)
    n_update_rounds: int = 0
    constraint_checks: int = 0
    stopped_early: bool = False
    buffer_size: int = 0


def build_critic(mode: str, n_agents: int, n_slices: int, rng: np.random.Generator):
    obs_dim = 3 * n_slices
    if mode == "attention":
        return AttentionCritic(n_agents, obs_dim, n_slices, rng)
    if mode == "baseline":
        return BaselineCritic(n_agents, obs_dim, n_slices, rng)
    raise ValueError(f"unknown mode {mode!r}")


def converged(returns: Sequence[float], window: int, threshold: float) -> bool:
    """Relative change between the last two disjoint windows of mean returns."""
    if len(returns) < 2 * window:
        return False
    new = float(np.mean(returns[-window:]))
    old = float(np.mean(returns[-2 * window:-window]))
    return abs(new - old) / max(abs(old), 1e-12) < threshold


def run_training(cfg: TrainConfig, env_factory: EnvFactory, mode: str = "attention",
                 n_slices: int = 3, on_iteration: Callable[[MetricsRecord], None] | None = None) -> TrainResult:
    n = cfg.n_actors
    init = stream(cfg.seed, STREAM_INIT)
    actors = [ActorNet(i, n_slices, init, lr=cfg.lr, auto_temperature=cfg.auto_temperature,
                       beta_init=cfg.beta_temp if cfg.beta_temp > 0 else 0.2) for i in range(n)]
    critic = build_critic(mode, n, n_slices, init)
    trainer = CriticTrainer(critic, lr=cfg.lr)
    stats = AttentionStats()
    critic.monitor = stats
    trainer.target.monitor = stats
    tcfg = CriticTargetConfig(cfg.gamma, cfg.beta_temp, cfg.polyak_mix)
    envs = [env_factory(i, stream(cfg.seed, STREAM_ENV, i)) for i in range(n)]
    policy_rngs = [stream(cfg.seed, STREAM_POLICY, i) for i in range(n)]
    update_rng = stream(cfg.seed, STREAM_UPDATE)
    buffer = ReplayBuffer(cfg.buffer_capacity, n, 3 * n_slices, n_slices)
    result = TrainResult(mode, [], actors, trainer, stats)
    history: list[float] = []

    def rollout(i: int) -> Rollout:
        return run_episodes(actors[i], envs[i], cfg.n_evaluations, cfg.episode_length, policy_rngs[i])

    pool = ThreadPoolExecutor(max_workers=n) if cfg.parallel_rollouts else None
    try:
        for it in range(cfg.n_iterations):
            runs = list(pool.map(rollout, range(n))) if pool else [rollout(i) for i in range(n)]
            # joint rows in canonical (evaluation, step) order, agents along axis 1
            rows = cfg.n_evaluations * cfg.episode_length
            buffer.add(np.stack([r.obs.reshape(rows, -1) for r in runs], axis=1),
                       np.stack([r.act.reshape(rows, -1) for r in runs], axis=1),
                       np.stack([r.rew.reshape(rows) for r in runs], axis=1),
                       np.stack([r.next_obs.reshape(rows, -1) for r in runs], axis=1))

            updates = 0
            for _ in range(cfg.updates_per_iteration):
                if len(buffer) < cfg.batch_size:
                    log.info("iteration %d: buffer holds %d < %d rows, skipping updates",
                             it, len(buffer), cfg.batch_size)
                    break
                _update_round(trainer, actors, buffer, cfg, tcfg, update_rng, result)
                updates += 1

            rets = np.array([discounted_return(r.rew, cfg.gamma).mean() for r in runs])
            viol = np.mean([r.violations.reshape(-1, n_slices).mean(axis=0) for r in runs], axis=0)
            all_rew = np.concatenate([r.rew.ravel() for r in runs])
            rec = MetricsRecord(it, mode, rets, float(rets.mean()), viol,
                                [s for r in runs for s in r.throughput],
                                float(all_rew.min()), float(all_rew.max()), updates)
            result.metrics.append(rec)
            history.append(rec.mean_return)
            if on_iteration is not None:
                on_iteration(rec)
            if converged(history, cfg.convergence_window, cfg.convergence_threshold):
                log.info("converged after %d iterations", it + 1)
                result.stopped_early = it + 1 < cfg.n_iterations
                break
    finally:
        if pool is not None:
            pool.shutdown()
    result.constraint_checks = sum(e.violations_checked for e in envs)
    result.buffer_size = len(buffer)
    return result


def _update_round(trainer: CriticTrainer, actors: list[ActorNet], buffer: ReplayBuffer,
                  cfg: TrainConfig, tcfg: CriticTargetConfig, rng: np.random.Generator,
                  result: TrainResult) -> None:
    batch = buffer.sample(cfg.batch_size, rng)
    start = len(trainer.order)
    critic_update(trainer, actors, batch["obs"], batch["act"], batch["rew"], batch["next_obs"], tcfg, rng)
    for i, actor in enumerate(actors):
        fn = critic_action_fn(trainer.critic, i, batch["obs"], batch["act"])
        beta = None if actor.auto_temperature else cfg.beta_temp
        policy_update(actor, batch["obs"][i], fn, beta=beta, rng=rng)
        trainer.order.append(f"actor{i}")
    expected = (["attention"] if trainer.opt_attention is not None else []) + ["critic"] + \
        [f"actor{i}" for i in range(len(actors))]
    if trainer.order[start:] != expected:
        raise RuntimeError(f"update order {trainer.order[start:]} != {expected}")
    result.update_order = trainer.order
    result.n_update_rounds += 1
