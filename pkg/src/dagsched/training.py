"""Policy-gradient training with per-sequence baselines and a growing episode horizon.

Each iteration samples one job arrival sequence and an episode length, runs N
rollouts of the current policy on that same sequence, uses the mean return-to-go
across those rollouts as the baseline at every step, and takes one Adam step.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from dagsched import policy as pol
from dagsched.nn import (Adam, Params, atomic_write_text, clip_by_global_norm, load_checkpoint,
                         save_checkpoint, zeros_like)
from dagsched.simenv import ClusterEnv, EnvConfig, episode_jct_stats, run_episode
from dagsched.workload import JobDAG

WorkloadGenerator = Callable[[int], Sequence[JobDAG]]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    num_workers: int = 8
    iterations: int = 100
    # curriculum: "tau_growth" (tau_mean += tau_growth per iteration), "termination_prob"
    # (tau_mean = 1 / p with p decaying linearly), or "off" (episodes run to completion)
    curriculum: str = "tau_growth"
    tau_mean: float = 1000.0
    tau_growth: float = 10.0
    termination_prob_start: float = 5e-7
    termination_prob_end: float = 5e-8
    differential_reward: bool = True
    reward_window: int = 100000
    entropy_start: float = 1e-2
    entropy_end: float = 1e-4
    clip_norm: float = 10.0
    eval_interval: int = 100
    eval_sequences: int = 20
    eval_seed_offset: int = 1_000_000
    checkpoint_interval: int = 100
    record_wall_time: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        if not self.tau_mean > 0:
            raise ValueError("tau_mean must be positive")
        if not self.termination_prob_start >= self.termination_prob_end > 0:
            raise ValueError("need termination_prob_start >= termination_prob_end > 0")
        if self.reward_window < 1:
            raise ValueError("reward_window must be >= 1")
        if self.curriculum not in ("tau_growth", "termination_prob", "off"):
            raise ValueError(f"unknown curriculum {self.curriculum!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


class RewardNormalizer:
    """Moving average of the last ``window`` raw per-step rewards."""

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.buf: deque[float] = deque(maxlen=window)
        self.total = 0.0

    def add(self, rewards: Sequence[float]) -> None:
        for r in rewards:
            if len(self.buf) == self.window:
                self.total -= self.buf[0]
            self.buf.append(float(r))
            self.total += float(r)
        # re-sum once the window is full so the running total cannot drift
        if len(self.buf) == self.window:
            self.total = math.fsum(self.buf)

    @property
    def mean(self) -> float:
        return self.total / len(self.buf) if self.buf else 0.0

    def state(self) -> dict:
        return {"window": self.window, "rewards": list(self.buf)}

    @classmethod
    def from_state(cls, state: dict) -> RewardNormalizer:
        n = cls(int(state["window"]))
        n.add(state["rewards"])
        return n


@dataclass
class Trajectory:
    observations: list = field(default_factory=list)
    choices: list = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)  # raw, one per action
    times: list[float] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    episode_seed: int = 0
    sequence_id: int = 0
    differential_offset: float = 0.0
    completed: bool = False
    average_jct: float | None = None
    # forward passes from sampling, reused by the update while the parameters are unchanged
    caches: list = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def train_rewards(self) -> np.ndarray:
        return np.asarray(self.rewards, dtype=float) - self.differential_offset

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


def sample_episode_length(tau_mean: float, rng: np.random.Generator) -> float:
    if not tau_mean > 0:
        raise ValueError("tau_mean must be positive")
    return float(rng.exponential(tau_mean))


def returns_to_go(rewards: Sequence[float]) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    return np.cumsum(r[::-1])[::-1] if len(r) else r


def input_dependent_baseline(trajectories: Sequence[Trajectory]) -> np.ndarray:
    """b_k = mean over episodes of the return from step k on; short episodes count as 0 past their end."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    seqs = {t.sequence_id for t in trajectories}
    if len(seqs) > 1:
        raise ValueError(f"baseline needs episodes of one arrival sequence, got {sorted(seqs)}")
    return baseline_from_returns([returns_to_go(t.train_rewards) for t in trajectories])


def baseline_from_returns(returns: Sequence[np.ndarray]) -> np.ndarray:
    L = max((len(r) for r in returns), default=0)
    R = np.zeros((len(returns), L))
    for i, r in enumerate(returns):
        R[i, :len(r)] = r
    return R.mean(axis=0) if len(returns) else np.zeros(0)


def advantages(trajectories: Sequence[Trajectory], baseline: np.ndarray) -> list[np.ndarray]:
    return [returns_to_go(t.train_rewards) - baseline[:len(t)] for t in trajectories]


def time_based_baseline(trajectories: Sequence[Trajectory], bins: np.ndarray | None = None) -> list[np.ndarray]:
    """Pooled baseline indexed by wall-clock time: mean return-to-go of every step, over all
    episodes of all sequences, that falls in the same time bin. Used as the reference point
    when measuring how much the per-sequence baseline reduces variance."""
    times = np.concatenate([np.asarray(t.times) for t in trajectories]) if trajectories else np.zeros(0)
    rets = [returns_to_go(t.train_rewards) for t in trajectories]
    flat = np.concatenate(rets) if rets else np.zeros(0)
    if bins is None:
        bins = np.unique(np.quantile(times, np.linspace(0, 1, 21))) if len(times) else np.zeros(1)
    which = np.clip(np.searchsorted(bins, times, side="right") - 1, 0, max(0, len(bins) - 1))
    means = np.zeros(len(bins))
    for b in range(len(bins)):
        sel = which == b
        if sel.any():
            means[b] = flat[sel].mean()
    out, k = [], 0
    for r in rets:
        out.append(r - means[which[k:k + len(r)]])
        k += len(r)
    return out


def rollout(params: Params, jobs: Sequence[JobDAG], env_config: EnvConfig, tau: float | None,
            seed: int, rng: np.random.Generator, greedy: bool = False, sequence_id: int = 0,
            differential_offset: float = 0.0, keep_cache: bool = False) -> Trajectory:
    """Run the policy on one arrival sequence until the workload finishes or the clock passes tau."""
    if tau is not None and not tau > 0:
        raise ValueError("tau must be positive")
    env = ClusterEnv(replace(env_config, horizon=tau)).reset(jobs, seed)
    traj = Trajectory(episode_seed=seed, sequence_id=sequence_id, differential_offset=differential_offset)
    while not env.done:
        obs = pol.observe(env)
        choice, logp, _, heads = pol.sample_with_cache(params, obs, rng, greedy)
        if keep_cache:
            traj.caches.append(heads)
        t = env.clock
        reward, _ = env.step(pol.to_action(obs, choice))
        traj.observations.append(obs)
        traj.choices.append(choice)
        traj.rewards.append(reward)
        traj.times.append(t)
        traj.log_probs.append(logp)
    traj.completed = not env.truncated and len(env.completed) == len(jobs)
    stats = episode_jct_stats(env)
    traj.average_jct = stats.average_jct if stats else None
    return traj


def surrogate_gradient(params: Params, trajectories: Sequence[Trajectory], advs: Sequence[np.ndarray],
                       entropy_weight: float) -> tuple[Params, float]:
    """Gradient (ascent direction) of sum_k adv_k log pi(a_k|s_k) + beta * H(pi(.|s_k)), averaged
    over episodes. Returns (grads, mean entropy per step)."""
    grads = zeros_like(params)
    n = len(trajectories)
    ent_sum, steps = 0.0, 0
    for traj, adv in zip(trajectories, advs):
        caches = traj.caches if len(traj.caches) == len(traj) else [None] * len(traj)
        for obs, choice, a, h in zip(traj.observations, traj.choices, adv, caches):
            _, ent = pol.accumulate_grad(params, obs, choice, float(a) / n, entropy_weight / n, grads, h)
            ent_sum += ent
            steps += 1
    return grads, ent_sum / max(steps, 1)


def surrogate_value(params: Params, trajectories: Sequence[Trajectory], advs: Sequence[np.ndarray],
                    entropy_weight: float) -> float:
    n = len(trajectories)
    total = 0.0
    for traj, adv in zip(trajectories, advs):
        for obs, choice, a in zip(traj.observations, traj.choices, adv):
            h = pol._Heads(params, obs)
            ent = pol._entropy(h.node_probs)
            _, pl, _ = h.limit_head(choice.node)
            ent += pol._entropy(pl)
            if choice.cls is not None:
                _, pc, _ = h.class_head(choice.node)
                ent += pol._entropy(pc)
            total += (float(a) * pol.action_log_prob(params, obs, choice) + entropy_weight * ent) / n
    return total


def reinforce_update(params: Params, optimizer: Adam, trajectories: Sequence[Trajectory],
                     baseline: np.ndarray, entropy_weight: float, clip_norm: float = 10.0) -> dict:
    """One Adam step along the policy gradient. Parameters are left alone when the gradient is
    non-finite or identically zero."""
    advs = advantages(trajectories, baseline)
    grads, mean_ent = surrogate_gradient(params, trajectories, advs, entropy_weight)
    norm = clip_by_global_norm(grads, clip_norm)
    diag = {"grad_norm": norm, "entropy": mean_ent,
            "mean_sq_advantage": float(np.mean(np.concatenate(advs) ** 2)) if any(len(a) for a in advs) else 0.0,
            "updated": False}
    if not math.isfinite(norm):
        diag["error"] = "non-finite gradient; update skipped"
        return diag
    if norm == 0.0:
        return diag
    optimizer.step(params, {k: -g for k, g in grads.items()})
    diag["updated"] = True
    return diag


def entropy_weight_at(config: TrainConfig, iteration: int) -> float:
    if config.iterations <= 1:
        return config.entropy_start
    frac = min(1.0, iteration / (config.iterations - 1))
    return config.entropy_start + frac * (config.entropy_end - config.entropy_start)


def termination_prob_at(config: TrainConfig, iteration: int) -> float:
    if config.iterations <= 1:
        return config.termination_prob_start
    frac = min(1.0, iteration / (config.iterations - 1))
    return config.termination_prob_start + frac * (config.termination_prob_end - config.termination_prob_start)


def evaluate(params: Params, workload: WorkloadGenerator, env_config: EnvConfig, seeds: Sequence[int]) -> float:
    """Mean average JCT of the greedy policy over full episodes on the given sequences."""
    sched_jcts = []
    for s in seeds:
        env = ClusterEnv(replace(env_config, horizon=None)).reset(workload(s), s)
        run_episode(env, pol.PolicyScheduler(params, greedy=True))
        stats = episode_jct_stats(env)
        sched_jcts.append(stats.average_jct if stats else float("nan"))
    return float(np.mean(sched_jcts))


CURVE_FIELDS = ("iteration", "mean_return", "eval_avg_jct", "tau_mean", "wall_seconds")


class Trainer:
    """Coordinator state: parameters, optimizer, reward normalizer and curriculum position."""

    def __init__(self, workload: WorkloadGenerator, env_config: EnvConfig, config: TrainConfig,
                 params: Params | None = None):
        self.workload = workload
        self.env_config = env_config
        self.config = config
        num_classes = len(env_config.classes) if env_config.multi_resource else 1
        self.params = params if params is not None else pol.init_params(config.seed, num_classes)
        self.optimizer = Adam(self.params, config.learning_rate)
        self.normalizer = RewardNormalizer(config.reward_window)
        self.tau_mean = config.tau_mean
        self.iteration = 0
        self.rng = np.random.default_rng([config.seed, 7])
        self.curve: list[dict] = []
        self.last_diag: dict = {}

    def current_tau_mean(self) -> float:
        if self.config.curriculum == "termination_prob":
            return 1.0 / termination_prob_at(self.config, self.iteration)
        return self.tau_mean

    def run_iteration(self) -> dict:
        cfg = self.config
        t0 = time.perf_counter()
        tau_mean = self.current_tau_mean()
        tau = None if cfg.curriculum == "off" else sample_episode_length(tau_mean, self.rng)
        seq_seed = int(self.rng.integers(2 ** 31))
        jobs = self.workload(seq_seed)
        offset = self.normalizer.mean if cfg.differential_reward else 0.0
        # workers: identical arrival sequence and environment seed, private policy rng
        trajs = []
        for w in range(cfg.num_workers):
            wrng = np.random.default_rng([cfg.seed, self.iteration, w])
            trajs.append(rollout(self.params, jobs, self.env_config, tau, seq_seed, wrng,
                                 sequence_id=seq_seed, differential_offset=offset, keep_cache=True))
        baseline = input_dependent_baseline(trajs)
        diag = reinforce_update(self.params, self.optimizer, trajs, baseline,
                                entropy_weight_at(cfg, self.iteration), cfg.clip_norm)
        for t in trajs:
            self.normalizer.add(t.rewards)
        if cfg.curriculum == "tau_growth":
            self.tau_mean += cfg.tau_growth
        self.iteration += 1
        row = {"iteration": self.iteration, "mean_return": float(np.mean([t.total_reward for t in trajs])),
               "eval_avg_jct": "", "tau_mean": tau_mean,
               "wall_seconds": time.perf_counter() - t0 if cfg.record_wall_time else 0.0}
        if cfg.eval_interval > 0 and self.iteration % cfg.eval_interval == 0:
            row["eval_avg_jct"] = self.evaluate()
        self.curve.append(row)
        diag["steps"] = sum(len(t) for t in trajs)
        self.last_diag = diag
        return row

    def eval_seeds(self) -> list[int]:
        return [self.config.eval_seed_offset + k for k in range(self.config.eval_sequences)]

    def evaluate(self) -> float:
        return evaluate(self.params, self.workload, self.env_config, self.eval_seeds())

    def train(self, iterations: int | None = None, on_iteration: Callable[[Trainer, dict], None] | None = None):
        target = self.config.iterations if iterations is None else iterations
        while self.iteration < target:
            row = self.run_iteration()
            if on_iteration is not None:
                on_iteration(self, row)
        return self.params, self.curve

    # --- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {"iteration": self.iteration, "tau_mean": self.tau_mean,
                "normalizer": self.normalizer.state(), "rng": self.rng.bit_generator.state,
                "config": asdict(self.config), "curve": self.curve}
        save_checkpoint(path, self.params, self.optimizer, meta)

    def load(self, path: str | Path) -> None:
        params, opt, meta = load_checkpoint(path)
        self.params.clear()
        self.params.update(params)
        if opt is not None:
            self.optimizer.load_state(opt)
        self.iteration = int(meta["iteration"])
        self.tau_mean = float(meta["tau_mean"])
        self.normalizer = RewardNormalizer.from_state(meta["normalizer"])
        self.rng.bit_generator.state = meta["rng"]
        self.curve = list(meta.get("curve", []))


def train(workload: WorkloadGenerator, env_config: EnvConfig, config: TrainConfig,
          params: Params | None = None) -> tuple[Params, list[dict]]:
    return Trainer(workload, env_config, config, params).train()


def curve_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CURVE_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in CURVE_FIELDS})
    return buf.getvalue()


def write_curve(path: str | Path, rows: Sequence[dict]) -> None:
    atomic_write_text(path, curve_csv(rows))
