"""Baseline schedulers, the critical-path primitive and the exhaustive-search oracle.

Every scheduler is a callable ``env -> Action | None`` over a ``ClusterEnv`` that is
waiting for a decision. ``None`` is returned only when nothing is schedulable.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from dagsched.simenv import Action, ClusterEnv, EnvConfig, JobRuntime, episode_jct_stats, run_episode
from dagsched.workload import JobDAG


class OracleCapError(ValueError):
    pass


@dataclass(frozen=True)
class HeuristicConfig:
    fairness_exponent: float = -0.4  # best of an alpha sweep on the default workload
    # a stage is troublesome when its task duration exceeds threshold_t times the mean
    # task duration of jobs in the system, or its memory request exceeds threshold_m
    graphene_threshold_t: float = 2.0
    graphene_threshold_m: float = 0.75
    tetris_resources: tuple[bool, bool] = (True, True)  # (cpu, mem)

    def __post_init__(self):
        if not -2.0 <= self.fairness_exponent <= 2.0:
            raise ValueError("fairness_exponent must lie in [-2, 2]")


# --- critical path ---------------------------------------------------------

def critical_paths(dag: JobDAG) -> np.ndarray:
    """cp(v) = work(v) + max over children cp(u), for every node."""
    cp = np.zeros(dag.num_nodes)
    for v in reversed(dag.topological_order):
        kids = dag.children[v]
        cp[v] = dag.nodes[v].work + (max(cp[u] for u in kids) if kids else 0.0)
    return cp


def critical_path(dag: JobDAG, node: int) -> float:
    return float(critical_paths(dag)[node])


@lru_cache(maxsize=4096)
def _cp_cached(dag: JobDAG) -> tuple[float, ...]:
    return tuple(critical_paths(dag))


@lru_cache(maxsize=4096)
def _related(dag: JobDAG) -> tuple[frozenset, ...]:
    """For each node, the set of its ancestors and descendants."""
    desc = [set() for _ in range(dag.num_nodes)]
    for v in reversed(dag.topological_order):
        for u in dag.children[v]:
            desc[v].add(u)
            desc[v] |= desc[u]
    rel = [set(d) for d in desc]
    for v, d in enumerate(desc):
        for u in d:
            rel[u].add(v)
    return tuple(frozenset(r) for r in rel)


# --- shared helpers --------------------------------------------------------

def _legal_by_job(env: ClusterEnv) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for jid, v in env.legal_frontier():
        out.setdefault(jid, []).append(v)
    return out


def _max_cp_node(jr: JobRuntime, nodes: Sequence[int]) -> int:
    cp = _cp_cached(jr.dag)
    return min(nodes, key=lambda v: (-cp[v], v))


def best_fit_class(env: ClusterEnv, job_id: str, node: int) -> int | None:
    """Smallest free executor class that fits the stage; None in single-resource mode."""
    if not env.config.multi_resource:
        return None
    classes = env.config.classes
    legal = env.legal_classes(job_id, node)
    return min(legal, key=lambda c: (classes[c].mem, classes[c].cpu, c))


def largest_remainder(quotas: Sequence[float], total: int) -> list[int]:
    """Round non-negative real quotas summing to ``total`` into integers with the same sum."""
    floors = [int(math.floor(q)) for q in quotas]
    left = total - sum(floors)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:max(0, left)]:
        floors[i] += 1
    return floors


def fair_shares(works: Sequence[float], total: int, exponent: float) -> tuple[list[float], list[int]]:
    """Real-valued and integral executor shares proportional to work**exponent."""
    weights = np.asarray(works, dtype=float) ** exponent
    real = (total * weights / weights.sum()).tolist()
    return real, largest_remainder(real, total)


# --- baselines -------------------------------------------------------------

def fifo(env: ClusterEnv) -> Action | None:
    """Jobs in arrival order, each granted as many executors as it can use."""
    legal = _legal_by_job(env)
    for jr in env.jobs:
        if jr.job_id in legal:
            v = min(legal[jr.job_id])
            return Action(jr.job_id, v, env.total_executors)
    return None


def sjf_cp(env: ClusterEnv) -> Action | None:
    """Smallest total work first; within a job, the stage on the longest critical path."""
    legal = _legal_by_job(env)
    if not legal:
        return None
    jr = min((env.job(j) for j in legal), key=lambda j: (j.dag.total_work, j.index))
    return Action(jr.job_id, _max_cp_node(jr, legal[jr.job_id]), env.total_executors)


def weighted_fair(env: ClusterEnv, exponent: float = 0.0, best_fit: bool = False) -> Action | None:
    """Executor shares proportional to T**exponent, T being a job's total work."""
    legal = _legal_by_job(env)
    if not legal:
        return None
    jobs = env.jobs
    real, integral = fair_shares([j.dag.total_work for j in jobs], env.total_executors, exponent)
    pos = {j.job_id: k for k, j in enumerate(jobs)}

    def deficit(jr):
        k = pos[jr.job_id]
        return (jr.allocated / real[k] if real[k] > 0 else math.inf, jr.index)

    jr = min((env.job(j) for j in legal), key=deficit)
    v = _max_cp_node(jr, legal[jr.job_id])
    # once every job holds its share, leftovers go out one executor at a time
    limit = max(integral[pos[jr.job_id]], jr.allocated + 1)
    cls = best_fit_class(env, jr.job_id, v) if best_fit else None
    return Action(jr.job_id, v, min(limit, env.total_executors), cls)


def fair(env: ClusterEnv) -> Action | None:
    return weighted_fair(env, 0.0)


def naive_weighted_fair(env: ClusterEnv) -> Action | None:
    return weighted_fair(env, 1.0)


def tetris_score(request: Sequence[float], available: Sequence[float],
                 mask: Sequence[bool] = (True, True)) -> float:
    return float(sum(r * a for r, a, m in zip(request, available, mask) if m))


def tetris(env: ClusterEnv, config: HeuristicConfig | None = None) -> Action | None:
    """Pack the stage whose demand vector best aligns with the free capacity it can use."""
    mask = (config or HeuristicConfig()).tetris_resources
    free = env.free_executors()
    best, best_key = None, None
    for jid, v in env.legal_frontier():
        jr = env.job(jid)
        stage = jr.dag.nodes[v]
        fits = [e for e in free if env.compatible(e, jr, v)]
        avail = (sum(e.cpu for e in fits), sum(e.mem for e in fits))
        score = tetris_score((stage.cpu_request, stage.mem_request), avail, mask)
        key = (-score, jr.index, v)
        if best_key is None or key < best_key:
            best, best_key = (jr, v), key
    if best is None:
        return None
    jr, v = best
    limit = min(jr.allocated + jr.waiting[v], env.total_executors)
    return Action(jr.job_id, v, limit, best_fit_class(env, jr.job_id, v))


def troublesome_nodes(env: ClusterEnv, jr: JobRuntime, config: HeuristicConfig) -> set[int]:
    durs = [s.duration.later_wave_mean for j in env.jobs for s in j.dag.nodes]
    mean_dur = float(np.mean(durs)) if durs else 0.0
    # memory demand only matters when executors differ in size
    check_mem = env.config.multi_resource
    return {v for v, s in enumerate(jr.dag.nodes)
            if s.duration.later_wave_mean > config.graphene_threshold_t * mean_dur
            or (check_mem and s.mem_request > config.graphene_threshold_m)}


def graphene_star(env: ClusterEnv, config: HeuristicConfig | None = None) -> Action | None:
    """Weighted-fair job shares plus deferral of troublesome stages until their group is runnable."""
    config = config or HeuristicConfig()
    legal = _legal_by_job(env)
    if not legal:
        return None
    allowed: dict[str, list[int]] = {}
    trouble_of: dict[str, set[int]] = {}
    for jid, nodes in legal.items():
        jr = env.job(jid)
        trouble = troublesome_nodes(env, jr, config)
        trouble_of[jid] = trouble
        related = _related(jr.dag)
        keep = []
        for v in nodes:
            if v in trouble:
                pending = [u for u in trouble if u != v and u not in related[v]
                           and jr.parents_left[u] > 0]
                if pending:
                    continue
            keep.append(v)
        if keep:
            allowed[jid] = keep
    if not allowed:
        # everything runnable is deferred; lift the suppression rather than idle
        allowed = legal
    jobs = env.jobs
    real, integral = fair_shares([j.dag.total_work for j in jobs], env.total_executors,
                                 config.fairness_exponent)
    pos = {j.job_id: k for k, j in enumerate(jobs)}
    jr = min((env.job(j) for j in allowed),
             key=lambda j: (j.allocated / real[pos[j.job_id]], j.index))
    nodes = allowed[jr.job_id]
    cp = _cp_cached(jr.dag)
    trouble = trouble_of[jr.job_id]
    v = min(nodes, key=lambda u: (u not in trouble, -cp[u], u))
    limit = max(integral[pos[jr.job_id]], jr.allocated + 1)
    return Action(jr.job_id, v, min(limit, env.total_executors), best_fit_class(env, jr.job_id, v))


# --- exhaustive search -----------------------------------------------------

class PriorityScheduler:
    """Strict job priority by a fixed order; critical path decides stages within a job."""

    def __init__(self, order: Sequence[str]):
        self.rank = {jid: k for k, jid in enumerate(order)}

    def __call__(self, env: ClusterEnv) -> Action | None:
        legal = _legal_by_job(env)
        if not legal:
            return None
        jid = min(legal, key=lambda j: self.rank[j])
        jr = env.job(jid)
        return Action(jid, _max_cp_node(jr, legal[jid]), env.total_executors)


def simulate_order(jobs: Sequence[JobDAG], config: EnvConfig, order: Sequence[str], seed: int = 0) -> float:
    env = ClusterEnv(config).reset(jobs, seed)
    run_episode(env, PriorityScheduler(order))
    return episode_jct_stats(env).average_jct


def _eval_orders(args):
    jobs, config, orders = args
    return [simulate_order(jobs, config, o) for o in orders]


def exhaustive_search(jobs: Sequence[JobDAG], config: EnvConfig, cap: int = 8,
                      workers: int = 1) -> tuple[tuple[str, ...], float]:
    """Try every job ordering; return the one with the lowest average JCT (lexicographic tie-break)."""
    if len(jobs) > cap:
        raise OracleCapError(f"{len(jobs)} jobs exceed the oracle cap of {cap} ({math.factorial(len(jobs))} orderings)")
    if not config.is_simplified:
        raise ValueError("exhaustive search needs the simplified environment (no waves, inflation, noise or move delay)")
    if not jobs:
        return (), 0.0
    ids = sorted(j.job_id for j in jobs)
    orders = list(itertools.permutations(ids))
    if workers > 1 and len(orders) > 1:
        chunks = [orders[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_eval_orders, [(list(jobs), config, c) for c in chunks]))
        values = [None] * len(orders)
        for i, part in enumerate(parts):
            values[i::workers] = part
    else:
        values = _eval_orders((jobs, config, orders))
    best = min(range(len(orders)), key=lambda i: (values[i], i))
    return orders[best], float(values[best])


# --- registry --------------------------------------------------------------

Scheduler = Callable[[ClusterEnv], "Action | None"]


def make_scheduler(name: str, config: HeuristicConfig | None = None) -> Scheduler:
    config = config or HeuristicConfig()
    if name == "fifo":
        return fifo
    if name == "sjf_cp":
        return sjf_cp
    if name == "fair":
        return fair
    if name == "naive_weighted_fair":
        return naive_weighted_fair
    if name == "weighted_fair":
        return lambda env: weighted_fair(env, config.fairness_exponent)
    if name == "tetris":
        return lambda env: tetris(env, config)
    if name == "graphene":
        return lambda env: graphene_star(env, config)
    if name == "random":
        raise ValueError("the random scheduler needs a seed; use RandomScheduler")
    raise ValueError(f"unknown scheduler {name!r}; valid names: {', '.join(HEURISTICS)}")


HEURISTICS = ("fifo", "sjf_cp", "fair", "naive_weighted_fair", "weighted_fair", "tetris", "graphene")


class RandomScheduler:
    """Uniformly random legal stage and limit; the untrained reference point."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, env: ClusterEnv) -> Action | None:
        legal = env.legal_frontier()
        if not legal:
            return None
        jid, v = legal[int(self.rng.integers(len(legal)))]
        jr = env.job(jid)
        limit = int(self.rng.integers(jr.allocated + 1, env.total_executors + 1))
        cls = None
        if env.config.multi_resource:
            classes = env.legal_classes(jid, v)
            cls = classes[int(self.rng.integers(len(classes)))]
        return Action(jid, v, limit, cls)
