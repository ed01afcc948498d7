"""Discrete-event simulation of a DAG-job cluster with movable executors.

The environment is driven by scheduling actions. After every action it advances
simulated time until the next point where a decision is needed (free executors
and a non-empty runnable frontier), or until the workload is exhausted or the
horizon is reached.
"""

from __future__ import annotations

import copy
import heapq
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from dagsched.workload import JobDAG, sample_task_duration


class IllegalActionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExecutorClass:
    cpu: float = 1.0
    mem: float = 1.0


FOUR_CLASSES = tuple(ExecutorClass(1.0, m) for m in (0.25, 0.5, 0.75, 1.0))


@dataclass(frozen=True)
class EnvConfig:
    num_executors: int = 50
    move_delay: float = 2.5
    # None means a single class of (1 cpu, 1.0 memory) executors
    executor_classes: tuple[ExecutorClass, ...] | None = None
    waves: bool = True
    inflation: bool = True
    noise: bool = True
    objective: str = "avg_jct"
    horizon: float | None = None
    audit: bool = False

    def __post_init__(self):
        if self.num_executors < 1:
            raise ConfigError("num_executors must be >= 1")
        if self.move_delay < 0:
            raise ConfigError("move_delay must be >= 0")
        if self.objective not in ("avg_jct", "makespan"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.executor_classes is not None and len(self.executor_classes) == 0:
            raise ConfigError("executor_classes must be non-empty")

    @property
    def multi_resource(self) -> bool:
        return self.executor_classes is not None

    @property
    def classes(self) -> tuple[ExecutorClass, ...]:
        return self.executor_classes or (ExecutorClass(),)

    @property
    def is_simplified(self) -> bool:
        return not self.waves and not self.inflation and not self.noise and self.move_delay == 0

    def simplified(self) -> EnvConfig:
        """Linear-scaling variant: no waves, no inflation, no noise, free executor moves."""
        return replace(self, waves=False, inflation=False, noise=False, move_delay=0.0)


@dataclass(frozen=True)
class Action:
    job_id: str
    node: int
    limit: int
    executor_class: int | None = None


class Executor:
    __slots__ = ("index", "class_id", "cpu", "mem", "job", "stage", "busy_until", "moving_until",
                 "last_job", "task_start")

    def __init__(self, index: int, class_id: int, cls: ExecutorClass):
        self.index = index
        self.class_id = class_id
        self.cpu = cls.cpu
        self.mem = cls.mem
        self.job: JobRuntime | None = None
        self.stage: int | None = None
        self.busy_until: float | None = None
        self.moving_until: float | None = None
        self.last_job: str | None = None
        self.task_start = 0.0

    @property
    def is_free(self) -> bool:
        return self.stage is None

    @property
    def bound_job(self) -> str | None:
        return self.job.job_id if self.job is not None else None


class JobRuntime:
    """Mutable execution state of one job."""

    def __init__(self, dag: JobDAG, index: int):
        self.dag = dag
        self.index = index
        self.job_id = dag.job_id
        n = dag.num_nodes
        self.waiting = [s.num_tasks for s in dag.nodes]
        self.running = [0] * n
        self.finished = [0] * n
        self.parents_left = [len(p) for p in dag.parents]
        self.stage_done = [False] * n
        self.stages_left = n
        # executors that already ran a task of the stage; their next task there is a later-wave task
        self.warm: list[set[int]] = [set() for _ in range(n)]
        self.allocated = 0
        self.limit = 0
        self.completion_time: float | None = None

    @property
    def arrival_time(self) -> float:
        return self.dag.arrival_time

    def runnable(self, v: int) -> bool:
        return self.parents_left[v] == 0 and self.waiting[v] > 0

    def frontier(self) -> list[int]:
        return [v for v in range(self.dag.num_nodes) if self.parents_left[v] == 0 and self.waiting[v] > 0]

    def incomplete_nodes(self) -> list[int]:
        return [v for v in range(self.dag.num_nodes) if not self.stage_done[v]]

    def remaining_work(self) -> float:
        return float(sum((s.num_tasks - self.finished[v]) * s.duration.later_wave_mean
                         for v, s in enumerate(self.dag.nodes)))


@dataclass
class JctStats:
    average_jct: float
    makespan: float
    jcts: dict[str, float]


_ARRIVAL, _MOVE_DONE, _TASK_DONE = 0, 1, 2


class ClusterEnv:
    """Cluster state plus the event loop that advances it."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.clock = 0.0
        self.done = True

    # --- setup -----------------------------------------------------------

    def reset(self, jobs: Sequence[JobDAG], seed: int | None = 0) -> ClusterEnv:
        cfg = self.config
        ids = [j.job_id for j in jobs]
        if len(set(ids)) != len(ids):
            raise ConfigError("job ids must be unique within a workload")
        self.rng = np.random.default_rng(seed)
        self.clock = 0.0
        classes = cfg.classes
        # classes are interleaved so each makes up an equal share of the executors
        self.executors = [Executor(i, i % len(classes), classes[i % len(classes)])
                          for i in range(cfg.num_executors)]
        order = sorted(range(len(jobs)), key=lambda i: (jobs[i].arrival_time, i))
        self.all_jobs = [JobRuntime(jobs[i], k) for k, i in enumerate(order)]
        self.jobs: list[JobRuntime] = []  # in the system, arrival order
        self.job_by_id: dict[str, JobRuntime] = {}
        self.completed: list[JobRuntime] = []
        self._events: list = []
        self._seq = 0
        for jr in self.all_jobs:
            self._push(jr.arrival_time, _ARRIVAL, jr)
        self.gantt: list[tuple[int, str, int, float, float]] = []
        self.placements: list[tuple[float, float, float]] = []  # (capacity, request, duration)
        self.audit_log: list[dict] = []
        self.num_actions = 0
        self.truncated = False
        self.done = False
        self._reward = 0.0
        self._advance()
        return self

    def _push(self, t: float, kind: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._events, (t, kind, self._seq, payload))

    def _log(self, kind: str, job: str | None = None, stage: int | None = None,
             executor: int | None = None, detail=None) -> None:
        if self.config.audit:
            self.audit_log.append({"clock": self.clock, "kind": kind, "job_id": job, "stage": stage,
                                   "executor": executor, "detail": detail})

    # --- queries ---------------------------------------------------------

    @property
    def total_executors(self) -> int:
        return len(self.executors)

    def free_executors(self) -> list[Executor]:
        return [e for e in self.executors if e.stage is None]

    def runnable_frontier(self) -> list[tuple[str, int]]:
        return [(jr.job_id, v) for jr in self.jobs for v in jr.frontier()]

    def compatible(self, e: Executor, jr: JobRuntime, v: int) -> bool:
        s = jr.dag.nodes[v]
        return e.mem >= s.mem_request and e.cpu >= s.cpu_request

    def legal_frontier(self) -> list[tuple[str, int]]:
        """Frontier stages that at least one free executor can run."""
        free = self.free_executors()
        if not free:
            return []
        if not self.config.multi_resource:
            return self.runnable_frontier()
        out = []
        for jr in self.jobs:
            for v in jr.frontier():
                if any(self.compatible(e, jr, v) for e in free):
                    out.append((jr.job_id, v))
        return out

    def legal_classes(self, job_id: str, node: int) -> list[int]:
        jr = self.job_by_id[job_id]
        return sorted({e.class_id for e in self.free_executors() if self.compatible(e, jr, node)})

    def free_by_class(self) -> list[int]:
        counts = [0] * len(self.config.classes)
        for e in self.executors:
            if e.stage is None:
                counts[e.class_id] += 1
        return counts

    def job(self, job_id: str) -> JobRuntime:
        return self.job_by_id[job_id]

    def executor_counts(self) -> dict[str, int]:
        busy = sum(1 for e in self.executors if e.busy_until is not None)
        moving = sum(1 for e in self.executors if e.moving_until is not None)
        free = sum(1 for e in self.executors if e.stage is None)
        return {"busy": busy, "moving": moving, "free": free}

    def snapshot(self) -> ClusterEnv:
        return copy.deepcopy(self)

    # --- actions ---------------------------------------------------------

    def check_action(self, action: Action) -> JobRuntime:
        jr = self.job_by_id.get(action.job_id)
        if jr is None:
            raise IllegalActionError(f"job {action.job_id!r} is not in the system")
        if not (0 <= action.node < jr.dag.num_nodes) or not jr.runnable(action.node):
            raise IllegalActionError(f"stage ({action.job_id!r}, {action.node}) is not runnable")
        if action.limit <= jr.allocated:
            raise IllegalActionError(
                f"limit {action.limit} must exceed the {jr.allocated} executors held by {action.job_id!r}")
        if action.limit > self.total_executors:
            raise IllegalActionError(f"limit {action.limit} exceeds the cluster size")
        if action.executor_class is not None:
            if action.executor_class not in self.legal_classes(action.job_id, action.node):
                raise IllegalActionError(f"no free compatible executor of class {action.executor_class}")
        elif (action.job_id, action.node) not in self.legal_frontier():
            raise IllegalActionError(f"no free executor can run stage ({action.job_id!r}, {action.node})")
        return jr

    def step(self, action: Action) -> tuple[float, bool]:
        """Apply one action, then advance to the next decision point."""
        if self.done:
            raise IllegalActionError("episode is over")
        jr = self.check_action(action)
        v = action.node
        self.num_actions += 1
        self._log("action", jr.job_id, v, None, {"limit": action.limit, "class": action.executor_class})
        jr.limit = action.limit
        candidates = [e for e in self.executors if e.stage is None and self.compatible(e, jr, v)
                      and (action.executor_class is None or e.class_id == action.executor_class)]
        # executors already bound to the job come first: they start without a move delay
        candidates.sort(key=lambda e: (e.job is not jr, e.index))
        for e in candidates:
            if jr.allocated >= action.limit or jr.waiting[v] == 0:
                break
            self._assign(e, jr, v)
        self._advance()
        reward, self._reward = self._reward, 0.0
        return reward, self.done

    def _assign(self, e: Executor, jr: JobRuntime, v: int) -> None:
        if e.job is not None and e.job is not jr:
            e.job = None
        delay = 0.0
        if e.last_job is not None and e.last_job != jr.job_id:
            delay = self.config.move_delay
        e.job = jr
        e.stage = v
        e.last_job = jr.job_id
        jr.waiting[v] -= 1
        jr.running[v] += 1
        jr.allocated += 1
        if delay > 0:
            e.moving_until = self.clock + delay
            self._push(e.moving_until, _MOVE_DONE, e)
            self._log("move_start", jr.job_id, v, e.index, {"until": e.moving_until})
        else:
            self._start_task(e)

    def _start_task(self, e: Executor) -> None:
        jr, v = e.job, e.stage
        stage = jr.dag.nodes[v]
        cfg = self.config
        wave = "first" if cfg.waves and e.index not in jr.warm[v] else "later"
        jr.warm[v].add(e.index)
        parallelism = max(1, jr.allocated) if cfg.inflation else 1
        dur = sample_task_duration(stage, wave, parallelism, self.rng if cfg.noise else None)
        e.task_start = self.clock
        e.busy_until = self.clock + dur
        self._push(e.busy_until, _TASK_DONE, e)
        self._log("task_start", jr.job_id, v, e.index, {"duration": dur, "wave": wave})

    # --- event loop -------------------------------------------------------

    def _decision_needed(self) -> bool:
        if not self.jobs:
            return False
        return bool(self.legal_frontier())

    def _accrue(self, t: float) -> None:
        dt = t - self.clock
        if dt <= 0 or not self.jobs:
            return
        if self.config.objective == "makespan":
            self._reward -= dt
        else:
            self._reward -= dt * len(self.jobs)

    def _advance(self) -> None:
        while True:
            if self._decision_needed():
                return
            if not self._events:
                self.done = True
                return
            t = self._events[0][0]
            horizon = self.config.horizon
            if horizon is not None and t > horizon:
                self._accrue(horizon)
                self.clock = max(self.clock, horizon)
                self.truncated = True
                self.done = True
                return
            self._accrue(t)
            self.clock = t
            while self._events and self._events[0][0] == t:
                _, kind, _, payload = heapq.heappop(self._events)
                if kind == _ARRIVAL:
                    self._on_arrival(payload)
                elif kind == _MOVE_DONE:
                    payload.moving_until = None
                    self._start_task(payload)
                else:
                    self._on_task_done(payload)

    def _on_arrival(self, jr: JobRuntime) -> None:
        self.jobs.append(jr)
        self.jobs.sort(key=lambda j: j.index)
        self.job_by_id[jr.job_id] = jr
        self._log("arrival", jr.job_id)

    def _on_task_done(self, e: Executor) -> None:
        jr, v = e.job, e.stage
        start = e.task_start
        e.busy_until = None
        jr.running[v] -= 1
        jr.finished[v] += 1
        self.gantt.append((e.index, jr.job_id, v, start, self.clock))
        self.placements.append((e.mem, jr.dag.nodes[v].mem_request, self.clock - start))
        self._log("task_end", jr.job_id, v, e.index)
        if jr.waiting[v] > 0:
            # keep draining the same stage
            jr.waiting[v] -= 1
            jr.running[v] += 1
            self._start_task(e)
        else:
            e.stage = None
            jr.allocated -= 1
        if jr.finished[v] == jr.dag.nodes[v].num_tasks:
            self._on_stage_done(jr, v)
        # an idle executor stays with its job only while the job has runnable stages
        if e.stage is None and e.job is jr and not jr.frontier():
            e.job = None

    def _on_stage_done(self, jr: JobRuntime, v: int) -> None:
        jr.stage_done[v] = True
        jr.stages_left -= 1
        self._log("stage_complete", jr.job_id, v)
        for c in jr.dag.children[v]:
            jr.parents_left[c] -= 1
        if jr.stages_left == 0:
            jr.completion_time = self.clock
            self.jobs.remove(jr)
            del self.job_by_id[jr.job_id]
            self.completed.append(jr)
            for e in self.executors:
                if e.job is jr:
                    e.job = None
            self._log("job_complete", jr.job_id, detail={"jct": self.clock - jr.arrival_time})

    # --- outputs ---------------------------------------------------------

    def gantt_records(self) -> list[dict]:
        return [{"executor": e, "job_id": j, "stage": s, "start": a, "end": b}
                for e, j, s, a, b in self.gantt]

    def memory_fragmentation(self) -> float:
        """Fraction of occupied executor memory (time-weighted) that tasks did not request."""
        if not self.placements:
            return 0.0
        cap = sum(c * d for c, _, d in self.placements)
        req = sum(r * d for _, r, d in self.placements)
        return (cap - req) / cap if cap > 0 else 0.0


def runnable_frontier(env: ClusterEnv) -> list[tuple[str, int]]:
    return env.runnable_frontier()


def episode_jct_stats(env: ClusterEnv) -> JctStats | None:
    """Average JCT and makespan over completed jobs; None when nothing completed."""
    if not env.completed:
        return None
    jcts = {jr.job_id: jr.completion_time - jr.arrival_time for jr in env.completed}
    return JctStats(float(np.mean(list(jcts.values()))),
                    max(jr.completion_time for jr in env.completed), jcts)


Scheduler = Callable[[ClusterEnv], "Action | None"]


def run_episode(env: ClusterEnv, scheduler: Scheduler, max_steps: int | None = None) -> float:
    """Drive ``env`` with ``scheduler`` until done. Returns the summed reward."""
    total = env._reward
    env._reward = 0.0
    steps = 0
    while not env.done:
        action = scheduler(env)
        if action is None:
            raise RuntimeError("scheduler returned no action while a decision was pending")
        r, _ = env.step(action)
        total += r
        steps += 1
        if max_steps is not None and steps >= max_steps:
            break
    return total


def simulate(jobs: Sequence[JobDAG], config: EnvConfig, scheduler: Scheduler, seed: int = 0) -> ClusterEnv:
    env = ClusterEnv(config).reset(jobs, seed)
    env.episode_return = run_episode(env, scheduler)
    return env


def write_audit_log(env: ClusterEnv, path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in env.audit_log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
