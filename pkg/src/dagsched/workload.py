"""Job DAGs, task-duration models, workload generators and trace files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from dagsched.templates import TEMPLATES

TPCH_SIZES = (2, 5, 10, 20, 50, 100)
TRACE_SCHEMA_VERSION = 1

Wave = Literal["first", "later"]


class DagValidationError(ValueError):
    pass


class TraceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DurationModel:
    first_wave_mean: float
    later_wave_mean: float
    noise_cv: float = 0.0
    # parallelism level -> multiplicative slowdown; looked up at the nearest lower key
    inflation_table: dict[int, float] | None = None

    def __post_init__(self):
        if not self.later_wave_mean > 0:
            raise ValueError("later_wave_mean must be positive")
        if self.first_wave_mean < self.later_wave_mean:
            raise ValueError("first_wave_mean must be >= later_wave_mean")
        if self.noise_cv < 0:
            raise ValueError("noise_cv must be non-negative")
        if self.inflation_table:
            keys = sorted(self.inflation_table)
            if keys[0] < 1:
                raise ValueError("inflation_table keys must be >= 1")
            prev = 1.0
            for k in keys:
                factor = self.inflation_table[k]
                if factor < 1.0 or factor < prev:
                    raise ValueError("inflation factors must be >= 1 and non-decreasing")
                prev = factor

    @cached_property
    def _inflation_keys(self) -> list[int]:
        return sorted(self.inflation_table) if self.inflation_table else []

    def inflation(self, parallelism: int) -> float:
        keys = self._inflation_keys
        if not keys:
            return 1.0
        i = np.searchsorted(keys, parallelism, side="right") - 1
        if i < 0:
            return 1.0
        return self.inflation_table[keys[i]]

    def mean(self, wave: Wave, parallelism: int = 1) -> float:
        base = self.first_wave_mean if wave == "first" else self.later_wave_mean
        return base * self.inflation(parallelism)


@dataclass(frozen=True, eq=False)
class StageSpec:
    num_tasks: int
    duration: DurationModel
    cpu_request: float = 1.0
    mem_request: float = 1.0

    def __post_init__(self):
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        if not 0.0 < self.mem_request <= 1.0:
            raise ValueError("mem_request must lie in (0, 1]")
        if self.cpu_request < 0:
            raise ValueError("cpu_request must be >= 0")

    @property
    def work(self) -> float:
        return self.num_tasks * self.duration.later_wave_mean


@dataclass(frozen=True, eq=False)
class JobDAG:
    """A job's stage graph. Edges point from a parent stage to the child that consumes its output."""

    job_id: str
    nodes: tuple[StageSpec, ...]
    edges: tuple[tuple[int, int], ...] = ()
    arrival_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))
        validate_dag(self)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for a, b in self.edges:
            out[a].append(b)
        return tuple(tuple(sorted(c)) for c in out)

    @cached_property
    def parents(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for a, b in self.edges:
            out[b].append(a)
        return tuple(tuple(sorted(p)) for p in out)

    @cached_property
    def topological_order(self) -> tuple[int, ...]:
        order = _kahn(self.num_nodes, self.edges)
        assert order is not None
        return tuple(order)

    @cached_property
    def total_work(self) -> float:
        return float(sum(s.work for s in self.nodes))

    def with_arrival(self, arrival_time: float) -> JobDAG:
        return JobDAG(self.job_id, self.nodes, self.edges, arrival_time)

    def with_id(self, job_id: str) -> JobDAG:
        return JobDAG(job_id, self.nodes, self.edges, self.arrival_time)


@dataclass(frozen=True)
class ArrivalProcess:
    kind: Literal["batch", "poisson", "trace"] = "batch"
    mean_interarrival: float | None = None
    num_jobs: int = 0

    def __post_init__(self):
        if self.kind not in ("batch", "poisson", "trace"):
            raise ValueError(f"unknown arrival kind {self.kind!r}")
        if self.kind == "poisson" and not (self.mean_interarrival and self.mean_interarrival > 0):
            raise ValueError("poisson arrivals need mean_interarrival > 0")


def _kahn(n: int, edges: Sequence[tuple[int, int]]) -> list[int] | None:
    indeg = [0] * n
    out: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        out[a].append(b)
        indeg[b] += 1
    ready = [v for v in range(n) if indeg[v] == 0]
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for c in sorted(out[v]):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    return order if len(order) == n else None


def validate_dag(dag: JobDAG) -> None:
    n = len(dag.nodes)
    if n == 0:
        raise DagValidationError(f"job {dag.job_id!r}: DAG has no stages")
    if not dag.arrival_time >= 0 or not math.isfinite(dag.arrival_time):
        raise DagValidationError(f"job {dag.job_id!r}: arrival_time must be finite and >= 0")
    seen = set()
    for a, b in dag.edges:
        if a == b:
            raise DagValidationError(f"job {dag.job_id!r}: self-edge ({a}, {b})")
        if not (0 <= a < n and 0 <= b < n):
            raise DagValidationError(f"job {dag.job_id!r}: edge ({a}, {b}) references a missing stage")
        if (a, b) in seen:
            raise DagValidationError(f"job {dag.job_id!r}: duplicate edge ({a}, {b})")
        seen.add((a, b))
    if _kahn(n, dag.edges) is None:
        raise DagValidationError(f"job {dag.job_id!r}: DAG contains a cycle")


def sample_task_duration(stage: StageSpec, wave: Wave, parallelism: int,
                         rng: np.random.Generator | None = None) -> float:
    """Draw one task runtime. Noise is lognormal with unit mean and the model's CV."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    model = stage.duration
    mean = model.mean(wave, parallelism)
    if model.noise_cv == 0 or rng is None:
        return mean
    sigma2 = math.log1p(model.noise_cv ** 2)
    return mean * float(rng.lognormal(-0.5 * sigma2, math.sqrt(sigma2)))


def gen_random_dag(seed: int, n_nodes: int, edge_prob: float, *, max_tasks: int = 10,
                   mean_duration: tuple[float, float] = (1.0, 10.0),
                   job_id: str | None = None, arrival_time: float = 0.0) -> JobDAG:
    """Random DAG whose edges always run from a lower to a higher stage index."""
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n_nodes, k=1)
    mask = rng.random(len(iu[0])) < edge_prob
    edges = [(int(a), int(b)) for a, b, m in zip(iu[0], iu[1], mask) if m]
    tasks = rng.integers(1, max_tasks + 1, size=n_nodes)
    later = rng.uniform(*mean_duration, size=n_nodes)
    first = later * rng.uniform(1.0, 1.5, size=n_nodes)
    nodes = [StageSpec(int(t), DurationModel(float(f), float(l))) for t, f, l in zip(tasks, first, later)]
    return JobDAG(job_id or f"rand-{seed}", nodes, edges, arrival_time)


def template_job(template_index: int, size: float, job_id: str, *, arrival_time: float = 0.0,
                 noise_cv: float = 0.1, mem_rng: np.random.Generator | None = None) -> JobDAG:
    """Instantiate one TPC-H-like template at an input size (in GB-like scale units).

    Task counts and task durations both grow with sqrt(size), so total work is
    proportional to size up to task-count rounding.
    """
    t = TEMPLATES[template_index]
    scale = math.sqrt(size)
    sweet = max(2, round(t.sweet_spot * scale))
    nodes = []
    for tasks_rel, dur_rel in t.stages:
        n = max(1, round(tasks_rel * 2.0 * scale))
        later = dur_rel * t.work_factor * scale
        mem = float(mem_rng.uniform(0.0, 1.0)) if mem_rng is not None else 1.0
        mem = max(mem, 1e-3)
        nodes.append(StageSpec(n, DurationModel(later * t.first_wave_factor, later, noise_cv,
                                                _inflation_table(sweet, t.inflation_slope)),
                               1.0, mem))
    return JobDAG(job_id, nodes, t.edges, arrival_time)


def _inflation_table(sweet_spot: int, slope: float) -> dict[int, float]:
    # beyond the sweet spot each doubling of parallelism slows tasks by `slope`
    table = {1: 1.0}
    for p in (2, 3, 5, 8, 12, 16, 24, 32, 48, 64, 96, 128):
        table[p] = 1.0 + slope * max(0.0, math.log2(p / sweet_spot))
    return table


def gen_tpch_like(seed: int, n_jobs: int, sizes: Sequence[float] = TPCH_SIZES, *,
                  mean_interarrival: float | None = None, multi_resource: bool = False,
                  noise_cv: float = 0.1, templates: Sequence[int] | None = None) -> list[JobDAG]:
    """Sample jobs uniformly over templates and input sizes.

    With ``mean_interarrival`` the jobs arrive as a Poisson process starting at 0,
    otherwise they form a batch at time 0. ``multi_resource`` draws every stage's
    memory request uniformly from (0, 1].
    """
    if len(sizes) == 0:
        raise ValueError("sizes must be non-empty")
    if n_jobs < 1:
        raise ValueError("n_jobs must be >= 1")
    rng = np.random.default_rng(seed)
    pool = list(templates) if templates is not None else list(range(len(TEMPLATES)))
    template_idx = rng.integers(0, len(pool), size=n_jobs)
    size_idx = rng.integers(0, len(sizes), size=n_jobs)
    if mean_interarrival is not None:
        gaps = rng.exponential(mean_interarrival, size=n_jobs)
        arrivals = np.concatenate([[0.0], np.cumsum(gaps[:-1])])
    else:
        arrivals = np.zeros(n_jobs)
    mem_rng = np.random.default_rng([seed, 1]) if multi_resource else None
    jobs = []
    for i in range(n_jobs):
        t = pool[template_idx[i]]
        size = sizes[size_idx[i]]
        jobs.append(template_job(t, size, f"{TEMPLATES[t].name}-{size:g}-{i}",
                                 arrival_time=float(arrivals[i]), noise_cv=noise_cv, mem_rng=mem_rng))
    return jobs


def work_share_of_top(jobs: Sequence[JobDAG], fraction: float = 0.23) -> float:
    works = np.sort([j.total_work for j in jobs])[::-1]
    k = max(1, int(round(fraction * len(works))))
    return float(works[:k].sum() / works.sum())


# --- trace files -------------------------------------------------------------

def _trace_field(record: dict, key: str, where: str):
    if key not in record:
        raise TraceError(f"{where}: missing field {key!r}")
    return record[key]


def load_trace(path: str | Path) -> tuple[list[JobDAG], ArrivalProcess]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TraceError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "jobs" not in doc:
        raise TraceError(f"{path}: top-level object must contain 'jobs'")
    version = doc.get("schema_version", TRACE_SCHEMA_VERSION)
    if version != TRACE_SCHEMA_VERSION:
        raise TraceError(f"{path}: unsupported schema_version {version!r}")
    jobs = []
    for i, rec in enumerate(doc["jobs"]):
        where = f"jobs[{i}]"
        if not isinstance(rec, dict):
            raise TraceError(f"{where}: expected an object")
        job_id = str(_trace_field(rec, "id", where))
        where = f"jobs[{i}] (id={job_id!r})"
        stages = []
        for k, st in enumerate(_trace_field(rec, "stages", where)):
            sw = f"{where} stages[{k}]"
            try:
                stages.append(StageSpec(
                    int(_trace_field(st, "num_tasks", sw)),
                    DurationModel(float(_trace_field(st, "first_wave_mean", sw)),
                                  float(_trace_field(st, "later_wave_mean", sw)),
                                  float(st.get("noise_cv", 0.0))),
                    float(st.get("cpu", 1.0)), float(st.get("mem", 1.0))))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, TraceError):
                    raise
                raise TraceError(f"{sw}: {exc}") from exc
        try:
            edges = [(int(a), int(b)) for a, b in rec.get("edges", [])]
            arrival = float(_trace_field(rec, "arrival_time", where))
        except (TypeError, ValueError) as exc:
            raise TraceError(f"{where}: {exc}") from exc
        jobs.append(JobDAG(job_id, stages, edges, arrival))
    ids = [j.job_id for j in jobs]
    if len(set(ids)) != len(ids):
        raise TraceError(f"{path}: duplicate job ids")
    jobs.sort(key=lambda j: j.arrival_time)
    kind = "trace" if jobs and any(j.arrival_time > 0 for j in jobs) else "batch"
    return jobs, ArrivalProcess(kind, None, len(jobs))


def dump_trace(jobs: Sequence[JobDAG], path: str | Path) -> None:
    doc = {"schema_version": TRACE_SCHEMA_VERSION, "jobs": [
        {"id": j.job_id, "arrival_time": j.arrival_time,
         "stages": [{"num_tasks": s.num_tasks, "first_wave_mean": s.duration.first_wave_mean,
                     "later_wave_mean": s.duration.later_wave_mean, "noise_cv": s.duration.noise_cv,
                     "cpu": s.cpu_request, "mem": s.mem_request} for s in j.nodes],
         "edges": [list(e) for e in j.edges]} for j in jobs]}
    Path(path).write_text(json.dumps(doc, indent=1))
