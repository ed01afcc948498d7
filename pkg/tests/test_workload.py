import json
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagsched.templates import TEMPLATES
from dagsched.workload import (TPCH_SIZES, ArrivalProcess, DagValidationError, DurationModel, JobDAG,
                               StageSpec, TraceError, dump_trace, gen_random_dag, gen_tpch_like,
                               load_trace, sample_task_duration, work_share_of_top)

DOCS = __import__("pathlib").Path(__file__).resolve().parents[1] / "docs"


def kahn_is_acyclic(n, edges):
    """Independent acyclicity oracle."""
    indeg = [0] * n
    out = [[] for _ in range(n)]
    for a, b in edges:
        out[a].append(b)
        indeg[b] += 1
    q = deque(i for i in range(n) if indeg[i] == 0)
    seen = 0
    while q:
        v = q.popleft()
        seen += 1
        for u in out[v]:
            indeg[u] -= 1
            if indeg[u] == 0:
                q.append(u)
    return seen == n


def stage(n=1, first=1.0, later=1.0, **kw):
    return StageSpec(n, DurationModel(first, later), **kw)


# --- random DAGs -----------------------------------------------------------

def test_random_dag_single_node():
    dag = gen_random_dag(0, 1, 0.5)
    assert dag.num_nodes == 1 and dag.edges == ()


def test_random_dag_acyclic_by_kahn():
    dag = gen_random_dag(42, 10, 0.3)
    assert kahn_is_acyclic(dag.num_nodes, dag.edges)


def test_random_dag_complete():
    dag = gen_random_dag(7, 5, 1.0)
    assert len(dag.edges) == 10
    assert set(dag.edges) == {(a, b) for a in range(5) for b in range(a + 1, 5)}


def test_random_dag_rejects_zero_nodes():
    with pytest.raises(ValueError):
        gen_random_dag(0, 0, 0.5)


@given(st.integers(0, 10_000), st.integers(1, 15), st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_random_dag_properties(seed, n, p):
    dag = gen_random_dag(seed, n, p)
    assert all(a < b for a, b in dag.edges)
    assert kahn_is_acyclic(n, dag.edges)
    again = gen_random_dag(seed, n, p)
    assert again.edges == dag.edges
    assert [s.num_tasks for s in again.nodes] == [s.num_tasks for s in dag.nodes]


# --- validation ------------------------------------------------------------

def test_dag_rejects_cycle_and_names_job():
    with pytest.raises(DagValidationError, match="loop"):
        JobDAG("loop", [stage(), stage()], [(0, 1), (1, 0)])


@pytest.mark.parametrize("edges,msg", [([(0, 0)], "self-edge"), ([(0, 1), (0, 1)], "duplicate"),
                                       ([(0, 5)], "missing")])
def test_dag_rejects_bad_edges(edges, msg):
    with pytest.raises(DagValidationError, match=msg):
        JobDAG("j", [stage(), stage()], edges)


def test_dag_rejects_negative_arrival():
    with pytest.raises(DagValidationError):
        JobDAG("j", [stage()], [], -1.0)


def test_stage_and_model_invariants():
    with pytest.raises(ValueError):
        StageSpec(0, DurationModel(1, 1))
    with pytest.raises(ValueError):
        stage(mem_request=0.0)
    with pytest.raises(ValueError):
        stage(cpu_request=-1)
    with pytest.raises(ValueError):
        DurationModel(0.5, 1.0)
    with pytest.raises(ValueError):
        DurationModel(1, 1, inflation_table={1: 1.2, 4: 1.1})
    with pytest.raises(ValueError):
        DurationModel(1, 1, inflation_table={1: 0.9})
    with pytest.raises(ValueError):
        ArrivalProcess("poisson", 0.0, 3)


# --- durations -------------------------------------------------------------

def test_duration_zero_noise_waves():
    s = StageSpec(1, DurationModel(2.0, 1.0))
    assert sample_task_duration(s, "later", 1, np.random.default_rng(0)) == 1.0
    assert sample_task_duration(s, "first", 1, np.random.default_rng(0)) == 2.0


def test_duration_inflation_lookup():
    table = {1: 1.0, 40: 1.5}
    s = StageSpec(1, DurationModel(1.0, 1.0, inflation_table=table))
    # oracle: largest key not above the parallelism
    for p in (1, 2, 39, 40, 41, 100):
        expected = table[max(k for k in table if k <= p)]
        assert sample_task_duration(s, "later", p, None) == expected
    assert sample_task_duration(s, "later", 40, np.random.default_rng(1)) == 1.5


def test_duration_rejects_zero_parallelism():
    with pytest.raises(ValueError):
        sample_task_duration(stage(), "later", 0)


def test_duration_noise_mean_and_cv():
    s = StageSpec(1, DurationModel(3.0, 2.0, noise_cv=0.5))
    rng = np.random.default_rng(3)
    x = np.array([sample_task_duration(s, "later", 1, rng) for _ in range(40_000)])
    assert (x > 0).all()
    assert abs(x.mean() - 2.0) < 0.02
    assert abs(x.std() / x.mean() - 0.5) < 0.02


# --- TPC-H-like generator ---------------------------------------------------

def test_tpch_sizes_match_reported_set():
    assert TPCH_SIZES == (2, 5, 10, 20, 50, 100)


def test_templates_shape_catalogue():
    assert len(TEMPLATES) == 22
    assert all(3 <= len(t.stages) <= 20 for t in TEMPLATES)
    for t in TEMPLATES:
        assert kahn_is_acyclic(len(t.stages), t.edges)


def test_tpch_single_size_work_scales():
    a = gen_tpch_like(1, 1, sizes=(10,), noise_cv=0.0, templates=[0])[0]
    b = gen_tpch_like(1, 1, sizes=(40,), noise_cv=0.0, templates=[0])[0]
    assert len(gen_tpch_like(1, 1, sizes=(10,))) == 1
    assert b.total_work > a.total_work


def test_tpch_heavy_tail_seed3():
    jobs = gen_tpch_like(3, 1000)
    share = work_share_of_top(jobs, 0.23)
    assert 0.75 <= share <= 0.90


def test_tpch_errors():
    with pytest.raises(ValueError):
        gen_tpch_like(0, 3, sizes=())


def test_tpch_deterministic_and_acyclic():
    a = gen_tpch_like(5, 30, mean_interarrival=45.0)
    b = gen_tpch_like(5, 30, mean_interarrival=45.0)
    assert [j.job_id for j in a] == [j.job_id for j in b]
    assert [j.arrival_time for j in a] == [j.arrival_time for j in b]
    assert all(kahn_is_acyclic(j.num_nodes, j.edges) for j in a)
    assert a[0].arrival_time == 0.0
    assert all(x.arrival_time <= y.arrival_time for x, y in zip(a, a[1:]))


def test_total_work_formula():
    dag = JobDAG("j", [StageSpec(3, DurationModel(2, 1.5)), StageSpec(2, DurationModel(4, 4))], [(0, 1)])
    assert dag.total_work == 3 * 1.5 + 2 * 4


# --- traces ----------------------------------------------------------------

def test_sample_trace():
    jobs, proc = load_trace(DOCS / "sample_trace.json")
    assert [j.arrival_time for j in jobs] == [0.0, 30.0]
    assert proc.kind == "trace" and proc.num_jobs == 2


def test_trace_self_edge(tmp_path):
    doc = {"schema_version": 1, "jobs": [{"id": "x", "arrival_time": 0, "edges": [[3, 3]], "stages": [
        {"num_tasks": 1, "first_wave_mean": 1, "later_wave_mean": 1, "cpu": 1, "mem": 1}] * 4}]}
    p = tmp_path / "t.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(DagValidationError, match="self-edge"):
        load_trace(p)


def test_trace_cycle_names_job(tmp_path):
    st_ = {"num_tasks": 1, "first_wave_mean": 1, "later_wave_mean": 1, "cpu": 1, "mem": 1}
    doc = {"schema_version": 1, "jobs": [{"id": "cyc-7", "arrival_time": 0, "stages": [st_, st_],
                                          "edges": [[0, 1], [1, 0]]}]}
    p = tmp_path / "t.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(DagValidationError, match="cyc-7"):
        load_trace(p)


def test_trace_empty(tmp_path):
    p = tmp_path / "t.json"
    p.write_text(json.dumps({"schema_version": 1, "jobs": []}))
    jobs, proc = load_trace(p)
    assert jobs == [] and proc.kind == "batch"


def test_trace_malformed(tmp_path):
    p = tmp_path / "t.json"
    p.write_text('{"schema_version": 1, "jobs": [')
    with pytest.raises(TraceError):
        load_trace(p)
    p.write_text(json.dumps({"schema_version": 1, "jobs": [{"id": "a", "arrival_time": 0}]}))
    with pytest.raises(TraceError, match=r"jobs\[0\]"):
        load_trace(p)


def test_trace_round_trip(tmp_path):
    jobs = gen_tpch_like(2, 4, mean_interarrival=10.0, multi_resource=True, noise_cv=0.0)
    p = tmp_path / "rt.json"
    dump_trace(jobs, p)
    back, _ = load_trace(p)
    assert [j.job_id for j in back] == [j.job_id for j in jobs]
    for a, b in zip(jobs, back):
        assert a.edges == b.edges
        assert [s.num_tasks for s in a.nodes] == [s.num_tasks for s in b.nodes]
        assert [s.mem_request for s in a.nodes] == [s.mem_request for s in b.nodes]
