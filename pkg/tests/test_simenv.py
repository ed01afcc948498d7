import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagsched.heuristics import RandomScheduler, fair, fifo
from dagsched.simenv import (FOUR_CLASSES, Action, ClusterEnv, ConfigError, EnvConfig, IllegalActionError,
                             episode_jct_stats, run_episode, runnable_frontier, simulate, write_audit_log)
from dagsched.workload import DurationModel, JobDAG, StageSpec, gen_random_dag, gen_tpch_like


def job(jid, dur=5.0, n=1, arrival=0.0):
    return JobDAG(jid, [StageSpec(n, DurationModel(dur, dur))], [], arrival)


def chain(jid="c", works=((1, 1.0), (1, 1.0))):
    nodes = [StageSpec(n, DurationModel(d, d)) for n, d in works]
    return JobDAG(jid, nodes, [(i, i + 1) for i in range(len(nodes) - 1)])


def join_dag(eps=0.1):
    """Two branches converging in a join: a light left root, a heavy right branch."""
    nodes = [StageSpec(10, DurationModel(1, 1)), StageSpec(4, DurationModel(10, 10)),
             StageSpec(5, DurationModel(10, 10)), StageSpec(1, DurationModel(eps, eps))]
    return JobDAG("join", nodes, [(0, 3), (1, 2), (2, 3)])


def plain(n=1, **kw):
    return EnvConfig(num_executors=n, **kw)


# --- reset -----------------------------------------------------------------

def test_reset_batch_of_twenty():
    env = ClusterEnv(EnvConfig()).reset(gen_tpch_like(0, 20), seed=0)
    assert env.clock == 0.0
    assert len(env.free_executors()) == 50
    assert len(env.jobs) == 20
    assert not env.done


def test_reset_empty_workload_is_done():
    env = ClusterEnv(EnvConfig()).reset([], seed=0)
    assert env.done


def test_zero_executors_rejected():
    with pytest.raises(ConfigError):
        EnvConfig(num_executors=0)


def test_duplicate_job_ids_rejected():
    with pytest.raises(ConfigError):
        ClusterEnv(plain()).reset([job("a"), job("a")])


def test_same_seed_same_episode():
    jobs = gen_tpch_like(4, 6)
    a = simulate(jobs, EnvConfig(num_executors=10, audit=True), fair, seed=3)
    b = simulate(jobs, EnvConfig(num_executors=10, audit=True), fair, seed=3)
    assert a.audit_log == b.audit_log
    assert a.gantt == b.gantt


# --- frontier --------------------------------------------------------------

def test_frontier_chain():
    env = ClusterEnv(plain(1)).reset([chain()])
    assert runnable_frontier(env) == [("c", 0)]
    env.step(Action("c", 0, 1))
    assert runnable_frontier(env) == [("c", 1)]


def test_frontier_join_dag():
    env = ClusterEnv(plain(2)).reset([join_dag()])
    assert set(runnable_frontier(env)) == {("join", 0), ("join", 1)}


# --- step semantics ----------------------------------------------------------

def test_single_task_episode():
    env = ClusterEnv(plain(1, noise=False)).reset([job("a")])
    r, done = env.step(Action("a", 0, 1))
    assert done and env.clock == 5.0 and r == -5.0


def test_two_sequential_jobs():
    env = ClusterEnv(plain(1, move_delay=0.0)).reset([job("a"), job("b")])
    total = run_episode(env, fifo)
    assert total == -15.0
    stats = episode_jct_stats(env)
    assert stats.jcts == {"a": 5.0, "b": 10.0}
    assert stats.average_jct == 7.5


def test_single_job_stats():
    env = simulate([job("a")], plain(1), fifo)
    s = episode_jct_stats(env)
    assert s.average_jct == s.makespan == 5.0


def test_no_completed_jobs_gives_empty_marker():
    env = ClusterEnv(plain(1, horizon=1.0)).reset([job("a")])
    run_episode(env, fifo)
    assert env.truncated and episode_jct_stats(env) is None


def test_move_delay_between_jobs():
    env = ClusterEnv(plain(1, move_delay=3.0)).reset([job("a"), job("b")])
    run_episode(env, fifo)
    starts = {j: s for _, j, _, s, _ in env.gantt}
    assert starts["a"] == 0.0  # first binding is free
    assert starts["b"] == 5.0 + 3.0


def test_no_move_delay_within_job():
    env = ClusterEnv(plain(1, move_delay=3.0)).reset([chain(works=((1, 2.0), (1, 2.0)))])
    run_episode(env, fifo)
    assert [s for *_, s, _ in env.gantt] == [0.0, 2.0]


def test_illegal_actions():
    env = ClusterEnv(plain(2)).reset([chain()])
    with pytest.raises(IllegalActionError):
        env.step(Action("c", 1, 1))  # parent incomplete
    with pytest.raises(IllegalActionError):
        env.step(Action("zzz", 0, 1))
    with pytest.raises(IllegalActionError):
        env.step(Action("c", 0, 0))  # limit must exceed allocation
    with pytest.raises(IllegalActionError):
        env.step(Action("c", 0, 3))  # more than the cluster


def test_limit_beyond_waiting_tasks_leaves_executors_free():
    env = ClusterEnv(plain(5)).reset([chain(works=((2, 1.0), (1, 1.0))), job("b", n=3)])
    env.step(Action("c", 0, 5))
    assert env.job("c").allocated == 2
    assert len(env.free_executors()) == 3
    assert env.clock == 0.0 and not env.done  # another decision at the same instant


def test_executor_stays_with_job_while_it_has_work():
    env = ClusterEnv(plain(2, noise=False, waves=False)).reset(
        [JobDAG("j", [StageSpec(1, DurationModel(1, 1)), StageSpec(1, DurationModel(5, 5)),
                      StageSpec(1, DurationModel(1, 1))], [(0, 2)])])
    env.step(Action("j", 0, 1))
    env.step(Action("j", 1, 2))
    # stage 0 finished at t=1 and stage 2 became runnable: the executor is free but still local
    assert env.clock == 1.0
    e0 = env.executors[0]
    assert e0.is_free and e0.bound_job == "j"


def test_waves_first_task_slower():
    dag = JobDAG("w", [StageSpec(3, DurationModel(2.0, 1.0))], [])
    env = simulate([dag], plain(1, noise=False, inflation=False), fifo)
    assert [round(b - a, 9) for _, _, _, a, b in env.gantt] == [2.0, 1.0, 1.0]


def test_inflation_keyed_by_allocation():
    model = DurationModel(1.0, 1.0, inflation_table={1: 1.0, 3: 2.0})
    dag = JobDAG("i", [StageSpec(3, model)], [])
    env = simulate([dag], plain(3, noise=False, waves=False), fifo)
    # the third executor raises the job's parallelism to 3
    assert sorted(round(b - a, 9) for *_, a, b in env.gantt) == [1.0, 1.0, 2.0]


def test_makespan_objective():
    env = ClusterEnv(plain(1, move_delay=0.0, objective="makespan")).reset([job("a"), job("b")])
    assert run_episode(env, fifo) == -10.0


def test_horizon_truncation_penalty():
    jobs = [job("a", 5.0), job("b", 5.0), job("c", 5.0, arrival=20.0)]
    env = ClusterEnv(plain(1, move_delay=0.0, horizon=7.0)).reset(jobs)
    total = run_episode(env, fifo)
    assert env.truncated
    assert total == pytest.approx(-(5.0 + 7.0))


def test_audit_log_file(tmp_path):
    env = simulate([chain()], plain(1, audit=True), fifo)
    write_audit_log(env, tmp_path / "a.jsonl")
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert len(lines) == len(env.audit_log) > 0
    assert {"clock", "kind", "job_id", "stage", "executor", "detail"} <= set(__import__("json").loads(lines[0]))


# --- properties --------------------------------------------------------------

def random_jobs(seed, n_jobs, max_nodes=6, arrivals=True):
    rng = np.random.default_rng(seed)
    jobs = []
    t = 0.0
    for k in range(n_jobs):
        if arrivals and k:
            t += float(rng.exponential(5.0))
        jobs.append(gen_random_dag(int(rng.integers(1 << 30)), int(rng.integers(1, max_nodes + 1)), 0.4,
                                   max_tasks=5, job_id=f"j{k}", arrival_time=t))
    return jobs


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 6), st.booleans())
@settings(max_examples=40, deadline=None)
def test_reward_identity_and_conservation(seed, n_jobs, n_exec, arrivals):
    jobs = random_jobs(seed, n_jobs, arrivals=arrivals)
    env = ClusterEnv(EnvConfig(num_executors=n_exec, audit=True)).reset(jobs, seed)
    sched = RandomScheduler(seed)
    total = env._reward
    env._reward = 0.0
    last_clock = env.clock
    while not env.done:
        r, _ = env.step(sched(env))
        total += r
        assert env.clock >= last_clock
        last_clock = env.clock
        c = env.executor_counts()
        assert c["busy"] + c["moving"] + c["free"] == n_exec
        for e in env.executors:
            assert e.busy_until is None or e.moving_until is None
        for jr in env.jobs:
            assert all(w + r_ + f == s.num_tasks
                       for w, r_, f, s in zip(jr.waiting, jr.running, jr.finished, jr.dag.nodes))
            assert jr.allocated <= jr.limit
    stats = episode_jct_stats(env)
    assert len(stats.jcts) == n_jobs
    assert -total == pytest.approx(sum(stats.jcts.values()), rel=1e-9)
    # no task of a stage starts before every parent stage completed
    done_at = {}
    for rec in env.audit_log:
        if rec["kind"] == "stage_complete":
            done_at[(rec["job_id"], rec["stage"])] = rec["clock"]
        elif rec["kind"] == "task_start":
            dag = next(j for j in jobs if j.job_id == rec["job_id"])
            for p in dag.parents[rec["stage"]]:
                assert (rec["job_id"], p) in done_at and done_at[(rec["job_id"], p)] <= rec["clock"]


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_determinism_of_event_log(seed):
    jobs = random_jobs(seed, 4)
    logs = []
    for _ in range(2):
        env = ClusterEnv(EnvConfig(num_executors=3, audit=True)).reset(jobs, seed)
        run_episode(env, RandomScheduler(seed + 1))
        logs.append(env.audit_log)
    assert logs[0] == logs[1]


def test_multi_resource_placements_fit():
    cfg = EnvConfig(num_executors=20, executor_classes=FOUR_CLASSES)
    for seed in range(3):
        env = simulate(gen_tpch_like(seed, 8, multi_resource=True), cfg, RandomScheduler(seed), seed)
        assert all(cap >= req for cap, req, _ in env.placements)
        assert len(env.completed) == 8


def test_four_classes_are_equal_shares():
    env = ClusterEnv(EnvConfig(num_executors=40, executor_classes=FOUR_CLASSES)).reset([job("a")])
    counts = np.bincount([e.class_id for e in env.executors])
    assert counts.tolist() == [10, 10, 10, 10]
    assert sorted({e.mem for e in env.executors}) == [0.25, 0.5, 0.75, 1.0]


def test_class_restricted_action():
    dag = JobDAG("m", [StageSpec(4, DurationModel(1, 1), mem_request=0.6)], [])
    env = ClusterEnv(EnvConfig(num_executors=8, executor_classes=FOUR_CLASSES)).reset([dag])
    assert env.legal_classes("m", 0) == [2, 3]
    with pytest.raises(IllegalActionError):
        env.step(Action("m", 0, 4, executor_class=0))
    env.step(Action("m", 0, 4, executor_class=3))
    assert {e.class_id for e in env.executors if not e.is_free} == {3}
