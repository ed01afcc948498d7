from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagsched import policy as P
from dagsched import training as T
from dagsched.nn import Adam, zeros_like
from dagsched.simenv import EnvConfig
from dagsched.workload import gen_tpch_like

from gradcheck import fd_check


def traj(rewards, seq=0, times=None):
    t = T.Trajectory(rewards=list(rewards), sequence_id=seq)
    t.times = list(times) if times is not None else list(range(len(rewards)))
    return t


def small_workload(seed):
    return gen_tpch_like(seed, 2, sizes=(2,), templates=[0, 5])


ENV = EnvConfig(num_executors=4)


# --- baselines and returns ----------------------------------------------------------

def test_returns_to_go():
    assert T.returns_to_go([1.0, 2.0, 3.0]).tolist() == [6.0, 5.0, 3.0]
    assert len(T.returns_to_go([])) == 0


def test_baseline_example():
    # returns-to-go (3, 1) and (5, 2) -> baseline (4, 1.5)
    a, b = traj([2.0, 1.0]), traj([3.0, 2.0])
    assert T.input_dependent_baseline([a, b]).tolist() == [4.0, 1.5]


def test_identical_trajectories_have_zero_advantage():
    a, b = traj([-1.0, -2.0, -0.5]), traj([-1.0, -2.0, -0.5])
    for adv in T.advantages([a, b], T.input_dependent_baseline([a, b])):
        assert np.all(adv == 0)


def test_baseline_zero_extends_short_episodes():
    a, b = traj([1.0]), traj([1.0, 1.0, 1.0])
    assert T.input_dependent_baseline([a, b]).tolist() == [2.0, 1.0, 0.5]


def test_baseline_rejects_mixed_sequences():
    with pytest.raises(ValueError):
        T.input_dependent_baseline([traj([1.0], seq=1), traj([1.0], seq=2)])


def test_single_rollout_has_zero_advantage_and_no_update():
    params = P.init_params(0)
    before = {k: v.copy() for k, v in params.items()}
    t = T.rollout(params, small_workload(0), ENV, None, 0, np.random.default_rng(0))
    diag = T.reinforce_update(params, Adam(params), [t], T.input_dependent_baseline([t]), entropy_weight=0.0)
    assert diag["mean_sq_advantage"] == 0.0 and not diag["updated"]
    assert all(np.array_equal(before[k], params[k]) for k in params)


@given(st.lists(st.lists(st.floats(-10, 0), min_size=1, max_size=6), min_size=2, max_size=6), st.randoms())
@settings(max_examples=50, deadline=None)
def test_baseline_invariant_to_episode_order(rewards, rnd):
    trajs = [traj(r) for r in rewards]
    shuffled = trajs[:]
    rnd.shuffle(shuffled)
    assert np.allclose(T.input_dependent_baseline(trajs), T.input_dependent_baseline(shuffled))


def test_time_based_baseline_pools_sequences():
    a, b = traj([-1.0, -1.0], seq=1, times=[0.0, 5.0]), traj([-3.0, -3.0], seq=2, times=[0.0, 5.0])
    advs = T.time_based_baseline([a, b], bins=np.array([0.0, 5.0]))
    assert advs[0].tolist() == [2.0, 1.0] and advs[1].tolist() == [-2.0, -1.0]


# --- episode length and schedules -------------------------------------------------------

def test_episode_length_exponential():
    rng = np.random.default_rng(0)
    x = np.array([T.sample_episode_length(100.0, rng) for _ in range(100_000)])
    assert abs(x.mean() - 100.0) / 100.0 < 0.02
    # memoryless: the excess over 50 among survivors has the same mean
    # memoryless: P(tau > a + b | tau > a) matches P(tau > b)
    for a, b in ((50.0, 30.0), (100.0, 100.0)):
        cond = np.mean(x[x > a] > a + b)
        assert abs(cond - np.mean(x > b)) < 0.01
    with pytest.raises(ValueError):
        T.sample_episode_length(0.0, rng)


def test_tau_growth_and_schedules():
    cfg = T.TrainConfig(iterations=3, num_workers=2, tau_mean=50.0, tau_growth=25.0, eval_interval=0)
    tr = T.Trainer(small_workload, ENV, cfg)
    taus = [tr.run_iteration()["tau_mean"] for _ in range(3)]
    assert taus == [50.0, 75.0, 100.0]
    c = T.TrainConfig(iterations=11, entropy_start=1.0, entropy_end=0.0,
                      termination_prob_start=1e-2, termination_prob_end=1e-3)
    assert T.entropy_weight_at(c, 0) == 1.0 and T.entropy_weight_at(c, 10) == 0.0
    assert T.entropy_weight_at(c, 5) == pytest.approx(0.5)
    assert T.termination_prob_at(c, 10) == pytest.approx(1e-3)


def test_termination_prob_curriculum_uses_inverse():
    cfg = T.TrainConfig(iterations=2, num_workers=1, curriculum="termination_prob",
                        termination_prob_start=0.01, termination_prob_end=0.01, eval_interval=0)
    tr = T.Trainer(small_workload, ENV, cfg)
    assert tr.run_iteration()["tau_mean"] == pytest.approx(100.0)


@pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(num_workers=0), dict(curriculum="x"),
                                dict(termination_prob_start=1e-8), dict(reward_window=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        T.TrainConfig(**kw)


# --- reward normalizer ---------------------------------------------------------------------

@given(st.lists(st.floats(-1e3, 0), max_size=300), st.integers(1, 50))
@settings(max_examples=60, deadline=None)
def test_normalizer_matches_ring_buffer(rewards, window):
    n = T.RewardNormalizer(window)
    ring = deque(maxlen=window)
    for i in range(0, len(rewards), 7):
        chunk = rewards[i:i + 7]
        n.add(chunk)
        ring.extend(chunk)
        expect = sum(ring) / len(ring) if ring else 0.0
        assert n.mean == pytest.approx(expect, rel=1e-9, abs=1e-9)
    assert T.RewardNormalizer.from_state(n.state()).mean == pytest.approx(n.mean)


def test_differential_offset_shifts_training_rewards():
    t = traj([-2.0, -4.0])
    t.differential_offset = -3.0
    assert t.train_rewards.tolist() == [1.0, -1.0]
    assert t.total_reward == -6.0


# --- rollouts -----------------------------------------------------------------------------

def test_rollout_deterministic_and_complete():
    params = P.init_params(1)
    jobs = small_workload(3)
    a = T.rollout(params, jobs, ENV, None, 3, np.random.default_rng(5))
    b = T.rollout(params, jobs, ENV, None, 3, np.random.default_rng(5))
    assert a.rewards == b.rewards and a.times == b.times
    assert a.completed and a.average_jct is not None
    assert -sum(a.rewards) == pytest.approx(a.average_jct * len(jobs))


def test_rollout_before_first_event_is_short():
    jobs = gen_tpch_like(0, 2, sizes=(2,), mean_interarrival=1000.0)
    t = T.rollout(P.init_params(0), jobs, ENV, 1e-6, 0, np.random.default_rng(0))
    # only the decisions at time zero fit; one job is in the system for the whole horizon
    assert not t.completed
    assert set(t.times) == {0.0}
    assert -sum(t.rewards) == pytest.approx(1e-6, rel=1e-9)


def test_rollout_rejects_bad_tau():
    with pytest.raises(ValueError):
        T.rollout(P.init_params(0), small_workload(0), ENV, 0.0, 0, np.random.default_rng(0))


# --- policy gradient ------------------------------------------------------------------------

def test_surrogate_gradient_matches_finite_differences():
    params = P.init_params(2)
    jobs = small_workload(1)
    trajs = [T.rollout(params, jobs, ENV, None, 1, np.random.default_rng(k)) for k in range(2)]
    b = T.input_dependent_baseline(trajs)
    advs = T.advantages(trajs, b)
    grads, _ = T.surrogate_gradient(params, trajs, advs, 0.05)
    rng = np.random.default_rng(0)
    f = lambda q: T.surrogate_value(q, trajs, advs, 0.05)  # noqa: E731
    assert fd_check(f, params, grads, rng, entries=3) < 1e-4


def test_positive_advantage_raises_action_probability():
    params = P.init_params(3)
    t = T.rollout(params, small_workload(2), ENV, None, 2, np.random.default_rng(1))
    obs, choice = t.observations[0], t.choices[0]
    before = P.action_log_prob(params, obs, choice)
    one = traj([1.0])
    one.observations, one.choices = [obs], [choice]
    T.reinforce_update(params, Adam(params, 1e-3), [one], np.zeros(1), entropy_weight=0.0)
    assert P.action_log_prob(params, obs, choice) > before


def test_nonfinite_gradient_skips_update():
    params = P.init_params(4)
    t = T.rollout(params, small_workload(2), ENV, None, 2, np.random.default_rng(1))
    t.rewards = [float("nan")] * len(t)
    before = {k: v.copy() for k, v in params.items()}
    diag = T.reinforce_update(params, Adam(params), [t], np.zeros(len(t)), 0.0)
    assert not diag["updated"] and "error" in diag
    assert all(np.array_equal(before[k], params[k]) for k in params)


# --- trainer ---

def test_zero_iterations_returns_initial_params():
    cfg = T.TrainConfig(iterations=0, num_workers=2)
    params, curve = T.train(small_workload, ENV, cfg)
    assert curve == []
    init = P.init_params(cfg.seed)
    assert all(np.array_equal(init[k], params[k]) for k in init)


def test_two_job_toy_beats_random():
    from dagsched import heuristics as H
    from dagsched.simenv import ClusterEnv, episode_jct_stats, run_episode
    from dagsched.workload import DurationModel, JobDAG, StageSpec

    def toy(seed):
        # one short and one long job; running the short one first is clearly better
        return [JobDAG("long", [StageSpec(2, DurationModel(20.0, 20.0))], []),
                JobDAG("short", [StageSpec(2, DurationModel(2.0, 2.0))], [])]

    env_cfg = EnvConfig(num_executors=2).simplified()
    cfg = T.TrainConfig(learning_rate=3e-3, num_workers=4, iterations=500, curriculum="off",
                        differential_reward=False, eval_interval=0)
    params, _ = T.train(toy, env_cfg, cfg)
    learned = T.evaluate(params, toy, env_cfg, [0])
    rand = []
    for s in range(200):
        env = ClusterEnv(env_cfg).reset(toy(s), s)
        run_episode(env, H.RandomScheduler(s))
        rand.append(episode_jct_stats(env).average_jct)
    assert learned <= np.mean(rand)


def test_trainer_resume_matches_uninterrupted(tmp_path):
    cfg = T.TrainConfig(iterations=4, num_workers=2, tau_mean=200.0, eval_interval=2, eval_sequences=2)
    full = T.Trainer(small_workload, ENV, cfg)
    full.train()
    part = T.Trainer(small_workload, ENV, cfg)
    part.train(2)
    part.save(tmp_path / "ck.json")
    resumed = T.Trainer(small_workload, ENV, cfg)
    resumed.load(tmp_path / "ck.json")
    resumed.train()
    assert T.curve_csv(full.curve) == T.curve_csv(resumed.curve)
    assert all(np.array_equal(full.params[k], resumed.params[k]) for k in full.params)


def test_curve_csv_columns():
    text = T.curve_csv([{"iteration": 1, "mean_return": -1.5, "eval_avg_jct": "", "tau_mean": 10.0,
                         "wall_seconds": 0.0}])
    assert text.splitlines()[0] == ",".join(T.CURVE_FIELDS)
    assert text.splitlines()[1] == "1,-1.5,,10.0,0.0"
