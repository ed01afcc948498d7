"""Scheduling policy on top of the graph embeddings.

One action is a runnable stage, a parallelism limit for that stage's job and, with
several executor classes, the class to draw executors from. Each is picked from a
masked softmax over scores produced by small shared networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dagsched import gnn
from dagsched.gnn import D, GraphBatch
from dagsched.nn import Params, init_mlp, mlp_backward, mlp_forward, zeros_like
from dagsched.simenv import Action, ClusterEnv, IllegalActionError

# divisors that bring raw node features to order one
FEATURE_SCALE = np.array([10.0, 10.0, 10.0, 10.0, 1.0])


def init_params(seed: int = 0, num_classes: int = 1) -> Params:
    """All policy weights. ``num_classes > 1`` adds the executor-class head."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    gnn.init_gnn_params(rng, params)
    init_mlp(params, "q", [3 * D, *gnn.HIDDEN, 1], rng)
    init_mlp(params, "w", [2 * D + 1, *gnn.HIDDEN, 1], rng)
    if num_classes > 1:
        init_mlp(params, "c", [2 * D + num_classes, *gnn.HIDDEN, 1], rng)
    return params


def num_classes_of(params: Params) -> int:
    if "c.W0" not in params:
        return 1
    return params["c.W0"].shape[0] - 2 * D


@dataclass
class Observation:
    """Everything the policy reads from a decision point, detached from the simulator."""

    batch: GraphBatch
    node_keys: list[tuple[str, int]]
    legal: np.ndarray  # indices into node_keys
    job_ids: list[str]
    allocated: np.ndarray  # per job
    total_executors: int
    legal_classes: dict[int, list[int]] = field(default_factory=dict)
    num_classes: int = 1
    clock: float = 0.0


def node_features(env: ClusterEnv, jr) -> np.ndarray:
    """Raw per-stage features: waiting tasks, mean task duration, executors on the stage,
    free executors in the cluster, and whether free executors are already bound to the job."""
    free = env.free_executors()
    local = float(any(e.job is jr for e in free))
    x = np.zeros((jr.dag.num_nodes, 5))
    for v, s in enumerate(jr.dag.nodes):
        x[v] = (jr.waiting[v], s.duration.later_wave_mean, jr.running[v], len(free), local)
    return x


def observe(env: ClusterEnv) -> Observation:
    jobs = env.jobs
    feats = [node_features(env, jr) / FEATURE_SCALE for jr in jobs]
    batch = GraphBatch([jr.dag for jr in jobs], feats)
    keys = [(jr.job_id, v) for jr in jobs for v in range(jr.dag.num_nodes)]
    pos = {k: i for i, k in enumerate(keys)}
    legal_pairs = env.legal_frontier()
    legal = np.array([pos[k] for k in legal_pairs], dtype=int)
    multi = env.config.multi_resource
    classes = {}
    if multi:
        for k in legal_pairs:
            classes[pos[k]] = env.legal_classes(*k)
    return Observation(batch, keys, legal, [jr.job_id for jr in jobs],
                       np.array([jr.allocated for jr in jobs], dtype=int), env.total_executors,
                       classes, len(env.config.classes) if multi else 1, env.clock)


# --- distributions -----------------------------------------------------------

def masked_softmax(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Softmax over entries where ``mask`` holds; exactly zero elsewhere."""
    scores = np.asarray(scores)
    if not np.issubdtype(scores.dtype, np.floating):
        scores = scores.astype(float)
    if mask is None:
        mask = np.ones(scores.shape, dtype=bool)
    if not mask.any():
        raise ValueError("softmax over an empty support")
    out = np.zeros_like(scores)
    s = scores[mask]
    e = np.exp(s - s.max())
    out[mask] = e / e.sum()
    return out


def _entropy(p: np.ndarray):
    nz = p[p > 0]
    return -(nz * np.log(nz)).sum()


def _dlogits(p: np.ndarray, chosen: int, c_logp: float, c_ent: float) -> np.ndarray:
    """Gradient of c_logp * log p[chosen] + c_ent * H(p) with respect to the logits."""
    onehot = np.zeros_like(p)
    onehot[chosen] = 1.0
    d = c_logp * (onehot - p)
    if c_ent:
        logp = np.log(np.where(p > 0, p, 1.0))
        d += c_ent * (-p * (logp + _entropy(p)))
    return d


@dataclass
class Choice:
    node: int  # position in obs.legal
    limit: int
    cls: int | None = None  # position in the node's legal class list


class _Heads:
    """Forward pass of the whole network for one observation, kept for the backward pass."""

    def __init__(self, params: Params, obs: Observation):
        if len(obs.legal) == 0:
            raise IllegalActionError("no runnable stage to choose from")
        self.params, self.obs = params, obs
        self.emb, self.gcache = gnn.forward(params, obs.batch)
        E, Y, z = self.emb.nodes, self.emb.jobs, self.emb.glob
        legal = obs.legal
        self.legal_jobs = obs.batch.job_of[legal]
        qin = np.concatenate([E[legal], Y[self.legal_jobs], np.repeat(z[None], len(legal), 0)], axis=1)
        q, self.qcache = mlp_forward(params, "q", qin)
        self.node_scores = q[:, 0]
        self.node_probs = masked_softmax(self.node_scores)
        self._limits: dict[int, tuple] = {}
        self._classes: dict[int, tuple] = {}

    def limit_head(self, node: int):
        if node not in self._limits:
            self._limits[node] = self._limit_head(node)
        return self._limits[node]

    def class_head(self, node: int):
        if node not in self._classes:
            self._classes[node] = self._class_head(node)
        return self._classes[node]

    def _limit_head(self, node: int):
        obs = self.obs
        j = self.legal_jobs[node]
        alloc = int(obs.allocated[j])
        E = obs.total_executors
        if alloc >= E:
            raise IllegalActionError("job already holds every executor; no legal limit")
        limits = np.arange(alloc + 1, E + 1)
        Y, z = self.emb.jobs, self.emb.glob
        win = np.concatenate([np.repeat(Y[j][None], len(limits), 0), np.repeat(z[None], len(limits), 0),
                              (limits / E)[:, None]], axis=1)
        w, cache = mlp_forward(self.params, "w", win)
        return limits, masked_softmax(w[:, 0]), cache

    def _class_head(self, node: int):
        obs = self.obs
        classes = obs.legal_classes[int(obs.legal[node])]
        j = self.legal_jobs[node]
        Y, z = self.emb.jobs, self.emb.glob
        onehot = np.eye(obs.num_classes)[classes]
        cin = np.concatenate([np.repeat(Y[j][None], len(classes), 0),
                              np.repeat(z[None], len(classes), 0), onehot], axis=1)
        c, cache = mlp_forward(self.params, "c", cin)
        return classes, masked_softmax(c[:, 0]), cache


def _pick(p: np.ndarray, rng: np.random.Generator | None, greedy: bool) -> int:
    if greedy or rng is None:
        return int(np.argmax(p))
    return int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"), len(p) - 1))


def node_distribution(params: Params, obs: Observation) -> dict[tuple[str, int], float]:
    h = _Heads(params, obs)
    return {obs.node_keys[int(i)]: float(p) for i, p in zip(obs.legal, h.node_probs)}


def limit_distribution(params: Params, obs: Observation, key: tuple[str, int]) -> dict[int, float]:
    h = _Heads(params, obs)
    node = _legal_position(obs, key)
    limits, p, _ = h.limit_head(node)
    return {int(l): float(q) for l, q in zip(limits, p)}


def _legal_position(obs: Observation, key: tuple[str, int]) -> int:
    try:
        idx = obs.node_keys.index(key)
    except ValueError:
        raise IllegalActionError(f"stage {key} is not in the observation") from None
    hits = np.flatnonzero(obs.legal == idx)
    if len(hits) == 0:
        raise IllegalActionError(f"stage {key} is not runnable")
    return int(hits[0])


def to_action(obs: Observation, choice: Choice) -> Action:
    job_id, v = obs.node_keys[int(obs.legal[choice.node])]
    cls = None
    if choice.cls is not None:
        cls = obs.legal_classes[int(obs.legal[choice.node])][choice.cls]
    return Action(job_id, v, int(choice.limit), cls)


def choice_from_action(obs: Observation, action: Action) -> Choice:
    node = _legal_position(obs, (action.job_id, action.node))
    j = obs.batch.job_of[obs.legal[node]]
    if not obs.allocated[j] < action.limit <= obs.total_executors:
        raise IllegalActionError(f"limit {action.limit} is not legal")
    cls = None
    if obs.num_classes > 1:
        classes = obs.legal_classes[int(obs.legal[node])]
        if action.executor_class not in classes:
            raise IllegalActionError(f"executor class {action.executor_class} is not legal")
        cls = classes.index(action.executor_class)
    return Choice(node, action.limit, cls)


def sample_action(params: Params, obs: Observation, rng: np.random.Generator | None = None,
                  greedy: bool = False) -> tuple[Choice, float, float]:
    """Pick node, then limit, then (if any) executor class. Returns (choice, log_prob, entropy)."""
    return _sample(_Heads(params, obs), rng, greedy)


def sample_with_cache(params: Params, obs: Observation, rng: np.random.Generator | None = None,
                      greedy: bool = False):
    """Like ``sample_action`` but also returns the forward pass, which ``accumulate_grad``
    can reuse as long as ``params`` has not changed in between."""
    h = _Heads(params, obs)
    return (*_sample(h, rng, greedy), h)


def _sample(h: _Heads, rng, greedy):
    obs = h.obs
    node = _pick(h.node_probs, rng, greedy)
    logp = np.log(h.node_probs[node])
    ent = _entropy(h.node_probs)
    limits, pl, _ = h.limit_head(node)
    k = _pick(pl, rng, greedy)
    logp += np.log(pl[k])
    ent += _entropy(pl)
    cls = None
    if obs.num_classes > 1:
        _, pc, _ = h.class_head(node)
        cls = _pick(pc, rng, greedy)
        logp += np.log(pc[cls])
        ent += _entropy(pc)
    return Choice(node, int(limits[k]), cls), float(logp), float(ent)


def accumulate_grad(params: Params, obs: Observation, choice: Choice, c_logp: float, c_ent: float,
                    grads: Params, heads: _Heads | None = None) -> tuple[float, float]:
    """Add the gradient of c_logp * log pi(choice) + c_ent * entropy into ``grads``.

    Returns (log_prob, entropy) of the choice under ``params``. ``heads`` is a forward
    pass from ``sample_with_cache`` under the same parameters.
    """
    h = heads if heads is not None and heads.params is params else _Heads(params, obs)
    E_, Y_, z_ = h.emb.nodes, h.emb.jobs, h.emb.glob
    dE = np.zeros_like(E_)
    dY = np.zeros_like(Y_)
    dz = np.zeros_like(z_)
    logp = np.log(h.node_probs[choice.node])
    ent = _entropy(h.node_probs)
    dq = _dlogits(h.node_probs, choice.node, c_logp, c_ent)
    din = mlp_backward(params, "q", h.qcache, dq[:, None], grads)
    np.add.at(dE, h.obs.legal, din[:, :D])
    np.add.at(dY, h.legal_jobs, din[:, D:2 * D])
    dz += din[:, 2 * D:].sum(axis=0)
    j = h.legal_jobs[choice.node]
    limits, pl, wcache = h.limit_head(choice.node)
    k = int(choice.limit - limits[0])
    if not 0 <= k < len(limits):
        raise IllegalActionError(f"limit {choice.limit} is not legal")
    logp += np.log(pl[k])
    ent += _entropy(pl)
    dw = _dlogits(pl, k, c_logp, c_ent)
    din = mlp_backward(params, "w", wcache, dw[:, None], grads)
    dY[j] += din[:, :D].sum(axis=0)
    dz += din[:, D:2 * D].sum(axis=0)
    if choice.cls is not None:
        _, pc, ccache = h.class_head(choice.node)
        logp += np.log(pc[choice.cls])
        ent += _entropy(pc)
        dc = _dlogits(pc, choice.cls, c_logp, c_ent)
        din = mlp_backward(params, "c", ccache, dc[:, None], grads)
        dY[j] += din[:, :D].sum(axis=0)
        dz += din[:, D:2 * D].sum(axis=0)
    gnn.backward(params, h.gcache, dE, dY, dz, grads)
    return float(logp), float(ent)


def action_log_prob(params: Params, obs: Observation, choice: Choice):
    """Log-probability as a numpy scalar in the parameters' precision."""
    h = _Heads(params, obs)
    logp = np.log(h.node_probs[choice.node])
    limits, pl, _ = h.limit_head(choice.node)
    logp += np.log(pl[choice.limit - limits[0]])
    if choice.cls is not None:
        _, pc, _ = h.class_head(choice.node)
        logp += np.log(pc[choice.cls])
    return logp


def action_log_prob_grad(params: Params, obs: Observation, action: Action) -> Params:
    grads = zeros_like(params)
    accumulate_grad(params, obs, choice_from_action(obs, action), 1.0, 0.0, grads)
    return grads


class PolicyScheduler:
    """Adapter that lets the learned policy drive ``run_episode`` like any heuristic."""

    def __init__(self, params: Params, greedy: bool = True, seed: int = 0):
        self.params = params
        self.greedy = greedy
        self.rng = np.random.default_rng(seed)

    def __call__(self, env: ClusterEnv) -> Action | None:
        obs = observe(env)
        if len(obs.legal) == 0:
            return None
        choice, _, _ = sample_action(self.params, obs, self.rng, self.greedy)
        return to_action(obs, choice)
