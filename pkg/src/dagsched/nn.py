"""Tiny hand-differentiated MLP toolkit: parameters live in a flat name -> array dict."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

Params = dict[str, np.ndarray]

LEAK = 0.2
CHECKPOINT_SCHEMA_VERSION = 1


def leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, LEAK * x)  # valid because LEAK < 1


def leaky_relu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, LEAK)


def init_mlp(params: Params, name: str, sizes: list[int], rng: np.random.Generator) -> None:
    """Uniform(+-1/sqrt(fan_in)) weights and biases for a stack of dense layers."""
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{name}.W{k}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{name}.b{k}"] = rng.uniform(-bound, bound, size=fan_out)


def mlp_layers(params: Params, name: str) -> int:
    n = 0
    while f"{name}.W{n}" in params:
        n += 1
    return n


def mlp_forward(params: Params, name: str, x: np.ndarray):
    """Leaky-ReLU hidden layers, identity output. Returns (output, cache)."""
    n = mlp_layers(params, name)
    inputs, pre = [], []
    h = x
    for k in range(n):
        inputs.append(h)
        a = h @ params[f"{name}.W{k}"] + params[f"{name}.b{k}"]
        pre.append(a)
        h = leaky_relu(a) if k < n - 1 else a
    return h, (inputs, pre)


def mlp_backward(params: Params, name: str, cache, dout: np.ndarray, grads: Params) -> np.ndarray:
    """Accumulate parameter gradients into ``grads``; return the gradient w.r.t. the input."""
    inputs, pre = cache
    n = len(inputs)
    d = dout
    for k in reversed(range(n)):
        if k < n - 1:
            d = d * leaky_relu_grad(pre[k])
        grads[f"{name}.W{k}"] += inputs[k].T @ d
        grads[f"{name}.b{k}"] += d.sum(axis=0)
        d = d @ params[f"{name}.W{k}"].T
    return d


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Params, max_norm: float) -> float:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def count_params(params: Params) -> int:
    return int(sum(v.size for v in params.values()))


class Adam:
    """Adam that minimizes: ``step`` subtracts the bias-corrected update."""

    def __init__(self, params: Params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = zeros_like(params)
        self.v = zeros_like(params)
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(v, dtype=float) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=float) for k, v in state["v"].items()}


# --- checkpoint archive ----------------------------------------------------

def _encode(tensors: Params) -> dict:
    return {k: {"shape": list(v.shape), "data": [float(x) for x in np.ravel(v)]}
            for k, v in sorted(tensors.items())}


def _decode(blob: dict) -> Params:
    return {k: np.array(rec["data"], dtype=np.float64).reshape(rec["shape"]) for k, rec in blob.items()}


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | Path, params: Params, optimizer: Adam | None = None,
                    meta: dict | None = None) -> None:
    """JSON tensor archive; Python float repr makes the round trip bit-exact."""
    doc = {"schema_version": CHECKPOINT_SCHEMA_VERSION, "params": _encode(params), "meta": meta or {}}
    if optimizer is not None:
        doc["optimizer"] = {"t": optimizer.t, "lr": optimizer.lr, "m": _encode(optimizer.m),
                            "v": _encode(optimizer.v)}
    atomic_write_text(path, json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[Params, dict | None, dict]:
    """Returns (params, optimizer state or None, meta)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema_version {doc.get('schema_version')!r}")
    opt = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        opt = {"t": o["t"], "lr": o["lr"], "m": _decode(o["m"]), "v": _decode(o["v"])}
    return _decode(doc["params"]), opt, doc.get("meta", {})
