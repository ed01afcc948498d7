"""Experiment configuration: a flat ``section.key = value`` text format with typed defaults.

Lines starting with ``#`` are comments. Command-line overrides use the same
``key=value`` syntax. Every key must be known to the schema below; values are
checked against its type and errors point at the offending line or override.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from dagsched.heuristics import HeuristicConfig
from dagsched.simenv import FOUR_CLASSES, ConfigError, EnvConfig
from dagsched.training import TrainConfig
from dagsched.workload import TPCH_SIZES, JobDAG, gen_tpch_like, load_trace


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("none", "") else float(s)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return parse


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "seed": (int, 0),
    "output.dir": (str, "out"),
    "env.num_executors": (int, 50),
    "env.move_delay": (float, 2.5),
    "env.multi_resource": (_bool, False),
    "env.simplified": (_bool, False),
    "env.waves": (_bool, True),
    "env.inflation": (_bool, True),
    "env.noise": (_bool, True),
    "env.objective": (_choice("avg_jct", "makespan"), "avg_jct"),
    "workload.kind": (_choice("tpch", "trace"), "tpch"),
    "workload.trace_path": (str, ""),
    "workload.num_jobs": (int, 20),
    "workload.arrival": (_choice("batch", "poisson"), "batch"),
    "workload.mean_interarrival": (float, 45.0),
    "workload.sizes": (_floats, tuple(float(s) for s in TPCH_SIZES)),
    "workload.templates": (_ints, ()),
    "workload.noise_cv": (float, 0.1),
    "scheduler.name": (str, "fair"),
    "scheduler.checkpoint": (str, ""),
    "scheduler.fairness_exponent": (float, -0.4),
    "scheduler.graphene_threshold_t": (float, 2.0),
    "scheduler.graphene_threshold_m": (float, 0.75),
    "compare.schedulers": (_strs, ("fifo", "sjf_cp", "fair")),
    "compare.seeds": (int, 20),
    "compare.alpha_min": (float, -2.0),
    "compare.alpha_max": (float, 2.0),
    "compare.alpha_step": (float, 0.1),
    "compare.workers": (int, 1),
    "oracle.cap": (int, 8),
    "oracle.workers": (int, 1),
    "probe.n_graphs": (int, 500),
    "probe.budget": (int, 15000),
    "probe.batch_size": (int, 16),
    "probe.learning_rate": (float, 3e-3),
    "probe.eval_every": (int, 1000),
    "train.learning_rate": (float, 1e-3),
    "train.num_workers": (int, 8),
    "train.iterations": (int, 100),
    "train.curriculum": (_choice("tau_growth", "termination_prob", "off"), "tau_growth"),
    "train.tau_mean": (float, 1000.0),
    "train.tau_growth": (float, 10.0),
    "train.termination_prob_start": (float, 5e-7),
    "train.termination_prob_end": (float, 5e-8),
    "train.differential_reward": (_bool, True),
    "train.reward_window": (int, 100000),
    "train.entropy_start": (float, 1e-2),
    "train.entropy_end": (float, 1e-4),
    "train.clip_norm": (float, 10.0),
    "train.eval_interval": (int, 100),
    "train.eval_sequences": (int, 20),
    "train.checkpoint_interval": (int, 100),
    "train.record_wall_time": (_bool, False),
}


class ExperimentConfig:
    """Typed view over the parsed key/value pairs."""

    def __init__(self, values: dict[str, Any]):
        self.values = values

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return self["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self["output.dir"])

    def env_config(self) -> EnvConfig:
        cfg = EnvConfig(num_executors=self["env.num_executors"], move_delay=self["env.move_delay"],
                        executor_classes=FOUR_CLASSES if self["env.multi_resource"] else None,
                        waves=self["env.waves"], inflation=self["env.inflation"], noise=self["env.noise"],
                        objective=self["env.objective"])
        return cfg.simplified() if self["env.simplified"] else cfg

    def heuristic_config(self) -> HeuristicConfig:
        return HeuristicConfig(self["scheduler.fairness_exponent"], self["scheduler.graphene_threshold_t"],
                               self["scheduler.graphene_threshold_m"])

    def train_config(self) -> TrainConfig:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("train.")}
        return TrainConfig(seed=self.seed, **kw)

    def workload(self) -> Callable[[int], list[JobDAG]]:
        """Seed -> job list. Trace workloads ignore the seed."""
        if self["workload.kind"] == "trace":
            jobs, _ = load_trace(self["workload.trace_path"])
            return lambda seed: list(jobs)
        n = self["workload.num_jobs"]
        sizes = self["workload.sizes"]
        mia = self["workload.mean_interarrival"] if self["workload.arrival"] == "poisson" else None
        templates = self["workload.templates"] or None
        multi = self["env.multi_resource"]
        noise = self["workload.noise_cv"]
        return lambda seed: gen_tpch_like(seed, n, sizes, mean_interarrival=mia, multi_resource=multi,
                                          noise_cv=noise, templates=templates)


def _apply(values: dict, key: str, raw: str, where: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    parser, _ = SCHEMA[key]
    try:
        values[key] = parser(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_config(text: str, overrides: Sequence[str] = (), source: str = "<config>") -> ExperimentConfig:
    values = {k: d for k, (_, d) in SCHEMA.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = stripped.split("=", 1)
        _apply(values, key.strip(), raw, f"{source}:{lineno}")
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r}: expected key=value")
        key, raw = ov.split("=", 1)
        _apply(values, key.strip(), raw, f"override {ov!r}")
    _validate(values)
    return ExperimentConfig(values)


def _validate(values: dict) -> None:
    if values["env.num_executors"] < 1:
        raise ConfigError("env.num_executors: must be >= 1")
    if values["workload.num_jobs"] < 1:
        raise ConfigError("workload.num_jobs: must be >= 1")
    if values["workload.kind"] == "trace" and not values["workload.trace_path"]:
        raise ConfigError("workload.trace_path: required when workload.kind = trace")
    if not values["workload.sizes"]:
        raise ConfigError("workload.sizes: must list at least one size")
    if not -2.0 <= values["scheduler.fairness_exponent"] <= 2.0:
        raise ConfigError("scheduler.fairness_exponent: must lie in [-2, 2]")
    if values["compare.seeds"] < 1:
        raise ConfigError("compare.seeds: must be >= 1")
    if values["compare.alpha_step"] <= 0:
        raise ConfigError("compare.alpha_step: must be positive")
    try:
        EnvConfig(num_executors=values["env.num_executors"], move_delay=values["env.move_delay"])
        TrainConfig(**{k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("train.")})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    if path is None:
        return parse_config("", overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides, str(path))


def render_defaults() -> str:
    lines = []
    for key, (_, default) in SCHEMA.items():
        if isinstance(default, tuple):
            default = ",".join(str(x) for x in default)
        elif isinstance(default, bool):
            default = str(default).lower()
        lines.append(f"{key} = {default}")
    return "\n".join(lines) + "\n"
