"""Command-line experiment runner.

Subcommands: train, compare, probe-cp, oracle, export-gantt. Exit status is 0 on
success, 2 for configuration errors and 3 for failures while running.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from dagsched import heuristics as H
from dagsched.config import ExperimentConfig, load_config, render_defaults
from dagsched.gnn import critical_path_probe
from dagsched.nn import atomic_write_text, load_checkpoint
from dagsched.policy import PolicyScheduler
from dagsched.simenv import ClusterEnv, ConfigError, episode_jct_stats, run_episode
from dagsched.training import Trainer, write_curve

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
GANTT_SCHEMA_VERSION = 1
POLICY_NAME = "decima"


# --- scheduler resolution -------------------------------------------------------

def scheduler_names() -> list[str]:
    return [*H.HEURISTICS, "random", POLICY_NAME]


def resolve_scheduler(name: str, cfg: ExperimentConfig, seed: int):
    """Returns a fresh scheduler callable; ``weighted_fair[alpha=x]`` pins the exponent."""
    if name.startswith("weighted_fair[alpha=") and name.endswith("]"):
        alpha = float(name[len("weighted_fair[alpha="):-1])
        return lambda env: H.weighted_fair(env, alpha)
    if name == "random":
        return H.RandomScheduler(seed)
    if name == POLICY_NAME:
        path = cfg["scheduler.checkpoint"]
        if not path:
            raise ConfigError(f"scheduler {POLICY_NAME!r} needs scheduler.checkpoint")
        params, _, _ = load_checkpoint(path)
        return PolicyScheduler(params, greedy=True)
    if name not in H.HEURISTICS:
        raise ConfigError(f"unknown scheduler {name!r}; valid names: {', '.join(scheduler_names())}")
    return H.make_scheduler(name, cfg.heuristic_config())


def alpha_sweep_names(cfg: ExperimentConfig) -> list[str]:
    lo, hi, step = cfg["compare.alpha_min"], cfg["compare.alpha_max"], cfg["compare.alpha_step"]
    n = int(round((hi - lo) / step))
    return [f"weighted_fair[alpha={round(lo + k * step, 6)!r}]" for k in range(n + 1)]


def expand_schedulers(names, cfg: ExperimentConfig) -> list[str]:
    out = []
    for n in names:
        out.extend(alpha_sweep_names(cfg) if n == "weighted_fair_sweep" else [n])
    return out


# --- output helpers ---------------------------------------------------------------

def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    atomic_write_text(path, buf.getvalue())


def write_json(path: Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def gantt_doc(env: ClusterEnv) -> dict:
    return {"schema_version": GANTT_SCHEMA_VERSION, "records": env.gantt_records()}


def summarize(avg_jcts) -> tuple[float, float, float]:
    a = np.asarray(avg_jcts, dtype=float)
    return float(np.mean(a)), float(np.percentile(a, 50)), float(np.percentile(a, 95))


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.=" else "_" for c in name)


# --- subcommands ------------------------------------------------------------------

def _run_one(args):
    cfg, name, seed = args
    jobs = cfg.workload()(seed)
    env = ClusterEnv(cfg.env_config()).reset(jobs, seed)
    run_episode(env, resolve_scheduler(name, cfg, seed))
    rows = sorted((jr.job_id, jr.arrival_time, jr.completion_time, jr.completion_time - jr.arrival_time)
                  for jr in env.completed)
    return name, seed, rows, gantt_doc(env)


def cmd_compare(cfg: ExperimentConfig, schedulers) -> int:
    names = expand_schedulers(schedulers or cfg["compare.schedulers"], cfg)
    if not names:
        raise ConfigError("compare needs at least one scheduler")
    for n in names:
        if not n.startswith("weighted_fair[alpha="):
            resolve_scheduler(n, cfg, 0)
    out = cfg.output_dir
    seeds = [cfg.seed + k for k in range(cfg["compare.seeds"])]
    jobs_list = [(cfg, n, s) for n in names for s in seeds]
    workers = cfg["compare.workers"]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs_list))
    else:
        results = [_run_one(j) for j in jobs_list]
    per_sched: dict[str, list[float]] = {n: [] for n in names}
    for name, seed, rows, gantt in results:
        tag = f"{_safe(name)}_seed{seed}"
        write_csv(out / f"jobs_{tag}.csv", ["job_id", "arrival", "completion", "jct"], rows)
        write_json(out / f"gantt_{tag}.json", gantt)
        if rows:
            per_sched[name].append(float(np.mean([r[3] for r in rows])))
    summary = []
    for n in names:
        if per_sched[n]:
            summary.append([n, len(per_sched[n]), *summarize(per_sched[n])])
    write_csv(out / "summary.csv", ["scheduler", "seeds", "mean_avg_jct", "p50_avg_jct", "p95_avg_jct"], summary)
    for row in summary:
        print(f"{row[0]:<32} mean {row[2]:10.2f}  p50 {row[3]:10.2f}  p95 {row[4]:10.2f}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, resume: bool = False) -> int:
    out = cfg.output_dir
    tcfg = cfg.train_config()
    trainer = Trainer(cfg.workload(), cfg.env_config(), tcfg)
    ckpt = out / "checkpoint.json"
    if resume and ckpt.exists():
        trainer.load(ckpt)
        print(f"resumed from iteration {trainer.iteration}")

    def persist(tr: Trainer, _row=None):
        tr.save(ckpt)
        write_curve(out / "curve.csv", tr.curve)

    def on_iteration(tr: Trainer, row):
        if tcfg.checkpoint_interval > 0 and tr.iteration % tcfg.checkpoint_interval == 0:
            persist(tr)

    try:
        trainer.train(on_iteration=on_iteration)
    except Exception:
        persist(trainer)
        raise
    persist(trainer)
    if trainer.curve:
        last = trainer.curve[-1]
        print(f"iteration {last['iteration']}: mean return {last['mean_return']:.2f}")
    return EXIT_OK


def cmd_probe_cp(cfg: ExperimentConfig) -> int:
    res = critical_path_probe(cfg.seed, cfg["probe.n_graphs"], cfg["probe.budget"],
                              batch_size=cfg["probe.batch_size"], lr=cfg["probe.learning_rate"],
                              eval_every=cfg["probe.eval_every"])
    write_csv(cfg.output_dir / "probe.csv", ["iteration", "two_level_accuracy", "single_level_accuracy"],
              res.curve)
    print(f"two-level {res.two_level_accuracy:.3f}  single-level {res.single_level_accuracy:.3f}")
    return EXIT_OK


def cmd_oracle(cfg: ExperimentConfig) -> int:
    env_cfg = cfg.env_config().simplified()
    jobs = cfg.workload()(cfg.seed)
    cap = cfg["oracle.cap"]
    if len(jobs) > cap:
        raise ConfigError(f"{len(jobs)} jobs exceed oracle.cap = {cap}")
    order, best = H.exhaustive_search(jobs, env_cfg, cap, cfg["oracle.workers"])
    rows = [["exhaustive", best]]
    names = ["sjf_cp", "weighted_fair", "fair", "fifo"]
    if cfg["scheduler.checkpoint"]:
        names.append(POLICY_NAME)
    for n in names:
        env = ClusterEnv(env_cfg).reset(jobs, cfg.seed)
        run_episode(env, resolve_scheduler(n, cfg, cfg.seed))
        rows.append([n, episode_jct_stats(env).average_jct])
    write_csv(cfg.output_dir / "oracle.csv", ["scheduler", "average_jct"], rows)
    write_json(cfg.output_dir / "oracle_order.json", {"schema_version": 1, "order": list(order)})
    for n, v in rows:
        print(f"{n:<16} {v:10.3f}")
    return EXIT_OK


def cmd_export_gantt(cfg: ExperimentConfig, out_path: str | None) -> int:
    name = cfg["scheduler.name"]
    _, _, _, gantt = _run_one((cfg, name, cfg.seed))
    path = Path(out_path) if out_path else cfg.output_dir / f"gantt_{_safe(name)}_seed{cfg.seed}.json"
    write_json(path, gantt)
    print(f"wrote {path}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dagsched", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", "-c", help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        return sp

    t = common(sub.add_parser("train", help="train the learned scheduler"))
    t.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.json if present")
    c = common(sub.add_parser("compare", help="evaluate schedulers across seeds"))
    c.add_argument("--schedulers", help="comma-separated names; 'weighted_fair_sweep' expands to an alpha sweep")
    common(sub.add_parser("probe-cp", help="critical-path expressiveness probe"))
    common(sub.add_parser("oracle", help="exhaustive search over job orders"))
    g = common(sub.add_parser("export-gantt", help="run one scheduler and write its Gantt chart"))
    g.add_argument("--gantt", help="output JSON path")
    sub.add_parser("defaults", help="print the default configuration")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        sys.stdout.write(render_defaults())
        return EXIT_OK
    try:
        overrides = list(args.set)
        if args.out:
            overrides.append(f"output.dir={args.out}")
        cfg = load_config(args.config, overrides)
        if args.command == "train":
            return cmd_train(cfg, args.resume)
        if args.command == "compare":
            names = [s.strip() for s in args.schedulers.split(",") if s.strip()] if args.schedulers else None
            return cmd_compare(cfg, names)
        if args.command == "probe-cp":
            return cmd_probe_cp(cfg)
        if args.command == "oracle":
            return cmd_oracle(cfg)
        return cmd_export_gantt(cfg, args.gantt)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
