"""Command-line entry point.

Subcommands: generate (write a synthetic suite), run (full pipeline to a
run directory), eval (re-evaluate one task from a saved run), report
(tables and optional plot from a completed run), metrics (recompute
metrics from a saved success matrix).

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from . import engine, synth
from .config import RunConfig
from .errors import ConfigError, DataError, IncompleteRun, SkillStreamError
from .metrics import SuccessMatrix, auc_over_steps, compute_lifelong_metrics
from .trajectory_store import load_suite

log = logging.getLogger("skillstream")


def _setup_logging() -> None:
    level = os.environ.get("SKILLSTREAM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if getattr(args, "suite", None):
        cfg.suite_path = args.suite
    return cfg


def cmd_generate(args) -> int:
    spec = synth.GeneratorSpec(
        mode=args.mode,
        n_objects=args.objects,
        n_base=args.base,
        n_lifelong=args.lifelong,
        demos_per_task=args.demos,
    )
    manifest = synth.generate_suite(spec, args.seed, args.out)
    print(manifest)
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = args.out
    os.makedirs(out, exist_ok=True)

    if cfg.suite_path:
        manifest = cfg.suite_path
    else:
        suite_dir = os.path.join(out, "suite")
        if not os.path.isfile(os.path.join(suite_dir, "suite.json")):
            log.info("no suite configured; generating the bundled synthetic suite")
            synth.generate_suite(synth.GeneratorSpec(), cfg.seed, suite_dir)
        manifest = os.path.join(suite_dir, "suite.json")

    suite = load_suite(manifest)
    scene = synth.load_scene(os.path.dirname(os.path.abspath(manifest)))
    matrix, state = engine.build_success_matrix(
        suite, cfg, lambda task: synth.env_for_task(scene, task)
    )
    result = compute_lifelong_metrics(matrix, nbt_includes_final=cfg.nbt_includes_final)

    matrix.save(os.path.join(out, "matrix.json"))
    _write_json(os.path.join(out, "metrics.json"), result.to_json(percent=args.percent))
    with open(os.path.join(out, "log.jsonl"), "w", encoding="utf-8") as fh:
        for rec in state.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    engine.save_state(state, os.path.join(out, "state"))
    resolved = cfg.to_dict()
    resolved["suite_path"] = os.path.abspath(manifest)
    _write_json(os.path.join(out, "config.json"), resolved)
    print(json.dumps(result.to_json(percent=args.percent), sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    with open(os.path.join(args.run, "config.json"), "r", encoding="utf-8") as fh:
        cfg = RunConfig.from_dict(json.load(fh))
    suite = load_suite(cfg.suite_path)
    scene = synth.load_scene(os.path.dirname(os.path.abspath(cfg.suite_path)))
    state = engine.load_state(os.path.join(args.run, "state"))
    task = suite.task(args.task)
    episodes = args.episodes if args.episodes is not None else cfg.episodes
    rate = engine.evaluate_policy(state, task, episodes, synth.env_for_task(scene, task))
    print(json.dumps({"task_id": task.task_id, "success_rate": rate}))
    return 0


def cmd_report(args) -> int:
    matrix_path = os.path.join(args.run, "matrix.json")
    log_path = os.path.join(args.run, "log.jsonl")
    try:
        matrix = SuccessMatrix.load(matrix_path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise IncompleteRun(f"cannot read {matrix_path}: {e}") from e
    if not matrix.is_complete():
        raise IncompleteRun(f"{matrix_path} does not cover the lower triangle")
    records = []
    if os.path.isfile(log_path):
        with open(log_path, "r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]

    report_dir = os.path.join(args.run, "report")
    os.makedirs(report_dir, exist_ok=True)

    with open(os.path.join(report_dir, "skill_usage.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "skill_id", "frames"])
        for rec in records:
            for task_id, usage in sorted(rec.get("skill_usage", {}).items()):
                for skill_id, frames in sorted(usage.items(), key=lambda kv: int(kv[0])):
                    writer.writerow([task_id, skill_id, frames])

    with open(os.path.join(report_dir, "success_matrix.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"task_{j}" for j in range(1, matrix.M + 1)])
        for i in range(1, matrix.M + 1):
            row = [i] + [
                matrix.r.get((i, j), "") for j in range(1, matrix.M + 1)
            ]
            writer.writerow(row)

    result = compute_lifelong_metrics(matrix)
    _write_json(
        os.path.join(report_dir, "metrics_summary.json"),
        {
            "metrics": result.to_json(percent=args.percent),
            "auc_over_steps": {str(k): v for k, v in auc_over_steps(matrix).items()},
        },
    )

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        curve = auc_over_steps(matrix)
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(list(curve.keys()), list(curve.values()), marker="o")
        ax.set_xlabel("learning step")
        ax.set_ylabel("mean success over learned tasks")
        ax.set_ylim(0, 1.05)
        fig.tight_layout()
        fig.savefig(os.path.join(report_dir, "auc_curve.svg"))
        plt.close(fig)
    print(report_dir)
    return 0


def cmd_metrics(args) -> int:
    try:
        matrix = SuccessMatrix.load(args.matrix)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read {args.matrix}: {e}") from e
    result = compute_lifelong_metrics(
        matrix, nbt_includes_final=not args.nbt_exclude_final
    )
    print(json.dumps(result.to_json(percent=args.percent), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillstream")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic benchmark suite")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mode", choices=["mixed", "push"], default="mixed")
    g.add_argument("--objects", type=int, default=2)
    g.add_argument("--base", type=int, default=4)
    g.add_argument("--lifelong", type=int, default=6)
    g.add_argument("--demos", type=int, default=10)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run the full lifelong pipeline")
    r.add_argument("--config")
    r.add_argument("--suite")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--percent", action="store_true")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="evaluate one task from a saved run")
    e.add_argument("--run", required=True)
    e.add_argument("--task", required=True)
    e.add_argument("--episodes", type=int)
    e.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="emit tables (and optionally a plot) for a run")
    rep.add_argument("--run", required=True)
    rep.add_argument("--percent", action="store_true")
    rep.add_argument("--plot", action="store_true")
    rep.set_defaults(func=cmd_report)

    m = sub.add_parser("metrics", help="recompute metrics from a saved matrix")
    m.add_argument("--matrix", required=True)
    m.add_argument("--percent", action="store_true")
    m.add_argument("--nbt-exclude-final", action="store_true")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (SkillStreamError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
