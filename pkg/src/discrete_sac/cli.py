"""Command-line entry point: train, eval, metrics, ablate, report.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .exceptions import (CheckpointVersionError, ConfigError, DegenerateAnchorError, MissingAnchorsError)
from .harness import (OUT_ENV_VAR, SCORE_FIELDS, TrainConfig, TrainingAborted, apply_overrides,
                      default_out_root, evaluate, load_agent, load_config, make_env, run_training)
from .metrics import METRICS, ScoreMatrix, aggregate, read_anchors, read_scores
from .oracle import expected_return, policy_iteration, uniform_policy

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# each suite maps arm name -> overrides applied on top of the base config
SUITES = {
    "variance_reduction": {"baseline": ["agent.baseline=true"], "no_baseline": ["agent.baseline=false"]},
    "beta_annealing": {"annealed": ["schedules.beta_mode=anneal"], "constant": ["schedules.beta_mode=constant"]},
    "eval_mode": {"sample": ["eval.mode=sample"], "greedy": ["eval.mode=greedy"]},
    "rr_scaling": {"rr2": ["train.replay_ratio=2"], "rr4": ["train.replay_ratio=4"]},
}


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _base_config(args) -> TrainConfig:
    if args.config:
        return load_config(args.config, args.set or [])
    return apply_overrides(TrainConfig(), args.set or [])


def _out_dir(args, default_name: str) -> Path:
    return Path(args.out) if args.out else default_out_root() / default_name


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# -- verbs ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _base_config(args)
    seed = cfg.train.seed if args.seed is None else args.seed
    out = _out_dir(args, f"{cfg.train.run_id}-seed{seed}")
    art = run_training(cfg, seed, out)
    summary = {
        "seed": art.seed, "env_steps": art.env_steps, "updates": art.updates, "resets": art.resets,
        "checkpoints": [str(p) for p in art.checkpoints], "score_log": str(art.score_log),
        "diagnostics_log": str(art.diagnostics_log), "mean_return": art.mean_return,
        "config": art.config,
    }
    _write_json(out / "artifacts.json", summary)
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint or not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    _, _, cfg = load_agent(args.checkpoint)
    episodes = cfg.eval.episodes if args.episodes is None else args.episodes
    mode = args.mode or cfg.eval.mode
    seed = 0 if args.seed is None else args.seed
    returns = evaluate(args.checkpoint, episodes, mode, np.random.default_rng(seed))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "scores.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SCORE_FIELDS)
            for i, r in enumerate(returns):
                w.writerow([cfg.train.run_id, seed, f"eval-{mode}", i, repr(float(r))])
    print(json.dumps({"mode": mode, "episodes": len(returns), "returns": returns,
                      "mean_return": float(np.mean(returns)) if returns else None}))
    return EXIT_OK


def _report_rows(report) -> list:
    rows = []
    for name in METRICS:
        lo, hi, conf = report.ci.get(name, (None, None, None))
        rows.append([name, repr(report.point(name)), "" if lo is None else repr(lo),
                     "" if hi is None else repr(hi), "" if conf is None else conf])
    return rows


def _emit_report(report, out: Path, stem: str = "report") -> None:
    _write_json(out / f"{stem}.json", report.to_dict())
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "point", "low", "high", "confidence"])
        w.writerows(_report_rows(report))


def cmd_metrics(args) -> int:
    if args.benchmark:
        from .metrics import load_benchmark

        matrix = load_benchmark(args.benchmark)
    else:
        if not args.scores or not args.anchors:
            raise UsageError("metrics needs --scores and --anchors (or --benchmark COLUMN)")
        for p in (args.scores, args.anchors):
            if not Path(p).is_file():
                raise UsageError(f"file not found: {p}")
        scores, anchors = read_scores(args.scores), read_anchors(args.anchors)
        missing = sorted(set(scores) - set(anchors))
        if missing:
            raise MissingAnchorsError(missing)
        matrix = ScoreMatrix.from_dict(scores, anchors)
    seed = 0 if args.seed is None else args.seed
    report = aggregate(matrix, args.resamples, args.confidence, seed)
    out = _out_dir(args, "metrics")
    _emit_report(report, out)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def _oracle_anchors(cfg: TrainConfig):
    mdp = make_env(cfg.env)
    pi_opt, _ = policy_iteration(mdp)
    return expected_return(mdp, uniform_policy(mdp)), expected_return(mdp, pi_opt)


def cmd_ablate(args) -> int:
    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; expected one of {sorted(SUITES)}")
    base = _base_config(args)
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else list(base.train.seeds)
    if args.seed is not None:
        seeds = [args.seed]
    out = _out_dir(args, f"ablate-{args.suite}")
    out.mkdir(parents=True, exist_ok=True)
    random_ret, optimal_ret = _oracle_anchors(base)
    env_name = base.env.kind
    rows, failed, arm_returns = [], [], {}

    for arm, overrides in SUITES[args.suite].items():
        cfg = apply_overrides(base, overrides + [f"train.run_id={arm}"])
        arm_returns[arm] = []
        for seed in seeds:
            try:
                if args.suite == "eval_mode" and arm != "sample":
                    # same trained agents, evaluated in the other mode
                    ckpt = out / "sample" / f"seed{seed}" / "checkpoint_final.npz"
                    if not ckpt.is_file():
                        raise TrainingAborted(f"no trained checkpoint for seed {seed}")
                    _, _, eval_rng = np.random.SeedSequence(seed).spawn(3)
                    rets = evaluate(ckpt, cfg.eval.episodes, cfg.eval.mode, np.random.default_rng(eval_rng))
                    updates = None
                else:
                    art = run_training(cfg, seed, out / arm / f"seed{seed}")
                    rets, updates = art.eval_returns, art.updates
            except (TrainingAborted, FloatingPointError, RuntimeError) as exc:
                failed.append(f"{arm}/seed{seed}: {exc}")
                rows.append([arm, seed, "", "", "aborted"])
                continue
            mean_ret = float(np.mean(rets)) if rets else float("nan")
            arm_returns[arm].append(mean_ret)
            rows.append([arm, seed, repr(mean_ret), "" if updates is None else updates, "ok"])

    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "seed", "mean_return", "updates", "status"])
        w.writerows(rows)

    summary = {"suite": args.suite, "seeds": seeds, "anchors": {"random": random_ret, "optimal": optimal_ret},
               "arms": {}}
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "runs", "mean_return", "iqm", "optimality_gap", "median", "mean",
                    "iqm_low", "iqm_high"])
        for arm, rets in arm_returns.items():
            if not rets or not np.all(np.isfinite(rets)):
                w.writerow([arm, len(rets)] + [""] * 7)
                continue
            matrix = ScoreMatrix([env_name], [rets], {env_name: (random_ret, optimal_ret)})
            rep = aggregate(matrix, args.resamples, args.confidence, 0, with_ci=len(rets) > 1)
            lo, hi, _ = rep.ci.get("iqm", ("", "", None))
            w.writerow([arm, len(rets), repr(float(np.mean(rets))), repr(rep.iqm), repr(rep.optimality_gap),
                        repr(rep.median), repr(rep.mean), lo, hi])
            summary["arms"][arm] = {"mean_return": float(np.mean(rets)), "returns": rets, **rep.to_dict()}
    summary["failed"] = failed
    _write_json(out / "comparison.json", summary)
    print(json.dumps({arm: v["mean_return"] for arm, v in summary["arms"].items()}, sort_keys=True))
    if failed:
        for f in failed:
            _err(f"arm aborted: {f}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args) -> int:
    roots = [Path(p) for p in (args.runs or [])] or [default_out_root()]
    logs = sorted({p for r in roots for p in (r.rglob("scores.csv") if r.is_dir() else [])})
    if not logs:
        raise UsageError(f"no scores.csv found under {', '.join(map(str, roots))}")
    groups = {}
    for log in logs:
        with open(log, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["run_id"], int(row["seed"]), row["phase"])
                groups.setdefault(key, []).append(float(row["return"]))
    out = _out_dir(args, "report")
    out.mkdir(parents=True, exist_ok=True)
    records = []
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "seed", "phase", "episodes", "mean_return", "std_return"])
        for (run_id, seed, phase), rets in sorted(groups.items()):
            m, sd = float(np.mean(rets)), float(np.std(rets))
            w.writerow([run_id, seed, phase, len(rets), repr(m), repr(sd)])
            records.append({"run_id": run_id, "seed": seed, "phase": phase, "episodes": len(rets),
                            "mean_return": m, "std_return": sd})
    _write_json(out / "summary.json", records)
    print(json.dumps(records))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="discrete-sac",
        description="Discrete soft actor-critic on tabular MDPs: training, evaluation, metrics, ablations.",
        epilog=f"Outputs default to ${OUT_ENV_VAR} (or ./runs) when --out is not given. "
               "Exit codes: 0 success, 1 runtime failure, 2 usage or config error.",
    )
    sub = parser.add_subparsers(dest="verb", metavar="{train,eval,metrics,ablate,report}")

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="YAML config with sections env, agent, schedules, eval, train")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config entry, e.g. train.replay_ratio=4 or rr=4 (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed")

    p = sub.add_parser("train", help="train one agent and write checkpoints and logs")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--mode", choices=["sample", "greedy"])
    p.set_defaults(func=cmd_eval)

    def ci_flags(p):
        p.add_argument("--resamples", type=int, default=2000, help="bootstrap resamples (default 2000)")
        p.add_argument("--confidence", type=float, default=0.95, help="interval confidence (default 0.95)")

    p = sub.add_parser("metrics", help="aggregate metrics with stratified bootstrap intervals")
    common(p, config=False)
    p.add_argument("--scores", help="CSV with columns game,run_id,score")
    p.add_argument("--anchors", help="CSV with columns game,random,human")
    p.add_argument("--benchmark", metavar="COLUMN", help="use a column of the shipped per-game fixture")
    ci_flags(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ablate", help="run a matched-pair ablation suite")
    common(p)
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    p.add_argument("--seeds", help="comma-separated seeds (default: train.seeds)")
    ci_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="summarize score logs found under run directories")
    p.add_argument("runs", nargs="*", help="directories to search for scores.csv")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config: {exc}")
        return EXIT_USAGE
    except (UsageError, MissingAnchorsError, DegenerateAnchorError) as exc:
        _err(str(exc.args[0]) if isinstance(exc, KeyError) else str(exc))
        return EXIT_USAGE
    except CheckpointVersionError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except TrainingAborted as exc:
        _err(f"training aborted: {exc}; snapshot at {exc.snapshot}")
        return EXIT_RUNTIME
    except (RuntimeError, FloatingPointError, ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
