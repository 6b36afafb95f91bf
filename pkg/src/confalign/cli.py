"""Command line entry point: ``confalign <command> [options]``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
runtime failures such as a missing checkpoint.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

import torch

from . import experiment as ex
from .core import DatasetManifest, RecordError, ScoredRecord, read_records, write_records
from .metrics import report, write_bins_csv, write_report_csv
from .ppo import load_policy
from .reward import load_model, save_model
from .retrieval import RetrievalOracle, best_row, sweep_thresholds, write_rows_csv

RM_FILE = "quality_rm.json"

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; route it to status 1 instead."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from exc


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("--out", help="output directory (default: the config's output_dir)")
    common.add_argument("--seeds", type=_int_list, help="comma-separated seeds, e.g. 1,2,3")

    p = Parser(prog="confalign", description="Confidence alignment experiments on a toy QA environment.")
    sub = p.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    sub.add_parser("train-rm", parents=[common], help="train the quality reward model")

    r = sub.add_parser("run", parents=[common], help="train and evaluate one method over all seeds")
    r.add_argument("--mode", required=True, help="conqord, preapproach or quality_only")
    r.add_argument("--rm", help=f"quality reward checkpoint (default: <out>/../rm/{RM_FILE})")

    s = sub.add_parser("sweep-alpha", parents=[common], help="conqord runs over a grid of alpha values")
    s.add_argument("--grid", type=_float_list, default=ex.ALPHA_GRID, help="comma-separated alphas")
    s.add_argument("--rm", help="quality reward checkpoint")

    t = sub.add_parser("retrieval", parents=[common], help="confidence-gated retrieval threshold sweep")
    t.add_argument("--policy", required=True, help="trained policy checkpoint")

    j = sub.add_parser("judge-offline", parents=[common], help="replace correctness with external 0/1 ratings")
    j.add_argument("--samples", required=True, help="scored samples JSONL")
    j.add_argument("--ratings", required=True, help='JSONL lines {"prompt_id": ..., "rating": 0.0 or 1.0}')

    m = sub.add_parser("report", parents=[common], help="calibration metrics for a scored samples file")
    m.add_argument("--samples", required=True, help="scored samples JSONL")
    return p


def resolve_config(args) -> ex.ExperimentConfig:
    try:
        cfg = ex.load_config(args.config, args.overrides)
        if args.seeds is not None:
            cfg = dataclasses.replace(cfg, seeds=args.seeds)
    except (ex.ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def out_dir(args, cfg, default_sub: str) -> Path:
    path = Path(args.out) if args.out else Path(cfg.output_dir) / default_sub
    path.mkdir(parents=True, exist_ok=True)
    return path


def _rm_path(args, cfg) -> Path:
    if args.rm:
        return Path(args.rm)
    return Path(cfg.output_dir) / "rm" / RM_FILE


def _load_rm(path: Path):
    if not path.is_file():
        raise RuntimeFailure(f"reward model checkpoint not found: {path} (run 'confalign train-rm' first)")
    return load_model(path)


def _write_snapshot(cfg, out: Path) -> None:
    (out / "config.txt").write_text(ex.format_config(cfg))


def cmd_train_rm(cfg: ex.ExperimentConfig, out: Path) -> dict:
    env = ex.build_env(cfg)
    result, pairs = ex.train_rm(cfg, env)
    save_model(result.model, out / RM_FILE)
    write_records(ex.preference_records(env, pairs), out / "pairs.jsonl", "preference_pairs")
    metrics = {"heldout_accuracy": result.heldout_accuracy, "train_accuracy": result.train_accuracy,
               "final_loss": result.epoch_losses[-1] if result.epoch_losses else float("nan")}
    ex.write_csv(out / "rm_metrics.csv", ("metric", "value"), list(metrics.items()))
    ex.write_csv(out / "rm_losses.csv", ("epoch", "loss"), list(enumerate(result.epoch_losses)))
    _write_snapshot(cfg, out)
    return metrics


def cmd_run(cfg: ex.ExperimentConfig, mode: str, out: Path, rm_path: Optional[Path] = None) -> ex.RunRecord:
    if mode not in ex.MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {', '.join(ex.MODES)}")
    if mode == "preapproach":
        scorer = ex.train_preapproach_scorer(cfg)
        save_model(scorer.model, out / "preapproach_rm.json")
        model = scorer.model
    else:
        model = _load_rm(rm_path)
    _write_snapshot(cfg, out)
    return ex.run_mode(cfg, mode, model, out)


def cmd_sweep_alpha(cfg: ex.ExperimentConfig, grid: Sequence[float], out: Path, rm_path: Path) -> dict:
    try:
        ex.check_alpha_grid(grid)
    except ex.ConfigError as exc:
        raise UsageError(str(exc)) from exc
    model = _load_rm(rm_path)
    _write_snapshot(cfg, out)
    return ex.sweep_alpha(cfg, grid, model, out)


def cmd_retrieval(cfg: ex.ExperimentConfig, policy_path: Path, out: Path) -> list:
    if not policy_path.is_file():
        raise RuntimeFailure(f"policy checkpoint not found: {policy_path}")
    policy = load_policy(policy_path)
    env = ex.build_env(cfg)
    rc = cfg.retrieval
    try:
        oracle = RetrievalOracle(rc.help_prob_low, rc.noise_prob, rc.oracle_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = sweep_thresholds(policy, env, oracle, rc.grid, rc.n_episodes, seed=cfg.seeds[0])
    write_rows_csv(rows, out / "retrieval.csv")
    _write_snapshot(cfg, out)
    return rows


def read_ratings(path) -> dict:
    """prompt_id -> rating, rejecting duplicates and anything but 0.0 or 1.0."""
    ratings = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or set(obj) != {"prompt_id", "rating"}:
                raise RecordError(f"{path}:{lineno}: expected keys prompt_id and rating")
            pid, rating = obj["prompt_id"], obj["rating"]
            if not isinstance(pid, str):
                raise RecordError(f"{path}:{lineno}: prompt_id must be a string")
            if isinstance(rating, bool) or rating not in (0.0, 1.0):
                raise RecordError(f"{path}:{lineno}: rating for {pid!r} must be 0.0 or 1.0, got {rating!r}")
            if pid in ratings:
                raise RecordError(f"{path}:{lineno}: duplicate rating for prompt_id {pid!r}")
            ratings[pid] = float(rating)
    return ratings


def judge_offline(samples: Sequence[ScoredRecord], ratings: dict) -> list[ScoredRecord]:
    counts = Counter(s.prompt_id for s in samples)
    dup = sorted(pid for pid, c in counts.items() if c > 1)
    if dup:
        raise RecordError(f"duplicate prompt_id in samples: {dup[0]!r}")
    missing = [s.prompt_id for s in samples if s.prompt_id not in ratings]
    if missing:
        raise RecordError(f"no rating for prompt_id {missing[0]!r}")
    extra = sorted(set(ratings) - set(counts))
    if extra:
        raise RecordError(f"rating for unknown prompt_id {extra[0]!r}")
    return [dataclasses.replace(s, correct=ratings[s.prompt_id] == 1.0) for s in samples]


def _read_samples(path) -> list:
    if not Path(path).is_file():
        raise RuntimeFailure(f"samples file not found: {path}")
    return read_records(DatasetManifest(Path(path), "scored_samples"))


def cmd_judge_offline(samples_path, ratings_path, out: Path) -> Path:
    if not Path(ratings_path).is_file():
        raise RuntimeFailure(f"ratings file not found: {ratings_path}")
    judged = judge_offline(_read_samples(samples_path), read_ratings(ratings_path))
    target = out / "judged_samples.jsonl"
    write_records(judged, target, "scored_samples")
    return target


def cmd_report(cfg: ex.ExperimentConfig, samples_path, out: Path):
    samples = _read_samples(samples_path)
    if not samples:
        raise RuntimeFailure(f"{samples_path} holds no samples")
    rep = report(samples, cfg.metrics.n_bins, cfg.metrics.ece_variant)
    write_report_csv(rep, out / "report.csv")
    write_bins_csv(rep.bins, out / "bins.csv")
    return rep


def _print_aggregate(label: str, agg: dict) -> None:
    cells = ", ".join(f"{k}={v['mean']:.4f}" + ("" if math.isnan(v["std"]) else f"±{v['std']:.4f}") for k, v in agg.items())
    print(f"{label}: {cells}")


def dispatch(args) -> None:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "train-rm":
        metrics = cmd_train_rm(cfg, out_dir(args, cfg, "rm"))
        print(f"held-out ranking accuracy {metrics['heldout_accuracy']:.4f}")
    elif cmd == "run":
        if args.mode not in ex.MODES:
            raise UsageError(f"unknown mode {args.mode!r}; expected one of {', '.join(ex.MODES)}")
        out = out_dir(args, cfg, args.mode)
        rec = cmd_run(cfg, args.mode, out, _rm_path(args, cfg))
        _print_aggregate("vanilla", rec.vanilla_aggregate)
        _print_aggregate(args.mode, rec.aggregate)
    elif cmd == "sweep-alpha":
        records = cmd_sweep_alpha(cfg, args.grid, out_dir(args, cfg, "sweep"), _rm_path(args, cfg))
        for a, rec in records.items():
            _print_aggregate(f"alpha={a:.2f}", {k: rec.aggregate[k] for k in ("ece", "accuracy")})
    elif cmd == "retrieval":
        rows = cmd_retrieval(cfg, Path(args.policy), out_dir(args, cfg, "retrieval"))
        b = best_row(rows)
        print(f"best threshold {b.threshold:.2f}: accuracy {b.acc_overall:.4f} "
              f"(always retrieve {b.acc_always_retrieve:.4f}, never {b.acc_never_retrieve:.4f})")
    elif cmd == "judge-offline":
        print(cmd_judge_offline(args.samples, args.ratings, out_dir(args, cfg, "judged")))
    elif cmd == "report":
        rep = cmd_report(cfg, args.samples, out_dir(args, cfg, "report"))
        print(", ".join(f"{k}={v:.4f}" for k, v in rep.metric_dict().items()))


def main(argv: Optional[Sequence[str]] = None) -> int:
    torch.set_num_threads(1)
    try:
        args = build_parser().parse_args(argv)
        if args.command in ("run", "sweep-alpha", "retrieval"):
            print(ex.BANNER, file=sys.stderr)
        dispatch(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeFailure, RecordError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
