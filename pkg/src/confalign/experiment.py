"""Experiment configuration and the run/sweep drivers behind the CLI.

Config files are flat ``section.key = value`` lines; values are Python
literals (``0.4``, ``true``, ``(0.5, 0.6)``, ``'runs'``) and bare words are
read as strings.
"""

from __future__ import annotations

import ast
import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import PreferenceRecord, write_records
from .env import EnvConfig, ToyQAEnv, make_preference_pairs
from .metrics import CalibrationReport, write_bins_csv
from .ppo import LOG_COLUMNS, PPOConfig, TrainResult, WarmStartConfig, evaluate_report, init_policy, save_policy, train
from .reward import ConqordReward, QualityRewardModel, RewardConfig, RMTrainConfig, RMTrainResult, train_quality_rm

MODES = ("conqord", "preapproach", "quality_only")
ALPHA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
BANNER = (
    "toy-scale run: absolute numbers here are not comparable with large-model "
    "evaluations; read the directions of effects only"
)


class ConfigError(ValueError):
    """Bad configuration or command usage."""


@dataclass
class DataConfig:
    n_pairs: int = 2000
    seed: int = 0


@dataclass
class MetricsConfig:
    n_bins: int = 10
    ece_variant: str = "absolute"
    eval_episodes: int = 2000
    parse_failure: str = "drop"

    def __post_init__(self):
        if self.ece_variant not in ("absolute", "squared"):
            raise ValueError(f"unknown ECE variant {self.ece_variant!r}")
        if self.parse_failure not in ("drop", "substitute"):
            raise ValueError("parse_failure must be 'drop' or 'substitute'")


@dataclass
class RetrievalConfig:
    threshold: float = 0.8
    help_prob_low: float = 0.8
    noise_prob: float = 0.2
    oracle_seed: int = 0
    grid: tuple = tuple(round(0.1 * i, 1) for i in range(11))
    n_episodes: int = 4000


def _rm_defaults() -> RMTrainConfig:
    return RMTrainConfig(epochs=60, center_coeff=0.1)


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    warm_start: WarmStartConfig = field(default_factory=WarmStartConfig)
    rm: RMTrainConfig = field(default_factory=_rm_defaults)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    seeds: tuple = (1, 2, 3, 4, 5)
    output_dir: str = "runs"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")


SECTIONS = {
    "env": EnvConfig,
    "reward": RewardConfig,
    "ppo": PPOConfig,
    "warm_start": WarmStartConfig,
    "rm": RMTrainConfig,
    "data": DataConfig,
    "metrics": MetricsConfig,
    "retrieval": RetrievalConfig,
}
TOP_LEVEL = ("seeds", "output_dir")


# ---------------------------------------------------------------------------
# flat key = value config


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(t)
    except (ValueError, SyntaxError):
        return t


def _coerce(key: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool) and default is not None:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple) or isinstance(value, (list, tuple)):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = (value,)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def parse_settings(lines: Sequence[str], source: str = "<config>") -> dict:
    settings = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        settings[key] = parse_value(value)
    return settings


def build_config(settings: dict) -> ExperimentConfig:
    defaults = ExperimentConfig()
    sections = {name: dataclasses.asdict(getattr(defaults, name)) for name in SECTIONS}
    top = {k: getattr(defaults, k) for k in TOP_LEVEL}
    for key, value in settings.items():
        if key in TOP_LEVEL:
            top[key] = _coerce(key, top[key], value)
            continue
        section, _, name = key.partition(".")
        if section not in sections or name not in sections[section]:
            raise ConfigError(f"unknown config key {key!r}")
        sections[section][name] = _coerce(key, sections[section][name], value)
    try:
        built = {name: SECTIONS[name](**vals) for name, vals in sections.items()}
        return ExperimentConfig(**built, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    settings = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        settings.update(parse_settings(text.splitlines(), str(path)))
    settings.update(parse_settings(list(overrides), "--set"))
    return build_config(settings)


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def flatten_config(cfg: ExperimentConfig) -> dict:
    flat = {}
    for name in SECTIONS:
        for k, v in dataclasses.asdict(getattr(cfg, name)).items():
            flat[f"{name}.{k}"] = _jsonable(v)
    for k in TOP_LEVEL:
        flat[k] = _jsonable(getattr(cfg, k))
    return flat


def format_config(cfg: ExperimentConfig) -> str:
    """Config file text that parses back to ``cfg``."""
    lines = []
    for name in SECTIONS:
        for k, v in dataclasses.asdict(getattr(cfg, name)).items():
            lines.append(f"{name}.{k} = {v!r}")
    for k in TOP_LEVEL:
        lines.append(f"{k} = {getattr(cfg, k)!r}")
    return "\n".join(lines) + "\n"


def with_changes(cfg: ExperimentConfig, section: str, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **changes)})


# ---------------------------------------------------------------------------
# records


@dataclass
class RunRecord:
    mode: str
    config: dict
    seeds: tuple
    reports: list
    aggregate: dict
    vanilla_reports: list = field(default_factory=list)
    vanilla_aggregate: dict = field(default_factory=dict)
    wall_clock_seconds: float = float("nan")

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "seeds": list(self.seeds),
            "reports": [r.to_json() for r in self.reports],
            "aggregate": self.aggregate,
            "vanilla_reports": [r.to_json() for r in self.vanilla_reports],
            "vanilla_aggregate": self.vanilla_aggregate,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


def aggregate(reports: Sequence[CalibrationReport]) -> dict:
    """Mean and sample standard deviation (ddof 1) of every metric."""
    if not reports:
        raise ValueError("nothing to aggregate")
    out = {}
    for k in CalibrationReport.METRICS:
        vals = np.array([getattr(r, k) for r in reports], dtype=float)
        out[k] = {
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if len(vals) > 1 else float("nan"),
        }
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


TABLE_COLUMNS = ("method", "seed") + CalibrationReport.METRICS


def table_rows(method: str, seeds, reports, agg) -> list:
    rows = [[method, s] + [getattr(r, k) for k in CalibrationReport.METRICS] for s, r in zip(seeds, reports)]
    rows.append([method, "mean"] + [agg[k]["mean"] for k in CalibrationReport.METRICS])
    rows.append([method, "std"] + [agg[k]["std"] for k in CalibrationReport.METRICS])
    return rows


def write_train_log(log: Sequence[dict], path) -> None:
    write_csv(path, LOG_COLUMNS, [[row[c] for c in LOG_COLUMNS] for row in log])


# ---------------------------------------------------------------------------
# drivers


def build_env(cfg: ExperimentConfig) -> ToyQAEnv:
    return ToyQAEnv(cfg.env)


def rm_config(cfg: ExperimentConfig, env: ToyQAEnv) -> RMTrainConfig:
    if cfg.rm.vocab_size is None:
        return dataclasses.replace(cfg.rm, vocab_size=env.config.token_space)
    return cfg.rm


def train_rm(cfg: ExperimentConfig, env: Optional[ToyQAEnv] = None):
    """Quality reward model on grader-view preference pairs; returns (result, pairs)."""
    env = env or build_env(cfg)
    pairs = make_preference_pairs(env, cfg.data.n_pairs, np.random.default_rng([cfg.data.seed, 5]))
    return train_quality_rm(pairs, rm_config(cfg, env)), pairs


def train_preapproach_scorer(cfg: ExperimentConfig, env: Optional[ToyQAEnv] = None) -> RMTrainResult:
    from .preapproach import make_preapproach_scorer

    env = env or build_env(cfg)
    return make_preapproach_scorer(env, cfg.data.n_pairs, np.random.default_rng([cfg.data.seed, 7]), rm_config(cfg, env))


def preference_records(env: ToyQAEnv, pairs) -> list[PreferenceRecord]:
    text = lambda toks: " ".join(env.token_text(t) for t in toks)
    return [PreferenceRecord(text(p.prompt_tokens), text(p.chosen_tokens), text(p.rejected_tokens)) for p in pairs]


@dataclass
class SeedResult:
    seed: int
    report: CalibrationReport
    vanilla: CalibrationReport
    train: TrainResult
    samples: list


def reward_for_mode(cfg: ExperimentConfig, mode: str, model: QualityRewardModel):
    from .preapproach import PreApproachReward

    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    if mode == "preapproach":
        return PreApproachReward(model), cfg.reward
    rc = cfg.reward if mode == "conqord" else dataclasses.replace(cfg.reward, alpha=0.0)
    return ConqordReward(model, rc), rc


def run_seed(cfg: ExperimentConfig, mode: str, model: QualityRewardModel, seed: int, env: Optional[ToyQAEnv] = None) -> SeedResult:
    env = env or build_env(cfg)
    reward_fn, rc = reward_for_mode(cfg, mode, model)
    m = cfg.metrics
    # the confidence-aware scorer cannot grade a bare answer, so preapproach samples carry no quality
    quality_model = model if mode != "preapproach" else None
    start = init_policy(env, cfg.ppo, cfg.warm_start, seed)
    vanilla, _ = evaluate_report(start, env, m.eval_episodes, seed, quality_model, m.n_bins, m.ece_variant, m.parse_failure)
    result = train(env, reward_fn, rc, cfg.ppo, seed, policy=start, warm=cfg.warm_start, n_bins=m.n_bins, ece_variant=m.ece_variant)
    report, samples = evaluate_report(result.policy, env, m.eval_episodes, seed, quality_model, m.n_bins, m.ece_variant, m.parse_failure)
    return SeedResult(seed, report, vanilla, result, samples)


def run_mode(cfg: ExperimentConfig, mode: str, model: QualityRewardModel, out_dir=None) -> RunRecord:
    """Train and evaluate every seed; writes per-seed artifacts and the record when ``out_dir`` is given."""
    env = build_env(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    seed_times, results = {}, []
    for seed in cfg.seeds:
        ts = time.time()
        res = run_seed(cfg, mode, model, seed, env)
        seed_times[str(seed)] = time.time() - ts
        results.append(res)
        if out is not None:
            d = out / f"seed_{seed}"
            d.mkdir(exist_ok=True)
            save_policy(res.train.policy, d / "policy.json")
            write_train_log(res.train.log, d / "train_log.csv")
            write_bins_csv(res.report.bins, d / "bins.csv")
            write_records([s.to_record() for s in res.samples], d / "samples.jsonl", "scored_samples")
    reports = [r.report for r in results]
    vanilla = [r.vanilla for r in results]
    record = RunRecord(mode, flatten_config(cfg), cfg.seeds, reports, aggregate(reports), vanilla, aggregate(vanilla), time.time() - t0)
    if out is not None:
        (out / "record.json").write_text(json.dumps(record.to_json(), indent=2, sort_keys=True) + "\n")
        rows = table_rows("vanilla", cfg.seeds, vanilla, record.vanilla_aggregate)
        rows += table_rows(mode, cfg.seeds, reports, record.aggregate)
        write_csv(out / "table.csv", TABLE_COLUMNS, rows)
        meta = {"wall_clock_seconds": record.wall_clock_seconds, "seed_seconds": seed_times, "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}
        (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    return record


SWEEP_COLUMNS = ("alpha",) + tuple(f"{k}_{s}" for k in CalibrationReport.METRICS for s in ("mean", "std"))


def check_alpha_grid(grid: Sequence[float]) -> tuple:
    grid = tuple(float(a) for a in grid)
    if not grid:
        raise ConfigError("alpha grid is empty")
    if len(set(grid)) != len(grid):
        raise ConfigError(f"duplicate alpha values in {list(grid)}")
    if any(not 0.0 <= a <= 1.0 for a in grid):
        raise ConfigError("alpha values must lie in [0, 1]")
    return tuple(sorted(grid))


def sweep_alpha(cfg: ExperimentConfig, grid: Sequence[float], model: QualityRewardModel, out_dir=None) -> dict:
    """One conqord run per alpha with shared seeds; returns {alpha: RunRecord}."""
    grid = check_alpha_grid(grid)
    out = Path(out_dir) if out_dir is not None else None
    records = {}
    for a in grid:
        sub = None if out is None else out / f"alpha_{a:.2f}"
        records[a] = run_mode(with_changes(cfg, "reward", alpha=a), "conqord", model, sub)
    if out is not None:
        rows = []
        for a, rec in records.items():
            rows.append([a] + [rec.aggregate[k][s] for k in CalibrationReport.METRICS for s in ("mean", "std")])
        write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return records


def spearman_trend(xs, ys) -> float:
    from .metrics import spearman

    return spearman(xs, ys)[0] if len(xs) >= 3 else float("nan")


def relative_drop(base: float, new: float) -> float:
    return (base - new) / base if base > 0 else float("nan")


def pooled_std(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    n, m = len(a), len(b)
    if n < 2 or m < 2:
        return float("nan")
    return math.sqrt(((n - 1) * a.var(ddof=1) + (m - 1) * b.var(ddof=1)) / (n + m - 2))
