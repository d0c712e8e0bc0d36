"""
Seeded experiment runner: config files, repeated runs, CSV metrics, summaries.

Config files are INI-style with four sections. Every key is optional::

    [data]
    family = gaussians        # gaussians | moons
    classes = 4
    features = 2
    n_source = 500
    n_target = 500
    rotation = 40             # degrees
    translation = 0.0
    radius = 3.0
    spread = 1.0

    [noise]
    kind = uniform            # uniform | flip
    rate = 0.2

    [gearnet]
    steps = 10
    epochs = 200
    lr = 0.003
    momentum = 0.9
    beta = 0.1
    batch_source = 32
    batch_target = 32
    backbone = standard       # standard | coteaching | dann
    hidden = 64               # comma-separated widths
    keep_epochs = 10
    dann_lambda = 1.0
    reinit = derived          # derived | aligned

    [experiment]
    preset = quick            # quick | paper-scale
    seed = 0
    repeats = 5
    baseline = true
    ablation = false
    jobs = 1
    output = metrics.csv

Precedence, lowest first: built-in defaults, the preset, explicit keys in the
file, command-line flags.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DomainPairSpec, build_transition_matrix, make_domain_pair
from .engine import GearNetConfig, TrainingState, pretrain, run, with_beta
from .evaluation import evaluate_target_accuracy  # noqa: F401 - public re-export

logger = logging.getLogger(__name__)

CSV_HEADER = ["run_id", "seed", "step", "direction", "source_acc", "target_acc",
              "super_loss", "guide_loss", "seconds"]

PRESETS = {
    "quick": {"data": {"n_source": 500, "n_target": 500}, "gearnet": {"epochs": 30, "steps": 3}},
    "paper-scale": {"data": {"n_source": 2000, "n_target": 2000}, "gearnet": {"epochs": 200, "steps": 10}},
}

RUN_ORDER = ("baseline", "gearnet", "gearnet_beta0")


class ConfigError(ValueError):
    """A config file could not be parsed or holds an invalid value."""


@dataclass(frozen=True)
class ExperimentConfig:
    data: DomainPairSpec = field(default_factory=DomainPairSpec)
    noise_kind: str = "uniform"
    noise_rate: float = 0.2
    gearnet: GearNetConfig = field(default_factory=GearNetConfig)
    baseline: bool = True
    ablation: bool = False
    repeats: int = 5
    seed: int = 0
    jobs: int = 1
    output: str | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeat count must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class MetricsRecord:
    run_id: str
    seed: int
    step: int
    direction: str
    source_acc: float
    target_acc: float
    super_loss: float
    guide_loss: float
    seconds: float

    def __post_init__(self):
        for name in ("source_acc", "target_acc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass
class ExperimentResult:
    records: list[MetricsRecord]
    summary: dict[str, dict[str, float]]
    failures: dict[int, str]


# ---------------------------------------------------------------- config files

_FIELDS = {
    "data": {"family": ("family", str), "classes": ("n_classes", int), "features": ("n_features", int),
             "n_source": ("n_source", int), "n_target": ("n_target", int),
             "rotation": ("rotation_deg", float), "translation": ("translation", float),
             "radius": ("radius", float), "spread": ("spread", float)},
    "noise": {"kind": ("noise_kind", str), "rate": ("noise_rate", float)},
    "gearnet": {"steps": ("steps", int), "epochs": ("epochs", int), "lr": ("eta", float),
                "momentum": ("momentum", float), "beta": ("beta", float),
                "batch_source": ("batch_source", int), "batch_target": ("batch_target", int),
                "backbone": ("backbone", str), "hidden": ("hidden", "widths"),
                "keep_epochs": ("keep_epochs", int), "dann_lambda": ("dann_lambda", float),
                "reinit": ("reinit", str)},
    "experiment": {"preset": ("preset", str), "seed": ("seed", int), "repeats": ("repeats", int),
                   "baseline": ("baseline", "bool"), "ablation": ("ablation", "bool"),
                   "jobs": ("jobs", int), "output": ("output", str)},
}


def _convert(parser: configparser.ConfigParser, section: str, key: str, kind):
    raw = parser.get(section, key)
    try:
        if kind == "bool":
            return parser.getboolean(section, key)
        if kind == "widths":
            return tuple(int(w) for w in raw.split(",") if w.strip())
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def parse_config(text: str, source: str = "<config>", preset: str | None = None,
                 seed: int | None = None, output: str | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text, then apply overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        errors = getattr(exc, "errors", None)
        if errors:  # ParsingError carries (lineno, text) pairs
            lineno, line = errors[0]
            raise ConfigError(f"{source}, line {lineno}: cannot parse {line}") from None
        lineno = getattr(exc, "lineno", None)
        where = f"{source}, line {lineno}" if lineno else source
        detail = re.sub(r"^While reading from .*?: ", "", exc.message.splitlines()[0])
        raise ConfigError(f"{where}: {detail}") from None
    values: dict[str, dict] = {s: {} for s in _FIELDS}
    for section in parser.sections():
        if section not in _FIELDS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _FIELDS[section]:
                raise ConfigError(f"{source}: unknown key [{section}] {key}")
            name, kind = _FIELDS[section][key]
            values[section][name] = _convert(parser, section, key, kind)

    chosen = preset or values["experiment"].pop("preset", None)
    values["experiment"].pop("preset", None)
    merged: dict[str, dict] = {s: {} for s in _FIELDS}
    if chosen is not None:
        if chosen not in PRESETS:
            raise ConfigError(f"unknown preset {chosen!r} (choose from {', '.join(PRESETS)})")
        for section, entries in PRESETS[chosen].items():
            merged[section].update(entries)
    for section in _FIELDS:
        merged[section].update(values[section])
    if seed is not None:
        merged["experiment"]["seed"] = seed
    if output is not None:
        merged["experiment"]["output"] = output

    try:
        exp_seed = merged["experiment"].get("seed", 0)
        data = DomainPairSpec(**merged["data"], seed=exp_seed)
        noise_kind = merged["noise"].get("noise_kind", "uniform")
        noise_rate = merged["noise"].get("noise_rate", 0.2)
        build_transition_matrix(noise_kind, data.n_classes, noise_rate)
        gearnet = GearNetConfig(**merged["gearnet"], seed=exp_seed, noise_rate=noise_rate)
        return ExperimentConfig(data=data, noise_kind=noise_kind, noise_rate=noise_rate, gearnet=gearnet,
                                **merged["experiment"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path), **overrides)


# ---------------------------------------------------------------- running

def _records(run_id: str, seed: int, state: TrainingState) -> list[MetricsRecord]:
    return [MetricsRecord(run_id=run_id, seed=seed, step=r.step, direction=r.direction,
                          source_acc=r.source_acc, target_acc=r.target_acc,
                          super_loss=r.super_loss, guide_loss=r.guide_loss, seconds=r.seconds)
            for r in state.history]


def run_seed(cfg: ExperimentConfig, seed: int) -> list[MetricsRecord]:
    """Every configured run for one seed: baseline, GearNet, and the beta=0 ablation."""
    spec = dataclasses.replace(cfg.data, seed=seed)
    noise = build_transition_matrix(cfg.noise_kind, spec.n_classes, cfg.noise_rate)
    data = make_domain_pair(spec, noise)
    gcfg = dataclasses.replace(cfg.gearnet, seed=seed, noise_rate=cfg.noise_rate)
    out: list[MetricsRecord] = []
    if cfg.baseline:
        out += _records("baseline", seed, pretrain(gcfg, data))
    out += _records("gearnet", seed, run(gcfg, data))
    if cfg.ablation:
        out += _records("gearnet_beta0", seed, run(with_beta(gcfg, 0.0), data))
    return out


def _run_seed_safe(args):
    cfg, seed = args
    try:
        return seed, run_seed(cfg, seed), None
    except Exception as exc:  # one failed seed must not stop the others
        return seed, [], f"{type(exc).__name__}: {exc}"


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    seeds = [cfg.seed + r for r in range(cfg.repeats)]
    jobs = [(cfg, s) for s in seeds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_run_seed_safe, jobs))
    else:
        outcomes = [_run_seed_safe(j) for j in jobs]
    records: list[MetricsRecord] = []
    failures: dict[int, str] = {}
    for seed, recs, err in outcomes:
        if err is not None:
            logger.error("seed %d failed: %s", seed, err)
            failures[seed] = err
        records += recs
    records = sort_records(records)
    if cfg.output and records:
        emit_csv(records, cfg.output)
    return ExperimentResult(records=records, summary=summarize(records), failures=failures)


def sort_records(records):
    rank = {r: i for i, r in enumerate(RUN_ORDER)}
    return sorted(records, key=lambda r: (rank.get(r.run_id, len(rank)), r.run_id, r.seed, r.step))


# ---------------------------------------------------------------- reporting

def per_seed_accuracy(records) -> dict[str, dict[int, dict[str, float]]]:
    """``{run_id: {seed: {"final": acc at the last step, "best": max over steps}}}``."""
    out: dict[str, dict[int, dict[str, float]]] = {}
    for r in records:
        entry = out.setdefault(r.run_id, {}).setdefault(r.seed, {"final_step": -1, "final": 0.0, "best": 0.0})
        if r.step > entry["final_step"]:
            entry["final_step"], entry["final"] = r.step, r.target_acc
        entry["best"] = max(entry["best"], r.target_acc)
    for seeds in out.values():
        for entry in seeds.values():
            del entry["final_step"]
    return out


def summarize(records) -> dict[str, dict[str, float]]:
    """Mean and sample standard deviation of final and best target accuracy across seeds."""
    summary = {}
    for run_id, seeds in per_seed_accuracy(records).items():
        finals = np.array([v["final"] for v in seeds.values()])
        bests = np.array([v["best"] for v in seeds.values()])
        ddof = 1 if len(finals) > 1 else 0
        summary[run_id] = {
            "seeds": len(finals),
            "final_mean": float(finals.mean()), "final_std": float(finals.std(ddof=ddof)),
            "best_mean": float(bests.mean()), "best_std": float(bests.std(ddof=ddof)),
        }
    return summary


def format_summary(summary) -> str:
    lines = [f"{'run':<15} {'seeds':>5}  {'final target acc':>18}  {'best target acc':>18}"]
    for run_id in sorted(summary, key=lambda r: (RUN_ORDER.index(r) if r in RUN_ORDER else 99, r)):
        s = summary[run_id]
        lines.append(f"{run_id:<15} {s['seeds']:>5}  "
                     f"{100 * s['final_mean']:>8.2f} ± {100 * s['final_std']:<6.2f}  "
                     f"{100 * s['best_mean']:>8.2f} ± {100 * s['best_std']:<6.2f}")
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) or isinstance(v, str):
        return str(v)
    return f"{v:.6g}"


def emit_csv(records, path) -> None:
    """Write records under :data:`CSV_HEADER`, ordered by (run, seed, step), six significant digits."""
    if not records:
        raise ValueError("emit_csv needs at least one record")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in sort_records(records):
                w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])
    except OSError as exc:
        raise OSError(f"could not write metrics to {path}: {exc}") from exc


def read_csv(path) -> list[MetricsRecord]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricsRecord(run_id=r["run_id"], seed=int(r["seed"]), step=int(r["step"]), direction=r["direction"],
                          source_acc=float(r["source_acc"]), target_acc=float(r["target_acc"]),
                          super_loss=float(r["super_loss"]), guide_loss=float(r["guide_loss"]),
                          seconds=float(r["seconds"]))
            for r in rows]
