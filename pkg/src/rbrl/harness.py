"""Seeded experiment configs, parameter sweeps and their summaries.

An experiment is one JSON document (see ``ExperimentConfig``). A sweep varies
one named field over a list of values; every (value, seed) pair is an
independent run. Output layout under ``out``::

    config.json                 the base config
    runs/<id>/curve.csv         step, mean_true_return, stderr, phase
    runs/<id>/record.json       full RunRecord plus its axis value
    summary.csv                 axis_value, mean, stderr, n_seeds
    curves_long.csv             axis_value, seed, step, mean_true_return, stderr, phase

All files are written from results sorted by (axis value index, seed), so the
bytes do not depend on worker count or completion order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import REGISTRY, make_env
from .nn import Activation, MlpSpec
from .optim import OptimizerConfig, OptimizerKind
from .policy import CurvePoint, PpoConfig, RunRecord, run_rbrl
from .rater import RaterConfig
from .reward import QConfig, QVariant, RewardTrainerConfig

logger = logging.getLogger(__name__)

FINAL_WINDOW_FRACTION = 0.1
CONFIG_FORMAT = "rbrl-experiment"


@dataclass(frozen=True)
class ExperimentConfig:
    """Every hyperparameter of one rating-based run, minus the seed.

    ``max_reward=None`` uses the environment's default rater maximum.
    ``ppo`` holds overrides for :class:`PpoConfig` fields.
    """

    name: str = "experiment"
    env: str = "pointmass"
    n_classes: int = 2
    q_variant: str = "original"
    k: float = 1.0
    max_reward: float | None = None
    budget: int = 200
    hidden_layers: int = 2
    hidden_width: int = 64
    activation: str = "tanh"
    dropout: float = 0.0
    optimizer: str = "adam"
    learning_rate: float = 3e-4
    weight_decay: float | None = None
    reward_epochs: int = 200
    reward_batch_size: int = 32
    ppo: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    total_steps: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "ppo", dict(self.ppo))
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.env.lower() not in REGISTRY:
            raise ValueError(f"unknown environment {self.env!r}")
        # building the component configs runs all their validation
        self.rater_config()
        self.reward_config()
        self.ppo_config()

    @property
    def env_obj(self):
        return make_env(self.env)

    def rater_config(self) -> RaterConfig:
        mr = self.env_obj.default_max_reward if self.max_reward is None else self.max_reward
        return RaterConfig(self.n_classes, float(mr), self.budget)

    def reward_config(self) -> RewardTrainerConfig:
        spec = self.env_obj.spec
        mlp = MlpSpec(spec.state_dim + spec.action_dim, self.hidden_layers, self.hidden_width,
                      Activation(self.activation), self.dropout)
        opt = OptimizerConfig(OptimizerKind(self.optimizer), self.learning_rate, weight_decay=self.weight_decay)
        return RewardTrainerConfig(mlp, opt, QConfig(QVariant(self.q_variant), self.k),
                                   self.reward_batch_size, self.reward_epochs)

    def ppo_config(self) -> PpoConfig:
        unknown = set(self.ppo) - {f.name for f in dataclasses.fields(PpoConfig)}
        if unknown:
            raise ValueError(f"unknown ppo fields: {sorted(unknown)}")
        return PpoConfig(**self.ppo)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return {"format": CONFIG_FORMAT, "version": 1, **d}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        fmt = d.pop("format", CONFIG_FORMAT)
        d.pop("version", None)
        if fmt != CONFIG_FORMAT:
            raise ValueError(f"not an experiment config (format {fmt!r})")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def with_value(self, name: str, value) -> "ExperimentConfig":
        """Copy with one field replaced; ``ppo.<field>`` targets a PPO override."""
        if name.startswith("ppo."):
            return dataclasses.replace(self, ppo={**self.ppo, name[4:]: value})
        if name not in {f.name for f in dataclasses.fields(self)} or name in ("seeds", "ppo", "name"):
            raise ValueError(f"{name!r} is not a sweepable parameter")
        return dataclasses.replace(self, **{name: value})


def _base_preset(**kw):
    return ExperimentConfig(env="pointmass", n_classes=2, k=1.0, q_variant="original", max_reward=20.0, budget=200,
                            hidden_width=64, seeds=(0, 1, 2, 3, 4), total_steps=100_000, **kw)


PRESETS = {
    "paper_default": lambda: _base_preset(name="paper_default", hidden_layers=3, activation="tanh", dropout=0.0,
                                          optimizer="adam", learning_rate=3e-4),
    "optimized": lambda: _base_preset(name="optimized", hidden_layers=2, activation="arctan", dropout=0.05,
                                      optimizer="adamw", learning_rate=5e-4),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def run_one(cfg: ExperimentConfig, seed: int) -> RunRecord:
    """One seeded run; any exception becomes a failed record."""
    try:
        return run_rbrl(cfg.env_obj, cfg.rater_config(), cfg.reward_config(), cfg.ppo_config(), cfg.total_steps, seed)
    except Exception as e:  # noqa: BLE001 - a sweep must survive any single run
        logger.warning("run %s seed %d failed: %s", cfg.name, seed, e)
        return RunRecord(seed=seed, status="failed", message=f"{type(e).__name__}: {e}")


def _run_task(args):
    cfg_dict, seed = args
    return run_one(ExperimentConfig.from_dict(cfg_dict), seed)


def parse_axis_value(text: str):
    """'0.05' -> 0.05, '5%' -> 0.05, '3' -> 3, 'arctan' -> 'arctan'."""
    text = text.strip()
    if text.endswith("%"):
        return float(text[:-1]) / 100.0
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_axis(spec: str):
    """'NAME=v1,v2,...' -> (name, [values])."""
    name, sep, rest = spec.partition("=")
    if not sep or not name.strip() or not rest.strip():
        raise ValueError(f"axis must look like NAME=v1,v2,... (got {spec!r})")
    return name.strip(), [parse_axis_value(v) for v in rest.split(",")]


@dataclass
class SweepResult:
    axis: str
    values: list
    records: dict  # (value index, seed) -> RunRecord
    summaries: list  # SummaryRow per value


def run_sweep(base: ExperimentConfig, axis: str | None, values: list, workers: int = 1,
              out: str | os.PathLike | None = None) -> SweepResult:
    """Run every (axis value, seed) pair. ``axis=None`` runs the base config
    alone (``values`` is then ignored)."""
    if axis is None:
        axis, values, configs = "name", [base.name], [base]
    else:
        if not values:
            raise ValueError("axis needs at least one value")
        configs = [base.with_value(axis, v) for v in values]  # validates every value up front
    tasks = [((i, s), (c.to_dict(), s)) for i, c in enumerate(configs) for s in base.seeds]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_task, [t for _, t in tasks]))
    else:
        results = [_run_task(t) for _, t in tasks]
    records = dict(zip([k for k, _ in tasks], results))
    summaries = []
    for i, v in enumerate(values):
        recs = [records[(i, s)] for s in base.seeds]
        summaries.append(summarize_cell(v, recs))
    result = SweepResult(axis, list(values), records, summaries)
    if out is not None:
        write_outputs(result, base, out)
    return result


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def final_window(curve: list) -> list:
    """Last 10% of evaluation points (rounded up, at least one)."""
    if not curve:
        raise ValueError("empty learning curve")
    n = max(1, math.ceil(FINAL_WINDOW_FRACTION * len(curve)))
    return curve[-n:]


def final_mean(record: RunRecord) -> float:
    return float(np.mean([p.mean_true_return for p in final_window(record.curve)]))


def summarize(records: list) -> tuple[float, float]:
    """Across-record mean and standard error (sample std / sqrt(n)) of the
    final-window means."""
    if not records:
        raise ValueError("nothing to summarize")
    finals = sorted(final_mean(r) for r in records)  # order-independent sums
    n = len(finals)
    mean = math.fsum(finals) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((x - mean) ** 2 for x in finals) / (n - 1)
    return mean, math.sqrt(var) / math.sqrt(n)


@dataclass
class SummaryRow:
    axis_value: object
    mean: float | None
    stderr: float | None
    n_seeds: int


def summarize_cell(value, records) -> SummaryRow:
    """Summary over the successful records; a cell with none is missing."""
    ok = [r for r in records if r.status == "ok" and r.curve]
    if not ok:
        return SummaryRow(value, None, None, 0)
    m, se = summarize(ok)
    return SummaryRow(value, m, se, len(ok))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_summary_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["axis_value", "mean", "stderr", "n_seeds"])
        for r in rows:
            w.writerow([_fmt(r.axis_value), _fmt(r.mean), _fmt(r.stderr), r.n_seeds])


def read_summary_csv(path) -> list:
    with open(path, newline="") as f:
        return [SummaryRow(r["axis_value"], float(r["mean"]) if r["mean"] else None,
                           float(r["stderr"]) if r["stderr"] else None, int(r["n_seeds"]))
                for r in csv.DictReader(f)]


def run_id(axis: str, value, seed: int) -> str:
    v = str(value).replace("/", "_").replace(" ", "")
    return f"{axis}={v}_seed{seed}"


def record_to_dict(rec: RunRecord, axis: str, value, index: int) -> dict:
    d = dataclasses.asdict(rec)
    return {"axis": axis, "axis_value": value, "axis_index": index, **d}


def record_from_dict(d: dict) -> RunRecord:
    curve = [CurvePoint(**p) for p in d["curve"]]
    return RunRecord(d["seed"], curve, d["status"], d["message"], d["reward_loss"], d["rating_counts"])


def write_outputs(result: SweepResult, base: ExperimentConfig, out):
    out = Path(out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    base.save(out / "config.json")
    long_rows = []
    for (i, seed) in sorted(result.records):
        rec = result.records[(i, seed)]
        value = result.values[i]
        d = out / "runs" / run_id(result.axis, value, seed)
        d.mkdir(exist_ok=True)
        rec.to_csv(d / "curve.csv")
        (d / "record.json").write_text(
            json.dumps(record_to_dict(rec, result.axis, value, i), indent=1, sort_keys=True) + "\n")
        long_rows += [[_fmt(value), seed, p.step, repr(p.mean_true_return), repr(p.stderr), p.phase]
                      for p in rec.curve]
    write_summary_csv(result.summaries, out / "summary.csv")
    with open(out / "curves_long.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["axis_value", "seed", "step", "mean_true_return", "stderr", "phase"])
        w.writerows(long_rows)


def load_records(out) -> list:
    """All record.json files under ``out/runs`` as (axis_index, axis_value, RunRecord)."""
    rows = []
    for p in sorted(Path(out, "runs").glob("*/record.json")):
        d = json.loads(p.read_text())
        rows.append((d["axis_index"], d["axis_value"], record_from_dict(d)))
    if not rows:
        raise ValueError(f"no run records under {out}")
    rows.sort(key=lambda r: (r[0], r[2].seed))
    return rows


def summarize_dir(out) -> list:
    """Recompute the per-value summary from the raw records on disk."""
    groups = {}
    for idx, value, rec in load_records(out):
        groups.setdefault(idx, (value, []))[1].append(rec)
    return [summarize_cell(v, recs) for _, (v, recs) in sorted(groups.items())]
