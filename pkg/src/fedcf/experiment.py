"""Experiment orchestration: dataset preparation, cross-validated runs, sweeps, CSV output."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import FULL, ExperimentConfig
from .data import (
    InteractionDataset,
    SplitMode,
    filter_min_interactions,
    load_ratings,
    sample_subset,
    split_leave_one_out,
)
from .evaluation import Metrics, build_tasks
from .server import comm_cost
from .simulation import Evaluator, Mode, run_training

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["epoch", "hr_at_2", "hr_at_5", "hr_at_10", "loss", "upload_bytes", "download_bytes"]
SWEEP_KEYS = ["epsilon", "k", "n_users", "n_items"]


def trace_columns(ks: Sequence[int]) -> list[str]:
    return ["epoch", *(f"hr_at_{K}" for K in ks), "loss", "upload_bytes", "download_bytes"]


def split_seed(master_seed: int, split: int) -> int:
    return int(np.random.SeedSequence((master_seed, split)).generate_state(1)[0])


def prepare_dataset(config: ExperimentConfig, full: InteractionDataset | None = None) -> InteractionDataset:
    """Load + filter (or reuse ``full``), then subsample to the configured size."""
    if full is None:
        full = filter_min_interactions(load_ratings(config.resolved_data_path()), config.min_interactions)
    n_users = full.n_users if config.n_users == FULL else config.n_users
    n_items = full.n_items if config.n_items == FULL else config.n_items
    if (n_users, n_items) == (full.n_users, full.n_items):
        return full
    # leave-one-out needs two interactions per user
    return sample_subset(full, n_users, n_items, config.seed, min_user_interactions=2)


@dataclass
class CVResult:
    mean: Metrics
    std: dict[int, float]
    per_split: list[Metrics]
    traces: list[list] = field(repr=False, default_factory=list)

    def mean_trace(self) -> list[dict]:
        """Per-epoch average over splits."""
        if not self.traces or not self.traces[0]:
            return []
        rows = []
        for records in zip(*self.traces):
            row = {"epoch": records[0].epoch}
            for K in records[0].hr:
                row[f"hr_at_{K}"] = float(np.mean([r.hr[K] for r in records]))
            row["loss"] = float(np.mean([r.loss for r in records]))
            row["upload_bytes"] = records[0].upload_bytes
            row["download_bytes"] = records[0].download_bytes
            rows.append(row)
        return rows


def cross_validate(ds: InteractionDataset, config: ExperimentConfig, n_splits: int, master_seed: int) -> CVResult:
    """Train and evaluate once per leave-one-out split; mean and sample std of final HR@K."""
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    hp = config.hp
    mode = Mode(config.mode)
    finals, traces = [], []
    for s in range(n_splits):
        seed = split_seed(master_seed, s)
        split = split_leave_one_out(ds, SplitMode.parse(config.split_mode), seed)
        evaluator = Evaluator(split.train, build_tasks(split, seed), config.ks)
        result = run_training(split.train, hp, seed, mode, evaluator)
        metrics, _ = evaluator(result.item_matrix, hp, X=result.user_embeddings)
        finals.append(metrics)
        traces.append(result.trace)
        logger.info("split %d/%d hr=%s", s + 1, n_splits, metrics.hr)
    mean = {K: float(np.mean([m.hr[K] for m in finals])) for K in config.ks}
    std = {K: float(np.std([m.hr[K] for m in finals], ddof=1)) if n_splits > 1 else 0.0 for K in config.ks}
    return CVResult(Metrics(mean, ds.n_users), std, finals, traces)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def format_trace_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cv: CVResult
    trace: list[dict]
    dataset_summary: str

    def summary_line(self) -> str:
        parts = [
            f"mode={self.config.mode}",
            f"epsilon={self.config.epsilon:g}",
            f"k={self.config.k}",
            f"user_budget_per_epoch={self.config.user_budget:g}",
            f"n_splits={self.config.n_splits}",
        ]
        for K in self.config.ks:
            parts.append(f"hr_at_{K}={self.cv.mean.hr[K]:.4f}+-{self.cv.std[K]:.4f}")
        return "summary " + " ".join(parts)


def run_experiment(config: ExperimentConfig, dataset: InteractionDataset | None = None, write: bool = True) -> ExperimentResult:
    """Ingest, train and evaluate; writes the averaged trace CSV to ``config.output_path``."""
    ds = prepare_dataset(config, dataset)
    logger.info("dataset %s", ds.summary().replace("\n", " "))
    logger.warning(
        "privacy: per-report epsilon=%g, k=%d, user-level budget per epoch k*epsilon=%g",
        config.epsilon, config.k, config.user_budget,
    )
    cv = cross_validate(ds, config, config.n_splits, config.seed)
    trace = cv.mean_trace()
    result = ExperimentResult(config, cv, trace, ds.summary())
    if write and config.output_path:
        Path(config.output_path).write_text(format_trace_csv(trace, trace_columns(config.ks)), encoding="utf-8")
    return result


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    epsilons: tuple[float, ...]
    ks: tuple[int, ...]
    sizes: tuple[tuple[int | str, int | str], ...]

    def __post_init__(self):
        if not (self.epsilons and self.ks and self.sizes):
            raise ValueError("sweep axes must be non-empty")

    def points(self) -> list[ExperimentConfig]:
        return [
            self.base.replace(epsilon=eps, k=k, n_users=nu, n_items=ni)
            for (nu, ni), eps, k in itertools.product(self.sizes, self.epsilons, self.ks)
        ]


def sweep_key(config: ExperimentConfig) -> tuple[str, ...]:
    return (f"{config.epsilon:g}", str(config.k), str(config.n_users), str(config.n_items))


def _completed(path: Path) -> set[tuple[str, ...]]:
    if not path.exists() or path.stat().st_size == 0:
        return set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return {
            (f"{float(r['epsilon']):g}", r["k"], r["n_users"], r["n_items"])
            for r in reader
        }


def run_sweep(spec: SweepSpec, output_path: str | Path, full: InteractionDataset | None = None) -> int:
    """One row per grid point; rows already present in ``output_path`` are skipped.

    Returns 0 iff every requested point succeeded.
    """
    output_path = Path(output_path)
    columns = SWEEP_KEYS + trace_columns(spec.base.ks)
    done = _completed(output_path)
    if full is None:
        full = filter_min_interactions(load_ratings(spec.base.resolved_data_path()), spec.base.min_interactions)
    failures = 0
    new_file = not output_path.exists() or output_path.stat().st_size == 0
    with open(output_path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(columns)
        for point in spec.points():
            key = sweep_key(point)
            if key in done:
                logger.info("skipping completed point %s", key)
                continue
            try:
                result = run_experiment(point, full, write=False)
            except Exception:
                logger.exception("sweep point %s failed", key)
                failures += 1
                continue
            final = result.trace[-1] if result.trace else _final_row(result)
            row = dict(zip(SWEEP_KEYS, key)) | final
            writer.writerow([_fmt(row[c]) for c in columns])
            fh.flush()
            done.add(key)
            print(result.summary_line(), flush=True)
    return 1 if failures else 0


def _final_row(result: ExperimentResult) -> dict:
    row = {"epoch": 0, "loss": math.nan, "upload_bytes": 0, "download_bytes": 0}
    row.update({f"hr_at_{K}": v for K, v in result.cv.mean.hr.items()})
    return row


PRESETS = {
    # HR@10 over (epsilon, k) for the three user-set sizes on the 1k item set
    "eps-k-grid": dict(
        epsilons=(0.5, 1.0, 2.5, 6.0), ks=(1, 50, 100, 250),
        sizes=((1000, 1000), (10000, 1000), (50000, 1000)),
    ),
    # user x item cardinality at epsilon=2.5, k=100
    "cardinality-grid": dict(
        epsilons=(2.5,), ks=(100,),
        sizes=tuple(itertools.product((1000, 10000, 50000), (1000, 5000, FULL))),
    ),
    # full data, latest-interaction split, epsilon=2.5, k in {100, 250}
    "full-benchmark": dict(epsilons=(2.5,), ks=(100, 250), sizes=((FULL, FULL),)),
}


def preset_spec(name: str, base: ExperimentConfig) -> SweepSpec:
    try:
        axes = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if name == "full-benchmark":
        base = base.replace(split_mode=SplitMode.LATEST.value)
    return SweepSpec(base, **axes)


def cost_table(config: ExperimentConfig, n_items: int) -> str:
    c = comm_cost(config.hp, n_items)
    lines = [
        f"n_items={n_items} n_factors={config.n_factors} k={config.k} epochs={config.epochs}",
        f"download_per_epoch_bytes={c.download_per_epoch} ({c.download_per_epoch / 1000:.1f} KB)",
        f"download_total_bytes={c.download_total} ({c.download_total / 1e6:.2f} MB)",
        f"upload_per_epoch_bytes={c.upload_per_epoch} ({c.upload_per_epoch / 1000:.2f} KB)",
        f"upload_total_bytes={c.upload_total} ({c.upload_total / 1000:.1f} KB)",
        f"upload_wire_per_epoch_bytes={c.upload_wire_per_epoch}",
        f"upload_wire_total_bytes={c.upload_wire_total}",
        f"upload_bits_per_epoch={c.upload_bits_per_epoch}",
    ]
    return "\n".join(lines)


def summarize(paths: Sequence[str | Path]) -> str:
    """Mean and std of the final-epoch HR columns, grouped by sweep key when present."""
    groups: dict[tuple, list[dict]] = {}
    hr_cols: list[str] = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        hr_cols = [c for c in rows[0] if c.startswith("hr_at_")]
        if all(k in rows[0] for k in SWEEP_KEYS):
            for r in rows:
                groups.setdefault(tuple(r[k] for k in SWEEP_KEYS), []).append(r)
        else:
            groups.setdefault((str(path),), []).append(rows[-1])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "n", *(f"{c}_mean" for c in hr_cols), *(f"{c}_std" for c in hr_cols)])
    for key, rows in groups.items():
        vals = np.array([[float(r[c]) for c in hr_cols] for r in rows])
        std = vals.std(axis=0, ddof=1) if len(rows) > 1 else np.zeros(len(hr_cols))
        writer.writerow(["/".join(key), len(rows), *(f"{v:.4f}" for v in vals.mean(axis=0)), *(f"{v:.4f}" for v in std)])
    return buf.getvalue()
