"""Config-driven training runs and paired loss comparisons."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Optional

from .config import SPLITS, ExperimentConfig
from .losses import BlobLossConfig
from .metrics import FLOAT_FIELDS, MetricsReport
from .train import (EpochRecord, VoxelModel, _map_ordered, build_split,
                    run_experiment, select_checkpoint)

# column order of the markdown summary table
TABLE_COLUMNS = (("DSC", "dsc"), ("SDSC", "surface_dsc"), ("F1", "f1"),
                 ("IS", "instance_sensitivity"), ("IP", "instance_precision"))


@dataclass
class RunResult:
    seed: int
    model: VoxelModel
    history: list
    report: MetricsReport
    selected_epoch: int


def build_splits(cfg: ExperimentConfig, seed: int) -> dict:
    conn = cfg.eval.connectivity
    return {name: build_split(cfg.splits[name], seed, i, conn) for i, name in enumerate(SPLITS)}


def run(cfg: ExperimentConfig, seed: Optional[int] = None,
        loss: Optional[BlobLossConfig] = None, data: Optional[dict] = None,
        validate_metrics: bool = True) -> RunResult:
    seed = cfg.train.seed if seed is None else seed
    train_cfg = replace(cfg.train, seed=seed, loss=loss or cfg.train.loss)
    data = data if data is not None else build_splits(cfg, seed)
    model, history, report = run_experiment(data["train"], data["validation"], data["test"],
                                            train_cfg, cfg.eval,
                                            validate_metrics=validate_metrics)
    chosen = select_checkpoint(history, train_cfg.checkpoint_policy) + 1
    return RunResult(seed, model, history, report, chosen)


def arm_names(cfg: ExperimentConfig) -> tuple[str, str]:
    base = "dice" if cfg.train.loss.base.kind == "soft-dice" else "tversky"
    return base, f"blob {base}"


def arms(cfg: ExperimentConfig) -> dict:
    """The plain base loss and its blob extension, both from the config's base loss."""
    plain, blob = arm_names(cfg)
    loss = cfg.train.loss
    return {plain: replace(loss, alpha=1.0, beta=0.0), blob: loss}


def compare(cfg: ExperimentConfig, seeds) -> dict:
    """``{arm: [RunResult per seed]}``; both arms see identical data per seed."""
    seeds = list(seeds)
    arm_cfgs = arms(cfg)
    data = {s: build_splits(cfg, s) for s in seeds}
    jobs = [(name, loss, s) for s in seeds for name, loss in arm_cfgs.items()]
    results = _map_ordered(
        lambda job: run(cfg, job[2], job[1], data[job[2]], validate_metrics=False), jobs)
    out = {name: [] for name in arm_cfgs}
    for (name, _, _), res in zip(jobs, results):
        out[name].append(res)
    return out


def _mean_sd(values) -> tuple[float, float]:
    n = len(values)
    mean = 0.0
    for v in values:
        mean += v
    mean /= n
    if n < 2:
        return mean, 0.0
    ss = 0.0
    for v in values:
        ss += (v - mean) ** 2
    return mean, math.sqrt(ss / (n - 1))


def summary_rows(results: dict) -> list[dict]:
    rows = []
    for name, runs in results.items():
        row = {"loss": name, "n_seeds": len(runs)}
        for f in FLOAT_FIELDS:
            row[f] = _mean_sd([getattr(r.report, f) for r in runs])
        rows.append(row)
    return rows


def format_markdown(results: dict) -> str:
    rows = summary_rows(results)
    head = "| loss | " + " | ".join(c for c, _ in TABLE_COLUMNS) + " |"
    sep = "|---|" + "---|" * len(TABLE_COLUMNS)
    lines = [head, sep]
    for row in rows:
        cells = [f"{row[f][0]:.3f} ± {row[f][1]:.3f}" for _, f in TABLE_COLUMNS]
        lines.append(f"| {row['loss']} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def format_csv(results: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["loss", "n_seeds"] + [f"{f}_{s}" for f in FLOAT_FIELDS for s in ("mean", "sd")])
    for row in summary_rows(results):
        writer.writerow([row["loss"], row["n_seeds"]]
                        + [repr(v) for f in FLOAT_FIELDS for v in row[f]])
    return buf.getvalue()


def per_seed_csv(results: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["loss", "seed"] + list(FLOAT_FIELDS))
    for name, runs in results.items():
        for r in runs:
            writer.writerow([name, r.seed] + [repr(getattr(r.report, f)) for f in FLOAT_FIELDS])
    return buf.getvalue()


def history_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "validation_loss"]
                    + [f"val_{f}" for f in FLOAT_FIELDS])
    for h in history:
        metrics = ([repr(getattr(h.validation, f)) for f in FLOAT_FIELDS]
                   if h.validation is not None else [""] * len(FLOAT_FIELDS))
        writer.writerow([h.epoch, repr(h.train_loss), repr(h.validation_loss)] + metrics)
    return buf.getvalue()
