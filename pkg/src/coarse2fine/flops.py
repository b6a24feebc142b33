"""Analytic FLOPs model for the encoder and schedule-level accounting.

Counting convention: one multiply-add is 2 FLOPs. A forward pass over ``n``
tokens (CLS included) costs, per encoder layer, ``12*n*d^2`` for the QKV,
output and MLP projections (mlp_ratio 4) plus ``2*n^2*d`` for the attention
score and mixing products, and ``2*n*p_f*p_t*d`` for the patch embedding.
A training step on one sample is counted as three forward passes. The mel
front end, layer norms, softmax and the classifier head are not counted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

from .compress import CompressionMethod
from .model import ModelConfig
from .schedule import Schedule
from .tokenizer import PatchSpec, phase_geometry

TRAIN_STEP_MULTIPLIER = 3


def step_flops(n_tokens: int, cfg: ModelConfig, patch: PatchSpec | None = None) -> int:
    """Forward-pass FLOPs for one sample of ``n_tokens`` tokens."""
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    patch = patch or cfg.patch
    n, d = int(n_tokens), cfg.embed_dim
    per_layer = 12 * n * d * d + 2 * n * n * d
    return cfg.num_layers * per_layer + 2 * n * patch.size * d


def train_step_flops(n_tokens: int, cfg: ModelConfig, patch: PatchSpec | None = None) -> int:
    return TRAIN_STEP_MULTIPLIER * step_flops(n_tokens, cfg, patch)


def phase_tokens(cfg: ModelConfig, method: CompressionMethod | str, C: int) -> tuple[int, PatchSpec]:
    """Token count (CLS included) and patch shape for a phase on ``cfg``'s input geometry."""
    patch, (f, t) = phase_geometry(cfg.n_mels, cfg.time_frames, cfg.patch, method, C)
    return f * t + 1, patch


@dataclass(frozen=True)
class PhaseFlops:
    phase: int
    method: str
    C: int
    n_tokens: int
    epochs: int
    per_step: int  # training FLOPs per sample step
    cumulative: int  # running total at the end of this phase


@dataclass(frozen=True)
class FlopsReport:
    phases: tuple[PhaseFlops, ...]
    steps_per_epoch: int
    cumulative: int
    baseline_cumulative: int
    baseline_epochs: int
    baseline_n_tokens: int

    @property
    def savings_percent(self) -> float:
        if self.baseline_cumulative == 0:
            return 0.0
        return 100.0 * (1.0 - self.cumulative / self.baseline_cumulative)


def schedule_flops(
    schedule: Schedule, cfg: ModelConfig, steps_per_epoch: int, baseline_epochs: int | None = None
) -> FlopsReport:
    """Cumulative training FLOPs of ``schedule`` against a full-resolution baseline.

    ``steps_per_epoch`` counts per-sample steps, i.e. training-set size.
    """
    if not schedule.phases:
        raise ValueError("empty schedule")
    if steps_per_epoch < 0:
        raise ValueError("steps_per_epoch must be >= 0")
    baseline_epochs = schedule.baseline_epochs if baseline_epochs is None else baseline_epochs
    rows, total = [], 0
    for i, ph in enumerate(schedule.phases):
        n, patch = phase_tokens(cfg, ph.method, ph.C)
        per_step = train_step_flops(n, cfg, patch)
        total += per_step * steps_per_epoch * ph.epochs
        rows.append(PhaseFlops(i, ph.method.value, ph.C, n, ph.epochs, per_step, total))
    n_base, base_patch = phase_tokens(cfg, CompressionMethod.NONE, 1)
    baseline = train_step_flops(n_base, cfg, base_patch) * steps_per_epoch * baseline_epochs
    return FlopsReport(tuple(rows), steps_per_epoch, total, baseline, baseline_epochs, n_base)


FLOPS_CSV_COLUMNS = ("phase", "n_tokens", "epochs", "per_step", "cumulative", "savings_percent")


def report_rows(report: FlopsReport) -> list[dict]:
    """CSV rows: one per phase (savings of the running total) then a ``baseline`` row."""
    rows = [
        {
            "phase": str(p.phase),
            "n_tokens": p.n_tokens,
            "epochs": p.epochs,
            "per_step": p.per_step,
            "cumulative": p.cumulative,
            "savings_percent": 100.0 * (1.0 - p.cumulative / report.baseline_cumulative)
            if report.baseline_cumulative else 0.0,
        }
        for p in report.phases
    ]
    rows.append({
        "phase": "baseline",
        "n_tokens": report.baseline_n_tokens,
        "epochs": report.baseline_epochs,
        "per_step": report.baseline_cumulative // max(1, report.steps_per_epoch * report.baseline_epochs),
        "cumulative": report.baseline_cumulative,
        "savings_percent": 0.0,
    })
    return rows


def write_report_csv(fh: TextIO, report: FlopsReport) -> None:
    w = csv.DictWriter(fh, fieldnames=FLOPS_CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in report_rows(report):
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_report_csv(fh: TextIO | str | Path) -> list[dict]:
    """Rows of a FLOPs CSV with integer counts and float savings."""
    if isinstance(fh, (str, Path)):
        with open(fh, newline="", encoding="utf-8") as f:
            return read_report_csv(f)
    reader = csv.DictReader(fh)
    if tuple(reader.fieldnames or ()) != FLOPS_CSV_COLUMNS:
        raise ValueError(f"unexpected FLOPs CSV columns {reader.fieldnames}")
    return [
        {
            "phase": row["phase"],
            "n_tokens": int(row["n_tokens"]),
            "epochs": int(row["epochs"]),
            "per_step": int(row["per_step"]),
            "cumulative": int(row["cumulative"]),
            "savings_percent": float(row["savings_percent"]),
        }
        for row in reader
    ]
