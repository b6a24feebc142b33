"""Multi-phase coarse-to-fine trainer, evaluation metrics and run logs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .adapt import PhaseTransition, migrate
from .checkpoint import Checkpoint, PhaseProvenance, save_checkpoint
from .compress import CompressionMethod
from .data import AudioDataset
from .flops import train_step_flops
from .model import AdamState, ModelConfig, forward, gradients, init_params, optimizer_step
from .schedule import PhaseConfig, Schedule, StopCriterion, StopKind
from .tokenizer import phase_geometry

log = logging.getLogger(__name__)

EVAL_BATCH = 64


# ------------------------------------------------------------------- metrics


def top1_accuracy(logits, labels) -> float:
    """Fraction of rows whose argmax equals the label (ties go to the lowest class index)."""
    logits = np.atleast_2d(np.asarray(logits))
    labels = np.asarray(labels)
    if logits.shape[0] == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def average_precision(scores, targets) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets).astype(bool)
    order = np.argsort(-scores, kind="stable")
    hits = targets[order]
    if not hits.any():
        raise ValueError("no positives")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def mean_average_precision(scores, targets) -> float:
    """Mean over classes with at least one positive of per-class average precision."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.ndim != 2:
        raise ValueError(f"scores {scores.shape} and targets {targets.shape} must be matching N x K arrays")
    aps = [average_precision(scores[:, k], targets[:, k]) for k in range(scores.shape[1]) if targets[:, k].any()]
    if not aps:
        raise ValueError("no positive targets in any class")
    return float(np.mean(aps))


# ------------------------------------------------------------------- run log


@dataclass(frozen=True)
class EpochRecord:
    phase_index: int
    epoch: int  # 1-based, counted across the whole run
    phase_epoch: int  # 1-based within the phase
    method: str
    C: int
    n_tokens: int
    lr: float
    train_loss: float
    eval_metric: float
    cumulative_flops: int


RUNLOG_COLUMNS = tuple(f.name for f in fields(EpochRecord))
_RUNLOG_TYPES = {f.name: f.type for f in fields(EpochRecord)}


def write_runlog_csv(path: str | Path, records) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RUNLOG_COLUMNS)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in RUNLOG_COLUMNS)])
    return path


def read_runlog_csv(path: str | Path) -> list[EpochRecord]:
    casts = {"int": int, "float": float, "str": str}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RUNLOG_COLUMNS:
            raise ValueError(f"{path}: unexpected run-log columns {reader.fieldnames}")
        return [EpochRecord(**{k: casts[_RUNLOG_TYPES[k]](v) for k, v in row.items()}) for row in reader]


COMPARE_COLUMNS = ("epoch", "baseline_metric", "curriculum_metric", "baseline_cumulative_flops",
                   "curriculum_cumulative_flops")


@dataclass(frozen=True)
class ComparisonRow:
    """One epoch of a baseline vs. curriculum run; ``None`` once a run has ended."""

    epoch: int
    baseline_metric: float | None
    curriculum_metric: float | None
    baseline_cumulative_flops: int | None
    curriculum_cumulative_flops: int | None


def join_runs(baseline: list[EpochRecord], curriculum: list[EpochRecord]) -> list[ComparisonRow]:
    rows = []
    for i in range(max(len(baseline), len(curriculum))):
        b = baseline[i] if i < len(baseline) else None
        c = curriculum[i] if i < len(curriculum) else None
        rows.append(ComparisonRow(
            i + 1,
            b.eval_metric if b else None,
            c.eval_metric if c else None,
            b.cumulative_flops if b else None,
            c.cumulative_flops if c else None,
        ))
    return rows


def write_comparison_csv(path: str | Path, rows: list[ComparisonRow]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_COLUMNS)
        for r in rows:
            values = (getattr(r, c) for c in COMPARE_COLUMNS)
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in values])
    return path


def read_comparison_csv(path: str | Path) -> list[ComparisonRow]:
    def opt(cast):
        return lambda v: None if v == "" else cast(v)

    casts = (int, opt(float), opt(float), opt(int), opt(int))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != COMPARE_COLUMNS:
            raise ValueError(f"{path}: unexpected comparison columns {header}")
        return [ComparisonRow(*(c(v) for c, v in zip(casts, row))) for row in reader]


# ------------------------------------------------------------------ training


@dataclass
class TrainState:
    ckpt: Checkpoint
    cumulative_flops: int = 0
    epochs_done: int = 0

    @property
    def params(self):
        return self.ckpt.params


def phase_provenance(cfg: ModelConfig, phase: PhaseConfig, phase_index: int) -> PhaseProvenance:
    patch, grid = phase_geometry(cfg.n_mels, cfg.time_frames, cfg.patch, phase.method, phase.C)
    return PhaseProvenance(phase.method, phase.C, patch, grid, phase_index)


def epoch_seed(seed: int, phase_index: int, epoch: int) -> int:
    """Shuffle seed for one epoch: ``seed + phase_index * 10**6 + epoch`` (epoch 0-based within the phase)."""
    return seed + phase_index * 10**6 + epoch


def initial_state(cfg: ModelConfig, first_phase: PhaseConfig, seed: int) -> TrainState:
    prov = phase_provenance(cfg, first_phase, 0)
    params = init_params(cfg, np.random.default_rng(seed), prov.patch, prov.grid_dims)
    return TrainState(Checkpoint(params, cfg, prov, seed, AdamState()))


def predict(params, cfg: ModelConfig, grids: np.ndarray) -> np.ndarray:
    return np.concatenate([forward(params, cfg, grids[i: i + EVAL_BATCH]) for i in range(0, len(grids), EVAL_BATCH)])


def evaluate(params, cfg: ModelConfig, data: AudioDataset, method, C: int, split: str = "eval") -> float:
    """Accuracy (single-label) or mAP (multi-label) of ``split`` under the given compression."""
    logits = predict(params, cfg, data.grids(split, method, C))
    targets = data.targets(split)
    if data.multi_label:
        return mean_average_precision(logits, targets)
    return top1_accuracy(logits, targets)


def _check_geometry(state: TrainState, cfg: ModelConfig, phase: PhaseConfig):
    want = phase_provenance(cfg, phase, state.ckpt.provenance.phase_index)
    have = state.ckpt.provenance
    if (have.patch, tuple(have.grid_dims)) != (want.patch, tuple(want.grid_dims)):
        raise ValueError(
            f"state geometry {have.patch}/{have.grid_dims} does not match phase {phase.method.value} "
            f"C={phase.C} ({want.patch}/{want.grid_dims})"
        )


def _should_stop(stop: StopCriterion, history: list[float]) -> bool:
    if stop.kind is StopKind.SURPASS_BASELINE:
        if stop.target_metric is None:
            raise ValueError("surpass-baseline stop criterion needs a target metric")
        return history[-1] >= stop.target_metric
    if stop.kind is StopKind.CONVERGENCE:
        best = int(np.argmax(history))  # first occurrence of the best value
        return len(history) - 1 - best >= stop.patience_epochs
    return False


def run_phase(
    state: TrainState,
    phase: PhaseConfig,
    data: AudioDataset,
    phase_index: int = 0,
    seed: int = 0,
    batch_size: int = 16,
    stop: StopCriterion | None = None,
) -> tuple[TrainState, list[EpochRecord]]:
    """Train one phase; one log record per epoch. ``stop`` is checked after every epoch."""
    if data.size("train") == 0:
        raise ValueError("empty training set")
    cfg = state.ckpt.config
    _check_geometry(state, cfg, phase)
    X = data.grids("train", phase.method, phase.C)
    y = data.targets("train")
    patch = state.ckpt.provenance.patch
    f, t = state.ckpt.provenance.grid_dims
    n_tokens = f * t + 1
    epoch_flops = len(X) * train_step_flops(n_tokens, cfg, patch)

    params, opt = state.ckpt.params, state.ckpt.opt_state or AdamState()
    cumulative, done = state.cumulative_flops, state.epochs_done
    records, history = [], []
    for e in range(phase.epochs):
        rng = np.random.default_rng(epoch_seed(seed, phase_index, e))
        order = rng.permutation(len(X))
        lr = phase.lr_at(e)
        total = 0.0
        for start in range(0, len(X), batch_size):
            idx = order[start: start + batch_size]
            value, grads = gradients(params, cfg, (X[idx], y[idx]), rng)
            params, opt = optimizer_step(params, grads, opt, lr)
            total += value * len(idx)
        cumulative += epoch_flops
        done += 1
        metric = evaluate(params, cfg, data, phase.method, phase.C)
        history.append(metric)
        records.append(EpochRecord(
            phase_index, done, e + 1, phase.method.value, phase.C, n_tokens, lr, total / len(X), metric, cumulative,
        ))
        log.info("phase %d epoch %d  C=%d tokens=%d  loss %.4f  metric %.4f",
                 phase_index, e + 1, phase.C, n_tokens, total / len(X), metric)
        if stop is not None and _should_stop(stop, history):
            break
    new_ckpt = state.ckpt.with_params(params, opt_state=opt)
    return TrainState(new_ckpt, cumulative, done), records


@dataclass
class RunResult:
    checkpoint: Checkpoint
    log: list[EpochRecord]
    migrations: list[PhaseTransition]


def run_schedule(
    schedule: Schedule,
    cfg: ModelConfig,
    data: AudioDataset,
    batch_size: int = 16,
    out_dir: str | Path | None = None,
) -> RunResult:
    """Run all phases in order, migrating weights and resetting the optimizer between them.

    The stop criterion only applies to the final phase. When ``out_dir`` is
    given, a checkpoint is written at the end of each phase.
    """
    state = initial_state(cfg, schedule.phases[0], schedule.seed)
    log_all, migrations = [], []
    last = len(schedule.phases) - 1
    for i, phase in enumerate(schedule.phases):
        if i > 0:
            prev = schedule.phases[i - 1]
            trans = PhaseTransition(state.ckpt.provenance, phase_provenance(cfg, phase, i), prev.resize_method)
            ckpt = migrate(state.ckpt, trans)
            state = TrainState(replace(ckpt, opt_state=AdamState()), state.cumulative_flops, state.epochs_done)
            migrations.append(trans)
        stop = schedule.stop if i == last and schedule.stop.kind is not StopKind.FIXED_EPOCHS else None
        state, records = run_phase(state, phase, data, i, schedule.seed, batch_size, stop)
        log_all.extend(records)
        if out_dir is not None:
            name = "final.npz" if i == last else f"phase{i}.npz"
            save_checkpoint(state.ckpt, Path(out_dir) / name)
    return RunResult(state.ckpt, log_all, migrations)


def train_baseline(
    cfg: ModelConfig, data: AudioDataset, epochs: int, lr: float = 1e-3, seed: int = 0, batch_size: int = 16
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Plain full-resolution trainer, no phases or migrations."""
    params = init_params(cfg, np.random.default_rng(seed))
    X, y = data.grids("train"), data.targets("train")
    n_tokens = len(params["pos.grid"].reshape(-1, cfg.embed_dim)) + 1
    step = train_step_flops(n_tokens, cfg)
    opt, flops, records = AdamState(), 0, []
    for e in range(epochs):
        rng = np.random.default_rng(seed + e)
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), batch_size):
            idx = order[start: start + batch_size]
            value, grads = gradients(params, cfg, (X[idx], y[idx]), rng)
            params, opt = optimizer_step(params, grads, opt, lr)
            total += value * len(idx)
        flops += len(X) * step
        metric = evaluate(params, cfg, data, CompressionMethod.NONE, 1)
        records.append(EpochRecord(0, e + 1, e + 1, "none", 1, n_tokens, lr, total / len(X), metric, flops))
    prov = PhaseProvenance(CompressionMethod.NONE, 1, cfg.patch, tuple(params["pos.grid"].shape[:2]), 0)
    return Checkpoint(params, cfg, prov, seed, opt), records


def executed_schedule(schedule: Schedule, records: list[EpochRecord]) -> Schedule:
    """``schedule`` with each phase's epochs replaced by the number actually run."""
    counts = [sum(1 for r in records if r.phase_index == i) for i in range(len(schedule.phases))]
    phases = [replace(p, epochs=c) for p, c in zip(schedule.phases, counts)]
    return replace(schedule, phases=tuple(phases))
