"""``c2f`` command line: corpus generation, schedule runs, comparisons, FLOPs reports."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import SEED_ENV, RunConfig, load_config, load_corpus_spec
from .data import AudioDataset, desk_framing, generate_corpus, read_manifest
from .flops import schedule_flops, write_report_csv
from .schedule import Schedule, StopCriterion, StopKind
from .train import join_runs, run_schedule, train_baseline, write_comparison_csv, write_runlog_csv


def load_dataset(run: RunConfig) -> AudioDataset:
    d = run.data
    if d.manifest is not None:
        m = read_manifest(d.manifest)
        if (m.n_mels, m.target_time_frames) != (d.n_mels, d.time_frames):
            raise ValueError(
                f"manifest geometry {m.n_mels}x{m.target_time_frames} differs from "
                f"[data] n_mels/time_frames {d.n_mels}x{d.time_frames}"
            )
        return AudioDataset.from_manifest(d.manifest)
    spec = load_corpus_spec(d.synthetic)
    framing = desk_framing(n_mels=d.n_mels, target_time_frames=d.time_frames, sample_rate_hz=spec.sample_rate_hz)
    return AudioDataset.synthetic(spec, run.corpus_seed, framing)


def train_size(run: RunConfig) -> int:
    """Training-set size without rendering any audio."""
    d = run.data
    if d.manifest is not None:
        return len(read_manifest(d.manifest).split("train"))
    spec = load_corpus_spec(d.synthetic)
    n = spec.num_classes * spec.samples_per_class
    return n - int(round(spec.eval_fraction * n))


def _require_target(schedule: Schedule):
    if schedule.stop.kind is StopKind.SURPASS_BASELINE and schedule.stop.target_metric is None:
        raise ValueError("[stop] kind=surpass_baseline needs a target (or use the compare command)")


def cmd_gen_data(args) -> int:
    spec = load_corpus_spec(args.spec)
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, 0))
    manifest = generate_corpus(spec, seed, args.out)
    print(f"wrote {len(manifest.records)} clips and manifest.tsv to {args.out}")
    return 0


def cmd_train(args) -> int:
    run = load_config(args.config)
    _require_target(run.schedule)
    data = load_dataset(run)
    cfg = run.model_config(data.num_classes, data.multi_label)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_schedule(run.schedule, cfg, data, run.batch_size, out)
    write_runlog_csv(out / "runlog.csv", result.log)
    last = result.log[-1]
    print(f"{len(result.log)} epochs, final eval {last.eval_metric:.4f}, {last.cumulative_flops} FLOPs -> {out}")
    return 0


def cmd_compare(args) -> int:
    run = load_config(args.config)
    data = load_dataset(run)
    cfg = run.model_config(data.num_classes, data.multi_label)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sched = run.schedule
    _, base_log = train_baseline(cfg, data, sched.baseline_epochs, run.baseline_lr, sched.seed, run.batch_size)
    if sched.stop.kind is StopKind.SURPASS_BASELINE and sched.stop.target_metric is None and base_log:
        sched = Schedule(sched.phases, sched.baseline_epochs, StopCriterion.surpass(base_log[-1].eval_metric),
                         sched.seed)
    result = run_schedule(sched, cfg, data, run.batch_size, out)
    write_runlog_csv(out / "baseline_runlog.csv", base_log)
    write_runlog_csv(out / "runlog.csv", result.log)
    rows = join_runs(base_log, result.log)
    write_comparison_csv(out / "compare.csv", rows)
    print(f"{len(rows)} rows -> {out / 'compare.csv'}")
    return 0


def cmd_flops(args) -> int:
    run = load_config(args.config)
    steps = args.steps_per_epoch if args.steps_per_epoch is not None else train_size(run)
    report = schedule_flops(run.schedule, run.model_config(2), steps)
    write_report_csv(sys.stdout, report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="c2f", description="Coarse-to-fine spectrogram transformer training lab.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic WAV corpus and manifest")
    g.add_argument("--spec", required=True, help="corpus spec file, or 'default'")
    g.add_argument("--seed", type=int, default=None, help=f"generator seed (default ${SEED_ENV} or 0)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run a phase schedule; writes runlog.csv and checkpoints")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="run the baseline and the schedule with a shared seed")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    f = sub.add_parser("flops", help="print the schedule's FLOPs report as CSV")
    f.add_argument("--config", required=True)
    f.add_argument("--steps-per-epoch", type=int, default=None, help="override the training-set size")
    f.set_defaults(func=cmd_flops)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"c2f {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
