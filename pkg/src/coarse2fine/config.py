"""Declarative run and corpus configuration files.

Grammar (UTF-8)::

    # comment            ; comment      blank lines are ignored
    [section]                           section header
    key = value                         one pair per line, whitespace trimmed

Keys are case sensitive and may appear once per section. Unknown sections
and keys are errors. Every problem is reported with its line number and all
problems are collected before raising :class:`ConfigError`.

Run configuration sections::

    [model]   embed_dim num_layers num_heads mlp_ratio patch(=16x16) init_std dropout
    [data]    manifest (path, relative to the config file) or synthetic (``default``
              or a corpus spec file); seed; n_mels; time_frames
    [train]   seed batch_size baseline_epochs lr
    [phase.N] method C epochs lr resize lr_decay lr_decay_every   (N = 0, 1, ...)
    [stop]    kind (fixed_epochs | surpass_baseline | convergence) target patience

Corpus spec files (``gen-data --spec``)::

    [corpus]      samples_per_class duration_s snr_db multi_label sample_rate
                  freq_jitter gain_jitter_db eval_fraction
    [class.NAME]  kind plus the generator parameters of that kind

Classes are numbered in the order their sections appear.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .compress import CompressionMethod
from .data import ClassSpec, SyntheticSpec, default_spec
from .model import MULTI_LABEL, SINGLE_LABEL, ModelConfig
from .schedule import PhaseConfig, Schedule, StopCriterion, StopKind
from .tokenizer import PatchSpec, phase_geometry

SEED_ENV = "C2F_SEED"


class ConfigError(ValueError):
    """Collected, line-located configuration problems."""

    def __init__(self, errors: list[tuple[int | None, str]], source: str = "<config>"):
        self.errors = list(errors)
        self.source = source
        lines = [f"{source}:{ln}: {msg}" if ln else f"{source}: {msg}" for ln, msg in self.errors]
        super().__init__("\n".join(lines))


@dataclass
class Section:
    name: str
    line: int
    values: dict[str, tuple[str, int]] = field(default_factory=dict)


_SECTION = re.compile(r"^\[\s*([A-Za-z0-9_.\-]+)\s*\]$")


def parse_sections(text: str, errors: list) -> list[Section]:
    sections: list[Section] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = _SECTION.match(line)
        if m:
            name = m.group(1)
            if any(s.name == name for s in sections):
                errors.append((lineno, f"duplicate section [{name}]"))
            sections.append(Section(name, lineno))
            continue
        if "=" not in line:
            errors.append((lineno, f"expected 'key = value' or '[section]', got {line!r}"))
            continue
        if not sections:
            errors.append((lineno, "key outside of any section"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            errors.append((lineno, "empty key"))
            continue
        sec = sections[-1]
        if key in sec.values:
            errors.append((lineno, f"duplicate key {key!r} in [{sec.name}]"))
        sec.values[key] = (value, lineno)
    return sections


class _Reader:
    """Typed access to one section that records failures instead of raising."""

    def __init__(self, section: Section, allowed: set[str], errors: list):
        self.section = section
        self.errors = errors
        for key, (_, ln) in section.values.items():
            if key not in allowed:
                errors.append((ln, f"unknown key {key!r} in [{section.name}]"))

    def has(self, key):
        return key in self.section.values

    def line(self, key=None):
        return self.section.values[key][1] if key in self.section.values else self.section.line

    def get(self, key, cast, default=None):
        if key not in self.section.values:
            return default
        value, ln = self.section.values[key]
        try:
            return cast(value)
        except ValueError as exc:
            self.errors.append((ln, f"[{self.section.name}] {key}: {exc}"))
            return default


def _int(v: str) -> int:
    try:
        return int(v)
    except ValueError:
        raise ValueError(f"expected an integer, got {v!r}") from None


def _float(v: str) -> float:
    try:
        return float(v)
    except ValueError:
        raise ValueError(f"expected a number, got {v!r}") from None


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _patch(v: str) -> PatchSpec:
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", v)
    if not m:
        raise ValueError(f"expected a patch like 16x16, got {v!r}")
    return PatchSpec(int(m.group(1)), int(m.group(2)))


# --------------------------------------------------------------- run config


@dataclass(frozen=True)
class DataConfig:
    manifest: Path | None = None
    synthetic: str | None = None  # "default" or a corpus spec path
    seed: int | None = None  # corpus seed; defaults to the run seed
    n_mels: int = 128
    time_frames: int = 128


@dataclass(frozen=True)
class RunConfig:
    model: dict
    data: DataConfig
    schedule: Schedule
    batch_size: int = 16
    baseline_lr: float = 1e-3

    @property
    def seed(self) -> int:
        return self.schedule.seed

    @property
    def corpus_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def model_config(self, num_classes: int, multi_label: bool = False) -> ModelConfig:
        return ModelConfig(
            num_classes=num_classes,
            task_kind=MULTI_LABEL if multi_label else SINGLE_LABEL,
            n_mels=self.data.n_mels,
            time_frames=self.data.time_frames,
            **self.model,
        )


_MODEL_KEYS = {"embed_dim", "num_layers", "num_heads", "mlp_ratio", "patch", "init_std", "dropout"}
_DATA_KEYS = {"manifest", "synthetic", "seed", "n_mels", "time_frames"}
_TRAIN_KEYS = {"seed", "batch_size", "baseline_epochs", "lr"}
_PHASE_KEYS = {"method", "C", "epochs", "lr", "resize", "lr_decay", "lr_decay_every"}
_STOP_KEYS = {"kind", "target", "patience"}


def parse_config(text: str, base_dir: str | Path = ".", source: str = "<config>", env=None) -> RunConfig:
    """Parse and fully validate a run configuration.

    ``env`` (default ``os.environ``) is consulted for ``C2F_SEED``, which
    overrides ``[train] seed``.
    """
    env = os.environ if env is None else env
    errors: list = []
    sections = parse_sections(text, errors)
    by_name = {s.name: s for s in sections}
    phase_secs = []
    for s in sections:
        m = re.fullmatch(r"phase\.(\d+)", s.name)
        if m:
            phase_secs.append((int(m.group(1)), s))
        elif s.name not in ("model", "data", "train", "stop"):
            errors.append((s.line, f"unknown section [{s.name}]"))

    model: dict = {}
    if "model" in by_name:
        r = _Reader(by_name["model"], _MODEL_KEYS, errors)
        for key, cast in (("embed_dim", _int), ("num_layers", _int), ("num_heads", _int), ("mlp_ratio", _int),
                          ("patch", _patch), ("init_std", _float), ("dropout", _float)):
            if r.has(key):
                value = r.get(key, cast)
                if value is not None:
                    model[key] = value

    data = DataConfig()
    if "data" in by_name:
        r = _Reader(by_name["data"], _DATA_KEYS, errors)
        manifest = r.get("manifest", str)
        synthetic = r.get("synthetic", str)
        if manifest and synthetic:
            errors.append((r.line("synthetic"), "[data] takes either manifest or synthetic, not both"))
        if synthetic and synthetic != "default":
            synthetic = str(Path(base_dir) / synthetic)
        data = DataConfig(
            Path(base_dir) / manifest if manifest else None,
            synthetic,
            r.get("seed", _int),
            r.get("n_mels", _int, 128),
            r.get("time_frames", _int, 128),
        )
    else:
        errors.append((None, "missing [data] section"))
    if data.manifest is None and data.synthetic is None and "data" in by_name:
        errors.append((by_name["data"].line, "[data] needs manifest or synthetic"))

    seed, batch_size, baseline_epochs, base_lr = 0, 16, None, None
    if "train" in by_name:
        r = _Reader(by_name["train"], _TRAIN_KEYS, errors)
        seed = r.get("seed", _int, 0)
        batch_size = r.get("batch_size", _int, 16)
        baseline_epochs = r.get("baseline_epochs", _int)
        base_lr = r.get("lr", _float)
        if batch_size is not None and batch_size < 1:
            errors.append((r.line("batch_size"), "[train] batch_size must be >= 1"))
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            errors.append((None, f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer"))

    phases: list[PhaseConfig] = []
    phase_lines: list[int] = []
    phase_secs.sort(key=lambda p: p[0])
    for want, (idx, s) in enumerate(phase_secs):
        if idx != want:
            errors.append((s.line, f"phase sections must be numbered 0, 1, ... without gaps (found [phase.{idx}])"))
            break
    if not phase_secs:
        errors.append((None, "no [phase.N] sections"))
    patch = model.get("patch", PatchSpec())
    for idx, s in phase_secs:
        r = _Reader(s, _PHASE_KEYS, errors)
        kw = {}
        for key, cast in (("method", CompressionMethod.parse), ("C", _int), ("epochs", _int), ("lr", _float),
                          ("resize", str), ("lr_decay", _float), ("lr_decay_every", _int)):
            value = r.get(key, cast)
            if value is not None:
                kw[key] = value
        kw.setdefault("method", CompressionMethod.NONE)
        try:
            phase = PhaseConfig(**kw)
        except ValueError as exc:
            errors.append((s.line, f"phase {idx}: {exc}"))
            continue
        try:
            phase_geometry(data.n_mels, data.time_frames, patch, phase.method, phase.C)
        except ValueError as exc:
            errors.append((r.line("C"), f"phase {idx}: {phase.method.value} C={phase.C} does not fit "
                                        f"{data.n_mels}x{data.time_frames} with {patch} patches: {exc}"))
        phases.append(phase)
        phase_lines.append(s.line)

    for i in range(1, len(phases)):
        if phases[i].C > phases[i - 1].C:
            errors.append((phase_lines[i], f"phase {i}: C must be non-increasing across phases "
                                           f"({phases[i - 1].C} -> {phases[i].C})"))
    if phases and phases[-1].C != 1:
        errors.append((phase_lines[-1], f"phase {len(phases) - 1}: the final phase must have C=1"))

    stop = StopCriterion.fixed()
    if "stop" in by_name:
        r = _Reader(by_name["stop"], _STOP_KEYS, errors)
        try:
            kind = StopKind(r.get("kind", str, StopKind.FIXED_EPOCHS.value))
            stop = StopCriterion(kind, r.get("target", _float), r.get("patience", _int, 1))
        except ValueError as exc:
            errors.append((r.line("kind"), f"[stop] {exc}"))

    try:
        ModelConfig(n_mels=data.n_mels, time_frames=data.time_frames, **model)
    except (ValueError, TypeError) as exc:
        errors.append((by_name["model"].line if "model" in by_name else None, f"[model] {exc}"))

    if errors:
        raise ConfigError(errors, source)
    if baseline_epochs is None:
        baseline_epochs = sum(p.epochs for p in phases)
    if base_lr is None:
        base_lr = phases[-1].lr
    schedule = Schedule(tuple(phases), baseline_epochs, stop, seed)
    return RunConfig(model, data, schedule, batch_size, base_lr)


def load_config(path: str | Path, env=None) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent, str(path), env)


# -------------------------------------------------------------- corpus spec


_CORPUS_KEYS = {
    "samples_per_class": _int, "duration_s": _float, "snr_db": _float, "multi_label": _bool,
    "sample_rate": _int, "freq_jitter": _float, "gain_jitter_db": _float, "eval_fraction": _float,
}
_CLASS_KEYS = {
    "tone": {"freq"},
    "chirp": {"f0", "f1"},
    "am_noise": {"rate", "depth", "low", "high", "phase", "band_jitter"},
    "harmonic": {"f0", "n_harmonics"},
}


def parse_corpus_spec(text: str, source: str = "<spec>") -> SyntheticSpec:
    """Parse a ``[corpus]`` + ``[class.NAME]`` synthetic corpus description."""
    errors: list = []
    sections = parse_sections(text, errors)
    kw: dict = {}
    classes: list[ClassSpec] = []
    for s in sections:
        if s.name == "corpus":
            r = _Reader(s, set(_CORPUS_KEYS), errors)
            for key, cast in _CORPUS_KEYS.items():
                value = r.get(key, cast)
                if value is not None:
                    kw["sample_rate_hz" if key == "sample_rate" else key] = value
        elif s.name.startswith("class.") and len(s.name) > 6:
            kind = s.values.get("kind", ("", s.line))[0]
            if kind not in _CLASS_KEYS:
                errors.append((s.values.get("kind", ("", s.line))[1],
                               f"[{s.name}] kind must be one of {', '.join(_CLASS_KEYS)}, got {kind!r}"))
                continue
            r = _Reader(s, {"kind", "jitter"} | _CLASS_KEYS[kind], errors)
            params = {k: r.get(k, _float) for k in s.values if k != "kind" and k in _CLASS_KEYS[kind] | {"jitter"}}
            classes.append(ClassSpec(s.name[6:], kind, params))
        else:
            errors.append((s.line, f"unknown section [{s.name}]"))
    if len(classes) < 2:
        errors.append((None, "a corpus needs at least two [class.NAME] sections"))
    if errors:
        raise ConfigError(errors, source)
    try:
        return SyntheticSpec(tuple(classes), **kw)
    except ValueError as exc:
        raise ConfigError([(None, str(exc))], source) from None


def load_corpus_spec(path: str | Path) -> SyntheticSpec:
    """Read a corpus spec file; the literal name ``default`` gives the built-in corpus."""
    if str(path) == "default":
        return default_spec()
    path = Path(path)
    return parse_corpus_spec(path.read_text(encoding="utf-8"), str(path))
