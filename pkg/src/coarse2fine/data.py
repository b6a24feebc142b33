"""Synthetic labelled audio corpora, manifests and the in-memory training dataset.

Manifest format (UTF-8, tab separated)::

    #coarse2fine-manifest<TAB>version=1<TAB>seed=7<TAB>mel_mean=...<TAB>mel_std=...<TAB>...
    path<TAB>labels<TAB>split
    wav/00000_tone.wav<TAB>0<TAB>train
    wav/00001_mix.wav<TAB>1,3<TAB>eval

The header carries ``key=value`` pairs; floats are written with ``repr`` so
they round-trip exactly. ``labels`` is a comma-separated list of class
indices and ``split`` is ``train`` or ``eval``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compress import CompressionMethod, pool_frames
from .dsp import FramingParams, Waveform, fshift_mel, log_mel
from .wavio import read_wav, write_wav

MANIFEST_MAGIC = "#coarse2fine-manifest"
MANIFEST_VERSION = 1
GENERATOR_KINDS = ("tone", "chirp", "am_noise", "harmonic")


def desk_framing(**overrides) -> FramingParams:
    """Front end for 1 s desk-scale clips: 128 mel bins x 128 frames."""
    kw = dict(target_time_frames=128)
    kw.update(overrides)
    return FramingParams(**kw)


@dataclass(frozen=True)
class ClassSpec:
    """One sound class.

    ``kind`` selects the generator: ``tone`` (``freq``), ``chirp`` (``f0`` ->
    ``f1``), ``am_noise`` (sinusoidal envelope of ``rate`` Hz and ``depth``
    in [0, 1] on noise band-limited to ``low``..``high``; ``phase`` pins the
    envelope phase at t=0, otherwise it is random; ``band_jitter`` scales
    both band edges by a common random factor in 1 +- band_jitter) or ``harmonic``
    (``f0``, ``n_harmonics``). An optional ``jitter`` entry overrides the
    corpus-wide relative frequency jitter for this class.
    """

    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"class {self.name!r}: unknown generator {self.kind!r}")


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[ClassSpec, ...]
    samples_per_class: int = 50
    duration_s: float = 1.0
    snr_db: float = 10.0
    multi_label: bool = False
    sample_rate_hz: int = 16000
    freq_jitter: float = 0.03
    gain_jitter_db: float = 3.0
    eval_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 2:
            raise ValueError("need at least two classes")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        if self.samples_per_class < 1 or self.duration_s <= 0:
            raise ValueError("samples_per_class and duration_s must be positive")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must lie in (0, 1)")

    @property
    def num_classes(self) -> int:
        return len(self.classes)


# puts the 50 Hz envelope peaks on alternate 10 ms frame centres (25 ms frames)
FLUTTER_PHASE = -0.75 * np.pi


def default_spec(**overrides) -> SyntheticSpec:
    """The default 4-class desk corpus."""
    classes = (
        ClassSpec("tone", "tone", {"freq": 1000.0}),
        ClassSpec("harmonic", "harmonic", {"f0": 220.0, "n_harmonics": 6}),
        ClassSpec("flutter", "am_noise", {"rate": 50.0, "depth": 1.0, "phase": FLUTTER_PHASE, "jitter": 0.0,
                                          "low": 2000.0, "high": 5000.0, "band_jitter": 0.1}),
        ClassSpec("hiss", "am_noise", {"rate": 0.0, "depth": 0.0, "low": 2400.0, "high": 6000.0, "band_jitter": 0.1}),
    )
    kw = dict(classes=classes, samples_per_class=80, duration_s=1.0, snr_db=10.0)
    kw.update(overrides)
    return SyntheticSpec(**kw)


# ---------------------------------------------------------------- generators


def _band_noise(rng, n, sr, low, high):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < low) | (freqs > high)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / (np.std(x) + 1e-12)


def render_class(cls: ClassSpec, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Clean unit-power signal of one class with per-sample jitter."""
    sr = spec.sample_rate_hz
    n = int(round(spec.duration_s * sr))
    t = np.arange(n) / sr
    p = cls.params

    jitter = p.get("jitter", spec.freq_jitter)

    def jit(v):
        return v * (1.0 + jitter * rng.uniform(-1.0, 1.0))

    phase = rng.uniform(0.0, 2.0 * np.pi)
    if cls.kind == "tone":
        x = np.sin(2.0 * np.pi * jit(p["freq"]) * t + phase)
    elif cls.kind == "chirp":
        f0, f1 = jit(p["f0"]), jit(p["f1"])
        inst = f0 * t + 0.5 * (f1 - f0) * t * t / spec.duration_s
        x = np.sin(2.0 * np.pi * inst + phase)
    elif cls.kind == "am_noise":
        env_phase = p.get("phase", phase)
        env = 1.0 + p.get("depth", 1.0) * np.sin(2.0 * np.pi * jit(p.get("rate", 0.0)) * t + env_phase)
        bj = p.get("band_jitter", 0.0)
        scale = 1.0 + bj * rng.uniform(-1.0, 1.0)
        low, high = p.get("low", 0.0) * scale, min(p.get("high", sr / 2.0) * scale, sr / 2.0)
        x = env * _band_noise(rng, n, sr, low, high)
    else:
        f0 = jit(p["f0"])
        k = np.arange(1, int(p.get("n_harmonics", 5)) + 1)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=k.size)
        x = (np.sin(2.0 * np.pi * f0 * k[:, None] * t[None, :] + phases[:, None]) / k[:, None]).sum(axis=0)
    return x / (np.sqrt(np.mean(x * x)) + 1e-12)


TARGET_RMS = 0.1


def render_sample(labels, spec: SyntheticSpec, rng: np.random.Generator) -> Waveform:
    """Sum of the labelled classes plus white noise at ``snr_db``, levelled to
    -20 dBFS RMS with a uniform random gain of +-``gain_jitter_db``."""
    clean = sum(render_class(spec.classes[k], spec, rng) for k in labels)
    clean = clean / np.sqrt(np.mean(clean * clean))
    noise = rng.standard_normal(clean.shape[0]) * 10.0 ** (-spec.snr_db / 20.0)
    x = clean + noise
    gain_db = rng.uniform(-spec.gain_jitter_db, spec.gain_jitter_db)
    x = x * (TARGET_RMS * 10.0 ** (gain_db / 20.0) / np.sqrt(np.mean(x * x)))
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x = x * (0.99 / peak)
    return Waveform(x, spec.sample_rate_hz)


@dataclass(frozen=True)
class Record:
    path: str
    labels: tuple[int, ...]
    split: str


@dataclass(frozen=True)
class Manifest:
    records: tuple[Record, ...]
    mel_mean: float
    mel_std: float
    seed: int
    num_classes: int
    multi_label: bool = False
    sample_rate_hz: int = 16000
    n_mels: int = 128
    target_time_frames: int = 128

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        paths = [r.path for r in self.records]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        for r in self.records:
            if r.split not in ("train", "eval"):
                raise ValueError(f"{r.path}: unknown split {r.split!r}")
            if not r.labels or any(not 0 <= k < self.num_classes for k in r.labels):
                raise ValueError(f"{r.path}: labels {r.labels} outside [0, {self.num_classes})")
        splits = {r.split for r in self.records}
        if splits != {"train", "eval"}:
            raise ValueError("both train and eval splits must be non-empty")
        if not self.mel_std > 0:
            raise ValueError("mel_std must be positive")

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]


def _sample_labels(spec: SyntheticSpec):
    """Label tuples in generation order: class-major, ``samples_per_class`` each."""
    K = spec.num_classes
    out = []
    for k in range(K):
        for j in range(spec.samples_per_class):
            if spec.multi_label:
                # partner class cycles through the others so every pair appears
                other = (k + 1 + j % (K - 1)) % K
                out.append(tuple(sorted((k, other))))
            else:
                out.append((k,))
    return out


def synthesize(spec: SyntheticSpec, seed: int) -> tuple[list[Waveform], list[tuple[int, ...]], list[str]]:
    """Waveforms, labels and seeded 80/20 split assignment, fully in memory."""
    labels = _sample_labels(spec)
    waves = [
        render_sample(lab, spec, np.random.default_rng(np.random.SeedSequence([seed, i])))
        for i, lab in enumerate(labels)
    ]
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED])).permutation(len(labels))
    n_eval = int(round(spec.eval_fraction * len(labels)))
    splits = ["train"] * len(labels)
    for i in order[:n_eval]:
        splits[i] = "eval"
    return waves, labels, splits


def mel_statistics(waves, framing: FramingParams) -> tuple[float, float]:
    grids = np.stack([log_mel(w, framing).bins for w in waves])
    return float(grids.mean()), float(grids.std())


def generate_corpus(spec: SyntheticSpec, seed: int, out_dir: str | Path, framing: FramingParams | None = None) -> Manifest:
    """Write one PCM16 WAV per sample plus ``manifest.tsv`` under ``out_dir``.

    Normalisation statistics are computed from the train split after 16-bit
    quantisation, i.e. from exactly what a reader will load.
    """
    framing = framing or desk_framing(sample_rate_hz=spec.sample_rate_hz)
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    waves, labels, splits = synthesize(spec, seed)
    records, train_waves = [], []
    for i, (w, lab, split) in enumerate(zip(waves, labels, splits)):
        name = "mix" if len(lab) > 1 else spec.classes[lab[0]].name
        rel = f"wav/{i:05d}_{name}.wav"
        write_wav(out_dir / rel, w)
        records.append(Record(rel, lab, split))
        if split == "train":
            train_waves.append(read_wav(out_dir / rel))
    mean, std = mel_statistics(train_waves, framing)
    manifest = Manifest(
        tuple(records), mean, std, seed, spec.num_classes, spec.multi_label,
        spec.sample_rate_hz, framing.n_mels, framing.target_time_frames,
    )
    write_manifest(out_dir / "manifest.tsv", manifest)
    return manifest


def write_manifest(path: str | Path, m: Manifest) -> Path:
    header = [
        MANIFEST_MAGIC, f"version={MANIFEST_VERSION}", f"seed={m.seed}", f"mel_mean={m.mel_mean!r}",
        f"mel_std={m.mel_std!r}", f"num_classes={m.num_classes}", f"multi_label={int(m.multi_label)}",
        f"sample_rate={m.sample_rate_hz}", f"n_mels={m.n_mels}", f"target_time_frames={m.target_time_frames}",
    ]
    lines = ["\t".join(header)]
    lines += [f"{r.path}\t{','.join(map(str, r.labels))}\t{r.split}" for r in m.records]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise ValueError(f"{path}: missing manifest header")
    meta = dict(item.split("=", 1) for item in lines[0].split("\t")[1:])
    if int(meta.get("version", -1)) != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {meta.get('version')}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        records.append(Record(parts[0], tuple(int(k) for k in parts[1].split(",")), parts[2]))
    return Manifest(
        tuple(records), float(meta["mel_mean"]), float(meta["mel_std"]), int(meta["seed"]),
        int(meta["num_classes"]), bool(int(meta.get("multi_label", 0))), int(meta.get("sample_rate", 16000)),
        int(meta.get("n_mels", 128)), int(meta.get("target_time_frames", 128)),
    )


# ------------------------------------------------------------------- dataset


class AudioDataset:
    """Train/eval waveforms with labels; serves normalised spectrogram batches.

    Spectrograms are computed lazily per (split, method, C) and cached.
    """

    def __init__(self, train, eval, num_classes, multi_label=False, mel_mean=0.0, mel_std=1.0,
                 framing: FramingParams | None = None):
        self.waves = {"train": [w for w, _ in train], "eval": [w for w, _ in eval]}
        self.labels = {"train": [tuple(l) for _, l in train], "eval": [tuple(l) for _, l in eval]}
        self.num_classes = int(num_classes)
        self.multi_label = bool(multi_label)
        self.mel_mean = float(mel_mean)
        self.mel_std = float(mel_std)
        self.framing = framing or desk_framing()
        self._cache: dict = {}

    @classmethod
    def from_manifest(cls, path: str | Path, framing: FramingParams | None = None) -> "AudioDataset":
        path = Path(path)
        m = read_manifest(path)
        framing = framing or desk_framing(
            n_mels=m.n_mels, target_time_frames=m.target_time_frames, sample_rate_hz=m.sample_rate_hz
        )
        root = path.parent
        items = {s: [(read_wav(root / r.path), r.labels) for r in m.split(s)] for s in ("train", "eval")}
        return cls(items["train"], items["eval"], m.num_classes, m.multi_label, m.mel_mean, m.mel_std, framing)

    @classmethod
    def synthetic(cls, spec: SyntheticSpec, seed: int, framing: FramingParams | None = None) -> "AudioDataset":
        """Build the corpus in memory (16-bit quantised, as if written and read back)."""
        from .wavio import encode_pcm16, PCM16_SCALE

        framing = framing or desk_framing(sample_rate_hz=spec.sample_rate_hz)
        waves, labels, splits = synthesize(spec, seed)
        waves = [Waveform(encode_pcm16(w.samples) / PCM16_SCALE, w.sample_rate_hz) for w in waves]
        items = {s: [(w, l) for w, l, sp in zip(waves, labels, splits) if sp == s] for s in ("train", "eval")}
        mean, std = mel_statistics([w for w, _ in items["train"]], framing)
        return cls(items["train"], items["eval"], spec.num_classes, spec.multi_label, mean, std, framing)

    def __len__(self):
        return len(self.waves["train"])

    def size(self, split: str) -> int:
        return len(self.waves[split])

    def targets(self, split: str) -> np.ndarray:
        labs = self.labels[split]
        if self.multi_label:
            y = np.zeros((len(labs), self.num_classes), dtype=np.int64)
            for i, lab in enumerate(labs):
                y[i, list(lab)] = 1
            return y
        return np.array([lab[0] for lab in labs], dtype=np.int64)

    def grids(self, split: str, method: CompressionMethod | str = CompressionMethod.NONE, C: int = 1) -> np.ndarray:
        """Normalised ``(N, F, T')`` spectrograms of a split under a compression setting."""
        method = CompressionMethod.parse(method)
        if method is not CompressionMethod.FSHIFT and not method.is_pool:
            key = (split, CompressionMethod.NONE, 1)
        else:
            key = (split, method, int(C) if C != 1 else 1)
            if C == 1:
                key = (split, CompressionMethod.NONE, 1)
        if key not in self._cache:
            waves = self.waves[split]
            if not waves:
                raise ValueError(f"split {split!r} is empty")
            if key[1] is CompressionMethod.FSHIFT:
                raw = np.stack([fshift_mel(w, self.framing, C).bins for w in waves])
            elif key[1].is_pool:
                raw = pool_frames(self.grids_raw(split), key[1], C)
            else:
                raw = self.grids_raw(split)
            self._cache[key] = (raw - self.mel_mean) / self.mel_std
        return self._cache[key]

    def grids_raw(self, split: str) -> np.ndarray:
        key = ("raw", split)
        if key not in self._cache:
            self._cache[key] = np.stack([log_mel(w, self.framing).bins for w in self.waves[split]])
        return self._cache[key]
