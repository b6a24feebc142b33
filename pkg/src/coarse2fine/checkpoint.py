"""Checkpoint values and their on-disk container.

File layout (format version 1): a NumPy ``.npz`` archive (zip of ``.npy``
members, written uncompressed).

* ``param/<name>``  one member per model tensor, float64, native shape
* ``adam/step``     int64 scalar, present only when optimizer state is saved
* ``adam/m/<name>``, ``adam/v/<name>``  first/second moments
* ``__meta__``      UTF-8 JSON bytes (uint8 array) with keys ``format``
  (``"coarse2fine-checkpoint"``), ``version`` (1), ``config`` (ModelConfig
  fields), ``provenance`` (method, C, patch, grid_dims, phase_index),
  ``seed`` and ``shapes`` (name -> list of ints, checked on load).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .compress import CompressionMethod
from .model import AdamState, ModelConfig, current_grid, current_patch
from .tokenizer import PatchSpec

FORMAT_NAME = "coarse2fine-checkpoint"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class PhaseProvenance:
    method: CompressionMethod
    C: int
    patch: PatchSpec
    grid_dims: tuple[int, int]
    phase_index: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "C": self.C,
            "patch": [self.patch.height_bins, self.patch.width_frames],
            "grid_dims": list(self.grid_dims),
            "phase_index": self.phase_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseProvenance":
        return cls(
            CompressionMethod.parse(d["method"]), int(d["C"]), PatchSpec(*d["patch"]),
            tuple(d["grid_dims"]), int(d.get("phase_index", 0)),
        )


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: ModelConfig
    provenance: PhaseProvenance
    seed: int = 0
    opt_state: AdamState | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if current_patch(self.params) != self.provenance.patch:
            raise ValueError(f"kernel shape {current_patch(self.params)} disagrees with provenance {self.provenance.patch}")
        if current_grid(self.params) != tuple(self.provenance.grid_dims):
            raise ValueError(f"positional grid {current_grid(self.params)} disagrees with provenance")

    def with_params(self, params, provenance=None, opt_state=None) -> "Checkpoint":
        return replace(self, params=params, provenance=provenance or self.provenance, opt_state=opt_state)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "provenance": ckpt.provenance.to_dict(),
        "seed": int(ckpt.seed),
        "shapes": {k: list(v.shape) for k, v in ckpt.params.items()},
        "extra": ckpt.extra,
    }
    arrays = {f"param/{k}": np.asarray(v, dtype=np.float64) for k, v in ckpt.params.items()}
    if ckpt.opt_state is not None:
        arrays["adam/step"] = np.int64(ckpt.opt_state.step)
        arrays.update({f"adam/m/{k}": v for k, v in ckpt.opt_state.m.items()})
        arrays.update({f"adam/v/{k}": v for k, v in ckpt.opt_state.v.items()})
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(Path(path), allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise ValueError(f"{path}: not a checkpoint (missing metadata)")
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: unexpected format {meta.get('format')!r}")
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        params = {}
        for name, shape in meta["shapes"].items():
            arr = z[f"param/{name}"]
            if list(arr.shape) != shape:
                raise ValueError(f"{path}: tensor {name} has shape {arr.shape}, metadata says {shape}")
            params[name] = arr
        opt = None
        if "adam/step" in z.files:
            opt = AdamState(
                int(z["adam/step"]),
                {k[7:]: z[k] for k in z.files if k.startswith("adam/m/")},
                {k[7:]: z[k] for k in z.files if k.startswith("adam/v/")},
            )
    return Checkpoint(
        params, ModelConfig.from_dict(meta["config"]), PhaseProvenance.from_dict(meta["provenance"]),
        meta["seed"], opt, meta.get("extra", {}),
    )
