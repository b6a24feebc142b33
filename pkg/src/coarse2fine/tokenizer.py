"""Non-overlapping patchification and linear patch embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compress import CompressionMethod, spectrogram_frames
from .dsp import MelSpectrogram


@dataclass(frozen=True)
class PatchSpec:
    height_bins: int = 16
    width_frames: int = 16

    def __post_init__(self):
        if self.height_bins < 1 or self.width_frames < 1:
            raise ValueError(f"patch dims must be positive, got {self.height_bins}x{self.width_frames}")

    @property
    def size(self) -> int:
        return self.height_bins * self.width_frames

    def widened(self, C: int) -> "PatchSpec":
        return PatchSpec(self.height_bins, self.width_frames * C)

    def __str__(self):
        return f"{self.height_bins}x{self.width_frames}"


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray  # (f*t + 1, d), row 0 is CLS
    grid_dims: tuple[int, int]

    def __post_init__(self):
        f, t = self.grid_dims
        if self.tokens.ndim != 2 or self.tokens.shape[0] != f * t + 1:
            raise ValueError(f"token matrix {self.tokens.shape} inconsistent with grid {self.grid_dims}")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("non-finite token values")

    def __len__(self):
        return self.tokens.shape[0]


def token_grid_dims(F: int, T: int, patch: PatchSpec) -> tuple[int, int]:
    if F % patch.height_bins or T % patch.width_frames:
        raise ValueError(f"spectrogram {F}x{T} is not divisible into {patch} patches")
    return F // patch.height_bins, T // patch.width_frames


def phase_geometry(
    n_mels: int, target_time_frames: int, base_patch: PatchSpec, method: CompressionMethod | str, C: int
) -> tuple[PatchSpec, tuple[int, int]]:
    """Patch shape and token grid for a compression phase.

    Fshift/pool shrink the spectrogram; patch methods widen the patch to
    ``p x C*p`` over the full-resolution grid.
    """
    method = CompressionMethod.parse(method)
    T = spectrogram_frames(method, C, target_time_frames)
    patch = base_patch.widened(C) if method.is_patch else base_patch
    return patch, token_grid_dims(n_mels, T, patch)


def patchify(X: MelSpectrogram | np.ndarray, patch: PatchSpec) -> np.ndarray:
    """Split ``(..., F, T)`` grids into ``(..., f*t, p_f*p_t)`` patch vectors.

    Patches are numbered frequency-major (all time positions of the lowest
    band first); each patch is flattened row-major over (bin, frame).
    """
    grid = X.bins if isinstance(X, MelSpectrogram) else np.asarray(X, dtype=np.float64)
    *lead, F, T = grid.shape
    f, t = token_grid_dims(F, T, patch)
    pf, pt = patch.height_bins, patch.width_frames
    blocks = grid.reshape(*lead, f, pf, t, pt)
    blocks = np.moveaxis(blocks, -3, -2)  # (..., f, t, pf, pt)
    return blocks.reshape(*lead, f * t, pf * pt)


def unpatchify(patches: np.ndarray, patch: PatchSpec, grid_dims: tuple[int, int]) -> np.ndarray:
    f, t = grid_dims
    pf, pt = patch.height_bins, patch.width_frames
    *lead, n, size = patches.shape
    if n != f * t or size != pf * pt:
        raise ValueError(f"patch array {patches.shape} does not match grid {grid_dims} of {patch}")
    blocks = patches.reshape(*lead, f, t, pf, pt)
    return np.moveaxis(blocks, -2, -3).reshape(*lead, f * pf, t * pt)


def embed(
    patches: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    posemb: np.ndarray,
    cls: np.ndarray,
    cls_posemb: np.ndarray,
) -> TokenSequence:
    """Project each patch with ``kernel`` (p_f, p_t, d), add bias and position.

    ``posemb`` is the (f, t, d) grid matching the patch layout.
    """
    patches = np.asarray(patches, dtype=np.float64)
    pf, pt, d = kernel.shape
    f, t, d_pos = posemb.shape
    if patches.shape != (f * t, pf * pt):
        raise ValueError(f"patches {patches.shape} do not match kernel {kernel.shape} / grid {(f, t)}")
    if d_pos != d or bias.shape != (d,) or cls.shape != (d,) or cls_posemb.shape != (d,):
        raise ValueError("embedding width mismatch between kernel, bias, posemb and cls")
    body = patches @ kernel.reshape(pf * pt, d) + bias + posemb.reshape(f * t, d)
    tokens = np.vstack([(cls + cls_posemb)[None, :], body])
    return TokenSequence(tokens, (f, t))
