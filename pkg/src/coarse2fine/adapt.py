"""Weight migration between phase geometries."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint, PhaseProvenance
from .compress import CompressionMethod


class ResizeMethod(str, enum.Enum):
    BILINEAR = "bilinear"
    PI_RESIZE = "pi"

    @classmethod
    def parse(cls, value) -> "ResizeMethod":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        aliases = {"bl": "bilinear", "pi_resize": "pi", "piresize": "pi"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise ValueError(f"unknown resize method {value!r}; expected 'bilinear' or 'pi'") from None

    @classmethod
    def for_method(cls, method: CompressionMethod) -> "ResizeMethod":
        return cls.PI_RESIZE if method is CompressionMethod.PATCH_PI else cls.BILINEAR


class SingularResizeError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseTransition:
    source: PhaseProvenance
    target: PhaseProvenance
    resize: ResizeMethod = ResizeMethod.BILINEAR


def interp_matrix(n_old: int, n_new: int) -> np.ndarray:
    """``(n_new, n_old)`` linear-interpolation matrix, align-corners sampling.

    Output sample ``j`` reads the input at ``j * (n_old - 1) / (n_new - 1)``,
    so the first and last samples map onto each other exactly.
    """
    if n_old < 1 or n_new < 1:
        raise ValueError("interpolation sizes must be positive")
    M = np.zeros((n_new, n_old))
    if n_old == 1:
        M[:, 0] = 1.0
        return M
    if n_new == 1:
        M[0, 0] = 1.0
        return M
    pos = np.arange(n_new) * ((n_old - 1) / (n_new - 1))
    lo = np.minimum(np.floor(pos).astype(int), n_old - 2)
    frac = pos - lo
    rows = np.arange(n_new)
    M[rows, lo] = 1.0 - frac
    M[rows, lo + 1] += frac
    return M


def interp_posemb(grid: np.ndarray, new_dims: tuple[int, int]) -> np.ndarray:
    """Bilinearly resize an ``(f, t, d)`` positional grid to ``(*new_dims, d)``."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ValueError(f"positional grid must be (f, t, d), got {grid.shape}")
    f_old, t_old, _ = grid.shape
    f_new, t_new = new_dims
    if (f_new, t_new) == (f_old, t_old):
        return grid.copy()
    out = grid
    if t_new != t_old:
        out = np.einsum("nt,ftd->fnd", interp_matrix(t_old, t_new), out)
    if f_new != f_old:
        out = np.einsum("mf,ftd->mtd", interp_matrix(f_old, f_new), out)
    return out


def resize_kernel_bilinear(kernel: np.ndarray, w_new: int) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 3:
        raise ValueError(f"kernel must be (p_f, width, d), got {kernel.shape}")
    if w_new == kernel.shape[1]:
        return kernel.copy()
    return np.einsum("nw,pwd->pnd", interp_matrix(kernel.shape[1], w_new), kernel)


def patch_resize_matrix(p_f: int, w_old: int, w_new: int) -> np.ndarray:
    """Matrix ``B`` mapping a flattened ``p_f x w_old`` patch to its ``p_f x w_new`` resize.

    Patches flatten row-major (bin, frame), so ``B`` is block diagonal with
    one width-interpolation block per frequency row.
    """
    return np.kron(np.eye(p_f), interp_matrix(w_old, w_new))


def pi_resize(kernel: np.ndarray, w_new: int, rcond: float = 1e-10) -> np.ndarray:
    """Pseudo-inverse kernel resize.

    Solves ``B.T @ w_hat = w`` in the minimum-norm least-squares sense for
    every output channel, where ``B`` resizes patches from the old kernel
    width to ``w_new``. When ``w_new >= w_old`` the solution is exact, so
    ``<x, w> == <B x, w_hat>`` for every patch ``x``.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 3:
        raise ValueError(f"kernel must be (p_f, width, d), got {kernel.shape}")
    p_f, w_old, d = kernel.shape
    if w_new < 1:
        raise ValueError("target width must be positive")
    if w_new == w_old:
        return kernel.copy()
    Bt = patch_resize_matrix(p_f, w_old, w_new).T
    U, s, Vt = np.linalg.svd(Bt, full_matrices=False)
    if s[-1] <= rcond * s[0]:
        raise SingularResizeError(
            f"resize map {w_old}->{w_new} is rank deficient (sigma_min/sigma_max = {s[-1] / s[0]:.3e})"
        )
    w = kernel.reshape(p_f * w_old, d)
    w_hat = Vt.T @ ((U.T @ w) / s[:, None])
    return w_hat.reshape(p_f, w_new, d)


def _check_source(ckpt: Checkpoint, src: PhaseProvenance):
    have = ckpt.provenance
    mismatch = [
        name for name, a, b in (
            ("method", have.method, src.method), ("C", have.C, src.C),
            ("patch", have.patch, src.patch), ("grid_dims", tuple(have.grid_dims), tuple(src.grid_dims)),
        ) if a != b
    ]
    if mismatch:
        raise ValueError(f"checkpoint provenance does not match transition source ({', '.join(mismatch)})")


def migrate(ckpt: Checkpoint, trans: PhaseTransition) -> Checkpoint:
    """Carry a checkpoint into the next phase's geometry.

    The patch kernel is resized only when the patch width changes (patch
    compression); the positional grid is interpolated whenever the token
    grid changes; the CLS slot and all encoder tensors are copied verbatim.
    Optimizer state is dropped.
    """
    src, dst = trans.source, trans.target
    _check_source(ckpt, src)
    if dst.C > src.C:
        raise ValueError(f"invalid transition: C must not increase ({src.C} -> {dst.C})")
    if dst.patch.height_bins != src.patch.height_bins or dst.grid_dims[0] != src.grid_dims[0]:
        raise ValueError("frequency-axis geometry must not change across phases")

    params = {k: v.copy() for k, v in ckpt.params.items()}
    if dst.patch.width_frames != src.patch.width_frames:
        resize = ResizeMethod.parse(trans.resize)
        if resize is ResizeMethod.PI_RESIZE:
            params["patch.kernel"] = pi_resize(params["patch.kernel"], dst.patch.width_frames)
        else:
            params["patch.kernel"] = resize_kernel_bilinear(params["patch.kernel"], dst.patch.width_frames)
    if tuple(dst.grid_dims) != tuple(src.grid_dims):
        params["pos.grid"] = interp_posemb(params["pos.grid"], dst.grid_dims)
    return ckpt.with_params(params, provenance=dst, opt_state=None)
