"""Tiny AST-style encoder in NumPy with hand-written backward passes.

Parameters live in a flat ``dict[str, np.ndarray]`` so they can be saved,
migrated between phase geometries and updated name by name. The current
phase geometry is carried by the tensors themselves: ``patch.kernel`` has
shape (p_f, p_t, d) and ``pos.grid`` has shape (f, t, d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .tokenizer import PatchSpec, TokenSequence, patchify, token_grid_dims

LN_EPS = 1e-6
SINGLE_LABEL = "single_label"
MULTI_LABEL = "multi_label"


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 4
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    mlp_ratio: int = 4
    task_kind: str = SINGLE_LABEL
    patch: PatchSpec = field(default_factory=PatchSpec)
    n_mels: int = 128
    time_frames: int = 128
    dropout: float = 0.0
    init_std: float | None = None

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.task_kind not in (SINGLE_LABEL, MULTI_LABEL):
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        token_grid_dims(self.n_mels, self.time_frames, self.patch)

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def hidden_dim(self) -> int:
        return self.embed_dim * self.mlp_ratio

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["patch"] = [self.patch.height_bins, self.patch.width_frames]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["patch"] = PatchSpec(*d["patch"])
        return cls(**d)


def block_names(i: int) -> list[str]:
    p = f"blocks.{i}."
    return [p + s for s in (
        "ln1.scale", "ln1.offset", "attn.qkv.weight", "attn.qkv.bias", "attn.out.weight", "attn.out.bias",
        "ln2.scale", "ln2.offset", "mlp.fc1.weight", "mlp.fc1.bias", "mlp.fc2.weight", "mlp.fc2.bias",
    )]


def init_params(
    cfg: ModelConfig,
    rng: np.random.Generator,
    patch: PatchSpec | None = None,
    grid_dims: tuple[int, int] | None = None,
) -> dict[str, np.ndarray]:
    """Random initial parameters for the given phase geometry (default: full resolution).

    Weight matrices are drawn with std ``1/sqrt(fan_in)`` unless
    ``cfg.init_std`` fixes a single std; token and position embeddings use
    std 0.02 in the fan-in scheme.
    """
    patch = patch or cfg.patch
    f, t = grid_dims or token_grid_dims(cfg.n_mels, cfg.time_frames, cfg.patch)
    d, h = cfg.embed_dim, cfg.hidden_dim

    def normal(*shape, fan_in=None):
        if cfg.init_std is not None:
            s = cfg.init_std
        else:
            s = 0.02 if fan_in is None else 1.0 / math.sqrt(fan_in)
        return rng.normal(0.0, s, size=shape)

    params = {
        "patch.kernel": normal(patch.height_bins, patch.width_frames, d, fan_in=patch.size),
        "patch.bias": np.zeros(d),
        "cls": normal(d),
        "pos.grid": normal(f, t, d),
        "pos.cls": normal(d),
    }
    for i in range(cfg.num_layers):
        n = block_names(i)
        params.update({
            n[0]: np.ones(d), n[1]: np.zeros(d),
            n[2]: normal(d, 3 * d, fan_in=d), n[3]: np.zeros(3 * d),
            n[4]: normal(d, d, fan_in=d), n[5]: np.zeros(d),
            n[6]: np.ones(d), n[7]: np.zeros(d),
            n[8]: normal(d, h, fan_in=d), n[9]: np.zeros(h),
            n[10]: normal(h, d, fan_in=h), n[11]: np.zeros(d),
        })
    params["norm.scale"] = np.ones(d)
    params["norm.offset"] = np.zeros(d)
    params["head.weight"] = normal(d, cfg.num_classes, fan_in=d)
    params["head.bias"] = np.zeros(cfg.num_classes)
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def current_patch(params: dict[str, np.ndarray]) -> PatchSpec:
    pf, pt, _ = params["patch.kernel"].shape
    return PatchSpec(pf, pt)


def current_grid(params: dict[str, np.ndarray]) -> tuple[int, int]:
    f, t, _ = params["pos.grid"].shape
    return f, t


# ---------------------------------------------------------------- primitives


def _layer_norm(x, scale, offset):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return xh * scale + offset, (xh, inv)


def _layer_norm_back(dy, scale, cache):
    xh, inv = cache
    dxh = dy * scale
    dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True) - xh * (dxh * xh).mean(axis=-1, keepdims=True))
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xh).sum(axis=axes), dy.sum(axis=axes)


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu(x):
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    return x * cdf, cdf


def _gelu_back(dy, x, cdf):
    return dy * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _dropout_mask(rng, shape, rate):
    if rate <= 0.0 or rng is None:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ------------------------------------------------------------------- forward


def _attention(x, p, prefix, cfg):
    B, N, d = x.shape
    H, dh = cfg.num_heads, cfg.head_dim
    qkv = x @ p[prefix + "qkv.weight"] + p[prefix + "qkv.bias"]
    qkv = qkv.reshape(B, N, 3, H, dh).transpose(2, 0, 3, 1, 4)  # (3, B, H, N, dh)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / math.sqrt(dh)
    attn = _softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    o = (attn @ v).transpose(0, 2, 1, 3).reshape(B, N, d)
    out = o @ p[prefix + "out.weight"] + p[prefix + "out.bias"]
    return out, (x, q, k, v, attn, o)


def _attention_back(dout, p, prefix, cfg, cache, grads):
    x, q, k, v, attn, o = cache
    B, N, d = x.shape
    H, dh = cfg.num_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dh)
    grads[prefix + "out.weight"] += o.reshape(-1, d).T @ dout.reshape(-1, d)
    grads[prefix + "out.bias"] += dout.sum(axis=(0, 1))
    do = (dout @ p[prefix + "out.weight"].T).reshape(B, N, H, dh).transpose(0, 2, 1, 3)
    dattn = do @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ do
    ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, N, 3 * d)
    grads[prefix + "qkv.weight"] += x.reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
    grads[prefix + "qkv.bias"] += dqkv.sum(axis=(0, 1))
    return dqkv @ p[prefix + "qkv.weight"].T


def _block(x, p, i, cfg, rng):
    pre = f"blocks.{i}."
    h1, ln1 = _layer_norm(x, p[pre + "ln1.scale"], p[pre + "ln1.offset"])
    a, att = _attention(h1, p, pre + "attn.", cfg)
    m1 = _dropout_mask(rng, a.shape, cfg.dropout)
    if m1 is not None:
        a = a * m1
    x1 = x + a
    h2, ln2 = _layer_norm(x1, p[pre + "ln2.scale"], p[pre + "ln2.offset"])
    u = h2 @ p[pre + "mlp.fc1.weight"] + p[pre + "mlp.fc1.bias"]
    g, cdf = _gelu(u)
    m = g @ p[pre + "mlp.fc2.weight"] + p[pre + "mlp.fc2.bias"]
    m2 = _dropout_mask(rng, m.shape, cfg.dropout)
    if m2 is not None:
        m = m * m2
    return x1 + m, (ln1, att, m1, ln2, h2, u, g, cdf, m2)


def _block_back(dy, p, i, cfg, cache, grads):
    pre = f"blocks.{i}."
    ln1, att, m1, ln2, h2, u, g, cdf, m2 = cache
    d, hdim = cfg.embed_dim, cfg.hidden_dim
    dm = dy if m2 is None else dy * m2
    grads[pre + "mlp.fc2.weight"] += g.reshape(-1, hdim).T @ dm.reshape(-1, d)
    grads[pre + "mlp.fc2.bias"] += dm.sum(axis=(0, 1))
    du = _gelu_back(dm @ p[pre + "mlp.fc2.weight"].T, u, cdf)
    grads[pre + "mlp.fc1.weight"] += h2.reshape(-1, d).T @ du.reshape(-1, hdim)
    grads[pre + "mlp.fc1.bias"] += du.sum(axis=(0, 1))
    dh2 = du @ p[pre + "mlp.fc1.weight"].T
    dx1, dg, db = _layer_norm_back(dh2, p[pre + "ln2.scale"], ln2)
    grads[pre + "ln2.scale"] += dg
    grads[pre + "ln2.offset"] += db
    dx1 = dx1 + dy
    da = dx1 if m1 is None else dx1 * m1
    dh1 = _attention_back(da, p, pre + "attn.", cfg, att, grads)
    dx, dg, db = _layer_norm_back(dh1, p[pre + "ln1.scale"], ln1)
    grads[pre + "ln1.scale"] += dg
    grads[pre + "ln1.offset"] += db
    return dx + dx1


def embed_batch(params, grids):
    """Patchify ``(B, F, T)`` grids and embed them into ``(B, f*t+1, d)`` tokens."""
    grids = np.asarray(grids, dtype=np.float64)
    patch = current_patch(params)
    f, t = current_grid(params)
    if token_grid_dims(grids.shape[-2], grids.shape[-1], patch) != (f, t):
        raise ValueError(
            f"input {grids.shape[-2:]} with {patch} patches does not match the positional grid {(f, t)}"
        )
    patches = patchify(grids, patch)
    d = params["cls"].shape[0]
    body = patches @ params["patch.kernel"].reshape(-1, d) + params["patch.bias"] + params["pos.grid"].reshape(-1, d)
    cls = np.broadcast_to(params["cls"] + params["pos.cls"], (grids.shape[0], 1, d))
    return np.concatenate([cls, body], axis=1), patches


def _encode(params, cfg, tokens, rng=None):
    x = tokens
    caches = []
    for i in range(cfg.num_layers):
        x, c = _block(x, params, i, cfg, rng)
        caches.append(c)
    y, lnf = _layer_norm(x[:, 0], params["norm.scale"], params["norm.offset"])
    logits = y @ params["head.weight"] + params["head.bias"]
    return logits, (caches, y, lnf)


def forward_tokens(params, cfg: ModelConfig, tokens) -> np.ndarray:
    """Logits for already-embedded tokens ``(B, N, d)`` or a single TokenSequence."""
    if isinstance(tokens, TokenSequence):
        if tokens.grid_dims != current_grid(params):
            raise ValueError(f"token grid {tokens.grid_dims} does not match parameters {current_grid(params)}")
        return _encode(params, cfg, tokens.tokens[None])[0][0]
    return _encode(params, cfg, np.asarray(tokens, dtype=np.float64))[0]


def forward(params, cfg: ModelConfig, grids) -> np.ndarray:
    """Class logits for a batch of spectrogram grids ``(B, F, T)`` (or one ``(F, T)`` grid)."""
    grids = np.asarray(grids, dtype=np.float64)
    single = grids.ndim == 2
    tokens, _ = embed_batch(params, grids[None] if single else grids)
    logits = _encode(params, cfg, tokens)[0]
    return logits[0] if single else logits


# ---------------------------------------------------------------------- loss


def _check_targets(logits, targets, task_kind):
    B, K = logits.shape
    targets = np.asarray(targets)
    if task_kind == SINGLE_LABEL:
        if targets.shape != (B,) or not np.issubdtype(targets.dtype, np.integer):
            raise ValueError(f"single-label targets must be {B} integer class indices")
        if targets.min() < 0 or targets.max() >= K:
            raise ValueError(f"class index outside [0, {K})")
    elif task_kind == MULTI_LABEL:
        if targets.shape != (B, K) or not np.all((targets == 0) | (targets == 1)):
            raise ValueError(f"multi-label targets must be a binary {B}x{K} matrix")
    else:
        raise ValueError(f"unknown task kind {task_kind!r}")
    return targets


def loss_and_grad(logits, targets, task_kind):
    """Mean batch loss and its gradient w.r.t. ``logits``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = _check_targets(logits, targets, task_kind)
    B, K = logits.shape
    if task_kind == SINGLE_LABEL:
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        losses = lse - z[np.arange(B), targets]
        dz = _softmax(logits)
        dz[np.arange(B), targets] -= 1.0
        return float(losses.mean()), dz / B
    y = targets.astype(np.float64)
    losses = np.maximum(logits, 0.0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
    return float(losses.mean()), (_sigmoid(logits) - y) / (B * K)


def loss(logits, targets, task_kind: str = SINGLE_LABEL) -> float:
    if np.ndim(logits) == 1:
        logits = np.asarray(logits)[None]
        targets = np.asarray(targets)[None]
    return loss_and_grad(logits, targets, task_kind)[0]


def gradients(params, cfg: ModelConfig, batch, rng=None):
    """Mean batch loss and exact gradients for every parameter tensor.

    ``batch`` is ``(grids, targets)``. ``rng`` is only consulted when dropout
    is enabled.
    """
    grids, targets = batch
    tokens, patches = embed_batch(params, grids)
    logits, (caches, y, lnf) = _encode(params, cfg, tokens, rng if cfg.dropout > 0 else None)
    value, dlogits = loss_and_grad(logits, targets, cfg.task_kind)

    grads = zeros_like_params(params)
    grads["head.weight"] += y.T @ dlogits
    grads["head.bias"] += dlogits.sum(axis=0)
    dy = dlogits @ params["head.weight"].T
    dcls, dg, db = _layer_norm_back(dy, params["norm.scale"], lnf)
    grads["norm.scale"] += dg
    grads["norm.offset"] += db
    dx = np.zeros_like(tokens)
    dx[:, 0] = dcls
    for i in reversed(range(cfg.num_layers)):
        dx = _block_back(dx, params, i, cfg, caches[i], grads)

    d = cfg.embed_dim
    dbody = dx[:, 1:]
    grads["cls"] += dx[:, 0].sum(axis=0)
    grads["pos.cls"] += dx[:, 0].sum(axis=0)
    grads["pos.grid"] += dbody.sum(axis=0).reshape(grads["pos.grid"].shape)
    grads["patch.bias"] += dbody.sum(axis=(0, 1))
    grads["patch.kernel"] += (patches.reshape(-1, patches.shape[-1]).T @ dbody.reshape(-1, d)).reshape(
        grads["patch.kernel"].shape
    )
    return value, grads


# ----------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def is_fresh(self) -> bool:
        return self.step == 0 and all(not np.any(a) for a in (*self.m.values(), *self.v.values()))


def optimizer_step(params, grads, state: AdamState | None, lr: float):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are not mutated."""
    state = state or AdamState()
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v, b1, b2, state.eps)
