"""Four-stage selective-scan classifier with hand-written reverse mode.

Layout: per-frame linear embedding, four stages of gated scan blocks with
widths ``(d, 2d, 4d, 8d)``, a 2x downsampler (concatenate adjacent frames,
project) between stages, final RMS norm, mean pool over time, linear head.

Each block is pre-norm residual::

    v = rmsnorm(u)
    x = v @ W_in_x ; z = v @ W_in_z
    y = sum over directions of scan_branch(x)      # reversed in time for "bwd"
    out = u + (y * silu(z)) @ W_out

and a scan branch is ``xa = silu(causal_conv(x))``, ``dt = softplus(xa @ W_dt + b_dt)``,
``B = xa @ W_B``, ``C = xa @ W_C``, ``selective_scan(xa, dt, -exp(A_log), B, C, D)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .scan import selective_scan, selective_scan_backward

N_STAGES = 4
DIRECTIONS = ("fwd", "bwd")


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = 128
    d_model: int = 16
    depths: tuple = (1, 1, 1, 1)
    n_classes: int = 2
    expand: int = 2
    d_state: int = 16
    d_conv: int = 4
    bidirectional: bool = True
    head: str = "softmax"  # softmax | sigmoid (sigmoid when trained with BCE)
    feature_mean: float = 0.0
    feature_std: float = 1.0
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if len(self.depths) != N_STAGES or min(self.depths) < 1:
            raise ValueError(f"need {N_STAGES} stages with >= 1 block each, got {self.depths}")
        if self.head not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "sigmoid" and self.n_classes != 2:
            raise ValueError("sigmoid head needs exactly 2 classes")
        if self.feature_std <= 0:
            raise ValueError("feature_std must be positive")

    @property
    def widths(self) -> tuple:
        return tuple(self.d_model * 2 ** i for i in range(N_STAGES))

    @property
    def directions(self) -> tuple:
        return DIRECTIONS if self.bidirectional else DIRECTIONS[:1]

    @property
    def min_frames(self) -> int:
        return 2 ** N_STAGES

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        return d

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


PRESETS = {
    "tiny": dict(d_model=16, depths=(1, 1, 1, 1)),
    "small": dict(d_model=32, depths=(1, 1, 2, 1)),
    "medium": dict(d_model=48, depths=(2, 2, 4, 2)),
}


def preset(name: str, **overrides) -> ModelConfig:
    return ModelConfig(**{**PRESETS[name], **overrides})


@dataclass
class ScanParams:
    A_log: np.ndarray
    W_B: np.ndarray
    W_C: np.ndarray
    W_dt: np.ndarray
    b_dt: np.ndarray
    D: np.ndarray

    @property
    def A(self) -> np.ndarray:
        return -np.exp(self.A_log)


@dataclass
class BranchParams:
    conv_w: np.ndarray  # (d_inner, d_conv), causal depthwise
    scan: ScanParams


@dataclass
class BlockParams:
    norm: np.ndarray
    W_in_x: np.ndarray
    W_in_z: np.ndarray
    W_out: np.ndarray
    branches: list = field(default_factory=list)

    @classmethod
    def from_tensors(cls, t: dict, prefix: str, directions=DIRECTIONS) -> "BlockParams":
        branches = []
        for d in directions:
            p = f"{prefix}.{d}."
            scan = ScanParams(*(t[p + k] for k in ("A_log", "W_B", "W_C", "W_dt", "b_dt", "D")))
            branches.append(BranchParams(t[p + "conv_w"], scan))
        return cls(t[prefix + ".norm"], t[prefix + ".W_in_x"], t[prefix + ".W_in_z"],
                   t[prefix + ".W_out"], branches)


class ModelParams:
    """Named float64 tensors plus the config they were built for.

    ``version`` is bumped on every in-place update so that activation
    caches from an older forward pass can be rejected.
    """

    def __init__(self, config: ModelConfig, tensors: dict):
        self.config = config
        self.tensors = tensors
        self.version = 0

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def block(self, stage: int, index: int) -> BlockParams:
        return BlockParams.from_tensors(self.tensors, block_prefix(stage, index),
                                        self.config.directions)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def bump(self):
        self.version += 1


def block_prefix(stage: int, index: int) -> str:
    return f"stages.{stage}.{index}"


def _uniform(rng, shape, fan_in, scale=1.0):
    bound = scale / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    cfg = config
    t: dict = {}
    widths = cfg.widths
    n, K = cfg.d_state, cfg.d_conv
    n_blocks = sum(cfg.depths)
    t["embed.W"] = _uniform(rng, (cfg.n_mels, widths[0]), cfg.n_mels)
    t["embed.b"] = np.zeros(widths[0])
    for s, (d, depth) in enumerate(zip(widths, cfg.depths)):
        di = cfg.expand * d
        for b in range(depth):
            p = block_prefix(s, b)
            t[p + ".norm"] = np.ones(d)
            t[p + ".W_in_x"] = _uniform(rng, (d, di), d)
            t[p + ".W_in_z"] = _uniform(rng, (d, di), d)
            t[p + ".W_out"] = _uniform(rng, (di, d), di, 1.0 / np.sqrt(n_blocks))
            for direction in cfg.directions:
                q = f"{p}.{direction}."
                t[q + "conv_w"] = _uniform(rng, (di, K), K)
                t[q + "A_log"] = np.tile(np.log(np.arange(1, n + 1, dtype=np.float64)), (di, 1))
                t[q + "W_B"] = _uniform(rng, (di, n), di)
                t[q + "W_C"] = _uniform(rng, (di, n), di)
                t[q + "W_dt"] = _uniform(rng, (di, di), di)
                dt0 = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=di))
                t[q + "b_dt"] = dt0 + np.log(-np.expm1(-dt0))  # softplus^-1(dt0)
                t[q + "D"] = np.ones(di)
        if s < N_STAGES - 1:
            t[f"down.{s}.W"] = _uniform(rng, (2 * d, widths[s + 1]), 2 * d)
            t[f"down.{s}.b"] = np.zeros(widths[s + 1])
    t["norm_f"] = np.ones(widths[-1])
    t["head.W"] = _uniform(rng, (widths[-1], cfg.n_classes), widths[-1])
    t["head.b"] = np.zeros(cfg.n_classes)
    return ModelParams(cfg, t)


# ---------------------------------------------------------------- primitives

def silu(x):
    return x * expit(x)


def silu_grad(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def softplus(x):
    return np.logaddexp(0.0, x)


def rmsnorm(u, g, eps):
    r = 1.0 / np.sqrt(np.mean(u * u, axis=-1, keepdims=True) + eps)
    return u * r * g, r


def rmsnorm_backward(dv, u, r, g):
    dvg = dv * g
    du = r * dvg - u * r ** 3 * np.mean(dvg * u, axis=-1, keepdims=True)
    dg = np.sum(dv * u * r, axis=0)
    return du, dg


def causal_conv(x, w):
    """Depthwise causal convolution: out[t, c] = sum_k w[c, k] * x[t - K + 1 + k, c]."""
    L = x.shape[0]
    K = w.shape[1]
    xp = np.concatenate([np.zeros((K - 1, x.shape[1])), x])
    out = np.zeros_like(x)
    for k in range(K):
        out += w[:, k] * xp[k:k + L]
    return out


def causal_conv_backward(dout, x, w):
    L = x.shape[0]
    K = w.shape[1]
    xp = np.concatenate([np.zeros((K - 1, x.shape[1])), x])
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for k in range(K):
        dw[:, k] = np.sum(dout * xp[k:k + L], axis=0)
        dxp[k:k + L] += dout * w[:, k]
    return dxp[K - 1:], dw


# ------------------------------------------------------------------- blocks

def _branch_forward(x, bp: BranchParams, keep: bool):
    sp = bp.scan
    xc = causal_conv(x, bp.conv_w)
    xa = silu(xc)
    pre_dt = xa @ sp.W_dt + sp.b_dt
    dt = softplus(pre_dt)
    B = xa @ sp.W_B
    C = xa @ sp.W_C
    y = selective_scan(xa, dt, sp.A, B, C, sp.D)
    cache = (x, xc, xa, pre_dt, dt, B, C) if keep else None
    return y, cache


def _branch_backward(dy, bp: BranchParams, cache):
    x, xc, xa, pre_dt, dt, B, C = cache
    sp = bp.scan
    A = sp.A
    dxa, ddt, dA, dB, dC, dD = selective_scan_backward(xa, dt, A, B, C, sp.D, dy)
    dpre = ddt * expit(pre_dt)
    grads = {
        "A_log": dA * A,
        "W_B": xa.T @ dB,
        "W_C": xa.T @ dC,
        "W_dt": xa.T @ dpre,
        "b_dt": dpre.sum(axis=0),
        "D": dD,
    }
    dxa = dxa + dB @ sp.W_B.T + dC @ sp.W_C.T + dpre @ sp.W_dt.T
    dx, grads["conv_w"] = causal_conv_backward(dxa * silu_grad(xc), x, bp.conv_w)
    return dx, grads


def block_forward(u, p: BlockParams, eps: float = 1e-5, keep: bool = False):
    """One gated scan block; returns ``(out, cache)`` (cache is None unless ``keep``)."""
    if u.ndim != 2 or u.shape[1] != p.W_in_x.shape[0]:
        raise ValueError(f"block expects (L, {p.W_in_x.shape[0]}) input, got {u.shape}")
    v, r = rmsnorm(u, p.norm, eps)
    x = v @ p.W_in_x
    z = v @ p.W_in_z
    y = np.zeros_like(x)
    branch_caches = []
    for i, bp in enumerate(p.branches):
        if i == 0:
            yb, c = _branch_forward(x, bp, keep)
            y += yb
        else:
            yb, c = _branch_forward(np.ascontiguousarray(x[::-1]), bp, keep)
            y += yb[::-1]
        branch_caches.append(c)
    sz = silu(z)
    gated = y * sz
    out = u + gated @ p.W_out
    cache = (u, r, v, z, y, sz, gated, branch_caches) if keep else None
    return out, cache


def block_backward(dout, p: BlockParams, cache, directions=DIRECTIONS):
    """Returns ``(du, grads)`` with grads keyed by block-local names (``W_out``, ``fwd.D``, ...)."""
    u, r, v, z, y, sz, gated, branch_caches = cache
    grads = {"W_out": gated.T @ dout}
    dgated = dout @ p.W_out.T
    dy = dgated * sz
    dz = dgated * y * silu_grad(z)
    dx = np.zeros_like(dy)
    for i, (bp, c) in enumerate(zip(p.branches, branch_caches)):
        if i == 0:
            dxb, bg = _branch_backward(dy, bp, c)
            dx += dxb
        else:
            dxb, bg = _branch_backward(np.ascontiguousarray(dy[::-1]), bp, c)
            dx += dxb[::-1]
        for k, g in bg.items():
            grads[f"{directions[i]}.{k}"] = g
    grads["W_in_x"] = v.T @ dx
    grads["W_in_z"] = v.T @ dz
    dv = dx @ p.W_in_x.T + dz @ p.W_in_z.T
    dnorm_in, grads["norm"] = rmsnorm_backward(dv, u, r, p.norm)
    return dout + dnorm_in, grads


# ----------------------------------------------------------------- backbone

class StaleActivationError(RuntimeError):
    pass


@dataclass
class Activation:
    params: ModelParams
    version: int
    inputs: np.ndarray  # normalized features
    blocks: list  # per stage, list of block caches
    down_inputs: list  # per downsampler, its (L, d) input
    final: tuple  # (h, rms factor, pooled)

    @property
    def stage_lengths(self) -> list[int]:
        return [blocks[0][0].shape[0] for blocks in self.blocks]


def stage_lengths(n_frames: int) -> list[int]:
    lengths = [n_frames]
    for _ in range(N_STAGES - 1):
        lengths.append(lengths[-1] // 2)
    return lengths


def backbone_forward(features, params: ModelParams, train: bool = False):
    """Class logits for a ``(T, n_mels)`` feature matrix.

    With ``train=True`` returns ``(logits, Activation)`` for use with
    :func:`backbone_backward`.
    """
    cfg = params.config
    f = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != cfg.n_mels:
        raise ValueError(f"expected (T, {cfg.n_mels}) features, got {f.shape}")
    if f.shape[0] < cfg.min_frames:
        raise ValueError(f"need at least {cfg.min_frames} frames, got {f.shape[0]}")
    t = params.tensors
    x = (f - cfg.feature_mean) / cfg.feature_std
    h = x @ t["embed.W"] + t["embed.b"]
    blocks, down_inputs = [], []
    for s, depth in enumerate(cfg.depths):
        stage = []
        for b in range(depth):
            h, c = block_forward(h, params.block(s, b), cfg.norm_eps, keep=train)
            stage.append(c)
        blocks.append(stage)
        if s < N_STAGES - 1:
            down_inputs.append(h if train else None)
            half = h.shape[0] // 2
            h = h[:2 * half].reshape(half, 2 * h.shape[1]) @ t[f"down.{s}.W"] + t[f"down.{s}.b"]
    hn, r = rmsnorm(h, t["norm_f"], cfg.norm_eps)
    pooled = hn.mean(axis=0)
    logits = pooled @ t["head.W"] + t["head.b"]
    if not train:
        return logits
    return logits, Activation(params, params.version, x, blocks, down_inputs, (h, r, pooled))


def backbone_backward(act: Activation, dlogits) -> dict:
    """Gradients of ``logits . dlogits`` for every tensor in ``act.params``."""
    params = act.params
    if act.version != params.version:
        raise StaleActivationError(
            f"activation from params version {act.version}, params now at {params.version}")
    cfg = params.config
    t = params.tensors
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != (cfg.n_classes,):
        raise ValueError(f"dlogits must have shape ({cfg.n_classes},)")
    grads: dict = {}
    h, r, pooled = act.final
    grads["head.W"] = np.outer(pooled, dlogits)
    grads["head.b"] = dlogits.copy()
    dpooled = t["head.W"] @ dlogits
    dhn = np.broadcast_to(dpooled / h.shape[0], h.shape)
    dh, grads["norm_f"] = rmsnorm_backward(dhn, h, r, t["norm_f"])
    for s in reversed(range(N_STAGES)):
        for b in reversed(range(cfg.depths[s])):
            prefix = block_prefix(s, b)
            dh, bg = block_backward(dh, params.block(s, b), act.blocks[s][b], cfg.directions)
            for k, g in bg.items():
                grads[f"{prefix}.{k}"] = g
        if s > 0:
            h_in = act.down_inputs[s - 1]
            half, d = h_in.shape[0] // 2, h_in.shape[1]
            paired = h_in[:2 * half].reshape(half, 2 * d)
            grads[f"down.{s - 1}.W"] = paired.T @ dh
            grads[f"down.{s - 1}.b"] = dh.sum(axis=0)
            dprev = np.zeros_like(h_in)
            dprev[:2 * half] = (dh @ t[f"down.{s - 1}.W"].T).reshape(2 * half, d)
            dh = dprev
    grads["embed.W"] = act.inputs.T @ dh
    grads["embed.b"] = dh.sum(axis=0)
    return grads
