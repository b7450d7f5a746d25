"""
Forward-only numeric reference for the radar/camera fusion blocks and the
detection losses.

Feature maps are channel-major (C, H, W) float64 arrays. Weight banks are drawn
uniformly in +-1/sqrt(fan_in) from a seeded stream so every result can be
reproduced exactly.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, softmax

from .core import (
    DomainError,
    IndivisibleShape,
    LossConfig,
    ShapeMismatch,
    UnstableParameter,
    ValidationError,
    frozen_array,
    seeded_rng,
)

LN_EPS = 1e-12
BN_EPS = 1e-5
QUERY_SOURCES = ("radar", "vision", "both")
TRANSFORM_MODES = ("reshape", "mean_linear", "max_linear", "cbr")
SCAN_VARIANTS = ("mean", "max", "vanilla", "none")


# --- Types ---


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray

    def __post_init__(self):
        data = frozen_array(self.data)
        if data.ndim != 3 or 0 in data.shape:
            raise ShapeMismatch("data", f"expected a non-empty (C, H, W) array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("data", "entries must be finite")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True, eq=False)
class GateMap:
    """Fusion gate with entries in [0, 1]; `complement` is J - gate."""

    values: np.ndarray

    def __post_init__(self):
        values = frozen_array(self.values)
        if np.any(values < 0) or np.any(values > 1):
            raise ValidationError("gate", "entries must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    def complement(self) -> np.ndarray:
        return 1.0 - self.values


@dataclass(frozen=True, eq=False)
class SsmParams:
    """Diagonal linear state-space model: continuous A, B, C (length N), feed-through D, step delta."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        A, B, C = (frozen_array(np.atleast_1d(v)) for v in (self.A, self.B, self.C))
        if not (A.ndim == B.ndim == C.ndim == 1 and len(A) == len(B) == len(C) and len(A) > 0):
            raise ShapeMismatch("A", "A, B and C must be vectors of equal length N >= 1")
        if not all(np.all(np.isfinite(v)) for v in (A, B, C)) or not math.isfinite(self.D):
            raise ValidationError("A", "parameters must be finite")
        if np.any(A >= 0):
            raise UnstableParameter("A", "every diagonal entry must be < 0")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValidationError("delta", "step size must be > 0")
        for name, value in (("A", A), ("B", B), ("C", C)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "D", float(self.D))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def state_dim(self) -> int:
        return len(self.A)

    @classmethod
    def random(cls, rng: np.random.Generator, N: int) -> "SsmParams":
        return cls(
            A=-rng.uniform(0.1, 2.0, N),
            B=rng.standard_normal(N),
            C=rng.standard_normal(N),
            D=float(rng.standard_normal()),
            delta=float(rng.uniform(0.01, 1.0)),
        )


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


@dataclass(frozen=True, eq=False)
class RcmWeights:
    """Cascade of (C, C, k, k) kernels, one per receptive field."""

    kernels: tuple[np.ndarray, ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(k.shape[-1] for k in self.kernels)

    @classmethod
    def seeded(cls, channels: int, sizes: Sequence[int] = (3, 5, 9), seed: int = 0) -> "RcmWeights":
        rng = seeded_rng(seed)
        return cls(tuple(_uniform(rng, (channels, channels, k, k), channels * k * k) for k in sizes))


@dataclass(frozen=True, eq=False)
class DifferenceWeights:
    """Per-branch depthwise (C, 3, 3) kernels; one per DWConv-SiLU layer."""

    radar: tuple[np.ndarray, ...]
    image: tuple[np.ndarray, ...]

    @property
    def layers(self) -> int:
        return len(self.radar)

    @classmethod
    def seeded(cls, channels: int, layers: int = 2, seed: int = 0) -> "DifferenceWeights":
        rng = seeded_rng(seed)
        radar = tuple(_uniform(rng, (channels, 3, 3), 9) for _ in range(layers))
        image = tuple(_uniform(rng, (channels, 3, 3), 9) for _ in range(layers))
        return cls(radar, image)


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    """1x1 query/key/value projections, each (C, C)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray

    @classmethod
    def seeded(cls, channels: int, seed: int = 0) -> "AttentionWeights":
        rng = seeded_rng(seed)
        return cls(*(_uniform(rng, (channels, channels), channels) for _ in range(3)))


@dataclass(frozen=True, eq=False)
class MambaWeights:
    """Value (w1), key (w2) and query (w3) 1x1 projections."""

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray

    @classmethod
    def seeded(cls, channels: int, seed: int = 0) -> "MambaWeights":
        rng = seeded_rng(seed)
        return cls(*(_uniform(rng, (channels, channels), channels) for _ in range(3)))


@dataclass(frozen=True, eq=False)
class TransformWeights:
    """Learned channel transformations: pooled linear (C*s*s, C) and strided conv (C*s*s, C, s, s)."""

    linear: np.ndarray
    conv: np.ndarray

    @classmethod
    def seeded(cls, channels: int, factor: int, seed: int = 0) -> "TransformWeights":
        rng = seeded_rng(seed)
        out = channels * factor * factor
        return cls(
            _uniform(rng, (out, channels), channels),
            _uniform(rng, (out, channels, factor, factor), channels * factor * factor),
        )


# --- Primitives ---


def _data(x) -> np.ndarray:
    if isinstance(x, FeatureMap):
        return x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeMismatch("feature", f"expected (C, H, W), got shape {arr.shape}")
    return arr


def _same_shape(**maps: np.ndarray) -> None:
    shapes = {name: m.shape for name, m in maps.items()}
    if len(set(shapes.values())) > 1:
        raise ShapeMismatch(next(iter(shapes)), f"shapes differ: {shapes}")


def silu(x):
    return x * expit(x)


def conv2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-size cross-correlation with zero padding: (Cin, H, W) * (Cout, Cin, k, k)."""
    k = w.shape[-1]
    if w.ndim != 4 or w.shape[-2] != k or k % 2 == 0:
        raise ShapeMismatch("kernel", f"expected an odd square (Cout, Cin, k, k) kernel, got {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeMismatch("kernel", f"kernel expects {w.shape[1]} input channels, map has {x.shape[0]}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.einsum("chwij,ocij->ohw", windows, w)


def depthwise_conv2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-channel same-size cross-correlation: (C, H, W) * (C, k, k)."""
    k = w.shape[-1]
    if w.ndim != 3 or w.shape[0] != x.shape[0] or k % 2 == 0:
        raise ShapeMismatch("kernel", f"expected (C, k, k) with odd k for {x.shape[0]} channels, got {w.shape}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.einsum("chwij,cij->chw", windows, w)


def project_channels(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """1x1 convolution."""
    if w.shape[1] != x.shape[0]:
        raise ShapeMismatch("projection", f"weight {w.shape} does not fit {x.shape[0]} channels")
    return np.einsum("oc,chw->ohw", w, x)


def layer_norm(tokens: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Per-token normalization over channels, no affine."""
    mean = tokens.mean(axis=-1, keepdims=True)
    var = tokens.var(axis=-1, keepdims=True)
    return (tokens - mean) / np.sqrt(var + eps)


# --- Receptive-field compensation ---


def multi_receptive_enhance(f_m, weights: RcmWeights) -> FeatureMap:
    """SiLU of the averaged cascade outputs plus the input residual."""
    x = _data(f_m)
    if not weights.kernels:
        raise ShapeMismatch("kernels", "need at least one receptive field")
    stage = x
    acc = np.zeros_like(x)
    for kernel in weights.kernels:
        if kernel.shape[0] != x.shape[0]:
            raise ShapeMismatch("kernels", "every stage must preserve the channel count")
        stage = conv2d(stage, kernel)
        acc = acc + stage
    return FeatureMap(silu(acc / len(weights.kernels)) + x)


def _band_pool(x: np.ndarray, d_k: int) -> np.ndarray:
    """Average over d_k horizontal bands: (C, H, W) -> (C, d_k)."""
    if not 1 <= d_k <= x.shape[1]:
        raise ShapeMismatch("d_k", f"need 1 <= d_k <= H ({x.shape[1]}), got {d_k}")
    return np.stack([band.mean(axis=(1, 2)) for band in np.array_split(x, d_k, axis=1)], axis=1)


def channel_attention(
    fbar_radar,
    fbar_img,
    weights: AttentionWeights,
    d_k: int = 1,
    query_source: str = "radar",
) -> tuple[np.ndarray, np.ndarray]:
    """(softmax attention (C, C), channel vector (C,))."""
    r, i = _data(fbar_radar), _data(fbar_img)
    _same_shape(fbar_radar=r, fbar_img=i)
    if query_source not in QUERY_SOURCES:
        raise ValidationError("query_source", f"must be one of {', '.join(QUERY_SOURCES)}")
    pooled_r, pooled_i = _band_pool(r, d_k), _band_pool(i, d_k)
    source = {"radar": pooled_r, "vision": pooled_i, "both": 0.5 * (pooled_r + pooled_i)}[query_source]
    q = weights.wq @ source
    k = weights.wk @ pooled_i
    v = weights.wv @ pooled_i
    attn = softmax(q @ k.T / math.sqrt(d_k), axis=1)
    return attn, (attn @ v).mean(axis=1)


def compensatory_attention(
    fbar_radar,
    fbar_img,
    f_img,
    weights: AttentionWeights,
    d_k: int = 1,
    query_source: str = "radar",
) -> FeatureMap:
    """Reweight the image channels by radar-queried channel attention."""
    img = _data(f_img)
    _same_shape(fbar_radar=_data(fbar_radar), f_img=img)
    _, vec = channel_attention(fbar_radar, fbar_img, weights, d_k, query_source)
    return FeatureMap(img * vec[:, None, None])


def feature_difference_stack(f_radar, f_mimg, weights: DifferenceWeights) -> tuple[FeatureMap, FeatureMap, FeatureMap]:
    """(difference, enhanced radar, enhanced image) through DWConv-SiLU layers."""
    r, m = _data(f_radar), _data(f_mimg)
    _same_shape(f_radar=r, f_mimg=m)
    diff = r - m
    for w in weights.radar:
        r = silu(depthwise_conv2d(r, w))
    for w in weights.image:
        m = silu(depthwise_conv2d(m, w))
    return FeatureMap(diff), FeatureMap(r), FeatureMap(m)


# --- Channel transformation ---


def channel_transform(f, factor: int, mode: str = "reshape", weights: TransformWeights | None = None) -> FeatureMap:
    """(C, H, W) -> (C*s*s, H/s, W/s); pixel (c, i, j) lands on channel c*s*s + (i % s)*s + j % s."""
    x = _data(f)
    C, H, W = x.shape
    s = int(factor)
    if s < 1:
        raise ValidationError("factor", "must be >= 1")
    if H % s or W % s:
        raise IndivisibleShape("factor", f"{s} does not divide ({H}, {W})")
    if mode not in TRANSFORM_MODES:
        raise ValidationError("mode", f"must be one of {', '.join(TRANSFORM_MODES)}")
    blocks = x.reshape(C, H // s, s, W // s, s)
    if mode == "reshape":
        return FeatureMap(blocks.transpose(0, 2, 4, 1, 3).reshape(C * s * s, H // s, W // s))
    weights = weights or TransformWeights.seeded(C, s)
    if mode == "cbr":
        y = np.einsum("chawb,ocab->ohw", blocks, weights.conv)
        mean = y.mean(axis=(1, 2), keepdims=True)
        var = y.var(axis=(1, 2), keepdims=True)
        return FeatureMap(np.maximum(0.0, (y - mean) / np.sqrt(var + BN_EPS)))
    pooled = blocks.mean(axis=(2, 4)) if mode == "mean_linear" else blocks.max(axis=(2, 4))
    return FeatureMap(project_channels(weights.linear, pooled))


def inverse_channel_transform(f, factor: int) -> FeatureMap:
    x = _data(f)
    Cs, h, w = x.shape
    s = int(factor)
    if s < 1 or Cs % (s * s):
        raise IndivisibleShape("factor", f"{Cs} channels are not a multiple of {s * s}")
    C = Cs // (s * s)
    return FeatureMap(x.reshape(C, s, s, h, w).transpose(0, 3, 1, 4, 2).reshape(C, h * s, w * s))


def mean_map(f, reduce: str = "mean") -> FeatureMap:
    """Per-channel summary broadcast over the spatial grid."""
    x = _data(f)
    if reduce not in ("mean", "max"):
        raise ValidationError("reduce", "must be 'mean' or 'max'")
    summary = x.mean(axis=(1, 2)) if reduce == "mean" else x.max(axis=(1, 2))
    return FeatureMap(np.broadcast_to(summary[:, None, None], x.shape).copy())


# --- Z-order serialization ---


def _part1by1(n: np.ndarray) -> np.ndarray:
    """Spread the low 32 bits of n over the even bit positions."""
    n = n.astype(np.uint64) & np.uint64(0x00000000FFFFFFFF)
    n = (n | (n << np.uint64(16))) & np.uint64(0x0000FFFF0000FFFF)
    n = (n | (n << np.uint64(8))) & np.uint64(0x00FF00FF00FF00FF)
    n = (n | (n << np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    n = (n | (n << np.uint64(2))) & np.uint64(0x3333333333333333)
    n = (n | (n << np.uint64(1))) & np.uint64(0x5555555555555555)
    return n


def morton_key(rows, cols) -> np.ndarray:
    """Interleaved key, column bit least significant."""
    return _part1by1(np.asarray(cols)) | (_part1by1(np.asarray(rows)) << np.uint64(1))


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def morton_order(height: int, width: int) -> np.ndarray:
    """Row-major flat indices of a (height, width) grid in Z-order; sides must be powers of two."""
    rows, cols = np.divmod(np.arange(height * width), width)
    return np.argsort(morton_key(rows, cols), kind="stable")


@dataclass(frozen=True, eq=False)
class ZSequence:
    """Serialized tokens (L, C): `parts` Z-order traversals of a zero-padded grid, concatenated."""

    tokens: np.ndarray
    height: int
    width: int
    padded: tuple[int, int]
    parts: int

    @property
    def part_length(self) -> int:
        return self.padded[0] * self.padded[1]

    def part(self, k: int) -> np.ndarray:
        n = self.part_length
        return self.tokens[k * n:(k + 1) * n]


def _serialize_one(x: np.ndarray, padded: tuple[int, int]) -> np.ndarray:
    C, H, W = x.shape
    grid = np.zeros((C, *padded))
    grid[:, :H, :W] = x
    flat = grid.reshape(C, -1)
    return flat[:, morton_order(*padded)].T


def z_order_serialize(feature, summary=None) -> ZSequence:
    """Z-order tokens of `feature`, followed by those of `summary` when given."""
    x = _data(feature)
    C, H, W = x.shape
    padded = (_next_pow2(H), _next_pow2(W))
    parts = [_serialize_one(x, padded)]
    if summary is not None:
        s = _data(summary)
        _same_shape(feature=x, summary=s)
        parts.append(_serialize_one(s, padded))
    return ZSequence(np.concatenate(parts, axis=0), H, W, padded, len(parts))


def z_order_deserialize(tokens: np.ndarray, seq: ZSequence) -> np.ndarray:
    """Inverse of one traversal: (Hp*Wp, C) tokens back to a cropped (C, H, W) map."""
    n = seq.part_length
    if tokens.shape[0] != n:
        raise ShapeMismatch("tokens", f"expected {n} tokens, got {tokens.shape[0]}")
    C = tokens.shape[1]
    flat = np.empty((C, n))
    flat[:, morton_order(*seq.padded)] = tokens.T
    return flat.reshape(C, *seq.padded)[:, :seq.height, :seq.width]


# --- State-space scan ---


def zoh_discretize(p: SsmParams) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order hold: a_bar = exp(delta * a), b_bar = (a_bar - 1) / a * b."""
    da = p.delta * p.A
    return np.exp(da), np.expm1(da) / p.A * p.B


def ssm_scan(p: SsmParams, s: np.ndarray) -> np.ndarray:
    """Sequential recurrence h_t = a_bar h_{t-1} + b_bar s_t, y_t = c.h_t + D s_t, from h_0 = 0.

    `s` is (T,) or (T, lanes); every lane shares the parameters.
    """
    a_bar, b_bar = zoh_discretize(p)
    s = np.asarray(s, dtype=np.float64)
    lanes = s.reshape(len(s), -1)
    h = np.zeros((p.state_dim, lanes.shape[1]))
    out = np.empty_like(lanes)
    for t in range(len(lanes)):
        h = a_bar[:, None] * h + b_bar[:, None] * lanes[t]
        out[t] = p.C @ h + p.D * lanes[t]
    return out.reshape(s.shape)


def mamba_kernel(p: SsmParams, length: int) -> np.ndarray:
    """k_t = sum_n c_n a_bar_n^t b_bar_n for t = 0 .. length - 1."""
    if length < 1:
        raise ValidationError("length", "must be >= 1")
    a_bar, b_bar = zoh_discretize(p)
    powers = a_bar[:, None] ** np.arange(length)[None, :]
    return (p.C * b_bar) @ powers


def causal_convolve(s: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """y_t = sum_{k <= t} kernel_k s_{t-k}, per lane for (T, lanes) input."""
    s = np.asarray(s, dtype=np.float64)
    T = len(s)
    if s.ndim == 1:
        return np.convolve(s, kernel)[:T]
    return np.stack([np.convolve(s[:, j], kernel)[:T] for j in range(s.shape[1])], axis=1)


def _scan_map(x: np.ndarray, p: SsmParams, variant: str) -> np.ndarray:
    """Serialize, convolve with the SSM kernel and read tokens back onto the grid."""
    if variant == "none":
        return x
    if variant == "vanilla":
        seq = z_order_serialize(x)
    else:
        seq = z_order_serialize(x, mean_map(x, variant))
    y = causal_convolve(seq.tokens, mamba_kernel(p, len(seq.tokens)))
    # the summary traversal has seen every map token
    readout = y[(seq.parts - 1) * seq.part_length: seq.parts * seq.part_length]
    return z_order_deserialize(readout, seq)


def mean_mamba_block(delta_f, p: SsmParams, weights: MambaWeights, variant: str = "mean") -> tuple[FeatureMap, np.ndarray]:
    """(value map (C, H, W), key-query map (C, C)) from the feature difference."""
    if variant not in SCAN_VARIANTS:
        raise ValidationError("variant", f"must be one of {', '.join(SCAN_VARIANTS)}")
    x = _data(delta_f)
    C, H, W = x.shape
    i_v = project_channels(weights.w1, x)
    scanned = _scan_map(i_v, p, variant)
    normed = layer_norm(scanned.reshape(C, -1).T).T.reshape(C, H, W)
    value = normed + i_v

    keys = project_channels(weights.w2, x).reshape(C, -1)
    queries = project_channels(weights.w3, x).reshape(C, -1)
    i_kq = (keys @ queries.T) / math.sqrt(C)
    kq = _scan_map(i_kq[None, :, :], p, variant)[0]
    return FeatureMap(value), kq


def apply_gate(gate: GateMap | np.ndarray, ft_radar, ft_mimg, f_radar, f_mimg) -> tuple[GateMap, FeatureMap, FeatureMap, FeatureMap]:
    """Shortcut fusion: radar weighted by the gate, image by its complement."""
    gate = gate if isinstance(gate, GateMap) else GateMap(gate)
    tr, tm, r, m = (_data(v) for v in (ft_radar, ft_mimg, f_radar, f_mimg))
    _same_shape(gate=gate.values, ft_radar=tr, ft_mimg=tm, f_radar=r, f_mimg=m)
    fused_r = tr * gate.values + r
    fused_i = tm * gate.complement() + m
    return gate, FeatureMap(fused_r), FeatureMap(fused_i), FeatureMap(np.concatenate([fused_r, fused_i], axis=0))


def fusion_gate(kq: np.ndarray, value, factor: int) -> GateMap:
    """softmax(kq) applied to the value channels, restored to full resolution and clamped."""
    v = _data(value)
    kq = np.asarray(kq, dtype=np.float64)
    if kq.shape != (v.shape[0], v.shape[0]):
        raise ShapeMismatch("kq", f"expected ({v.shape[0]}, {v.shape[0]}), got {kq.shape}")
    mixed = np.einsum("ij,jhw->ihw", softmax(kq, axis=1), v)
    return GateMap(np.clip(inverse_channel_transform(mixed, factor).data, 0.0, 1.0))


def interactive_fuse(kq, value, ft_radar, ft_mimg, f_radar, f_mimg, factor: int = 1):
    """(gate, fused radar, fused image, channel concatenation)."""
    gate = fusion_gate(kq, value, factor)
    return apply_gate(gate, ft_radar, ft_mimg, f_radar, f_mimg)


# --- Losses ---

_LN2 = math.log(2.0)


def focal_loss(p_t: float, alpha_t: float = 0.25, sigma: float = 2.0) -> float:
    """-alpha_t * (1 - p_t)^sigma * log2(p_t)."""
    if not 0.0 < p_t <= 1.0:
        raise DomainError("p_t", f"probability must lie in (0, 1], got {p_t}")
    return -alpha_t * (1.0 - p_t) ** sigma * math.log2(p_t) + 0.0


def focal_loss_grad(p_t: float, alpha_t: float = 0.25, sigma: float = 2.0) -> float:
    if not 0.0 < p_t <= 1.0:
        raise DomainError("p_t", f"probability must lie in (0, 1], got {p_t}")
    q = 1.0 - p_t
    spread = 0.0 if sigma == 0 else sigma * q ** (sigma - 1.0) * math.log(p_t)
    return -alpha_t / _LN2 * (q ** sigma / p_t - spread)


def smooth_l1(y: float, tau: float, beta: float = 0.1) -> float:
    if beta <= 0:
        raise ValidationError("beta", "must be > 0")
    diff = abs(y - tau)
    return 0.5 * diff * diff / beta if diff < beta else diff - 0.5 * beta


def smooth_l1_grad(y: float, tau: float, beta: float = 0.1) -> float:
    """Derivative with respect to y."""
    diff = y - tau
    return diff / beta if abs(diff) < beta else math.copysign(1.0, diff)


def _check_distribution(p: np.ndarray, name: str) -> None:
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
        raise DomainError(name, "must be nonnegative and sum to 1")


def cross_entropy_dir(p_true, p_pred) -> float:
    """-sum P(tau) log2 P(y) over the support of the true distribution."""
    t = np.asarray(p_true, dtype=np.float64)
    q = np.asarray(p_pred, dtype=np.float64)
    if t.shape != q.shape:
        raise ShapeMismatch("p_pred", f"{q.shape} does not match {t.shape}")
    _check_distribution(t, "p_true")
    _check_distribution(q, "p_pred")
    support = t > 0
    if np.any(q[support] <= 0):
        raise DomainError("p_pred", "zero predicted mass where true mass exists")
    return float(-(t[support] * np.log2(q[support])).sum()) + 0.0


def cross_entropy_dir_grad(p_true, p_pred) -> np.ndarray:
    """Partial derivatives with respect to each predicted entry."""
    t = np.asarray(p_true, dtype=np.float64)
    q = np.asarray(p_pred, dtype=np.float64)
    grad = np.zeros_like(q)
    support = t > 0
    grad[support] = -t[support] / (q[support] * _LN2)
    return grad


def occupancy_loss(probabilities, targets, cfg: LossConfig | None = None) -> float:
    """Mean focal loss over pillars; occupied pillars weigh alpha, empty ones 1 - alpha."""
    cfg = cfg or LossConfig()
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    t = np.asarray(targets).astype(bool).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ShapeMismatch("targets", "need one target per probability")
    p_t = np.where(t, p, 1.0 - p)
    alpha_t = np.where(t, cfg.alpha, 1.0 - cfg.alpha)
    return float(np.mean([focal_loss(float(pt), float(at), cfg.sigma) for pt, at in zip(p_t, alpha_t)]))


def total_loss(cls: float, occ: float, loc: float, direction: float, cfg: LossConfig | None = None) -> float:
    cfg = cfg or LossConfig()
    parts = (cls, occ, loc, direction)
    for name, value in zip(("cls", "occ", "loc", "dir"), parts):
        if value < 0:
            raise ValidationError(name, "loss components must be >= 0")
    return float(sum(w * v for w, v in zip(cfg.lambdas, parts)))
