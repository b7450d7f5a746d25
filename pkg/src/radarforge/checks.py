"""Property suite for the fusion math, run by `radarforge fusion-check`."""

import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.special import softmax

from .core import LossConfig, ValidationError, spawn_rng
from .fusionmath import (
    AttentionWeights,
    DifferenceWeights,
    MambaWeights,
    RcmWeights,
    SsmParams,
    causal_convolve,
    channel_attention,
    channel_transform,
    compensatory_attention,
    cross_entropy_dir,
    cross_entropy_dir_grad,
    feature_difference_stack,
    focal_loss,
    focal_loss_grad,
    interactive_fuse,
    inverse_channel_transform,
    layer_norm,
    mamba_kernel,
    mean_mamba_block,
    morton_order,
    multi_receptive_enhance,
    silu,
    smooth_l1,
    smooth_l1_grad,
    ssm_scan,
    total_loss,
    zoh_discretize,
)

logger = logging.getLogger(__name__)

CHANNELS = 2
FD_STEP = 1e-5


@dataclass(frozen=True)
class PropertyResult:
    name: str
    error: float
    tolerance: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _fusion_pipeline(rng: np.random.Generator, sizes: tuple[int, int], seed: int) -> dict:
    """One pass through compensation, difference, scan block and gating on random maps."""
    H, W = sizes
    factor = 2 if H % 2 == 0 and W % 2 == 0 else 1
    f_radar = rng.standard_normal((CHANNELS, H, W))
    f_img = rng.standard_normal((CHANNELS, H, W))
    rcm = RcmWeights.seeded(CHANNELS, (3, 5, 9), seed)
    attn_w = AttentionWeights.seeded(CHANNELS, seed)
    fbar_r = multi_receptive_enhance(f_radar, rcm)
    fbar_i = multi_receptive_enhance(f_img, rcm)
    attn, _ = channel_attention(fbar_r, fbar_i, attn_w)
    f_mimg = compensatory_attention(fbar_r, fbar_i, f_img, attn_w)
    diff, ft_r, ft_m = feature_difference_stack(f_radar, f_mimg, DifferenceWeights.seeded(CHANNELS, 2, seed))
    diff_small = channel_transform(diff, factor)
    ssm = SsmParams.random(rng, 4)
    value, kq = mean_mamba_block(diff_small, ssm, MambaWeights.seeded(diff_small.channels, seed))
    gate, fused_r, fused_i, fused = interactive_fuse(kq, value, ft_r, ft_m, f_radar, f_mimg.data, factor)
    return {"attn": attn, "kq": kq, "gate": gate, "fused": fused.data}


# --- Properties; each returns (error, tolerance) ---


def _scan_duality(rng, sizes, seed):
    worst = 0.0
    for _ in range(100):
        p = SsmParams.random(rng, int(rng.integers(1, 9)))
        s = rng.standard_normal(int(rng.integers(1, 129)))
        scan = ssm_scan(p, s)
        conv = causal_convolve(s, mamba_kernel(p, len(s))) + p.D * s
        worst = max(worst, float(np.max(np.abs(scan - conv)) / max(np.max(np.abs(scan)), 1e-12)))
    return worst, 1e-6


def _zoh_hand_case(rng, sizes, seed):
    a_bar, b_bar = zoh_discretize(SsmParams([-1.0], [1.0], [1.0], 0.0, math.log(2.0)))
    return max(abs(a_bar[0] - 0.5), abs(b_bar[0] - 0.5)), 1e-15


def _softmax_rows(rng, sizes, seed):
    worst = 0.0
    for _ in range(10):
        run = _fusion_pipeline(rng, sizes, seed)
        for rows in (run["attn"], softmax(run["kq"], axis=1)):
            worst = max(worst, float(np.max(np.abs(rows.sum(axis=1) - 1.0))))
    return worst, 1e-12


def _complementary_gating(rng, sizes, seed):
    worst = 0.0
    for _ in range(100):
        gate = _fusion_pipeline(rng, sizes, seed)["gate"]
        worst = max(worst, float(np.max(np.abs(gate.values + gate.complement() - 1.0))))
    return worst, 0.0


def _channel_bijection(rng, sizes, seed):
    H, W = sizes
    worst = 0.0
    for s in (1, 2, 4):
        if H % s or W % s:
            continue
        f = rng.standard_normal((3, H, W))
        back = inverse_channel_transform(channel_transform(f, s), s).data
        worst = max(worst, float(np.max(np.abs(back - f))))
    return worst, 0.0


def _rel(fd: float, analytic: float) -> float:
    return abs(fd - analytic) / max(abs(analytic), 1e-12)


def _loss_gradients(rng, sizes, seed):
    cfg = LossConfig()
    h = FD_STEP
    worst = 0.0
    for p in rng.uniform(0.05, 0.95, 20):
        fd = (focal_loss(p + h, cfg.alpha, cfg.sigma) - focal_loss(p - h, cfg.alpha, cfg.sigma)) / (2 * h)
        worst = max(worst, _rel(fd, focal_loss_grad(p, cfg.alpha, cfg.sigma)))
    for d in rng.uniform(-1.0, 1.0, 20):
        if abs(abs(d) - cfg.beta) < 10 * h:
            continue
        fd = (smooth_l1(d + h, 0.0, cfg.beta) - smooth_l1(d - h, 0.0, cfg.beta)) / (2 * h)
        worst = max(worst, _rel(fd, smooth_l1_grad(d, 0.0, cfg.beta)))
    for _ in range(10):
        t = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4)) * 0.8 + 0.05
        grad = cross_entropy_dir_grad(t, q)
        # move mass between two entries so the prediction stays normalized
        i, j = 0, 3
        plus, minus = q.copy(), q.copy()
        plus[i] += h
        plus[j] -= h
        minus[i] -= h
        minus[j] += h
        fd = (cross_entropy_dir(t, plus) - cross_entropy_dir(t, minus)) / (2 * h)
        worst = max(worst, _rel(fd, grad[i] - grad[j]))
    return worst, 1e-4


def _smooth_l1_continuity(rng, sizes, seed):
    beta = LossConfig().beta
    return abs(smooth_l1(beta - 1e-9, 0.0, beta) - smooth_l1(beta + 1e-9, 0.0, beta)), 1e-8


def _silu_sanity(rng, sizes, seed):
    grid = np.linspace(0.0, 20.0, 2001)
    values = silu(grid)
    return max(abs(float(silu(0.0))), float(max(0.0, -np.min(np.diff(values))))), 0.0


def _layer_norm_contract(rng, sizes, seed):
    tokens = rng.standard_normal((64, 8)) * 3.0 + 1.5
    normed = layer_norm(tokens)
    return max(float(np.max(np.abs(normed.mean(axis=1)))), float(np.max(np.abs(normed.var(axis=1) - 1.0)))), 1e-8


def _morton_order(rng, sizes, seed):
    side = 1 << max(0, (max(sizes) - 1).bit_length())
    keys = []
    for r in range(side):
        for c in range(side):
            key = 0
            for bit in range(side.bit_length()):
                key |= ((c >> bit) & 1) << (2 * bit)
                key |= ((r >> bit) & 1) << (2 * bit + 1)
            keys.append(key)
    expected = sorted(range(side * side), key=lambda i: keys[i])
    return float(np.count_nonzero(morton_order(side, side) != np.array(expected))), 0.0


def _loss_arithmetic(rng, sizes, seed):
    errors = (
        abs(focal_loss(0.5, 0.25, 2.0) - 0.0625),
        abs(smooth_l1(0.05, 0.0, 0.1) - 0.0125),
        abs(smooth_l1(0.2, 0.0, 0.1) - 0.15),
        abs(total_loss(1.0, 1.0, 1.0, 1.0) - 4.2),
    )
    return max(errors), 1e-12


def _determinism(rng, sizes, seed):
    first = _fusion_pipeline(spawn_rng(seed, 99), sizes, seed)["fused"]
    second = _fusion_pipeline(spawn_rng(seed, 99), sizes, seed)["fused"]
    return float(np.max(np.abs(first - second))), 0.0


PROPERTIES: tuple[tuple[str, Callable], ...] = (
    ("scan_kernel_duality", _scan_duality),
    ("zoh_hand_case", _zoh_hand_case),
    ("softmax_rows", _softmax_rows),
    ("complementary_gating", _complementary_gating),
    ("channel_bijection", _channel_bijection),
    ("loss_gradients", _loss_gradients),
    ("smooth_l1_continuity", _smooth_l1_continuity),
    ("silu_sanity", _silu_sanity),
    ("layer_norm_contract", _layer_norm_contract),
    ("morton_order", _morton_order),
    ("loss_arithmetic", _loss_arithmetic),
    ("determinism", _determinism),
)


def run_fusion_checks(seed: int = 0, sizes: tuple[int, int] = (8, 8), tolerance_scale: float = 1.0) -> list[PropertyResult]:
    """Evaluate every property; `tolerance_scale` multiplies each tolerance."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 2 or min(sizes) < 1:
        raise ValidationError("sizes", "need two positive spatial sizes")
    if tolerance_scale < 0:
        raise ValidationError("tolerance_scale", "must be >= 0")
    results = []
    for index, (name, check) in enumerate(PROPERTIES):
        error, tolerance = check(spawn_rng(seed, index), sizes, seed)
        tolerance *= tolerance_scale
        result = PropertyResult(name, float(error), float(tolerance), bool(error <= tolerance))
        logger.info("%s: error=%.3g tolerance=%.3g %s", name, error, tolerance, "PASSED" if result.passed else "FAILED")
        results.append(result)
    return results
