import math

import numpy as np
import pytest

from radarforge.core import DomainError, IndivisibleShape, LossConfig, ShapeMismatch, UnstableParameter, ValidationError
from radarforge.fusionmath import (
    AttentionWeights,
    DifferenceWeights,
    GateMap,
    MambaWeights,
    RcmWeights,
    SsmParams,
    TransformWeights,
    apply_gate,
    causal_convolve,
    channel_attention,
    channel_transform,
    compensatory_attention,
    cross_entropy_dir,
    cross_entropy_dir_grad,
    feature_difference_stack,
    focal_loss,
    focal_loss_grad,
    fusion_gate,
    interactive_fuse,
    inverse_channel_transform,
    mamba_kernel,
    mean_mamba_block,
    mean_map,
    morton_order,
    multi_receptive_enhance,
    occupancy_loss,
    silu,
    smooth_l1,
    smooth_l1_grad,
    ssm_scan,
    total_loss,
    z_order_deserialize,
    z_order_serialize,
    zoh_discretize,
)

HALF = SsmParams([-1.0], [1.0], [1.0], 0.0, math.log(2.0))


# --- straight-line references ---


def _sigmoid_silu(v):
    return np.vectorize(lambda t: t / (1.0 + math.exp(-t)))(v)


def _conv(x, w):
    cout, cin, k, _ = w.shape
    pad = k // 2
    _, H, W = x.shape
    out = np.zeros((cout, H, W))
    for o in range(cout):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for c in range(cin):
                    for a in range(k):
                        for b in range(k):
                            ii, jj = i + a - pad, j + b - pad
                            if 0 <= ii < H and 0 <= jj < W:
                                acc += x[c, ii, jj] * w[o, c, a, b]
                out[o, i, j] = acc
    return out


def _depthwise(x, w):
    return np.stack([_conv(x[c:c + 1], w[c][None, None])[0] for c in range(len(x))])


def _morton(r, c):
    key = 0
    for bit in range(16):
        key |= ((c >> bit) & 1) << (2 * bit)
        key |= ((r >> bit) & 1) << (2 * bit + 1)
    return key


def _scan_reference(x, p):
    """Mean-variant scan of a power-of-two (C, H, W) map, written out step by step."""
    C, H, W = x.shape
    order = sorted(range(H * W), key=lambda idx: _morton(idx // W, idx % W))
    means = [x[c].mean() for c in range(C)]
    tokens = [x[:, idx // W, idx % W] for idx in order] + [np.array(means) for _ in order]
    kernel = []
    for t in range(len(tokens)):
        tap = 0.0
        for a, b, c in zip(p.A, p.B, p.C):
            a_bar = math.exp(p.delta * a)
            tap += c * a_bar**t * (a_bar - 1.0) / a * b
        kernel.append(tap)
    out = np.zeros((C, H, W))
    n = H * W
    for pos, idx in enumerate(order):
        t = n + pos
        out[:, idx // W, idx % W] = sum(kernel[j] * tokens[t - j] for j in range(t + 1))
    return out


# --- receptive-field compensation ---


def test_zero_kernels_leave_the_residual():
    f = np.random.default_rng(0).normal(size=(2, 5, 5))
    out = multi_receptive_enhance(f, RcmWeights((np.zeros((2, 2, 3, 3)),)))
    assert np.array_equal(out.data, f)


def test_identity_kernel_on_ones():
    out = multi_receptive_enhance(np.ones((2, 3, 3)), RcmWeights((np.eye(2).reshape(2, 2, 1, 1),)))
    assert np.allclose(out.data, 1.7310585786300049, rtol=1e-15)


def test_receptive_cascade_matches_reference():
    f = np.random.default_rng(1).normal(size=(2, 8, 8))
    weights = RcmWeights.seeded(2, (3, 5, 9), seed=4)
    assert weights.sizes == (3, 5, 9)
    stage, acc = f, np.zeros_like(f)
    for k in weights.kernels:
        stage = _conv(stage, k)
        acc = acc + stage
    expected = _sigmoid_silu(acc / 3) + f
    assert np.max(np.abs(multi_receptive_enhance(f, weights).data - expected)) < 1e-12


def test_even_kernels_are_rejected():
    with pytest.raises(ShapeMismatch):
        multi_receptive_enhance(np.ones((2, 4, 4)), RcmWeights((np.ones((2, 2, 2, 2)),)))


# --- compensatory attention ---


def test_zero_image_gives_zero_compensation():
    rng = np.random.default_rng(2)
    fbar_r = rng.normal(size=(3, 4, 4))
    out = compensatory_attention(fbar_r, np.zeros((3, 4, 4)), np.zeros((3, 4, 4)), AttentionWeights.seeded(3))
    assert not out.data.any()


def test_constant_logits_give_uniform_attention():
    rng = np.random.default_rng(3)
    fbar_r, fbar_i = rng.normal(size=(2, 3, 4, 4))
    wv = rng.normal(size=(3, 3))
    weights = AttentionWeights(np.zeros((3, 3)), rng.normal(size=(3, 3)), wv)
    attn, vec = channel_attention(fbar_r, fbar_i, weights)
    assert np.allclose(attn, 1.0 / 3.0, rtol=0, atol=1e-15)
    v = wv @ fbar_i.mean(axis=(1, 2))
    assert np.allclose(vec, v.mean(), rtol=0, atol=1e-12)


@pytest.mark.parametrize("source", ["radar", "vision", "both"])
@pytest.mark.parametrize("d_k", [1, 2, 4])
def test_attention_rows_are_distributions(source, d_k):
    rng = np.random.default_rng(d_k)
    fbar_r, fbar_i = rng.normal(size=(2, 4, 4, 6))
    attn, vec = channel_attention(fbar_r, fbar_i, AttentionWeights.seeded(4, seed=d_k), d_k, source)
    assert attn.shape == (4, 4)
    assert np.all(attn >= 0)
    assert np.allclose(attn.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert vec.shape == (4,)


def test_attention_argument_checks():
    x = np.ones((2, 3, 3))
    with pytest.raises(ShapeMismatch):
        channel_attention(x, x, AttentionWeights.seeded(2), d_k=4)
    with pytest.raises(ValidationError):
        channel_attention(x, x, AttentionWeights.seeded(2), query_source="lidar")
    with pytest.raises(ShapeMismatch):
        channel_attention(x, np.ones((2, 3, 4)), AttentionWeights.seeded(2))


# --- feature difference ---


def test_equal_inputs_have_zero_difference():
    f = np.random.default_rng(4).normal(size=(2, 5, 5))
    diff, _, _ = feature_difference_stack(f, f, DifferenceWeights.seeded(2))
    assert not diff.data.any()


def test_zero_layers_return_the_inputs():
    rng = np.random.default_rng(5)
    r, m = rng.normal(size=(2, 2, 4, 4))
    _, er, em = feature_difference_stack(r, m, DifferenceWeights((), ()))
    assert np.array_equal(er.data, r)
    assert np.array_equal(em.data, m)


def test_difference_stack_matches_reference():
    rng = np.random.default_rng(6)
    r, m = rng.normal(size=(2, 4, 6, 6))
    weights = DifferenceWeights.seeded(4, 2, seed=8)
    diff, er, em = feature_difference_stack(r, m, weights)
    ref_r, ref_m = r, m
    for wr, wm in zip(weights.radar, weights.image):
        ref_r = _sigmoid_silu(_depthwise(ref_r, wr))
        ref_m = _sigmoid_silu(_depthwise(ref_m, wm))
    assert np.array_equal(diff.data, r - m)
    assert np.max(np.abs(er.data - ref_r)) < 1e-12
    assert np.max(np.abs(em.data - ref_m)) < 1e-12


# --- channel transformation ---


def test_factor_one_is_identity():
    f = np.random.default_rng(7).normal(size=(3, 4, 6))
    assert np.array_equal(channel_transform(f, 1).data, f)


def test_space_to_channel_shape():
    assert channel_transform(np.zeros((8, 320, 320)), 4).shape == (128, 80, 80)


def test_space_to_channel_index_formula():
    C, H, W, s = 2, 6, 4, 2
    f = np.arange(C * H * W, dtype=float).reshape(C, H, W)
    out = channel_transform(f, s).data
    for c in range(C):
        for i in range(H):
            for j in range(W):
                assert out[c * s * s + (i % s) * s + j % s, i // s, j // s] == f[c, i, j]


@pytest.mark.parametrize("s", [1, 2, 4])
def test_inverse_restores_the_map(s):
    f = np.random.default_rng(s).normal(size=(3, 8, 12))
    assert np.array_equal(inverse_channel_transform(channel_transform(f, s), s).data, f)


def test_indivisible_factor():
    with pytest.raises(IndivisibleShape):
        channel_transform(np.zeros((2, 6, 6)), 4)
    with pytest.raises(IndivisibleShape):
        inverse_channel_transform(np.zeros((6, 2, 2)), 2)


@pytest.mark.parametrize("mode", ["mean_linear", "max_linear", "cbr"])
def test_learned_transforms_have_the_same_shape(mode):
    f = np.random.default_rng(9).normal(size=(2, 8, 8))
    out = channel_transform(f, 2, mode, TransformWeights.seeded(2, 2, seed=1))
    assert out.shape == (8, 4, 4)
    if mode == "cbr":
        assert np.all(out.data >= 0)


def test_mean_linear_with_identity_weights_pools_blocks():
    f = np.arange(16, dtype=float).reshape(1, 4, 4)
    weights = TransformWeights(np.ones((4, 1)), np.zeros((4, 1, 2, 2)))
    out = channel_transform(f, 2, "mean_linear", weights).data
    assert out[0].tolist() == [[2.5, 4.5], [10.5, 12.5]]


def test_mean_map():
    assert mean_map([[[1.0, 2.0], [3.0, 4.0]]]).data.tolist() == [[[2.5, 2.5], [2.5, 2.5]]]
    assert mean_map(np.full((2, 3, 3), 7.0)).data.tolist() == np.full((2, 3, 3), 7.0).tolist()
    assert np.all(mean_map([[[1.0, 2.0], [3.0, 4.0]]], "max").data == 4.0)


# --- Z-order ---


def test_morton_order_small_grids():
    assert morton_order(2, 2).tolist() == [0, 1, 2, 3]
    assert morton_order(4, 4).tolist() == [0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]


def test_morton_order_matches_bit_interleaving():
    expected = sorted(range(64), key=lambda i: _morton(i // 8, i % 8))
    assert morton_order(8, 8).tolist() == expected


def test_serialization_appends_the_summary():
    f = np.random.default_rng(10).normal(size=(3, 4, 4))
    seq = z_order_serialize(f, mean_map(f))
    assert seq.tokens.shape == (32, 3)
    assert seq.parts == 2
    assert np.allclose(seq.part(1), f.mean(axis=(1, 2)))
    assert np.array_equal(z_order_deserialize(seq.part(0), seq), f)


def test_serialization_pads_odd_grids():
    f = np.random.default_rng(11).normal(size=(2, 3, 5))
    seq = z_order_serialize(f)
    assert seq.padded == (4, 8)
    assert seq.tokens.shape == (32, 2)
    assert np.array_equal(z_order_deserialize(seq.tokens, seq), f)


# --- state-space model ---


def test_zoh_hand_case():
    a_bar, b_bar = zoh_discretize(HALF)
    assert a_bar[0] == pytest.approx(0.5, abs=1e-15)
    assert b_bar[0] == pytest.approx(0.5, abs=1e-15)


def test_zoh_small_step_is_euler():
    a_bar, b_bar = zoh_discretize(SsmParams([-1.0], [1.0], [1.0], 0.0, 1e-8))
    assert a_bar[0] == pytest.approx(1.0 - 1e-8, rel=1e-15)
    assert b_bar[0] == pytest.approx(1e-8, rel=1e-7)


@pytest.mark.parametrize("a", [0.1, 0.0])
def test_unstable_state_matrix(a):
    with pytest.raises(UnstableParameter):
        SsmParams([a], [1.0], [1.0])


def test_scan_hand_case():
    assert np.allclose(ssm_scan(HALF, [1.0, 1.0, 1.0]), [0.5, 0.75, 0.875], rtol=0, atol=1e-15)
    assert not ssm_scan(HALF, np.zeros(5)).any()


def test_kernel_hand_case():
    assert np.allclose(mamba_kernel(HALF, 3), [0.5, 0.25, 0.125], rtol=0, atol=1e-15)
    p = SsmParams([-1.0, -2.0], [1.0, 2.0], [3.0, 4.0])
    a_bar, b_bar = zoh_discretize(p)
    assert mamba_kernel(p, 1)[0] == pytest.approx(3 * b_bar[0] + 4 * b_bar[1])


def test_scan_equals_kernel_convolution():
    rng = np.random.default_rng(12)
    for _ in range(20):
        p = SsmParams.random(rng, int(rng.integers(1, 9)))
        s = rng.normal(size=64)
        scan = ssm_scan(p, s)
        conv = causal_convolve(s, mamba_kernel(p, 64)) + p.D * s
        assert np.max(np.abs(scan - conv)) <= 1e-6 * np.max(np.abs(scan))


def test_scan_lanes_are_independent():
    rng = np.random.default_rng(13)
    p = SsmParams.random(rng, 3)
    s = rng.normal(size=(16, 3))
    lanes = ssm_scan(p, s)
    for j in range(3):
        assert np.allclose(lanes[:, j], ssm_scan(p, s[:, j]), rtol=0, atol=1e-14)


# --- scan block ---

BLOCK_SSM = SsmParams([-0.5, -1.2, -2.0], [0.3, -0.7, 1.1], [1.0, 0.4, -0.6], 0.2, 0.4)


def test_zero_difference_gives_zero_block_output():
    value, kq = mean_mamba_block(np.zeros((2, 4, 4)), BLOCK_SSM, MambaWeights.seeded(2))
    assert not value.data.any()
    assert not kq.any()


def test_block_matches_reference():
    x = np.random.default_rng(14).normal(size=(2, 4, 4))
    weights = MambaWeights.seeded(2, seed=3)
    value, kq = mean_mamba_block(x, BLOCK_SSM, weights)

    i_v = np.einsum("oc,chw->ohw", weights.w1, x)
    scanned = _scan_reference(i_v, BLOCK_SSM)
    normed = np.empty_like(scanned)
    for i in range(4):
        for j in range(4):
            tok = scanned[:, i, j]
            normed[:, i, j] = (tok - tok.mean()) / math.sqrt(tok.var() + 1e-12)
    assert np.max(np.abs(value.data - (normed + i_v))) < 1e-10

    keys = np.einsum("oc,chw->ohw", weights.w2, x).reshape(2, -1)
    queries = np.einsum("oc,chw->ohw", weights.w3, x).reshape(2, -1)
    i_kq = keys @ queries.T / math.sqrt(2)
    assert np.max(np.abs(kq - _scan_reference(i_kq[None], BLOCK_SSM)[0])) < 1e-10


def test_block_value_is_normalized_per_token():
    x = np.random.default_rng(15).normal(size=(4, 4, 4))
    weights = MambaWeights.seeded(4, seed=5)
    value, _ = mean_mamba_block(x, BLOCK_SSM, weights)
    tokens = (value.data - np.einsum("oc,chw->ohw", weights.w1, x)).reshape(4, -1).T
    assert np.allclose(tokens.mean(axis=1), 0.0, atol=1e-9)
    assert np.allclose(tokens.var(axis=1), 1.0, atol=1e-6)


@pytest.mark.parametrize("variant", ["mean", "max", "vanilla", "none"])
def test_block_variants(variant):
    x = np.random.default_rng(16).normal(size=(2, 3, 5))
    value, kq = mean_mamba_block(x, BLOCK_SSM, MambaWeights.seeded(2), variant)
    assert value.shape == (2, 3, 5)
    assert kq.shape == (2, 2)


def test_unscanned_block_passes_key_query_through():
    x = np.random.default_rng(17).normal(size=(2, 4, 4))
    weights = MambaWeights.seeded(2, seed=2)
    _, kq = mean_mamba_block(x, BLOCK_SSM, weights, "none")
    keys = np.einsum("oc,chw->ohw", weights.w2, x).reshape(2, -1)
    queries = np.einsum("oc,chw->ohw", weights.w3, x).reshape(2, -1)
    assert np.allclose(kq, keys @ queries.T / math.sqrt(2), rtol=0, atol=1e-12)


def test_unknown_variant():
    with pytest.raises(ValidationError):
        mean_mamba_block(np.ones((2, 2, 2)), BLOCK_SSM, MambaWeights.seeded(2), "bidirectional")


# --- gating ---


def _maps(seed, shape=(2, 4, 4)):
    return np.random.default_rng(seed).normal(size=(4, *shape))


def test_saturated_gate_keeps_the_image_shortcut():
    ft_r, ft_m, f_r, f_m = _maps(18)
    _, fused_r, fused_i, fused = apply_gate(np.ones((2, 4, 4)), ft_r, ft_m, f_r, f_m)
    assert np.array_equal(fused_i.data, f_m)
    assert np.array_equal(fused_r.data, ft_r + f_r)
    assert fused.shape == (4, 4, 4)


def test_closed_gate_keeps_the_radar_shortcut():
    ft_r, ft_m, f_r, f_m = _maps(19)
    _, fused_r, fused_i, _ = apply_gate(np.zeros((2, 4, 4)), ft_r, ft_m, f_r, f_m)
    assert np.array_equal(fused_r.data, f_r)
    assert np.array_equal(fused_i.data, ft_m + f_m)


def test_gate_values_are_checked():
    with pytest.raises(ValidationError):
        GateMap(np.full((1, 2, 2), 1.5))


def test_fusion_gate_is_clamped_and_complementary():
    rng = np.random.default_rng(20)
    gate = fusion_gate(rng.normal(size=(8, 8)), rng.normal(size=(8, 2, 2)) * 3, factor=2)
    assert gate.values.shape == (2, 4, 4)
    assert gate.values.min() >= 0 and gate.values.max() <= 1
    assert np.array_equal(gate.values + gate.complement(), np.ones((2, 4, 4)))


def test_interactive_fuse_shapes():
    rng = np.random.default_rng(21)
    ft_r, ft_m, f_r, f_m = _maps(22, (2, 4, 4))
    gate, fused_r, fused_i, fused = interactive_fuse(rng.normal(size=(8, 8)), rng.normal(size=(8, 2, 2)), ft_r, ft_m, f_r, f_m, 2)
    assert np.array_equal(fused.data, np.concatenate([fused_r.data, fused_i.data]))
    with pytest.raises(ShapeMismatch):
        fusion_gate(np.zeros((3, 3)), np.zeros((8, 2, 2)), 2)


# --- losses ---


def test_focal_loss_values():
    assert focal_loss(0.5) == 0.0625
    assert focal_loss(1.0) == 0.0
    assert focal_loss(0.5, alpha_t=1.0, sigma=0.0) == 1.0
    with pytest.raises(DomainError):
        focal_loss(0.0)


def test_smooth_l1_values():
    assert smooth_l1(3.0, 3.0) == 0.0
    assert smooth_l1(0.05, 0.0) == pytest.approx(0.0125, abs=1e-15)
    assert smooth_l1(0.0, 0.2) == pytest.approx(0.15, abs=1e-15)
    assert abs(smooth_l1(0.1 - 1e-9, 0.0) - smooth_l1(0.1 + 1e-9, 0.0)) <= 1e-8


def test_direction_cross_entropy_values():
    assert cross_entropy_dir([1, 0], [0.5, 0.5]) == 1.0
    assert cross_entropy_dir([0.25] * 4, [0.25] * 4) == 2.0
    assert cross_entropy_dir([0, 1], [0, 1]) == 0.0
    with pytest.raises(DomainError):
        cross_entropy_dir([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(DomainError):
        cross_entropy_dir([0.5, 0.6], [0.5, 0.5])


def test_total_loss():
    assert total_loss(0, 0, 0, 0) == 0.0
    assert total_loss(1, 1, 1, 1) == pytest.approx(4.2, abs=1e-12)
    parts = (0.3, 1.7, 0.25, 2.0)
    assert total_loss(*(2 * v for v in parts)) == pytest.approx(2 * total_loss(*parts), rel=1e-12)
    assert total_loss(1, 0, 0, 0, LossConfig(lambdas=(3.0, 1.0, 1.0, 1.0))) == 3.0
    with pytest.raises(ValidationError):
        total_loss(-1, 0, 0, 0)


def test_occupancy_loss_weights_by_occupancy():
    assert occupancy_loss([0.5], [1]) == pytest.approx(0.0625)
    assert occupancy_loss([0.5], [0]) == pytest.approx(0.1875)
    assert occupancy_loss([0.5, 0.5], [1, 0]) == pytest.approx(0.125)
    with pytest.raises(ShapeMismatch):
        occupancy_loss([0.5, 0.5], [1])


def _central(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


@pytest.mark.parametrize("p", [0.1, 0.35, 0.8])
def test_focal_gradient(p):
    assert focal_loss_grad(p) == pytest.approx(_central(focal_loss, p), rel=1e-4)


@pytest.mark.parametrize("d", [-0.5, -0.04, 0.07, 0.3])
def test_smooth_l1_gradient(d):
    assert smooth_l1_grad(d, 0.0) == pytest.approx(_central(lambda y: smooth_l1(y, 0.0), d), rel=1e-4)


def test_cross_entropy_gradient():
    t = np.array([0.1, 0.6, 0.3])
    q = np.array([0.2, 0.5, 0.3])
    grad = cross_entropy_dir_grad(t, q)
    for i in range(3):
        f = lambda v: float(-(t * np.log2(np.where(np.arange(3) == i, v, q))).sum())  # noqa: E731
        assert grad[i] == pytest.approx(_central(f, q[i]), rel=1e-4)


def test_silu():
    assert silu(0.0) == 0.0
    grid = np.linspace(0, 10, 1001)
    assert np.all(np.diff(silu(grid)) > 0)
