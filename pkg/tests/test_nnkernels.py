import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rscd.bench import central_difference, naive_conv2d, naive_deform_conv2d, naive_se, rel_error
from rscd.nnkernels import (ConvWeights, SEWeights, bilinear_sample, bilinear_sample_grad, conv2d,
                            da_block, default_groups, deform_conv2d, se_attention, se_gates)


def test_weight_validation():
    with pytest.raises(ValueError):
        ConvWeights(np.zeros((1, 1, 2, 2)))
    with pytest.raises(ValueError):
        ConvWeights(np.zeros((1, 1, 3, 3)), stride=0)
    with pytest.raises(ValueError):
        ConvWeights(np.zeros((2, 1, 3, 3)), bias=np.zeros(3))
    with pytest.raises(ValueError):
        SEWeights(np.zeros((2, 4)), np.zeros((2, 4)))


def test_identity_kernel(rng):
    x = rng.uniform(size=(5, 6, 3))
    w = ConvWeights(np.eye(3)[:, :, None, None])
    np.testing.assert_allclose(conv2d(x, w), x, atol=1e-12)


def test_box_sum():
    out = conv2d(np.ones((6, 6, 1)), ConvWeights(np.ones((1, 1, 3, 3))))
    np.testing.assert_allclose(out[1:-1, 1:-1], 9.0)
    assert out[0, 0, 0] == 4.0


def test_conv_matches_naive(rng):
    x = rng.uniform(-1, 1, (8, 8, 3))
    w = ConvWeights(rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4))
    assert np.max(np.abs(conv2d(x, w) - naive_conv2d(x, w.weight, w.bias))) < 1e-5


@pytest.mark.parametrize("stride,padding,k", [(2, 1, 3), (2, 0, 3), (3, 2, 5)])
def test_stride_arithmetic(stride, padding, k, rng):
    x = rng.uniform(size=(11, 9, 2))
    w = ConvWeights(rng.normal(size=(2, 2, k, k)), stride=stride, padding=padding)
    out = conv2d(x, w)
    assert out.shape[:2] == ((11 + 2 * padding - k) // stride + 1, (9 + 2 * padding - k) // stride + 1)
    np.testing.assert_allclose(out, naive_conv2d(x, w.weight, None, stride, padding), atol=1e-10)


def test_channel_mismatch():
    with pytest.raises(ValueError):
        conv2d(np.zeros((4, 4, 2)), ConvWeights(np.zeros((1, 3, 1, 1))))


@given(st.integers(0, 2**16), st.sampled_from([1, 2, 4, 8]), st.sampled_from([1, 3]))
def test_zero_offsets_reduce_to_conv(seed, groups, k):
    rng = np.random.default_rng(seed)
    c_in = groups * int(rng.integers(1, 3))
    w = ConvWeights(rng.normal(size=(2, c_in, k, k)), rng.normal(size=2))
    x = rng.uniform(-1, 1, (int(rng.integers(k, 8)), int(rng.integers(k, 8)), c_in))
    ho, wo = w.output_size(*x.shape[:2])
    out = deform_conv2d(x, w, np.zeros((ho, wo, groups, k * k, 2)))
    assert np.max(np.abs(out - conv2d(x, w))) < 1e-6


def test_unit_offset_shifts_left(rng):
    x = rng.uniform(size=(5, 7, 1))
    offs = np.zeros((5, 7, 1, 1, 2))
    offs[..., 0] = 1.0
    out = deform_conv2d(x, ConvWeights(np.ones((1, 1, 1, 1))), offs)
    np.testing.assert_allclose(out[:, :-1], x[:, 1:], atol=1e-12)
    assert np.all(out[:, -1] == 0)


def test_deform_matches_naive(rng):
    x = rng.uniform(-1, 1, (7, 6, 8))
    w = ConvWeights(rng.normal(size=(3, 8, 3, 3)), rng.normal(size=3))
    offs = rng.normal(0, 1.5, (7, 6, 8, 9, 2))
    out = deform_conv2d(x, w, offs)
    assert np.max(np.abs(out - naive_deform_conv2d(x, w.weight, offs, 8, w.bias))) < 1e-5


def test_deform_validation(rng):
    w = ConvWeights(np.zeros((1, 6, 3, 3)))
    x = np.zeros((4, 4, 6))
    with pytest.raises(ValueError, match="shape"):
        deform_conv2d(x, w, np.zeros((4, 4, 2, 8, 2)))
    with pytest.raises(ValueError, match="group"):
        deform_conv2d(x, w, np.zeros((4, 4, 4, 9, 2)))
    with pytest.raises(ValueError):
        deform_conv2d(x, w, np.full((4, 4, 2, 9, 2), np.nan))


def test_default_groups():
    assert default_groups(64) == 8
    assert default_groups(12) == 6
    assert default_groups(7) == 7
    assert default_groups(9) == 3


def test_three_scale_shapes(rng):
    # stride-2 encoders at three scales with deformable fusion at each
    x = rng.uniform(size=(32, 24, 8))
    dims = []
    for _ in range(3):
        w = ConvWeights(rng.normal(0, 0.1, (16, x.shape[2], 3, 3)), stride=2)
        feats = conv2d(x, w)
        assert feats.shape[:2] == w.output_size(*x.shape[:2])
        fuse = ConvWeights(rng.normal(0, 0.1, (8, 16, 3, 3)))
        offs = rng.normal(0, 0.5, feats.shape[:2] + (8, 9, 2))
        x = da_block(feats, SEWeights.random(16, 16, rng), fuse, offs)
        dims.append(x.shape)
    assert dims == [(16, 12, 8), (8, 6, 8), (4, 3, 8)]


def test_se_zero_weights_half_gate(rng):
    x = rng.uniform(size=(4, 4, 16))
    se = SEWeights(np.zeros((1, 16)), np.zeros((16, 1)))
    np.testing.assert_allclose(se_attention(x, se), 0.5 * x)


def test_se_zero_input(rng):
    se = SEWeights.random(32, 16, rng)
    assert not np.any(se_attention(np.zeros((3, 3, 32)), se))


@given(st.integers(0, 2**16))
def test_se_matches_naive_and_gates_bounded(seed):
    rng = np.random.default_rng(seed)
    se = SEWeights.random(32, 16, rng, scale=2.0)
    x = rng.uniform(-1, 1, (4, 5, 32))
    gates = se_gates(x, se)
    assert np.all((gates > 0) & (gates < 1))
    assert np.max(np.abs(se_attention(x, se) - naive_se(x, se.w1, se.w2, se.b1, se.b2))) < 1e-5


def test_se_symmetric_weights_equal_gates():
    x = np.full((3, 3, 16), 0.4)
    se = SEWeights(np.full((1, 16), 0.3), np.full((16, 1), -0.7), np.zeros(1), np.zeros(16))
    gates = se_gates(x, se)
    assert np.ptp(gates) == 0


def test_bilinear_sample_examples(rng):
    img = rng.uniform(size=(4, 5, 2))
    np.testing.assert_allclose(bilinear_sample(img, [[3, 2]]), img[2, 3][None])
    split = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert bilinear_sample(split, [[0.5, 0.5]])[0, 0] == pytest.approx(0.5)
    assert not np.any(bilinear_sample(img, [[-3.0, 1.0], [2.0, 9.0]]))


def test_bilinear_point_gradient(rng):
    img = rng.uniform(size=(10, 10, 1))
    pts = rng.integers(1, 8, (20, 2)) + rng.uniform(0.2, 0.8, (20, 2))
    _, gx, gy = bilinear_sample_grad(img, pts)
    for i, p in enumerate(pts):
        fd = central_difference(lambda q: float(bilinear_sample(img, q[None])[0, 0]), p, 1e-4)
        assert rel_error([gx[i, 0], gy[i, 0]], fd) < 1e-4
