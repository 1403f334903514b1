import numpy as np
import pytest

from rscd.flowsolve import solve_flow
from rscd.formation import sample_gs, simulate_rs
from rscd.imagecore import ShutterParams
from rscd.metrics import interior, psnr
from rscd.rectify import (GlobalMotion, RectifyResult, fuse_aligned, neighbour_field, rectify_global,
                          rectify_with_flow, row_offsets, warp_neighbour)
from rscd.scenes import SyntheticScene

V = (250.0, 75.0)
BORDER = 7


@pytest.fixture(scope="module")
def pan_case():
    scene = SyntheticScene("pan", velocity=V, n_frames=64, seed=3)
    seq = scene.render()
    sh = ShutterParams(t_r=16 * scene.dt / 64)
    t = 32 * scene.dt
    return seq, sh, t, 8 * scene.dt


def score(img, ref):
    return psnr(interior(img, BORDER), interior(ref, BORDER))


def test_row_offsets_exact():
    sh = ShutterParams(t_r=1e-4)
    off = row_offsets(64, sh)
    np.testing.assert_array_equal(off, sh.t_m(64) - np.arange(64) * sh.t_r)
    assert off[32] == 0.0
    assert RectifyResult(np.zeros((64, 1, 1)), np.ones((64, 1)), off).offsets_json()["row_offsets_s"][32] == 0.0


def test_global_identity_cases(rng):
    img = rng.uniform(0, 1, (16, 12, 3)).astype(np.float32)
    res = rectify_global(img, GlobalMotion(0, 0), ShutterParams(t_r=1e-3))
    assert np.array_equal(res.image, img) and np.all(res.mask == 1)
    res = rectify_global(img, GlobalMotion(500, -100), ShutterParams(t_r=0.0))
    assert np.array_equal(res.image, img)
    with pytest.raises(ValueError):
        GlobalMotion(np.inf, 0)


def test_middle_row_is_fixed(rng):
    img = rng.uniform(0, 1, (16, 20, 1)).astype(np.float32)
    res = rectify_global(img, GlobalMotion(300, 0), ShutterParams(t_r=1e-3))
    np.testing.assert_allclose(res.image[8, 5:-5], img[8, 5:-5], atol=1e-6)


def test_global_round_trip(pan_case):
    seq, sh, t, _ = pan_case
    rs = simulate_rs(seq, t, sh)
    gs = sample_gs(seq, t)
    res = rectify_global(rs, GlobalMotion(*V), sh)
    assert score(res.image, gs) > 40
    assert score(res.image, gs) > score(rs, gs) + 15
    assert np.all(interior(res.mask, BORDER) == 1)


def test_global_degrades_monotonically_with_velocity_error(pan_case):
    seq, sh, t, _ = pan_case
    rs = simulate_rs(seq, t, sh)
    gs = sample_gs(seq, t)
    scores = [score(rectify_global(rs, GlobalMotion(V[0] * s, V[1] * s), sh).image, gs)
              for s in (1.0, 0.9, 0.7, 0.4, 0.0)]
    assert all(b < a for a, b in zip(scores, scores[1:]))


def test_with_flow_identity_cases(rng):
    img = rng.uniform(0, 1, (8, 8, 1)).astype(np.float32)
    res = rectify_with_flow(img, np.zeros((8, 8, 2)), 0.01, ShutterParams(t_r=1e-3))
    assert np.array_equal(res.image, img)
    res = rectify_with_flow(img, np.ones((8, 8, 2)), 0.01, ShutterParams())
    assert np.array_equal(res.image, img)
    with pytest.raises(ValueError):
        rectify_with_flow(img, np.zeros((8, 8, 2)), 0.0, ShutterParams())
    with pytest.raises(ValueError):
        rectify_with_flow(img, np.zeros((8, 9, 2)), 0.01, ShutterParams())


def test_with_flow_matches_global_for_exact_flow(pan_case):
    seq, sh, t, span = pan_case
    rs = simulate_rs(seq, t, sh)
    flow = np.broadcast_to(np.array(V) * span, rs.shape[:2] + (2,))
    a = rectify_with_flow(rs, flow, span, sh).image
    b = rectify_global(rs, GlobalMotion(*V), sh).image
    assert np.max(np.abs(a - b)) < 1e-5


def test_with_estimated_flow_close_to_oracle(pan_case):
    seq, sh, t, span = pan_case
    rs = simulate_rs(seq, t, sh)
    gs = sample_gs(seq, t)
    flow, _ = solve_flow(rs, simulate_rs(seq, t + span, sh))
    oracle = score(rectify_global(rs, GlobalMotion(*V), sh).image, gs)
    assert score(rectify_with_flow(rs, flow, span, sh).image, gs) >= oracle - 2


def test_neighbour_warp_aligns_to_mid_time(pan_case):
    seq, sh, t, span = pan_case
    gs = sample_gs(seq, t)
    flow = np.broadcast_to(np.array(V) * span, (64, 64, 2))
    for direction in (-1, 1):
        nb = simulate_rs(seq, t + direction * span, sh)
        out, mask = warp_neighbour(nb, direction * flow, span, sh, direction)
        assert score(out, gs) > 40
    with pytest.raises(ValueError):
        neighbour_field(flow, span, sh, 0)


def test_fuse_primary_only(rng):
    img = rng.uniform(0, 1, (6, 6, 1)).astype(np.float32)
    prim = RectifyResult(img, np.ones((6, 6), np.float32), np.zeros(6))
    assert np.array_equal(fuse_aligned(prim, None, None), img)
    # neighbours that carry no weight leave the primary untouched
    other = (rng.uniform(0, 1, (6, 6, 1)), np.zeros((6, 6)))
    np.testing.assert_allclose(fuse_aligned(prim, other, other), img, atol=1e-7)


def test_fuse_single_source_hole():
    prim = RectifyResult(np.zeros((4, 4, 1), np.float32), np.ones((4, 4), np.float32), np.zeros(4))
    prim.mask[1, 2] = 0
    nxt = np.full((4, 4, 1), 0.7, np.float32)
    nmask = np.zeros((4, 4))
    nmask[1, 2] = 1
    out = fuse_aligned(prim, None, (nxt, nmask))
    assert out[1, 2, 0] == pytest.approx(0.7)
    assert out[0, 0, 0] == 0.0


def test_fuse_mean_of_three():
    shape = (3, 3, 1)
    prim = RectifyResult(np.full(shape, 0.3, np.float32), np.ones(shape[:2]), np.zeros(3))
    out = fuse_aligned(prim, (np.full(shape, 0.6), np.ones(shape[:2])), (np.full(shape, 0.9), np.ones(shape[:2])))
    np.testing.assert_allclose(out, 0.6, atol=1e-7)


def test_fuse_fills_holes_from_nearest_valid():
    img = np.arange(25, dtype=np.float32).reshape(5, 5, 1)
    mask = np.zeros((5, 5))
    mask[2, 2] = 1
    mask[0, 4] = 1
    out = fuse_aligned(RectifyResult(img, mask, np.zeros(5)), None, None)
    assert out[2, 0, 0] == img[2, 2, 0]  # distance 2 vs 6
    assert out[0, 3, 0] == img[0, 4, 0]


def test_fuse_dimension_mismatch():
    prim = RectifyResult(np.zeros((4, 4, 1)), np.ones((4, 4)), np.zeros(4))
    with pytest.raises(ValueError):
        fuse_aligned(prim, (np.zeros((4, 5, 1)), np.ones((4, 5))), None)


def test_threads_deterministic(pan_case):
    seq, sh, t, _ = pan_case
    rs = simulate_rs(seq, t, sh)
    a = rectify_global(rs, GlobalMotion(*V), sh, threads=1)
    b = rectify_global(rs, GlobalMotion(*V), sh, threads=4)
    assert a.image.tobytes() == b.image.tobytes() and a.mask.tobytes() == b.mask.tobytes()
