import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rscd.formation import (SynthesisMode, TimeRangeError, oracle_rscd, sample_gs, simulate_gs_blur,
                            simulate_rs, simulate_rscd, valid_center_range)
from rscd.imagecore import FrameSequence, ShutterParams
from rscd.metrics import row_discontinuity
from rscd.scenes import SyntheticScene

ROWCOPY = SynthesisMode("rowcopy")


def two_frame_seq(h=4, w=5):
    return FrameSequence(np.stack([np.zeros((h, w)), np.ones((h, w))]), dt=1.0)


def pan(seed=0, **kw):
    kw.setdefault("velocity", (300.0, 80.0))
    return SyntheticScene("pan", seed=seed, **kw)


def test_mode_validation():
    with pytest.raises(ValueError):
        SynthesisMode("nearest")
    with pytest.raises(ValueError):
        SynthesisMode("interpolate", 1)


@pytest.mark.parametrize("mode", [SynthesisMode(), ROWCOPY])
def test_sample_gs_knots(mode, rng):
    seq = FrameSequence(rng.uniform(0, 1, (4, 3, 5, 2)), dt=0.25, t0=1.0)
    for k in range(4):
        np.testing.assert_array_equal(sample_gs(seq, 1.0 + 0.25 * k, mode), seq.frames[k])


def test_sample_gs_midpoint_and_tie():
    seq = two_frame_seq()
    assert np.all(sample_gs(seq, 0.5) == 0.5)
    assert np.all(sample_gs(seq, 0.5, ROWCOPY) == 0.0)
    assert np.all(sample_gs(seq, 0.51, ROWCOPY) == 1.0)


def test_sample_gs_out_of_range():
    seq = two_frame_seq()
    with pytest.raises(TimeRangeError):
        sample_gs(seq, -0.01)
    with pytest.raises(TimeRangeError):
        sample_gs(seq, 1.01)


def test_rs_zero_readout_is_gs(rng):
    seq = FrameSequence(rng.uniform(0, 1, (5, 6, 7)), dt=0.1)
    np.testing.assert_array_equal(simulate_rs(seq, 0.23, ShutterParams()), sample_gs(seq, 0.23))


@pytest.mark.parametrize("mode", [SynthesisMode(), ROWCOPY])
def test_static_sequence_is_time_invariant(mode, rng):
    frame = rng.uniform(0, 1, (16, 9, 3)).astype(np.float32)
    seq = FrameSequence(np.stack([frame] * 6), dt=0.01)
    sh = ShutterParams(t_r=1e-3, t_e=0.01)
    t = 0.025
    for fn in (simulate_rs, simulate_gs_blur, simulate_rscd):
        np.testing.assert_array_equal(fn(seq, t, sh, mode), frame)
    np.testing.assert_array_equal(oracle_rscd(seq, t, sh, 300), frame)


def test_rs_edge_position_follows_row_time():
    # soft edge moving right: I = clip((x - x0 - v*tau) / L, 0, 1); inside the
    # ramp the signal is linear in time, so interpolation is exact
    rows, width, fps, v, x0, ramp = 480, 96, 1000.0, 500.0, 20.0, 30.0
    dt = 1 / fps
    xs = np.arange(width, dtype=np.float64)
    frames = [np.tile(np.clip((xs - x0 - v * k * dt) / ramp, 0, 1), (rows, 1)) for k in range(40)]
    seq = FrameSequence(np.asarray(frames), dt)
    sh = ShutterParams(t_r=32e-3 / rows)
    t = 20e-3
    out = simulate_rs(seq, t, sh)[..., 0].astype(np.float64)
    tau = sh.row_times(t, rows)
    expected = x0 + v * tau + ramp / 2  # where the profile crosses 0.5
    found = np.array([np.interp(0.5, row, xs) for row in out])
    np.testing.assert_allclose(found, expected, atol=1e-3)
    slope = np.polyfit(np.arange(rows), found, 1)[0]
    assert slope == pytest.approx(v * sh.t_r, rel=1e-4)


def test_rs_row_matches_sample_gs(rng):
    seq = FrameSequence(rng.uniform(0, 1, (10, 8, 5)), dt=0.1)
    sh = ShutterParams(t_r=0.05)
    t = 0.5
    out = simulate_rs(seq, t, sh)
    for i, tau in enumerate(sh.row_times(t, 8)):
        np.testing.assert_array_equal(out[i], sample_gs(seq, tau)[i])


def test_blur_zero_exposure_is_gs(rng):
    seq = FrameSequence(rng.uniform(0, 1, (4, 6, 6)), dt=1.0)
    np.testing.assert_array_equal(simulate_gs_blur(seq, 1.3, ShutterParams()), sample_gs(seq, 1.3))


def test_blur_linear_ramp_closed_form():
    seq = two_frame_seq()
    out = simulate_gs_blur(seq, 0.5, ShutterParams(t_e=1.0), SynthesisMode("interpolate", 16))
    assert np.max(np.abs(out - 0.5)) < 1e-6


def test_blur_uses_endpoint_inclusive_nodes():
    # frames 0, 1, 0: with S=3 nodes at 0, 1, 2 the mean is exactly 1/3
    seq = FrameSequence(np.array([np.zeros((2, 2)), np.ones((2, 2)), np.zeros((2, 2))]), dt=1.0)
    out = simulate_gs_blur(seq, 1.0, ShutterParams(t_e=2.0), SynthesisMode("interpolate", 3))
    np.testing.assert_allclose(out, 1 / 3, rtol=1e-7)


def test_reduction_chain(rng):
    seq = pan(seed=1, n_frames=24).render()
    dt = 1e-3
    sh = ShutterParams(t_r=8 * dt / 64, t_e=3 * dt)
    t = 12 * dt
    np.testing.assert_array_equal(simulate_rscd(seq, t, ShutterParams(t_r=sh.t_r)), simulate_rs(seq, t, sh))
    diff = simulate_rscd(seq, t, ShutterParams(t_e=sh.t_e)) - simulate_gs_blur(seq, t, sh)
    assert np.max(np.abs(diff)) < 1e-6
    for fn in (simulate_rs, simulate_gs_blur, simulate_rscd):
        np.testing.assert_array_equal(fn(seq, t, ShutterParams()), sample_gs(seq, t))


def test_rscd_matches_oracle_with_matching_nodes():
    scene = pan(seed=2, n_frames=8)
    seq = scene.render()
    sh = ShutterParams(t_r=4 * scene.dt / 64, t_e=scene.dt)
    t = 3.5 * scene.dt
    fast = simulate_rscd(seq, t, sh, SynthesisMode("interpolate", 16))
    assert np.max(np.abs(fast - oracle_rscd(seq, t, sh, 16))) < 1e-6


@pytest.mark.parametrize("seed", [0, 1])
def test_rscd_dense_oracle_on_linear_signal(seed):
    scene = SyntheticScene("ramp", n_frames=8, seed=seed)
    seq = scene.render()
    sh = ShutterParams(t_r=4 * scene.dt / 64, t_e=scene.dt)
    t = 3.5 * scene.dt
    fast = simulate_rscd(seq, t, sh, SynthesisMode("interpolate", 64))
    assert np.max(np.abs(fast - oracle_rscd(seq, t, sh, 1024))) < 1e-4


def test_oracle_degenerate_shutter(rng):
    seq = FrameSequence(rng.uniform(0, 1, (3, 5, 4)), dt=1.0)
    np.testing.assert_allclose(oracle_rscd(seq, 0.7, ShutterParams()), sample_gs(seq, 0.7), atol=1e-7)


def test_range_error_names_row():
    seq = FrameSequence(np.zeros((3, 10, 4)), dt=1.0)
    sh = ShutterParams(t_r=0.3)  # rows span 3 time units, sequence only 2
    with pytest.raises(TimeRangeError) as info:
        simulate_rs(seq, 1.0, sh)
    assert info.value.row is not None
    assert f"row {info.value.row}" in str(info.value)
    with pytest.raises(TimeRangeError) as info:
        oracle_rscd(seq, 1.0, sh)
    assert info.value.row in (0, 9)


def test_valid_center_range_is_tight():
    seq = pan(n_frames=20).render()
    sh = ShutterParams(t_r=5e-3 / 64, t_e=2e-3)
    lo, hi = valid_center_range(seq, sh)
    simulate_rscd(seq, lo, sh)
    simulate_rscd(seq, hi, sh)
    with pytest.raises(TimeRangeError):
        simulate_rscd(seq, lo - 1e-5, sh)
    with pytest.raises(TimeRangeError):
        simulate_rscd(seq, hi + 1e-5, sh)


@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 2**16))
def test_linearity(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    f1 = rng.uniform(0, 1, (4, 8, 3))
    f2 = rng.uniform(0, 1, (4, 8, 3))
    sh = ShutterParams(t_r=0.2, t_e=0.5)
    t = 1.5
    out1 = simulate_rscd(FrameSequence(f1, 1.0), t, sh).astype(np.float64)
    out2 = simulate_rscd(FrameSequence(f2, 1.0), t, sh).astype(np.float64)
    mix = simulate_rscd(FrameSequence((alpha * f1 + beta * f2).astype(np.float32), 1.0), t, sh)
    assert np.max(np.abs(mix - (alpha * out1 + beta * out2))) < 1e-5 * max(1, abs(alpha) + abs(beta))


def test_monotone_convergence_in_samples():
    scene = pan(seed=4, n_frames=20)
    seq = scene.render()
    sh = ShutterParams(t_r=4 * scene.dt / 64, t_e=5 * scene.dt)
    t = 10 * scene.dt
    outs = [simulate_rscd(seq, t, sh, SynthesisMode("interpolate", s)).astype(np.float64)
            for s in (4, 8, 16, 32, 64)]
    changes = [np.max(np.abs(b - a)) for a, b in zip(outs, outs[1:])]
    assert all(later < earlier for earlier, later in zip(changes, changes[1:]))


def test_rowcopy_stripes_more_than_interpolate():
    scene = SyntheticScene("pan", velocity=(20.0, 0.0), n_frames=72, seed=5, flicker=0.2)
    seq = scene.render()
    sh = ShutterParams(t_r=scene.dt)
    t = 34.5 * scene.dt
    copy = row_discontinuity(simulate_rs(seq, t, sh, ROWCOPY))
    interp = row_discontinuity(simulate_rs(seq, t, sh))
    assert copy > interp
    assert copy >= 2 * interp


@pytest.mark.parametrize("mode", [SynthesisMode(), ROWCOPY])
def test_threads_do_not_change_output(mode):
    seq = pan(seed=6, n_frames=20, channels=3).render()
    sh = ShutterParams(t_r=6e-3 / 64, t_e=2e-3)
    one = simulate_rscd(seq, 10e-3, sh, mode, threads=1)
    four = simulate_rscd(seq, 10e-3, sh, mode, threads=4)
    assert one.tobytes() == four.tobytes()
