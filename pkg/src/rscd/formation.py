"""Rolling-shutter, exposure-blur and joint RS+blur image formation.

The continuous global-shutter signal is reconstructed from a
:class:`~rscd.imagecore.FrameSequence` by piecewise-linear interpolation in
time (``interpolate``) or by picking the nearest frame (``rowcopy``, the
row-copying scheme that produces horizontal striping when exposure varies
between source frames).

Row ``i`` of a frame centred at time ``t`` is exposed around
``t - t_m + i * t_r`` with ``t_m = (M / 2) * t_r``.  Exposure integrals are
replaced by the mean of ``S`` uniformly spaced samples spanning the closed
window, both ends included.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numba
import numpy as np

from rscd._parallel import map_row_blocks
from rscd.imagecore import FrameSequence, ShutterParams

# Relative slack (in frame intervals) when testing a time against the
# sequence range; absorbs rounding in t - t_m + i * t_r.
_TIME_SLACK = 1e-9


class TimeRangeError(ValueError):
    """A requested sample time falls outside the sequence's time range."""

    def __init__(self, message: str, row: int | None = None, time: float | None = None):
        super().__init__(message)
        self.row = row
        self.time = time


@dataclass(frozen=True)
class SynthesisMode:
    mode: Literal["interpolate", "rowcopy"] = "interpolate"
    samples_per_window: int = 16

    def __post_init__(self):
        if self.mode not in ("interpolate", "rowcopy"):
            raise ValueError(f"unknown synthesis mode {self.mode!r}")
        if self.samples_per_window < 2:
            raise ValueError("samples_per_window must be >= 2")


DEFAULT_MODE = SynthesisMode()


def _frame_position(seq: FrameSequence, tau: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """Fractional frame index of each time, validated against the range."""
    pos = (np.asarray(tau, dtype=np.float64) - seq.t0) / seq.dt
    last = len(seq) - 1
    bad = (pos < -_TIME_SLACK) | (pos > last + _TIME_SLACK)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        where = tuple(int(i) for i in idx)
        row = int(rows[where]) if rows is not None else None
        t_bad = float(np.asarray(tau)[where])
        msg = (f"time {t_bad:.9g}s outside sequence range "
               f"[{seq.t0:.9g}, {seq.t_end:.9g}]s")
        if row is not None:
            msg = f"row {row}: " + msg
        raise TimeRangeError(msg, row=row, time=t_bad)
    return np.clip(pos, 0.0, last)


def _bracket(pos: np.ndarray, n_frames: int, mode: str):
    """Return (k0, k1, a) such that the sample is F[k0] + a * (F[k1] - F[k0])."""
    if mode == "rowcopy":
        # nearest frame, ties toward the earlier one
        k = np.ceil(pos - 0.5).astype(np.int64)
        return k, k, np.zeros_like(pos)
    k0 = np.minimum(np.floor(pos).astype(np.int64), n_frames - 2)
    return k0, k0 + 1, pos - k0


def sample_gs(seq: FrameSequence, tau: float, mode: SynthesisMode = DEFAULT_MODE) -> np.ndarray:
    """Evaluate the global-shutter signal at time ``tau``."""
    pos = _frame_position(seq, np.array([tau]))
    k0, k1, a = _bracket(pos, len(seq), mode.mode)
    f0 = seq.frames[k0[0]].astype(np.float64)
    f1 = seq.frames[k1[0]].astype(np.float64)
    return (f0 + a[0] * (f1 - f0)).astype(np.float32)


def _window_offsets(t_e: float, samples: int) -> np.ndarray:
    if t_e == 0:
        return np.zeros(1)
    return t_e * (np.linspace(0.0, 1.0, samples) - 0.5)


def _render_rows(seq: FrameSequence, row_times: np.ndarray, t_e: float, mode: SynthesisMode,
                 threads: int | None = None) -> np.ndarray:
    """Average each row over its exposure window centred at ``row_times[i]``."""
    n_rows = seq.shape[0]
    offsets = _window_offsets(t_e, mode.samples_per_window)
    rows = np.arange(n_rows)
    tau = row_times[:, None] + offsets[None, :]
    pos = _frame_position(seq, tau, rows=np.broadcast_to(rows[:, None], tau.shape))
    k0, k1, a = _bracket(pos, len(seq), mode.mode)
    frames = seq.frames

    def block(lo, hi):
        out = np.empty((hi - lo,) + seq.shape[1:], dtype=np.float32)
        for i in range(lo, hi):
            f0 = frames[k0[i], i].astype(np.float64)
            f1 = frames[k1[i], i].astype(np.float64)
            vals = f0 + a[i][:, None, None] * (f1 - f0)
            out[i - lo] = np.mean(vals, axis=0) if vals.shape[0] > 1 else vals[0]
        return out

    return np.concatenate(map_row_blocks(block, n_rows, threads), axis=0)


def simulate_rscd(seq: FrameSequence, t: float, shutter: ShutterParams,
                  mode: SynthesisMode = DEFAULT_MODE, threads: int | None = None) -> np.ndarray:
    """Rolling-shutter frame with per-row exposure blur, centred at ``t``."""
    row_times = shutter.row_times(t, seq.shape[0])
    return _render_rows(seq, row_times, shutter.t_e, mode, threads)


def simulate_rs(seq: FrameSequence, t: float, shutter: ShutterParams,
                mode: SynthesisMode = DEFAULT_MODE, threads: int | None = None) -> np.ndarray:
    """Rolling-shutter frame without blur; ``shutter.t_e`` is ignored."""
    return simulate_rscd(seq, t, ShutterParams(t_r=shutter.t_r, t_e=0.0), mode, threads)


def simulate_gs_blur(seq: FrameSequence, t: float, shutter: ShutterParams,
                     mode: SynthesisMode = DEFAULT_MODE, threads: int | None = None) -> np.ndarray:
    """Global-shutter frame averaged over ``[t - t_e/2, t + t_e/2]``."""
    return simulate_rscd(seq, t, ShutterParams(t_r=0.0, t_e=shutter.t_e), mode, threads)


def valid_center_range(seq: FrameSequence, shutter: ShutterParams) -> tuple[float, float]:
    """Closed interval of centre times whose every row window fits the sequence."""
    rows = seq.shape[0]
    lo_off = -shutter.t_m(rows) - shutter.t_e / 2
    hi_off = -shutter.t_m(rows) + (rows - 1) * shutter.t_r + shutter.t_e / 2
    return seq.t0 - lo_off, seq.t_end - hi_off


# -- brute-force oracle ----------------------------------------------------

@numba.njit(cache=True)
def _oracle_kernel(frames, t0, dt, t, t_m, t_r, t_e, n_samples):
    n, h, w, c = frames.shape
    out = np.empty((h, w, c), dtype=np.float64)
    for i in range(h):
        centre = t - t_m + i * t_r
        for j in range(w):
            for ch in range(c):
                acc = 0.0
                for s in range(n_samples):
                    if n_samples == 1:
                        tau = centre
                    else:
                        tau = centre - 0.5 * t_e + t_e * s / (n_samples - 1)
                    x = (tau - t0) / dt
                    if x < 0.0:
                        x = 0.0
                    if x > n - 1:
                        x = n - 1.0
                    lo = int(np.floor(x))
                    if lo > n - 2:
                        lo = n - 2
                    frac = x - lo
                    acc += (1.0 - frac) * frames[lo, i, j, ch] + frac * frames[lo + 1, i, j, ch]
                out[i, j, ch] = acc / n_samples
    return out


def oracle_rscd(seq: FrameSequence, t: float, shutter: ShutterParams,
                samples: int = 1024) -> np.ndarray:
    """Brute-force per-pixel evaluation of the joint RS+blur model.

    Independent of :func:`simulate_rscd`: a scalar loop over every pixel and
    every one of ``samples`` window nodes (endpoints included), with its own
    linear interpolation.  Cost is O(H * W * C * samples); meant for tests.
    Always uses the ``interpolate`` reconstruction.
    """
    h = seq.shape[0]
    t_m = 0.5 * h * shutter.t_r
    first = t - t_m - shutter.t_e / 2
    last = t - t_m + (h - 1) * shutter.t_r + shutter.t_e / 2
    tol = _TIME_SLACK * seq.dt
    for row, tau in ((0, first), (h - 1, last)):
        if tau < seq.t0 - tol or tau > seq.t_end + tol:
            raise TimeRangeError(f"row {row}: window time {tau:.9g}s outside sequence range",
                                 row=row, time=tau)
    n = 1 if shutter.t_e == 0 else samples
    frames = np.ascontiguousarray(seq.frames, dtype=np.float64)
    out = _oracle_kernel(frames, seq.t0, seq.dt, t, t_m, shutter.t_r, shutter.t_e, n)
    return out.astype(np.float32)
