"""Rolling-shutter rectification by inverting the row timing model.

Row ``i`` of a frame centred at ``t`` was exposed at
``tau_i = t - t_m + i * t_r``.  Moving every row's content forward by the
scene motion accumulated over ``t - tau_i = t_m - i * t_r`` re-times the
whole frame to ``t``; the middle row ``i = M / 2`` stays in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from rscd.imagecore import ShutterParams, as_frame
from rscd.warp import as_field, backward_warp, forward_warp


@dataclass(frozen=True)
class GlobalMotion:
    """Constant image-plane velocity ``(vx, vy)`` in pixels per second."""

    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.vx) and np.isfinite(self.vy)):
            raise ValueError("velocity components must be finite")


@dataclass
class RectifyResult:
    image: np.ndarray
    mask: np.ndarray
    row_offsets: np.ndarray  # seconds, t_m - i * t_r

    def offsets_json(self) -> dict:
        return {"row_offsets_s": [float(x) for x in self.row_offsets]}


def row_offsets(rows: int, shutter: ShutterParams) -> np.ndarray:
    return shutter.t_m(rows) - np.arange(rows, dtype=np.float64) * shutter.t_r


def _identity_result(img, offsets):
    return RectifyResult(img.copy(), np.ones(img.shape[:2], np.float32), offsets)


def rectify_global(rs, motion: GlobalMotion, shutter: ShutterParams,
                   threads: int | None = None) -> RectifyResult:
    img = as_frame(rs, "rs")
    offsets = row_offsets(img.shape[0], shutter)
    if shutter.t_r == 0 or (motion.vx == 0 and motion.vy == 0):
        return _identity_result(img, offsets)
    field = np.empty(img.shape[:2] + (2,), dtype=np.float64)
    field[..., 0] = (motion.vx * offsets)[:, None]
    field[..., 1] = (motion.vy * offsets)[:, None]
    out, mask = forward_warp(img, field, threads=threads)
    return RectifyResult(out.astype(np.float32), mask, offsets)


def rectify_with_flow(rs, flow_next, dt: float, shutter: ShutterParams,
                      threads: int | None = None) -> RectifyResult:
    """Re-time ``rs`` using the forward flow to the frame ``dt`` seconds later.

    Pixel ``p`` in row ``i`` is displaced by ``((t_m - i*t_r) / dt) * flow(p)``,
    i.e. the inter-frame motion scaled to that row's time offset.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    img = as_frame(rs, "rs")
    flow = as_field(flow_next, img.shape).astype(np.float64)
    offsets = row_offsets(img.shape[0], shutter)
    if shutter.t_r == 0 or not np.any(flow):
        return _identity_result(img, offsets)
    field = flow * (offsets / dt)[:, None, None]
    out, mask = forward_warp(img, field, threads=threads)
    return RectifyResult(out.astype(np.float32), mask, offsets)


def neighbour_field(flow, dt: float, shutter: ShutterParams, direction: int) -> np.ndarray:
    """Gather field that pulls a neighbouring RS frame onto time ``t``.

    ``flow`` is the forward flow from the current frame to the neighbour
    (``direction=-1`` for the previous frame, ``+1`` for the next).  Row
    ``y`` of the neighbour was exposed ``dt - direction * (t_m - y*t_r)``
    seconds away from ``t``, so the flow is scaled by that fraction of ``dt``.
    """
    if direction not in (-1, 1):
        raise ValueError("direction must be -1 or +1")
    flow = as_field(flow).astype(np.float64)
    offsets = row_offsets(flow.shape[0], shutter)
    scale = 1.0 - direction * offsets / dt
    return flow * scale[:, None, None]


def warp_neighbour(frame, flow, dt: float, shutter: ShutterParams, direction: int):
    img = as_frame(frame, "neighbour")
    out, mask = backward_warp(img, neighbour_field(flow, dt, shutter, direction), oob="zero")
    return out.astype(np.float32), mask


def fuse_aligned(primary: RectifyResult, warped_prev, warped_next) -> np.ndarray:
    """Mask-weighted average of the three aligned sources.

    Pixels no source covers take the value of the nearest covered pixel in
    4-neighbourhood (city-block) distance.
    """
    sources = [(as_frame(primary.image, "primary"), np.asarray(primary.mask, np.float64))]
    for name, pair in (("prev", warped_prev), ("next", warped_next)):
        if pair is None:
            continue
        img, mask = pair
        sources.append((as_frame(img, name), np.asarray(mask, np.float64)))
    shape = sources[0][0].shape
    for img, mask in sources:
        if img.shape != shape or mask.shape != shape[:2]:
            raise ValueError("all fused sources must share dimensions")

    num = np.zeros(shape)
    den = np.zeros(shape[:2])
    for img, mask in sources:
        num += img.astype(np.float64) * mask[..., None]
        den += mask
    valid = den > 0
    out = np.zeros(shape)
    np.divide(num, den[..., None], out=out, where=valid[..., None])
    if not valid.any():
        return out.astype(np.float32)
    if not valid.all():
        _, (iy, ix) = ndimage.distance_transform_cdt(~valid, metric="taxicab", return_indices=True)
        out = out[iy, ix]
    return out.astype(np.float32)
