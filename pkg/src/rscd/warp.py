"""Displacement fields, gather/splat warping with analytic adjoints, and
image pyramids.

A displacement field is an ``(H, W, 2)`` array holding ``(u, v)`` in pixels
(``u`` along columns/x, ``v`` along rows/y).  Numeric kernels here keep
float64 inputs in float64 so that finite-difference checks are meaningful;
everything else comes back as float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from rscd import sampling
from rscd._parallel import map_row_blocks

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
DEFAULT_W_MIN = 1e-4


def _as_array(a, name):
    arr = np.asarray(a)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be (H, W[, C]), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr.astype(sampling._float_dtype(arr), copy=False)


def as_field(field, shape=None) -> np.ndarray:
    arr = np.asarray(field)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"displacement field must be (H, W, 2), got {arr.shape}")
    if shape is not None and arr.shape[:2] != tuple(shape[:2]):
        raise ValueError(f"field dims {arr.shape[:2]} do not match frame dims {tuple(shape[:2])}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("displacement field contains NaN or Inf")
    return arr.astype(sampling._float_dtype(arr), copy=False)


def zero_field(h: int, w: int) -> np.ndarray:
    return np.zeros((h, w, 2), dtype=np.float32)


def _grid(h, w):
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def _inside(x, y, h, w, tol=1e-9):
    return (x >= -tol) & (x <= w - 1 + tol) & (y >= -tol) & (y <= h - 1 + tol)


def backward_warp(src, field, oob: str = "zero"):
    """Gather warp: ``out(q) = src(q + field(q))`` with bilinear sampling.

    Returns ``(out, mask)``; with ``oob="zero"`` the mask is 0 wherever the
    sample point leaves the image, with ``oob="clamp"`` it is all ones.
    """
    img = _as_array(src, "src")
    d = as_field(field, img.shape)
    dtype = np.result_type(img.dtype, d.dtype)
    h, w = img.shape[:2]
    xs, ys = _grid(h, w)
    x = xs + d[..., 0]
    y = ys + d[..., 1]
    out = sampling.sample(img.astype(np.float64), x, y, oob)
    if oob == "zero":
        mask = _inside(x, y, h, w).astype(np.float32)
    else:
        mask = np.ones((h, w), dtype=np.float32)
    return out.astype(dtype), mask


def backward_warp_grad(src, field, upstream, oob: str = "zero"):
    """Adjoints of :func:`backward_warp`.

    Given ``upstream = dL/d out``, returns ``(dL/d src, dL/d field)``.
    """
    img = _as_array(src, "src")
    d = as_field(field, img.shape)
    g = _as_array(upstream, "upstream")
    if g.shape != img.shape:
        raise ValueError(f"upstream shape {g.shape} does not match src {img.shape}")
    dtype = np.result_type(img.dtype, d.dtype, g.dtype)
    h, w = img.shape[:2]
    xs, ys = _grid(h, w)
    x = xs + d[..., 0]
    y = ys + d[..., 1]
    _, d_dx, d_dy = sampling.sample_with_grad(img.astype(np.float64), x, y, oob)
    g64 = g.astype(np.float64)
    grad_field = np.stack([(g64 * d_dx).sum(-1), (g64 * d_dy).sum(-1)], axis=-1)
    grad_src = sampling.scatter_adjoint(img.shape, x, y, g64, oob)
    return grad_src.astype(dtype), grad_field.astype(dtype)


def _splat_weights(d, lo, hi, w):
    """Target indices and bilinear weights for source rows ``lo:hi``."""
    rows = hi - lo
    ys, xs = np.mgrid[lo:hi, 0:w]
    x = xs + d[lo:hi, :, 0].astype(np.float64)
    y = ys + d[lo:hi, :, 1].astype(np.float64)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    taps = []
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            taps.append((x0 + dx, y0 + dy, wx * wy, dx, dy))
    return rows, fx, fy, taps


def _splat(img, d, threads=None):
    """Accumulate splatted values and weights in float64, row block by block."""
    h, w, c = img.shape

    def block(lo, hi):
        _, _, _, taps = _splat_weights(d, lo, hi, w)
        vals = img[lo:hi].astype(np.float64).reshape(-1, c)
        acc = np.zeros((h * w, c))
        wsum = np.zeros(h * w)
        for xi, yi, wt, _, _ in taps:
            keep = ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)).ravel()
            idx = (yi * w + xi).ravel()[keep]
            wk = wt.ravel()[keep]
            wsum += np.bincount(idx, weights=wk, minlength=h * w)
            for ch in range(c):
                acc[:, ch] += np.bincount(idx, weights=vals[keep, ch] * wk, minlength=h * w)
        return acc, wsum

    parts = map_row_blocks(block, h, threads)
    acc = np.zeros((h * w, c))
    wsum = np.zeros(h * w)
    for a, s in parts:
        acc += a
        wsum += s
    return acc.reshape(h, w, c), wsum.reshape(h, w)


def splat_accumulate(src, field, threads=None):
    """Unnormalised forward splat: ``(sum of w * value, sum of w)`` per target."""
    img = _as_array(src, "src")
    d = as_field(field, img.shape)
    return _splat(img, d, threads)


def forward_warp(src, field, w_min: float = DEFAULT_W_MIN, threads=None):
    """Splat each source pixel to ``p + field(p)`` with bilinear weights.

    Per target, the accumulated value is divided by the accumulated weight
    where that weight is at least ``w_min``; elsewhere the output is 0.  The
    mask is ``min(weight, 1)`` and 0 at holes.  Holes are never filled here.
    """
    if not w_min > 0:
        raise ValueError("w_min must be > 0")
    img = _as_array(src, "src")
    d = as_field(field, img.shape)
    dtype = np.result_type(img.dtype, d.dtype)
    acc, wsum = _splat(img, d, threads)
    valid = wsum >= w_min
    out = np.zeros_like(acc)
    np.divide(acc, wsum[..., None], out=out, where=valid[..., None])
    mask = np.where(valid, np.minimum(wsum, 1.0), 0.0)
    return out.astype(dtype), mask.astype(np.float32)


def forward_warp_grad(src, field, upstream, w_min: float = DEFAULT_W_MIN):
    """Adjoints of the normalised :func:`forward_warp` output.

    Returns ``(dL/d src, dL/d field)`` for ``upstream = dL/d out``.  Targets
    below ``w_min`` contribute nothing (their output is the constant 0).
    """
    img = _as_array(src, "src")
    d = as_field(field, img.shape)
    g = _as_array(upstream, "upstream").astype(np.float64)
    dtype = np.result_type(img.dtype, d.dtype)
    h, w, c = img.shape
    acc, wsum = _splat(img, d, threads=1)
    valid = wsum >= w_min
    out = np.zeros_like(acc)
    np.divide(acc, wsum[..., None], out=out, where=valid[..., None])
    # per target: dL/dacc = g / W, dL/dW = -(g . out) / W
    inv = np.where(valid, 1.0 / np.where(valid, wsum, 1.0), 0.0)
    g_acc = g * inv[..., None]
    g_w = -(g * out).sum(-1) * inv

    _, fx, fy, taps = _splat_weights(d, 0, h, w)
    vals = img.astype(np.float64)
    grad_src = np.zeros((h, w, c))
    grad_field = np.zeros((h, w, 2))
    for xi, yi, wt, dx, dy in taps:
        keep = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xc = np.clip(xi, 0, w - 1)
        yc = np.clip(yi, 0, h - 1)
        ga = np.where(keep[..., None], g_acc[yc, xc], 0.0)
        gw = np.where(keep, g_w[yc, xc], 0.0)
        grad_src += ga * wt[..., None]
        # d weight / d x and d weight / d y for this tap
        dwx = (1 if dx else -1) * (fy if dy else 1 - fy)
        dwy = (1 if dy else -1) * (fx if dx else 1 - fx)
        common = (ga * vals).sum(-1) + gw
        grad_field[..., 0] += common * dwx
        grad_field[..., 1] += common * dwy
    return grad_src.astype(dtype), grad_field.astype(dtype)


@dataclass
class Pyramid:
    """Level 0 is the full-resolution input; level k is downsampled by 2**k."""

    levels: list

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]


def downsample(img: np.ndarray) -> np.ndarray:
    """5-tap binomial blur (mirror boundary) followed by 2x decimation."""
    arr = np.asarray(img, dtype=np.float64)
    for axis in (0, 1):
        if arr.shape[axis] > 1:
            arr = ndimage.correlate1d(arr, BINOMIAL5, axis=axis, mode="mirror")
    return arr[::2, ::2]


def build_pyramid(frame, levels: int = 3) -> Pyramid:
    if levels < 1:
        raise ValueError("levels must be >= 1")
    img = _as_array(frame, "frame")
    need = 2 ** (levels - 1)
    if img.shape[0] < need or img.shape[1] < need:
        raise ValueError(f"frame {img.shape[:2]} too small for a {levels}-level pyramid "
                         f"(needs at least {need} px per side)")
    out = [img]
    for _ in range(levels - 1):
        out.append(downsample(out[-1]).astype(img.dtype))
    return Pyramid(out)


def upsample_field(field, target_w: int, target_h: int) -> np.ndarray:
    """Bilinearly upsample a field by 2 and double its vectors.

    Coarse pixel ``j`` sits at fine pixel ``2j`` (matching the decimation in
    :func:`downsample`); the last fine row/column is linearly extrapolated so
    affine fields upsample exactly.
    """
    d = as_field(field)
    h, w = d.shape[:2]
    if target_w < w or target_h < h:
        raise ValueError(f"upsample_field cannot shrink {w}x{h} to {target_w}x{target_h}")
    if (target_w + 1) // 2 != w or (target_h + 1) // 2 != h:
        raise ValueError(f"target {target_w}x{target_h} is not a 2x upsampling of {w}x{h}")

    def axis_weights(n_src, n_dst):
        pos = np.arange(n_dst) / 2.0
        if n_src == 1:
            return np.zeros(n_dst, np.int64), np.zeros(n_dst)
        i0 = np.minimum(np.floor(pos).astype(np.int64), n_src - 2)
        return i0, pos - i0

    iy, fy = axis_weights(h, target_h)
    ix, fx = axis_weights(w, target_w)
    d64 = d.astype(np.float64)
    iy1 = np.minimum(iy + 1, h - 1)
    ix1 = np.minimum(ix + 1, w - 1)
    rows0 = d64[iy]
    rows1 = d64[iy1]
    rows = rows0 + fy[:, None, None] * (rows1 - rows0)
    cols0 = rows[:, ix]
    cols1 = rows[:, ix1]
    up = cols0 + fx[None, :, None] * (cols1 - cols0)
    return (2.0 * up).astype(d.dtype)
