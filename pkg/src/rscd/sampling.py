"""Bilinear sampling shared by the warping, deformable-convolution and
homography code.

Points are ``(x, y)`` in pixel units with pixel centres at integer
coordinates.  Out-of-bounds neighbours read as zero (``oob="zero"``) or as
the nearest edge pixel (``oob="clamp"``).
"""

from __future__ import annotations

import numpy as np


def _float_dtype(*arrays) -> np.dtype:
    return np.result_type(np.float32, *[np.asarray(a).dtype for a in arrays])


def _corners(img: np.ndarray, x: np.ndarray, y: np.ndarray, oob: str):
    """Gather the four neighbours of every point plus the fractional weights."""
    h, w = img.shape[:2]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = []
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            if oob == "clamp":
                v = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            elif oob == "zero":
                inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
                v = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
                v = np.where(inside[..., None], v, 0)
            else:
                raise ValueError(f"unknown out-of-bounds mode {oob!r}")
            out.append(v)
    return out, fx[..., None], fy[..., None]


def sample(img: np.ndarray, x: np.ndarray, y: np.ndarray, oob: str = "zero") -> np.ndarray:
    """Bilinear sample of an ``(H, W, C)`` image at arrays of coordinates.

    Returns an array of shape ``x.shape + (C,)``.
    """
    (v00, v01, v10, v11), fx, fy = _corners(img, x, y, oob)
    top = v00 + fx * (v01 - v00)
    bottom = v10 + fx * (v11 - v10)
    return top + fy * (bottom - top)


def sample_with_grad(img: np.ndarray, x: np.ndarray, y: np.ndarray, oob: str = "zero"):
    """Bilinear sample plus its partial derivatives with respect to x and y.

    The derivative is the one-sided (right) derivative at integer
    coordinates, where bilinear interpolation has a kink.
    """
    (v00, v01, v10, v11), fx, fy = _corners(img, x, y, oob)
    top = v00 + fx * (v01 - v00)
    bottom = v10 + fx * (v11 - v10)
    value = top + fy * (bottom - top)
    d_dx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
    d_dy = bottom - top
    return value, d_dx, d_dy


def scatter_adjoint(shape, x: np.ndarray, y: np.ndarray, upstream: np.ndarray,
                    oob: str = "zero") -> np.ndarray:
    """Adjoint of :func:`sample` with respect to the image values.

    ``upstream`` has shape ``x.shape + (C,)``; the result has ``shape``.
    """
    h, w, c = shape
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0).ravel()
    fy = (y - y0).ravel()
    x0 = x0.astype(np.int64).ravel()
    y0 = y0.astype(np.int64).ravel()
    g = upstream.reshape(-1, c).astype(np.float64)
    acc = np.zeros((h * w, c))
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            weight = wx * wy
            if oob == "clamp":
                xi = np.clip(xi, 0, w - 1)
                yi = np.clip(yi, 0, h - 1)
                keep = np.ones_like(weight, dtype=bool)
            else:
                keep = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            idx = (yi * w + xi)[keep]
            for ch in range(c):
                acc[:, ch] += np.bincount(idx, weights=(g[keep, ch] * weight[keep]), minlength=h * w)
    return acc.reshape(h, w, c)
