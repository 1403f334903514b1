"""Geometric and photometric alignment between two cameras.

Homographies come from normalised DLT on point correspondences, refined by
Levenberg-Marquardt on the symmetric transfer error.  Colour response is
matched with a least-squares 3x3 matrix.
"""

from __future__ import annotations

import csv
from itertools import combinations

import numpy as np
from scipy.optimize import least_squares

from rscd import sampling
from rscd.imagecore import as_frame


class DegenerateConfigurationError(ValueError):
    pass


def _homog(pts):
    return np.column_stack([pts, np.ones(len(pts))])


def project(H, pts) -> np.ndarray:
    """Apply ``H`` to ``(N, 2)`` points."""
    p = _homog(np.asarray(pts, np.float64)) @ np.asarray(H, np.float64).T
    return p[:, :2] / p[:, 2:3]


def hartley_normalization(pts) -> np.ndarray:
    """Similarity moving the centroid to 0 with mean distance sqrt(2)."""
    pts = np.asarray(pts, np.float64)
    c = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - c, axis=1))
    if mean_dist == 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2) / mean_dist
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _collinear(p, q, r, tol=1e-9) -> bool:
    area = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    scale = max(np.ptp(np.array([p, q, r]), axis=0).max() ** 2, 1e-300)
    return abs(area) <= tol * scale


def _normalize(H):
    if abs(H[2, 2]) < 1e-15:
        return H / np.linalg.norm(H)
    return H / H[2, 2]


def dlt(src, dst) -> np.ndarray:
    """Normalised direct linear transform; ``dst ~ H @ src``."""
    src = np.asarray(src, np.float64)
    dst = np.asarray(dst, np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("correspondences must be two (N, 2) arrays")
    if len(src) < 4:
        raise ValueError(f"insufficient pairs: need >= 4, got {len(src)}")
    if len(src) == 4:
        for pts in (src, dst):
            if any(_collinear(*tri) for tri in combinations(pts, 3)):
                raise DegenerateConfigurationError("three of the four points are collinear")
    Ts = hartley_normalization(src)
    Td = hartley_normalization(dst)
    s = project(Ts, src)
    d = project(Td, dst)
    n = len(s)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = s
    A[0::2, 2] = 1
    A[0::2, 6:8] = -d[:, :1] * s
    A[0::2, 8] = -d[:, 0]
    A[1::2, 3:5] = s
    A[1::2, 5] = 1
    A[1::2, 6:8] = -d[:, 1:2] * s
    A[1::2, 8] = -d[:, 1]
    _, sv, vt = np.linalg.svd(A)
    if sv[7] <= 1e-10 * sv[0]:
        raise DegenerateConfigurationError("design matrix is rank deficient")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return _normalize(H)


def symmetric_transfer_residuals(H, src, dst) -> np.ndarray:
    Hinv = np.linalg.inv(H)
    fwd = project(H, src) - dst
    bwd = project(Hinv, dst) - src
    return np.concatenate([fwd.ravel(), bwd.ravel()])


def rms_symmetric_transfer(H, src, dst) -> float:
    """Root mean square of forward and backward point distances."""
    r = symmetric_transfer_residuals(H, src, dst).reshape(-1, 2)
    return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


def estimate_homography(src, dst, refine: bool = True) -> tuple[np.ndarray, float]:
    """Homography mapping ``src`` points onto ``dst`` plus its RMS error."""
    src = np.asarray(src, np.float64)
    dst = np.asarray(dst, np.float64)
    H = dlt(src, dst)
    if refine and len(src) > 4:
        # refine in Hartley-normalised coordinates for conditioning
        Ts = hartley_normalization(src)
        Td = hartley_normalization(dst)
        s = project(Ts, src)
        d = project(Td, dst)
        Hn = _normalize(Td @ H @ np.linalg.inv(Ts))
        scale = np.linalg.inv(Td)[0, 0]

        def resid(h):
            return symmetric_transfer_residuals(np.append(h, 1.0).reshape(3, 3), s, d)

        r0 = resid(Hn.ravel()[:8])
        if np.max(np.abs(r0)) * scale > 1e-12:
            sol = least_squares(resid, Hn.ravel()[:8], method="lm", xtol=1e-15, ftol=1e-15)
            H_ref = np.linalg.inv(Td) @ np.append(sol.x, 1.0).reshape(3, 3) @ Ts
            H_ref = _normalize(H_ref)
            if rms_symmetric_transfer(H_ref, src, dst) <= rms_symmetric_transfer(H, src, dst):
                H = H_ref
    if abs(np.linalg.det(H)) < 1e-12:
        raise DegenerateConfigurationError("estimated homography is singular")
    return H, rms_symmetric_transfer(H, src, dst)


def apply_homography(frame, H, oob: str = "zero") -> np.ndarray:
    """Resample ``frame`` so that output pixel ``q`` reads input ``H^-1 q``."""
    img = as_frame(frame)
    H = np.asarray(H, np.float64)
    if H.shape != (3, 3):
        raise ValueError("H must be 3x3")
    if abs(np.linalg.det(H)) < 1e-12 * max(1.0, np.abs(H).max() ** 3):
        raise DegenerateConfigurationError("homography is singular")
    Hinv = np.linalg.inv(H)
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = project(Hinv, np.column_stack([xs.ravel(), ys.ravel()]))
    out = sampling.sample(img.astype(np.float64), pts[:, 0].reshape(h, w), pts[:, 1].reshape(h, w), oob)
    return out.astype(np.float32)


def estimate_color_matrix(measured, reference) -> tuple[np.ndarray, float]:
    """3x3 ``M`` minimising ``sum ||M @ measured_i - reference_i||^2``.

    Returns ``(M, rms)`` where ``rms`` is the root mean square residual per
    RGB component.
    """
    m = np.asarray(measured, np.float64)
    r = np.asarray(reference, np.float64)
    if m.shape != r.shape or m.ndim != 2 or m.shape[1] != 3:
        raise ValueError("measured and reference must both be (N, 3)")
    if len(m) < 3:
        raise ValueError(f"need at least 3 patches, got {len(m)}")
    if np.linalg.matrix_rank(m) < 3:
        raise DegenerateConfigurationError("measured colours are rank deficient")
    X, *_ = np.linalg.lstsq(m, r, rcond=None)
    M = X.T
    resid = m @ X - r
    return M, float(np.sqrt(np.mean(resid * resid)))


def apply_color_matrix(frame, M) -> np.ndarray:
    img = as_frame(frame)
    if img.shape[2] != 3:
        raise ValueError("colour correction needs an RGB frame")
    return (img.astype(np.float64) @ np.asarray(M, np.float64).T).astype(np.float32)


def read_correspondences(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``sx,sy,tx,ty`` CSV rows."""
    return _read_csv(path, ("sx", "sy", "tx", "ty"), 2)


def read_patches(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``mr,mg,mb,rr,rg,rb`` CSV rows (measured, reference)."""
    return _read_csv(path, ("mr", "mg", "mb", "rr", "rg", "rb"), 3)


def _read_csv(path, header, width):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = [c.strip() for c in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        if tuple(first) != header:
            raise ValueError(f"{path}: expected header {','.join(header)}, got {','.join(first)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    data = np.asarray(rows, np.float64).reshape(-1, len(header))
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite values")
    return data[:, :width], data[:, width:]
