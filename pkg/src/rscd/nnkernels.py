"""Forward kernels for the fusion block: convolution, deformable convolution
and squeeze-and-excitation channel attention.

Feature maps are ``(H, W, C)`` arrays, matching the frame layout used
elsewhere.  Convolution weights are ``(C_out, C_in, k, k)``.  Deformable
offsets are ``(H_out, W_out, groups, k*k, 2)`` holding ``(dx, dy)`` per tap,
taps in row-major kernel order; channel group ``g`` covers input channels
``g*C_in/groups : (g+1)*C_in/groups``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rscd import sampling


@dataclass
class ConvWeights:
    weight: np.ndarray  # (C_out, C_in, k, k)
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int | None = None  # default: k // 2

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ValueError(f"weight must be (C_out, C_in, k, k), got {self.weight.shape}")
        if self.k % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.padding is None:
            self.padding = self.k // 2
        if self.bias is not None:
            self.bias = np.asarray(self.bias)
            if self.bias.shape != (self.out_channels,):
                raise ValueError("bias must have one entry per output channel")

    @property
    def k(self) -> int:
        return self.weight.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        p, k, s = self.padding, self.k, self.stride
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


@dataclass
class SEWeights:
    """Squeeze (C -> C/r) and excitation (C/r -> C) dense maps."""

    w1: np.ndarray  # (C/r, C)
    w2: np.ndarray  # (C, C/r)
    b1: np.ndarray | None = None
    b2: np.ndarray | None = None

    def __post_init__(self):
        self.w1 = np.asarray(self.w1)
        self.w2 = np.asarray(self.w2)
        if self.w1.ndim != 2 or self.w2.shape != self.w1.shape[::-1]:
            raise ValueError("w1 must be (C/r, C) and w2 (C, C/r)")
        if self.w1.shape[0] < 1:
            raise ValueError("reduced width must be >= 1")
        self.b1 = np.zeros(self.w1.shape[0]) if self.b1 is None else np.asarray(self.b1)
        self.b2 = np.zeros(self.w2.shape[0]) if self.b2 is None else np.asarray(self.b2)

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def random(cls, channels: int, reduction: int = 16, rng=None, scale: float = 0.5):
        if reduction < 1:
            raise ValueError("reduction must be >= 1")
        hidden = max(1, channels // reduction)
        rng = np.random.default_rng(rng)
        return cls(rng.normal(0, scale, (hidden, channels)), rng.normal(0, scale, (channels, hidden)),
                   rng.normal(0, 0.1, hidden), rng.normal(0, 0.1, channels))


def default_groups(channels: int, preferred: int = 8) -> int:
    """Largest divisor of ``channels`` not exceeding ``preferred``."""
    for g in range(min(preferred, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


def _check_input(x, w: ConvWeights) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValueError(f"input must be (H, W, C), got {x.shape}")
    if x.shape[2] != w.in_channels:
        raise ValueError(f"input has {x.shape[2]} channels, weights expect {w.in_channels}")
    return x


def _tap_grid(w: ConvWeights, h_out: int, w_out: int):
    """Integer sampling positions (x, y) of every tap: shape (h_out, w_out, k*k)."""
    k = w.k
    ky, kx = np.mgrid[0:k, 0:k]
    oy, ox = np.mgrid[0:h_out, 0:w_out]
    ys = oy[..., None] * w.stride - w.padding + ky.ravel()
    xs = ox[..., None] * w.stride - w.padding + kx.ravel()
    return xs.astype(np.float64), ys.astype(np.float64)


def _apply(cols: np.ndarray, w: ConvWeights) -> np.ndarray:
    """``cols`` is (h_out, w_out, k*k, C_in); returns (h_out, w_out, C_out)."""
    k2 = w.k * w.k
    kernel = w.weight.reshape(w.out_channels, w.in_channels, k2).astype(np.float64)
    out = np.einsum("hwtc,oct->hwo", cols, kernel)
    if w.bias is not None:
        out = out + w.bias
    return out


def conv2d(x, w: ConvWeights) -> np.ndarray:
    """Zero-padded cross-correlation."""
    x = _check_input(x, w)
    h_out, w_out = w.output_size(*x.shape[:2])
    xs, ys = _tap_grid(w, h_out, w_out)
    xi = xs.astype(np.int64)
    yi = ys.astype(np.int64)
    h, wd = x.shape[:2]
    inside = (xi >= 0) & (xi < wd) & (yi >= 0) & (yi < h)
    cols = x.astype(np.float64)[np.clip(yi, 0, h - 1), np.clip(xi, 0, wd - 1)]
    cols = np.where(inside[..., None], cols, 0.0)
    return _apply(cols, w).astype(np.result_type(x.dtype, np.float32))


def deform_conv2d(x, w: ConvWeights, offsets, groups: int | None = None) -> np.ndarray:
    """Deformable convolution: each tap samples at its grid position plus a
    per-location, per-group offset, with bilinear interpolation and zeros
    outside the input."""
    x = _check_input(x, w)
    c_in = x.shape[2]
    offsets = np.asarray(offsets, dtype=np.float64)
    h_out, w_out = w.output_size(*x.shape[:2])
    k2 = w.k * w.k
    if offsets.ndim != 5 or offsets.shape[-1] != 2:
        raise ValueError("offsets must be (H_out, W_out, groups, k*k, 2)")
    if groups is None:
        groups = offsets.shape[2]
    if groups < 1 or c_in % groups:
        raise ValueError(f"group count {groups} does not divide {c_in} channels")
    if offsets.shape != (h_out, w_out, groups, k2, 2):
        raise ValueError(f"offsets shape {offsets.shape} != {(h_out, w_out, groups, k2, 2)}")
    if not np.all(np.isfinite(offsets)):
        raise ValueError("offsets contain NaN or Inf")
    xs, ys = _tap_grid(w, h_out, w_out)
    per = c_in // groups
    img = x.astype(np.float64)
    cols = np.empty((h_out, w_out, k2, c_in))
    for g in range(groups):
        sl = slice(g * per, (g + 1) * per)
        cols[..., sl] = sampling.sample(img[..., sl], xs + offsets[:, :, g, :, 0],
                                        ys + offsets[:, :, g, :, 1], oob="zero")
    return _apply(cols, w).astype(np.result_type(x.dtype, np.float32))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def se_gates(x, w: SEWeights) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != w.channels:
        raise ValueError(f"input must be (H, W, {w.channels})")
    pooled = x.astype(np.float64).mean(axis=(0, 1))
    hidden = np.maximum(w.w1 @ pooled + w.b1, 0.0)
    return _sigmoid(w.w2 @ hidden + w.b2)


def se_attention(x, w: SEWeights) -> np.ndarray:
    """Scale each channel by its squeeze-and-excitation gate."""
    gates = se_gates(x, w)
    return (np.asarray(x, np.float64) * gates).astype(np.result_type(np.asarray(x).dtype, np.float32))


def bilinear_sample(x, points) -> np.ndarray:
    """Sample ``(H, W, C)`` input at ``(N, 2)`` points ``(x, y)``; zeros outside."""
    img = np.asarray(x)
    if img.ndim == 2:
        img = img[:, :, None]
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return sampling.sample(img.astype(np.float64), pts[:, 0], pts[:, 1], oob="zero")


def bilinear_sample_grad(x, points):
    """Samples plus their derivatives with respect to point x and y."""
    img = np.asarray(x)
    if img.ndim == 2:
        img = img[:, :, None]
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return sampling.sample_with_grad(img.astype(np.float64), pts[:, 0], pts[:, 1], oob="zero")


def da_block(features, se: SEWeights, conv: ConvWeights, offsets, groups: int | None = None):
    """Channel attention followed by a deformable convolution."""
    return deform_conv2d(se_attention(features, se), conv, offsets, groups)
