"""Seeded synthetic scene generators rendered as high-frame-rate sequences.

Every generator evaluates its scene analytically at each frame time, so
ground truth at any instant is available without resampling error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from rscd.imagecore import FrameSequence

GENERATORS = ("pan", "rotonly_text", "ramp", "checker", "noise")


def smooth_texture(seed: int, n_waves: int = 10, min_wavelength: float = 12.0,
                   max_wavelength: float = 40.0, channels: int = 1):
    """Return ``f(x, y) -> (..., C)``, a random sum of sinusoids in ``[0.15, 0.85]``."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, np.pi, n_waves)
    lam = rng.uniform(min_wavelength, max_wavelength, n_waves)
    phase = rng.uniform(0, 2 * np.pi, (n_waves, channels))
    kx = 2 * np.pi * np.cos(theta) / lam
    ky = 2 * np.pi * np.sin(theta) / lam
    amp = 0.35 / np.sqrt(n_waves / 2.0)

    def f(x, y):
        x = np.asarray(x, np.float64)[..., None, None]
        y = np.asarray(y, np.float64)[..., None, None]
        waves = np.sin(kx[:, None] * x + ky[:, None] * y + phase)
        return np.clip(0.5 + amp * waves.sum(axis=-2), 0.15, 0.85)

    return f


def _glyph_canvas(seed: int, size: int = 96) -> np.ndarray:
    """Blurred block 'text': random bars on a light background."""
    rng = np.random.default_rng(seed)
    canvas = np.full((size, size), 0.8)
    for line in range(3):
        y0 = 18 + line * 26
        x = 10
        while x < size - 16:
            w = int(rng.integers(6, 12))
            for _ in range(int(rng.integers(2, 4))):
                bx = x + int(rng.integers(0, max(1, w - 2)))
                by = y0 + int(rng.integers(0, 10))
                canvas[by:by + int(rng.integers(2, 12)), bx:bx + 2] = 0.2
                canvas[by:by + 2, x:x + w] = 0.2
            x += w + int(rng.integers(3, 6))
    return ndimage.gaussian_filter(canvas, 1.2)


@dataclass(frozen=True)
class SyntheticScene:
    generator: str = "pan"
    width: int = 64
    height: int = 64
    fps: float = 1000.0
    n_frames: int = 48
    velocity: tuple = (250.0, 0.0)  # px/s for pan/checker, rad/s (first item) for rotonly_text
    seed: int = 0
    channels: int = 1
    flicker: float = 0.0  # alternating per-frame gain 1 +/- flicker
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    def at(self, tau: float) -> np.ndarray:
        """Exact scene radiance at time ``tau`` (without flicker)."""
        h, w = self.height, self.width
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        vx, vy = self.velocity
        g = self.generator
        if g == "pan":
            img = smooth_texture(self.seed, channels=self.channels)(xs - vx * tau, ys - vy * tau)
        elif g == "checker":
            cell = self.params.get("cell", 8)
            ox, oy = np.random.default_rng(self.seed).uniform(0, 2 * cell, 2)
            u = (xs - ox - vx * tau) * np.pi / cell
            v = (ys - oy - vy * tau) * np.pi / cell
            # band-limited checker: product of soft square waves
            sq = np.tanh(3 * np.sin(u)) * np.tanh(3 * np.sin(v))
            img = np.repeat((0.5 + 0.3 * sq)[..., None], self.channels, axis=-1)
        elif g == "ramp":
            base = smooth_texture(self.seed, channels=self.channels)(xs, ys)
            slope = smooth_texture(self.seed + 1, channels=self.channels)(xs, ys) - 0.5
            span = self.n_frames * self.dt
            img = 0.15 + 0.6 * (base - 0.15) + 0.3 * slope * (tau / span)
        elif g == "rotonly_text":
            canvas = _glyph_canvas(self.seed)
            c = canvas.shape[0] / 2.0
            ang = vx * tau
            cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
            ca, sa = np.cos(ang), np.sin(ang)
            # inverse rotation of output coordinates into the canvas
            u = ca * (xs - cx) + sa * (ys - cy) + c
            v = -sa * (xs - cx) + ca * (ys - cy) + c
            img = ndimage.map_coordinates(canvas, [v, u], order=1, mode="nearest")
            img = np.repeat(img[..., None], self.channels, axis=-1)
        else:  # noise
            k = int(round(tau * self.fps))
            rng = np.random.default_rng([self.seed, k])
            img = rng.uniform(0.0, 1.0, (h, w, self.channels))
        return img

    def gain(self, k: int) -> float:
        return 1.0 + self.flicker * (1 if k % 2 == 0 else -1)

    def render(self) -> FrameSequence:
        frames = []
        for k in range(self.n_frames):
            frames.append(np.clip(self.at(k * self.dt) * self.gain(k), 0.0, 1.0))
        return FrameSequence(np.asarray(frames, dtype=np.float32), self.dt, 0.0)
