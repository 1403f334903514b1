"""Frame/sequence containers, PNG I/O and sRGB transfer conversion.

Frames are plain ``numpy`` arrays of shape ``(H, W, C)`` holding linear
float32 intensities nominally in ``[0, 1]``.  Row ``i`` of a frame is
``frame[i]``; the frame height ``H`` is the row count ``M`` used by the
rolling-shutter timing model.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import cv2
import numpy as np

Transfer = Literal["srgb", "linear"]


def as_frame(data, name: str = "frame") -> np.ndarray:
    """Validate ``data`` and return it as a float32 ``(H, W, C)`` array."""
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be (H, W) or (H, W, C), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf samples")
    return arr


@dataclass(frozen=True)
class ShutterParams:
    """Row readout time ``t_r`` and exposure time ``t_e``, both in seconds."""

    t_r: float = 0.0
    t_e: float = 0.0

    def __post_init__(self):
        for key in ("t_r", "t_e"):
            value = getattr(self, key)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{key} must be finite and >= 0, got {value}")

    def t_m(self, rows: int) -> float:
        """Offset from the first row to the middle row, ``(M/2) * t_r``."""
        return 0.5 * rows * self.t_r

    def row_times(self, t: float, rows: int) -> np.ndarray:
        """Mid-exposure time of every row for a frame centred at ``t``."""
        return t - self.t_m(rows) + np.arange(rows, dtype=np.float64) * self.t_r


@dataclass(frozen=True)
class FrameSequence:
    """Uniformly timed global-shutter frames; frame k is taken at ``t0 + k*dt``."""

    frames: np.ndarray
    dt: float
    t0: float = 0.0
    paths: tuple = field(default=(), compare=False)

    def __post_init__(self):
        frames = self.frames
        if isinstance(frames, (list, tuple)):
            stack = [as_frame(f, f"frame {k}") for k, f in enumerate(frames)]
            if len({f.shape for f in stack}) > 1:
                raise ValueError("all frames in a sequence must share dimensions")
            frames = np.stack(stack) if stack else np.zeros((0, 1, 1, 1), np.float32)
        else:
            frames = np.asarray(frames)
            if frames.ndim == 3:
                frames = frames[..., None]
            if frames.ndim != 4:
                raise ValueError(f"frames must be (N, H, W[, C]), got {frames.shape}")
            frames = frames.astype(np.float32, copy=False)
            if not np.all(np.isfinite(frames)):
                raise ValueError("sequence contains NaN or Inf samples")
        if frames.shape[0] < 2:
            raise ValueError("a sequence needs at least two frames")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be finite and > 0, got {self.dt}")
        if not np.isfinite(self.t0):
            raise ValueError("t0 must be finite")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple:
        return self.frames.shape[1:]

    @property
    def t_end(self) -> float:
        return self.t0 + (len(self) - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * self.dt

    def scaled(self, alpha: float) -> "FrameSequence":
        return FrameSequence(self.frames * np.float32(alpha), self.dt, self.t0)


# -- sRGB transfer ---------------------------------------------------------

def _srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def convert_transfer(frame, direction: Literal["srgb_to_linear", "linear_to_srgb"]) -> np.ndarray:
    """Apply the piecewise sRGB curve elementwise.

    Samples outside ``[0, 1]`` raise instead of being clamped.
    """
    arr = as_frame(frame)
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("convert_transfer expects samples in [0, 1]")
    if direction == "srgb_to_linear":
        out = _srgb_to_linear(arr)
    elif direction == "linear_to_srgb":
        out = _linear_to_srgb(arr)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# -- PNG I/O ---------------------------------------------------------------

def load_image(path, transfer: Transfer = "srgb") -> np.ndarray:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"could not decode image {path!r}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValueError(f"unsupported bit depth {raw.dtype} in {path!r}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.shape[2] == 3:
        raw = raw[:, :, ::-1]
    else:
        raise ValueError(f"unsupported channel count {raw.shape[2]} in {path!r}")
    frame = raw.astype(np.float64) / scale
    if transfer == "srgb":
        frame = _srgb_to_linear(frame)
    elif transfer != "linear":
        raise ValueError(f"unknown transfer {transfer!r}")
    return np.ascontiguousarray(frame, dtype=np.float32)


def save_image(frame, path, transfer: Transfer = "srgb", depth: int = 8) -> None:
    arr = as_frame(frame)
    if arr.shape[2] not in (1, 3):
        raise ValueError(f"only 1 or 3 channel frames can be saved, got {arr.shape[2]}")
    if depth not in (8, 16):
        raise ValueError(f"depth must be 8 or 16, got {depth}")
    x = np.clip(arr.astype(np.float64), 0.0, 1.0)
    if transfer == "srgb":
        x = _linear_to_srgb(x)
    elif transfer != "linear":
        raise ValueError(f"unknown transfer {transfer!r}")
    peak = 255 if depth == 8 else 65535
    q = np.rint(np.clip(x, 0.0, 1.0) * peak).astype(np.uint8 if depth == 8 else np.uint16)
    q = q[:, :, 0] if q.shape[2] == 1 else q[:, :, ::-1]
    path = os.fspath(path)
    parent = os.path.dirname(path) or "."
    if not os.path.isdir(parent):
        raise OSError(f"directory does not exist: {parent}")
    ok = cv2.imwrite(path, np.ascontiguousarray(q))
    if not ok:
        raise OSError(f"could not write {path!r}")


def load_sequence(manifest_path, transfer: Transfer = "srgb") -> FrameSequence:
    """Load a sequence manifest ``{"dt_s", "t0_s", "frames": [...]}``.

    Frame paths are relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        data = json.load(fh)
    unknown = set(data) - {"dt_s", "t0_s", "frames"}
    if unknown:
        raise ValueError(f"unknown sequence manifest keys: {sorted(unknown)}")
    missing = {"dt_s", "frames"} - set(data)
    if missing:
        raise ValueError(f"sequence manifest is missing {sorted(missing)}")
    base = manifest_path.parent
    paths = [base / p for p in data["frames"]]
    frames = [load_image(p, transfer) for p in paths]
    return FrameSequence(frames, float(data["dt_s"]), float(data.get("t0_s", 0.0)),
                         paths=tuple(str(p) for p in paths))


def save_sequence(seq: FrameSequence, directory, transfer: Transfer = "linear",
                  depth: int = 16, prefix: str = "frame") -> Path:
    """Write every frame as PNG plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for k, frame in enumerate(seq.frames):
        name = f"{prefix}_{k:04d}.png"
        save_image(frame, directory / name, transfer=transfer, depth=depth)
        names.append(name)
    manifest = directory / "sequence.json"
    manifest.write_text(json.dumps({"dt_s": seq.dt, "t0_s": seq.t0, "frames": names}, indent=2))
    return manifest


def to_gray(frame) -> np.ndarray:
    """Rec. 601 luma for 3-channel frames; single channel passes through."""
    arr = np.asarray(frame)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.shape[2] == 3:
        return arr @ np.array([0.299, 0.587, 0.114], dtype=arr.dtype)
    raise ValueError(f"cannot convert {arr.shape[2]} channels to gray")

