"""Coarse-to-fine variational displacement estimation.

Energy minimised at every pyramid level::

    E(D) = lam_c * sum rho(I_b(q + D(q)) - I_a(q)) + lam_tv * TV(D)

with the Charbonnier penalty ``rho(r) = sqrt(r**2 + eps**2)`` and an
anisotropic, Charbonnier-smoothed total variation over forward differences
of both field components.  ``D`` is the forward flow from ``I_a`` to
``I_b``: content at ``q`` in ``I_a`` appears at ``q + D(q)`` in ``I_b``.
Optimisation is plain gradient descent with a backtracking (Armijo) line
search, so every accepted iterate lowers the energy.  Per-iteration updates
are capped at ``max_update`` pixels, and each level runs a short
continuation over decreasing Charbonnier constants ending at ``eps``; small
``eps`` makes the energy nearly non-smooth and plain descent crawls there
unless it starts close to the minimiser.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import ndimage

from rscd.imagecore import to_gray
from rscd.warp import backward_warp, backward_warp_grad, build_pyramid, upsample_field

log = logging.getLogger(__name__)

_MIN_STEP = 1e-8
_MAX_STEP = 1e4


@dataclass(frozen=True)
class SolverConfig:
    lambda_c: float = 10.0
    lambda_tv: float = 0.1
    eps: float = 1e-3
    levels: int = 3
    max_iters: int = 200
    step: float = 1.0
    backtrack: float = 0.5
    max_halvings: int = 20
    rel_tol: float = 1e-6
    armijo: float = 1e-4
    max_update: float = 0.25
    eps_start: float = 0.1
    eps_decay: float = 0.3
    median_between_levels: bool = True

    def __post_init__(self):
        if self.lambda_c < 0 or self.lambda_tv < 0:
            raise ValueError("energy weights must be >= 0")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.max_iters < 0 or self.max_halvings < 0:
            raise ValueError("iteration limits must be >= 0")
        if not (0 < self.eps_decay < 1):
            raise ValueError("eps_decay must lie in (0, 1)")
        if not (0 < self.backtrack < 1) or not self.step > 0 or not self.max_update > 0:
            raise ValueError("need step > 0 and 0 < backtrack < 1")

    @classmethod
    def from_overrides(cls, overrides: dict | None) -> "SolverConfig":
        overrides = dict(overrides or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown solver keys: {sorted(unknown)}")
        return cls(**overrides)

    def eps_schedule(self) -> list:
        """Charbonnier constants for the continuation stages, ending at ``eps``."""
        stages = []
        e = self.eps_start
        while e > self.eps * (1 + 1e-12):
            stages.append(e)
            e *= self.eps_decay
        return stages + [self.eps]


@dataclass
class LevelReport:
    """Trace of one pyramid level.

    ``objective_trace`` follows the configured energy during the final
    stage; ``stage_traces`` holds every continuation stage's trace, each of
    which is non-increasing under its own ``eps``.
    """

    level: int
    iters: int
    objective_trace: list
    grad_inf_norm: float
    converged: bool
    stage_eps: list = field(default_factory=list)
    stage_traces: list = field(default_factory=list)


@dataclass
class SolveReport:
    levels: list = field(default_factory=list)

    @property
    def final_objective(self) -> float:
        return self.levels[-1].objective_trace[-1]

    @property
    def iterations(self) -> int:
        return sum(lv.iters for lv in self.levels)

    @property
    def converged(self) -> bool:
        return all(lv.converged for lv in self.levels)

    def to_json(self) -> dict:
        return {
            "levels": [asdict(lv) for lv in self.levels],
            "final_objective": self.final_objective,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def charbonnier_loss(residual, eps: float):
    """``sum(sqrt(r**2 + eps**2))`` and its elementwise gradient."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    r = np.asarray(residual, dtype=np.float64)
    root = np.sqrt(r * r + eps * eps)
    return float(root.sum()), r / root


def tv_loss(field, eps: float):
    """Charbonnier-smoothed anisotropic TV of a ``(H, W, 2)`` field."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    d = np.asarray(field, dtype=np.float64)
    dx = d[:, 1:] - d[:, :-1]
    dy = d[1:, :] - d[:-1, :]
    rx = np.sqrt(dx * dx + eps * eps)
    ry = np.sqrt(dy * dy + eps * eps)
    gx = dx / rx
    gy = dy / ry
    grad = np.zeros_like(d)
    grad[:, 1:] += gx
    grad[:, :-1] -= gx
    grad[1:, :] += gy
    grad[:-1, :] -= gy
    return float(rx.sum() + ry.sum()), grad


def energy(field, img_a, img_b, cfg: SolverConfig, with_grad: bool = True):
    """Solver energy at one level, optionally with its gradient in ``field``.

    ``img_a`` and ``img_b`` are single-channel ``(H, W, 1)`` arrays.
    """
    warped, _ = backward_warp(img_b, field, oob="clamp")
    residual = warped - img_a
    data, g_res = charbonnier_loss(residual, cfg.eps)
    smooth, g_tv = tv_loss(field, cfg.eps)
    e = cfg.lambda_c * data + cfg.lambda_tv * smooth
    if not with_grad:
        return e
    _, g_field = backward_warp_grad(img_b, field, g_res, oob="clamp")
    return e, cfg.lambda_c * g_field + cfg.lambda_tv * g_tv


def _prepare(frame) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] != 1:
        arr = to_gray(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _descend(field, img_a, img_b, cfg: SolverConfig, level: int) -> tuple[np.ndarray, LevelReport]:
    e, g = energy(field, img_a, img_b, cfg)
    trace = [e]
    step = cfg.step
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        gg = float((g * g).sum())
        if gg == 0.0:
            converged = True
            iters -= 1
            break
        # never move any pixel more than max_update px in one iteration
        t = min(step, cfg.max_update / float(np.abs(g).max()))
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            trial = field - t * g
            e_new = energy(trial, img_a, img_b, cfg, with_grad=False)
            if e_new <= e - cfg.armijo * t * gg and e_new < e:
                accepted = True
                break
            t *= cfg.backtrack
        if not accepted:
            # no descent within the halving budget: numerically stationary
            converged = True
            iters -= 1
            break
        decrease = e - e_new
        e, g_new = energy(trial, img_a, img_b, cfg)
        step = min(t / cfg.backtrack, _MAX_STEP)
        field, g = trial, g_new
        trace.append(e)
        if decrease <= cfg.rel_tol * abs(trace[-2]):
            converged = True
            break
    report = LevelReport(level=level, iters=iters, objective_trace=trace,
                         grad_inf_norm=float(np.abs(g).max()), converged=converged)
    return field, report


def solve_flow(img_a, img_b, cfg: SolverConfig | None = None):
    """Estimate the forward flow from ``img_a`` to ``img_b``.

    Returns ``(field, report)`` with ``field`` float32 ``(H, W, 2)``.
    """
    cfg = cfg or SolverConfig()
    a = _prepare(img_a)
    b = _prepare(img_b)
    if a.shape != b.shape:
        raise ValueError(f"frame dims differ: {a.shape[:2]} vs {b.shape[:2]}")
    pyr_a = build_pyramid(a, cfg.levels)
    pyr_b = build_pyramid(b, cfg.levels)
    report = SolveReport()
    field = None
    for level in range(cfg.levels - 1, -1, -1):
        la, lb = pyr_a[level], pyr_b[level]
        h, w = la.shape[:2]
        if field is None:
            field = np.zeros((h, w, 2))
        else:
            if cfg.median_between_levels:
                field = ndimage.median_filter(field, size=(3, 3, 1), mode="nearest")
            field = upsample_field(field, w, h)
        lv = None
        for k, eps in enumerate(cfg.eps_schedule()):
            stage_cfg = replace(cfg, eps=eps)
            field, stage = _descend(field, la, lb, stage_cfg, level)
            if lv is None:
                lv = stage
            else:
                lv.iters += stage.iters
                lv.objective_trace = stage.objective_trace
                lv.grad_inf_norm = stage.grad_inf_norm
                lv.converged = stage.converged
            lv.stage_eps.append(eps)
            lv.stage_traces.append(stage.objective_trace)
        log.debug("level %d: %d iters, E=%.6g", level, lv.iters, lv.objective_trace[-1])
        report.levels.append(lv)
    return field.astype(np.float32), report
