"""Reproducible desk-scale experiments backing the acceptance gate.

``run_suite(config)`` executes every criterion on seeded synthetic scenes
and returns a JSON-serialisable report.  Each criterion records its measured
values, thresholds and whether it finished inside its time budget.  Wall
times themselves are only included when ``config["record_timing"]`` is true
so that repeated runs produce identical report bytes.

Also hosts the naive loop references used to cross-check the fast kernels.
"""

from __future__ import annotations

import json
import math
import tempfile
import time
from pathlib import Path

import numpy as np

from rscd import cli
from rscd.calib import dlt, estimate_homography, project, rms_symmetric_transfer
from rscd.flowsolve import SolverConfig, charbonnier_loss, energy, solve_flow, tv_loss
from rscd.formation import (SynthesisMode, oracle_rscd, sample_gs, simulate_gs_blur, simulate_rs,
                            simulate_rscd)
from rscd.imagecore import ShutterParams, load_image, save_image, save_sequence
from rscd.metrics import interior, psnr, row_discontinuity, ssim
from rscd.nnkernels import (ConvWeights, SEWeights, bilinear_sample, bilinear_sample_grad, conv2d,
                            deform_conv2d, se_attention)
from rscd.rectify import GlobalMotion, rectify_global, rectify_with_flow
from rscd.scenes import GENERATORS, SyntheticScene, smooth_texture
from rscd.warp import backward_warp, backward_warp_grad

DEFAULTS = {
    "seed": 0,
    "criteria": list(range(1, 11)),
    "record_timing": False,
    # pan used by the rectification round trip
    "pan_velocity": [250.0, 75.0],
    # velocity handed to rectify_global; null means the true pan velocity
    "rectify_velocity": None,
}


# -- naive references -------------------------------------------------------

def _bilinear_scalar(img, c, x, y):
    h, w = img.shape[:2]
    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0
    acc = 0.0
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            if 0 <= yy < h and 0 <= xx < w:
                acc += wy * wx * float(img[yy, xx, c])
    return acc


def naive_conv2d(x, weight, bias=None, stride=1, padding=None):
    """Six nested loops over output pixel, output channel, input channel and taps."""
    x = np.asarray(x, np.float64)
    c_out, c_in, k, _ = weight.shape
    p = k // 2 if padding is None else padding
    h, w = x.shape[:2]
    ho, wo = (h + 2 * p - k) // stride + 1, (w + 2 * p - k) // stride + 1
    out = np.zeros((ho, wo, c_out))
    for oy in range(ho):
        for ox in range(wo):
            for o in range(c_out):
                acc = 0.0 if bias is None else float(bias[o])
                for c in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            yy, xx = oy * stride - p + ky, ox * stride - p + kx
                            if 0 <= yy < h and 0 <= xx < w:
                                acc += weight[o, c, ky, kx] * x[yy, xx, c]
                out[oy, ox, o] = acc
    return out


def naive_deform_conv2d(x, weight, offsets, groups, bias=None, stride=1, padding=None):
    """Per-location bilinear gather followed by the tap-weighted sum."""
    x = np.asarray(x, np.float64)
    c_out, c_in, k, _ = weight.shape
    p = k // 2 if padding is None else padding
    per = c_in // groups
    ho, wo = offsets.shape[:2]
    out = np.zeros((ho, wo, c_out))
    for oy in range(ho):
        for ox in range(wo):
            cols = np.zeros((c_in, k, k))
            for c in range(c_in):
                g = c // per
                for ky in range(k):
                    for kx in range(k):
                        dx, dy = offsets[oy, ox, g, ky * k + kx]
                        cols[c, ky, kx] = _bilinear_scalar(x, c, ox * stride - p + kx + dx,
                                                           oy * stride - p + ky + dy)
            for o in range(c_out):
                out[oy, ox, o] = float(np.sum(weight[o] * cols)) + (0.0 if bias is None else bias[o])
    return out


def naive_se(x, w1, w2, b1, b2):
    x = np.asarray(x, np.float64)
    h, w, c = x.shape
    pooled = [sum(x[i, j, ch] for i in range(h) for j in range(w)) / (h * w) for ch in range(c)]
    hidden = [max(0.0, sum(w1[r, ch] * pooled[ch] for ch in range(c)) + b1[r]) for r in range(len(w1))]
    gates = [1.0 / (1.0 + math.exp(-(sum(w2[ch, r] * hidden[r] for r in range(len(hidden))) + b2[ch])))
             for ch in range(c)]
    return x * np.array(gates)


def central_difference(fn, x, h):
    """Central-difference gradient of scalar ``fn`` at every entry of ``x``."""
    x = np.array(x, np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn(x)
        flat[i] = old - h
        down = fn(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_error(analytic, numeric) -> float:
    """Max abs deviation scaled by the largest reference magnitude."""
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-12))


def off_grid_field(rng, h, w, span=3.0):
    """Random field whose sample points stay inside the image and keep every
    fractional coordinate in [0.2, 0.8], away from bilinear cell edges."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.empty((h, w, 2))
    for axis, base, n in ((0, xs, w), (1, ys, h)):
        target = np.clip(base + rng.uniform(-span, span, (h, w)), 1, n - 2)
        target = np.floor(target) + rng.uniform(0.2, 0.8, (h, w))
        out[..., axis] = np.minimum(target, n - 1.2) - base
    return out


def shifted_pair(seed, shift, size=64):
    """Smooth texture and a copy whose content moved by ``shift`` pixels."""
    f = smooth_texture(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return f(xs, ys).astype(np.float32), f(xs - shift[0], ys - shift[1]).astype(np.float32)


# -- criteria ---------------------------------------------------------------

def _result(name, passed, measured, thresholds, limit):
    return {"name": name, "passed": bool(passed), "measured": measured, "thresholds": thresholds,
            "runtime_limit_s": limit}


def crit_reduction_chain(cfg):
    worst_rs, worst_blur = 0.0, 0.0
    exact = True
    for k, gen in enumerate(GENERATORS):
        scene = SyntheticScene(gen, width=32, height=32, n_frames=24, seed=cfg["seed"] + k,
                               velocity=(0.5, 0.0) if gen == "rotonly_text" else (300.0, 100.0))
        seq = scene.render()
        t = 12 * scene.dt
        sh = ShutterParams(t_r=8 * scene.dt / 32, t_e=3 * scene.dt)
        a = simulate_rscd(seq, t, ShutterParams(t_r=sh.t_r, t_e=0.0))
        b = simulate_rs(seq, t, sh)
        exact &= bool(np.array_equal(a, b))
        worst_rs = max(worst_rs, float(np.max(np.abs(a.astype(np.float64) - b))))
        a = simulate_rscd(seq, t, ShutterParams(t_r=0.0, t_e=sh.t_e))
        b = simulate_gs_blur(seq, t, sh)
        worst_blur = max(worst_blur, float(np.max(np.abs(a.astype(np.float64) - b))))
    return _result("formation reduction chain", exact and worst_blur < 1e-6,
                   {"te0_exact": exact, "te0_max_abs": worst_rs, "tr0_max_abs": worst_blur},
                   {"te0": "exact", "tr0_max_abs": 1e-6}, 5.0)


def crit_oracle(cfg):
    worst = 0.0
    for k in range(3):
        scene = SyntheticScene("ramp", n_frames=8, seed=cfg["seed"] + 10 + k, channels=1 + 2 * (k == 2))
        seq = scene.render()
        sh = ShutterParams(t_r=4 * scene.dt / 64, t_e=scene.dt)
        t = 3.5 * scene.dt
        fast = simulate_rscd(seq, t, sh, SynthesisMode("interpolate", 64))
        ref = oracle_rscd(seq, t, sh, 1024)
        worst = max(worst, float(np.max(np.abs(fast.astype(np.float64) - ref))))
    return _result("oracle equivalence S=64 vs 1024", worst < 1e-4, {"max_abs": worst},
                   {"max_abs": 1e-4}, 30.0)


def crit_gradients(cfg):
    rng = np.random.default_rng(cfg["seed"] + 20)
    h = w = 16
    errs = {"backward_warp_src": 0.0, "backward_warp_field": 0.0, "charbonnier": 0.0, "tv": 0.0,
            "bilinear_points": 0.0, "objective": 0.0}
    solver = SolverConfig()
    for _ in range(10):
        src = rng.uniform(0, 1, (h, w, 1))
        up = rng.uniform(-1, 1, (h, w, 1))
        d = off_grid_field(rng, h, w)
        g_src, g_field = backward_warp_grad(src, d, up)

        def warp_loss_field(f):
            return float(np.sum(backward_warp(src, f)[0] * up))

        def warp_loss_src(s):
            return float(np.sum(backward_warp(s, d)[0] * up))

        errs["backward_warp_field"] = max(errs["backward_warp_field"],
                                          rel_error(g_field, central_difference(warp_loss_field, d, 1e-4)))
        errs["backward_warp_src"] = max(errs["backward_warp_src"],
                                        rel_error(g_src, central_difference(warp_loss_src, src, 1e-3)))

        r = rng.normal(0, 0.5, (h, w, 1))
        _, g = charbonnier_loss(r, 0.1)
        errs["charbonnier"] = max(errs["charbonnier"], rel_error(
            g, central_difference(lambda z: charbonnier_loss(z, 0.1)[0], r, 1e-5)))

        f = rng.normal(0, 1, (h, w, 2))
        _, g = tv_loss(f, 0.1)
        errs["tv"] = max(errs["tv"], rel_error(g, central_difference(lambda z: tv_loss(z, 0.1)[0], f, 1e-5)))

        pts = np.column_stack([rng.integers(0, w - 1, 12) + rng.uniform(0.2, 0.8, 12),
                               rng.integers(0, h - 1, 12) + rng.uniform(0.2, 0.8, 12)])
        img = rng.uniform(0, 1, (h, w, 2))
        _, gx, gy = bilinear_sample_grad(img, pts)
        analytic = np.stack([gx.sum(axis=-1), gy.sum(axis=-1)], axis=-1)
        numeric = np.zeros_like(analytic)
        for i in range(len(pts)):
            numeric[i] = central_difference(lambda p: float(bilinear_sample(img, p[None]).sum()), pts[i], 1e-4)
        errs["bilinear_points"] = max(errs["bilinear_points"], rel_error(analytic, numeric))

        a = rng.uniform(0, 1, (h, w, 1))
        b = rng.uniform(0, 1, (h, w, 1))
        d = off_grid_field(rng, h, w)
        _, g = energy(d, a, b, solver)
        numeric = central_difference(lambda z: energy(z, a, b, solver, with_grad=False), d, 1e-5)
        errs["objective"] = max(errs["objective"], rel_error(g, numeric))
    return _result("analytic gradients vs central differences", max(errs.values()) < 1e-4, errs,
                   {"rel_error": 1e-4}, 20.0)


def crit_flow(cfg):
    a, b = shifted_pair(cfg["seed"] + 30, (3.0, 2.0))
    field, report = solve_flow(a, b)
    epe = float(np.mean(np.linalg.norm(interior(field, 6) - np.array([3.0, 2.0]), axis=-1)))
    monotone = all(np.all(np.diff(trace) <= 0) for lv in report.levels for trace in lv.stage_traces)
    return _result("flow recovers (3, 2) shift", epe < 0.3 and monotone,
                   {"interior_epe_px": epe, "traces_monotone": bool(monotone),
                    "iterations": report.iterations},
                   {"interior_epe_px": 0.3}, 30.0)


def _pan_setup(cfg):
    v = tuple(float(c) for c in cfg["pan_velocity"])
    scene = SyntheticScene("pan", velocity=v, n_frames=64, seed=cfg["seed"] + 3)
    seq = scene.render()
    sh = ShutterParams(t_r=16 * scene.dt / 64)
    t, span = 32 * scene.dt, 8 * scene.dt
    # splat boundary band plus the displacement reached by the neighbours
    vmax = max(abs(v[0]), abs(v[1]))
    border = math.ceil(vmax * 16 * scene.dt / 2) + 2 + math.ceil(vmax * span * 1.5)
    return seq, sh, t, span, v, border


def crit_rectify(cfg):
    seq, sh, t, span, v, border = _pan_setup(cfg)
    gs = sample_gs(seq, t)
    rs = simulate_rs(seq, t, sh)
    nxt = simulate_rs(seq, t + span, sh)
    prv = simulate_rs(seq, t - span, sh)
    v_used = v if cfg["rectify_velocity"] is None else tuple(cfg["rectify_velocity"])

    def score(img):
        return psnr(interior(img, border), interior(gs, border))

    p_rs = score(rs)
    p_glob = score(rectify_global(rs, GlobalMotion(*v_used), sh).image)
    flow, _ = solve_flow(rs, nxt)
    p_flow = score(rectify_with_flow(rs, flow, span, sh).image)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for name, img in (("cur", rs), ("prev", prv), ("next", nxt)):
            save_image(img, tmp / f"{name}.png", "linear", 16)
        manifest = {"frame": "cur.png", "prev": "prev.png", "next": "next.png", "dt_s": span,
                    "shutter": {"t_r_us": sh.t_r * 1e6, "t_e_ms": 0.0}, "transfer": "linear",
                    "depth": 16, "out_dir": "out"}
        (tmp / "rectify.json").write_text(json.dumps(manifest))
        status = cli.main(["rectify", str(tmp / "rectify.json")])
        p_cli = score(load_image(tmp / "out" / "rectified.png", "linear")) if status == 0 else -math.inf

    ok = p_glob > 40 and p_flow >= p_glob - 2 and p_cli >= p_rs + 3
    return _result("rectification round trip", ok,
                   {"rs_psnr_db": p_rs, "global_psnr_db": p_glob, "flow_psnr_db": p_flow,
                    "pipeline_psnr_db": p_cli, "border_px": border, "velocity_used": list(v_used)},
                   {"global_psnr_db": 40.0, "flow_gap_db": 2.0, "pipeline_gain_db": 3.0}, 60.0)


def crit_kernels(cfg):
    rng = np.random.default_rng(cfg["seed"] + 60)
    worst_red = 0.0
    worst_oracle = 0.0
    group_counts = []
    for n in range(20):
        groups = [1, 2, 4, 8][n % 4]
        c_in = groups * int(rng.integers(1, 3))
        c_out = int(rng.integers(1, 4))
        k = [1, 3, 5][n % 3]
        stride = 1 + (n % 5 == 4)
        h, w = int(rng.integers(k, 9)), int(rng.integers(k, 9))
        cw = ConvWeights(rng.normal(0, 1, (c_out, c_in, k, k)), rng.normal(0, 1, c_out), stride=stride)
        x = rng.uniform(-1, 1, (h, w, c_in))
        ho, wo = cw.output_size(h, w)
        zero = np.zeros((ho, wo, groups, k * k, 2))
        ref = conv2d(x, cw)
        worst_red = max(worst_red, float(np.max(np.abs(deform_conv2d(x, cw, zero, groups) - ref))))
        worst_oracle = max(worst_oracle, float(np.max(np.abs(
            ref - naive_conv2d(x, cw.weight, cw.bias, stride)))))
        offs = rng.normal(0, 1.5, zero.shape)
        worst_oracle = max(worst_oracle, float(np.max(np.abs(
            deform_conv2d(x, cw, offs, groups) - naive_deform_conv2d(x, cw.weight, offs, groups, cw.bias, stride)))))
        group_counts.append(groups)
    for n in range(5):
        c = 16 * (n + 1)
        se = SEWeights.random(c, 16, rng)
        x = rng.uniform(0, 1, (6, 5, c))
        worst_oracle = max(worst_oracle, float(np.max(np.abs(
            se_attention(x, se) - naive_se(x, se.w1, se.w2, se.b1, se.b2)))))
    return _result("kernel reductions and naive oracles", worst_red < 1e-6 and worst_oracle < 1e-5,
                   {"zero_offset_max_abs": worst_red, "oracle_max_abs": worst_oracle,
                    "configs": 20, "max_groups": max(group_counts)},
                   {"zero_offset_max_abs": 1e-6, "oracle_max_abs": 1e-5}, 20.0)


def random_homography(rng):
    """Near-identity projective map, the regime of two co-aligned cameras.

    Over a 640 px field the projective row changes the scale by a few percent.
    """
    H = np.eye(3)
    H[:2, :2] += rng.normal(0, 0.05, (2, 2))
    H[:2, 2] = rng.uniform(-20, 20, 2)
    H[2, :2] = rng.normal(0, 1e-4, 2)
    return H


def crit_calib(cfg):
    rng = np.random.default_rng(cfg["seed"] + 70)
    H_true = random_homography(rng)
    src = rng.uniform(0, 640, (30, 2))
    dst = project(H_true, src)
    H_exact = dlt(src, dst)
    exact_rms = rms_symmetric_transfer(H_exact, src, dst)
    exact_dev = float(np.max(np.abs(H_exact - H_true / H_true[2, 2])))
    noisy = dst + rng.normal(0, 0.5, dst.shape)
    H, rms = estimate_homography(src, noisy)
    grid = np.stack(np.meshgrid(np.linspace(0, 640, 9), np.linspace(0, 640, 9)), -1).reshape(-1, 2)
    grid_rms = float(np.sqrt(np.mean(np.sum((project(H, grid) - project(H_true, grid)) ** 2, axis=1))))
    ok = rms < 1.0 and grid_rms < 1.0 and exact_rms < 1e-9 and exact_dev < 1e-9
    return _result("homography calibration", ok,
                   {"noisy_rms_px": rms, "grid_rms_px": grid_rms, "exact_rms_px": exact_rms,
                    "exact_max_entry_dev": exact_dev},
                   {"noisy_rms_px": 1.0, "exact": 1e-9}, 5.0)


def crit_metrics(cfg):
    rng = np.random.default_rng(cfg["seed"] + 80)
    a = rng.uniform(0, 0.9, (48, 48, 3))
    p = psnr(a, a + 0.1)
    s_same = ssim(a, a)
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    asym = max(abs(psnr(a, b) - psnr(b, a)), abs(ssim(a, b) - ssim(b, a)))
    ok = abs(p - 20.0) <= 1e-3 and s_same == 1.0 and asym < 1e-9
    return _result("metric closed forms and symmetry", ok,
                   {"offset_psnr_db": p, "ssim_identical": s_same, "asymmetry": asym},
                   {"offset_psnr_tol_db": 1e-3, "asymmetry": 1e-9}, 5.0)


def crit_striping(cfg):
    scene = SyntheticScene("pan", velocity=(20.0, 0.0), n_frames=72, seed=cfg["seed"] + 90, flicker=0.2)
    seq = scene.render()
    # one source frame per row, rows landing halfway between source frames
    sh = ShutterParams(t_r=scene.dt)
    t = 34.5 * scene.dt
    copy = row_discontinuity(simulate_rs(seq, t, sh, SynthesisMode("rowcopy")))
    interp = row_discontinuity(simulate_rs(seq, t, sh, SynthesisMode("interpolate")))
    return _result("rowcopy striping", copy >= 2 * interp,
                   {"rowcopy": copy, "interpolate": interp, "ratio": copy / interp},
                   {"ratio": 2.0}, 5.0)


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def crit_determinism(cfg):
    scene = SyntheticScene("pan", width=48, height=48, velocity=(250.0, 60.0), n_frames=40,
                           seed=cfg["seed"] + 100, channels=3)
    seq = scene.render()
    runs = {}
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        save_sequence(seq, tmp / "seq", "linear", 16)
        synth = {"sequence": "seq/sequence.json", "transfer": "linear",
                 "shutter": {"t_r_us": 12e3 / 48, "t_e_ms": 2.0}, "outputs": ["rs", "rscd"],
                 "formats": ["png", "rstf"], "stride": 4}
        (tmp / "synth.json").write_text(json.dumps(synth))
        rect = {"frame": "s1_t1/rscd_0004.png", "prev": "s1_t1/rscd_0002.png",
                "next": "s1_t1/rscd_0006.png", "dt_s": 8 * scene.dt,
                "shutter": {"t_r_us": 12e3 / 48, "t_e_ms": 2.0}, "transfer": "linear"}
        (tmp / "rectify.json").write_text(json.dumps(rect))
        codes = []
        for run, threads in (("1", 1), ("2", 1), ("3", 4)):
            codes.append(cli.main(["synth", str(tmp / "synth.json"), "--out", str(tmp / f"s{run}_t{threads}"),
                                   "--threads", str(threads)]))
            codes.append(cli.main(["rectify", str(tmp / "rectify.json"), "--out",
                                   str(tmp / f"r{run}_t{threads}"), "--threads", str(threads)]))
            runs[run] = (_tree_bytes(tmp / f"s{run}_t{threads}"), _tree_bytes(tmp / f"r{run}_t{threads}"))
    base = runs["1"]
    same = all(runs[k] == base for k in runs) and bool(base[0]) and bool(base[1])
    return _result("byte-identical CLI outputs", same and not any(codes),
                   {"exit_codes": codes, "synth_files": len(base[0]), "rectify_files": len(base[1]),
                    "identical": same},
                   {"threads": [1, 4], "runs": 3}, 60.0)


CRITERIA = {
    1: crit_reduction_chain,
    2: crit_oracle,
    3: crit_gradients,
    4: crit_flow,
    5: crit_rectify,
    6: crit_kernels,
    7: crit_calib,
    8: crit_metrics,
    9: crit_striping,
    10: crit_determinism,
}


def run_criterion(number: int, config: dict | None = None) -> dict:
    cfg = {**DEFAULTS, **(config or {})}
    start = time.perf_counter()
    res = CRITERIA[number](cfg)
    elapsed = time.perf_counter() - start
    res["id"] = number
    res["within_time"] = elapsed < res["runtime_limit_s"]
    res["passed"] = res["passed"] and res["within_time"]
    if cfg["record_timing"]:
        res["runtime_s"] = elapsed
    return res


def run_suite(config: dict | None = None) -> dict:
    config = dict(config or {})
    unknown = set(config) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown suite config keys {sorted(unknown)}")
    cfg = {**DEFAULTS, **config}
    results = [run_criterion(n, cfg) for n in cfg["criteria"]]
    return {"spec_version": cli.SPEC_VERSION, "config": cfg, "criteria": results,
            "passed": all(r["passed"] for r in results)}


def _jsonable(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def dumps_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2) + "\n"
