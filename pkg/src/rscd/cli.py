"""Command-line entry point: ``rscd <subcommand> MANIFEST [--out DIR] [--threads N]``.

Every subcommand reads a JSON manifest, validates it completely (including
loading inputs and computing results) and only then creates the output
directory and writes files, so a failed run never leaves partial output.
Relative paths in a manifest resolve against the manifest's directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from rscd import __version__, _parallel
from rscd.calib import (DegenerateConfigurationError, estimate_color_matrix, estimate_homography,
                        read_correspondences, read_patches)
from rscd.flowsolve import SolverConfig, solve_flow
from rscd.formation import (SynthesisMode, TimeRangeError, oracle_rscd, sample_gs, simulate_gs_blur,
                            simulate_rs, simulate_rscd, valid_center_range)
from rscd.imagecore import ShutterParams, load_image, load_sequence, save_image
from rscd.metrics import interior, psnr, ssim
from rscd.rectify import fuse_aligned, rectify_with_flow, warp_neighbour
from rscd.tensorfile import read_tensor, write_tensor

log = logging.getLogger("rscd")

SPEC_VERSION = "1.0"


class ManifestError(ValueError):
    pass


class RunFailure(RuntimeError):
    """Raised after outputs were written when some requested item failed."""


# -- manifest helpers ------------------------------------------------------

def _load_manifest(path, allowed: set, required: set) -> tuple[dict, Path]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    unknown = set(data) - allowed
    if unknown:
        raise ManifestError(f"{path}: unknown keys {sorted(unknown)}")
    missing = required - set(data)
    if missing:
        raise ManifestError(f"{path}: missing keys {sorted(missing)}")
    return data, path.parent


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _choice(data, key, options, default):
    value = data.get(key, default)
    if value not in options:
        raise ManifestError(f"{key} must be one of {sorted(options)}, got {value!r}")
    return value


def _shutter(data) -> ShutterParams:
    sh = data.get("shutter")
    if not isinstance(sh, dict):
        raise ManifestError("shutter must be an object {t_r_us, t_e_ms}")
    unknown = set(sh) - {"t_r_us", "t_e_ms"}
    if unknown:
        raise ManifestError(f"unknown shutter keys {sorted(unknown)}")
    try:
        t_r = float(sh.get("t_r_us", 0.0)) * 1e-6
        t_e = float(sh.get("t_e_ms", 0.0)) * 1e-3
        return ShutterParams(t_r=t_r, t_e=t_e)
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"invalid shutter: {exc}") from None


def _mode(data) -> SynthesisMode:
    m = data.get("mode", {})
    if isinstance(m, str):
        m = {"mode": m}
    unknown = set(m) - {"mode", "samples"}
    if unknown:
        raise ManifestError(f"unknown mode keys {sorted(unknown)}")
    try:
        return SynthesisMode(m.get("mode", "interpolate"), int(m.get("samples", 16)))
    except ValueError as exc:
        raise ManifestError(str(exc)) from None


def _solver(data) -> SolverConfig:
    try:
        return SolverConfig.from_overrides(data.get("solver"))
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"invalid solver overrides: {exc}") from None


def _out_dir(data, base, override) -> Path:
    if override:
        return Path(override)
    if "out_dir" not in data:
        raise ManifestError("no output directory: set out_dir or pass --out")
    return _resolve(base, data["out_dir"])


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _put_tensor(value, path) -> None:
    write_tensor(path, value)


def _write_outputs(out_dir: Path, files: dict) -> None:
    """Write ``{name: bytes | str | (writer, payload)}``; writers take ``(payload, path)``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, payload in files.items():
        target = out_dir / name
        if isinstance(payload, (bytes, str)):
            mode = "wb" if isinstance(payload, bytes) else "w"
            with open(target, mode) as fh:
                fh.write(payload)
        else:
            writer, value = payload
            writer(value, target)


# -- synth / oracle --------------------------------------------------------

SYNTH_KEYS = {"sequence", "transfer", "out_transfer", "shutter", "mode", "outputs", "times_s",
              "stride", "depth", "formats", "out_dir"}
SIMULATORS = {"rs": simulate_rs, "gs_blur": simulate_gs_blur, "rscd": simulate_rscd}


def _centre_times(data, seq, shutter) -> tuple[list, bool]:
    if "times_s" in data:
        times = [float(t) for t in data["times_s"]]
        if not times:
            raise ManifestError("times_s is empty")
        return times, True
    stride = int(data.get("stride", 1))
    if stride < 1:
        raise ManifestError("stride must be >= 1")
    return [float(t) for t in seq.times()[::stride]], False


def _render(data, base, kinds, render_one):
    transfer = _choice(data, "transfer", {"srgb", "linear"}, "srgb")
    out_transfer = _choice(data, "out_transfer", {"srgb", "linear"}, transfer)
    depth = _choice(data, "depth", {8, 16}, 16)
    formats = data.get("formats", ["png"])
    if not formats or set(formats) - {"png", "rstf"}:
        raise ManifestError("formats must be a non-empty subset of ['png', 'rstf']")
    shutter = _shutter(data)
    seq = load_sequence(_resolve(base, data["sequence"]), transfer)
    times, explicit = _centre_times(data, seq, shutter)

    files = {}
    records = []
    for idx, t in enumerate(times):
        try:
            images = {kind: render_one(kind, seq, t, shutter) for kind in kinds}
        except TimeRangeError as exc:
            if explicit:
                raise TimeRangeError(f"centre time {t:.9g}s: {exc}", row=exc.row, time=exc.time) from None
            continue
        images["gs"] = sample_gs(seq, t)
        entry = {"index": idx, "t": t, "files": {}}
        for kind, img in images.items():
            stem = f"{kind}_{idx:04d}"
            if "png" in formats:
                files[stem + ".png"] = (lambda v, p: save_image(v, p, out_transfer, depth), img)
                entry["files"].setdefault(kind, []).append(stem + ".png")
            if "rstf" in formats:
                files[stem + ".rstf"] = (_put_tensor, img)
                entry["files"].setdefault(kind, []).append(stem + ".rstf")
        records.append(entry)
    if not records:
        lo, hi = valid_center_range(seq, shutter)
        raise TimeRangeError(f"no centre time has every row window inside the sequence; "
                             f"admissible centres span [{lo:.9g}, {hi:.9g}]s")
    return files, records, shutter, depth, out_transfer


def cmd_synth(manifest, out=None) -> int:
    data, base = _load_manifest(manifest, SYNTH_KEYS, {"sequence", "shutter"})
    mode = _mode(data)
    kinds = data.get("outputs", ["rscd"])
    if not kinds or set(kinds) - set(SIMULATORS):
        raise ManifestError(f"outputs must be a non-empty subset of {sorted(SIMULATORS)}")
    out_dir = _out_dir(data, base, out)

    def render_one(kind, seq, t, shutter):
        return SIMULATORS[kind](seq, t, shutter, mode)

    files, records, shutter, depth, out_transfer = _render(data, base, kinds, render_one)
    meta = {
        "spec_version": SPEC_VERSION,
        "t_r_s": shutter.t_r,
        "t_e_s": shutter.t_e,
        "mode": mode.mode,
        "S": mode.samples_per_window,
        "outputs": kinds,
        "depth": depth,
        "transfer": out_transfer,
        "frames": [{**r, "t_r_s": shutter.t_r, "t_e_s": shutter.t_e, "mode": mode.mode,
                    "S": mode.samples_per_window} for r in records],
    }
    files["metadata.json"] = _dump(meta)
    _write_outputs(out_dir, files)
    log.info("synth: wrote %d frame sets to %s", len(records), out_dir)
    return 0


ORACLE_KEYS = SYNTH_KEYS - {"mode", "outputs"} | {"samples_dense"}


def cmd_oracle(manifest, out=None) -> int:
    data, base = _load_manifest(manifest, ORACLE_KEYS, {"sequence", "shutter"})
    dense = int(data.get("samples_dense", 1024))
    if dense < 2:
        raise ManifestError("samples_dense must be >= 2")
    out_dir = _out_dir(data, base, out)

    def render_one(kind, seq, t, shutter):
        return oracle_rscd(seq, t, shutter, dense)

    files, records, shutter, depth, out_transfer = _render(data, base, ["oracle"], render_one)
    files["metadata.json"] = _dump({
        "spec_version": SPEC_VERSION, "t_r_s": shutter.t_r, "t_e_s": shutter.t_e,
        "samples_dense": dense, "depth": depth, "transfer": out_transfer, "frames": records,
    })
    _write_outputs(out_dir, files)
    return 0


# -- flow / rectify --------------------------------------------------------

FLOW_KEYS = {"frame_a", "frame_b", "solver", "transfer", "out_dir"}


def cmd_flow(manifest, out=None) -> int:
    data, base = _load_manifest(manifest, FLOW_KEYS, {"frame_a", "frame_b"})
    transfer = _choice(data, "transfer", {"srgb", "linear"}, "srgb")
    cfg = _solver(data)
    out_dir = _out_dir(data, base, out)
    a = load_image(_resolve(base, data["frame_a"]), transfer)
    b = load_image(_resolve(base, data["frame_b"]), transfer)
    field, report = solve_flow(a, b, cfg)
    _write_outputs(out_dir, {
        "flow.rstf": (_put_tensor, field),
        "report.json": _dump({"spec_version": SPEC_VERSION, **report.to_json()}),
    })
    return 0


RECTIFY_KEYS = {"frame", "prev", "next", "flow_prev", "flow_next", "dt_s", "shutter", "solver",
                "transfer", "depth", "out_dir"}


def _read_flow(path, shape):
    flow = read_tensor(path)
    if flow.shape != (shape[0], shape[1], 2):
        raise ManifestError(f"{path}: flow dims {flow.shape} do not match frame {shape[:2]} x 2")
    return flow


def cmd_rectify(manifest, out=None) -> int:
    data, base = _load_manifest(manifest, RECTIFY_KEYS, {"frame", "dt_s", "shutter"})
    transfer = _choice(data, "transfer", {"srgb", "linear"}, "srgb")
    depth = _choice(data, "depth", {8, 16}, 16)
    shutter = _shutter(data)
    cfg = _solver(data)
    dt = float(data["dt_s"])
    if not dt > 0:
        raise ManifestError("dt_s must be > 0")
    if "next" not in data and "flow_next" not in data:
        raise ManifestError("rectify needs the next frame or a precomputed flow_next")
    out_dir = _out_dir(data, base, out)

    cur = load_image(_resolve(base, data["frame"]), transfer)
    neighbours = {}
    for key in ("prev", "next"):
        if key in data:
            img = load_image(_resolve(base, data[key]), transfer)
            if img.shape != cur.shape:
                raise ManifestError(f"{key} frame dims {img.shape} differ from frame {cur.shape}")
            neighbours[key] = img

    files = {}
    flows = {}
    for key in ("prev", "next"):
        fkey = "flow_" + key
        if fkey in data:
            flows[key] = _read_flow(_resolve(base, data[fkey]), cur.shape)
        elif key in neighbours:
            flows[key], report = solve_flow(cur, neighbours[key], cfg)
            files[f"{fkey}.rstf"] = (_put_tensor, flows[key])
            files[f"{fkey}_report.json"] = _dump({"spec_version": SPEC_VERSION, **report.to_json()})

    primary = rectify_with_flow(cur, flows["next"], dt, shutter)
    warped = {}
    for key, direction in (("prev", -1), ("next", 1)):
        if key in neighbours and key in flows:
            warped[key] = warp_neighbour(neighbours[key], flows[key], dt, shutter, direction)
    result = fuse_aligned(primary, warped.get("prev"), warped.get("next"))

    files["rectified.png"] = (lambda v, p: save_image(v, p, transfer, depth), result)
    files["mask.rstf"] = (_put_tensor, primary.mask)
    files["offsets.json"] = _dump({
        "spec_version": SPEC_VERSION, "dt_s": dt, "t_r_s": shutter.t_r,
        "t_m_s": shutter.t_m(cur.shape[0]), **primary.offsets_json(),
    })
    _write_outputs(out_dir, files)
    return 0


# -- eval / calib ----------------------------------------------------------

EVAL_KEYS = {"pairs", "transfer", "border", "peak", "out_dir"}


def _json_db(x):
    return "inf" if math.isinf(x) else x


def cmd_eval(manifest, out=None) -> int:
    data, base = _load_manifest(manifest, EVAL_KEYS, {"pairs"})
    # default: compare the stored file values as-is
    transfer = _choice(data, "transfer", {"srgb", "linear"}, "linear")
    border = int(data.get("border", 0))
    peak = float(data.get("peak", 1.0))
    pairs = data["pairs"]
    if not isinstance(pairs, list) or not pairs:
        raise ManifestError("pairs must be a non-empty list of [a, b] paths")
    out_dir = _out_dir(data, base, out)

    results = []
    ok = []
    for pair in pairs:
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ManifestError(f"malformed pair {pair!r}")
        entry = {"a": pair[0], "b": pair[1]}
        try:
            a = load_image(_resolve(base, pair[0]), transfer)
            b = load_image(_resolve(base, pair[1]), transfer)
            if a.shape != b.shape:
                raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
            a, b = interior(a, border), interior(b, border)
            p, s = psnr(a, b, peak), ssim(a, b, peak)
            entry.update(psnr_db=_json_db(p), ssim=s)
            ok.append((p, s))
        except (OSError, ValueError) as exc:
            log.warning("skipping pair %s: %s", pair, exc)
            entry["error"] = str(exc)
        results.append(entry)

    report = {"spec_version": SPEC_VERSION, "pairs": results}
    if ok:
        report["mean"] = {"psnr_db": _json_db(float(np.mean([p for p, _ in ok]))),
                          "ssim": float(np.mean([s for _, s in ok]))}
    text = _dump(report)
    _write_outputs(out_dir, {"metrics.json": text})
    sys.stdout.write(text)
    if len(ok) != len(results):
        raise RunFailure(f"{len(results) - len(ok)} of {len(results)} pairs failed")
    return 0


CALIB_KEYS = {"correspondences", "patches", "max_rms", "refine", "out_dir"}


def cmd_calib(manifest, out=None) -> int:
    data, base = _load_manifest(manifest, CALIB_KEYS, set())
    if ("correspondences" in data) == ("patches" in data):
        raise ManifestError("give exactly one of correspondences or patches")
    max_rms = float(data.get("max_rms", 1.0))
    out_dir = _out_dir(data, base, out)
    if "correspondences" in data:
        src, dst = read_correspondences(_resolve(base, data["correspondences"]))
        H, rms = estimate_homography(src, dst, refine=bool(data.get("refine", True)))
        name = "homography.json"
        payload = {"spec_version": SPEC_VERSION, "matrix": H.tolist(), "rms_px": rms, "pairs": len(src)}
    else:
        meas, ref = read_patches(_resolve(base, data["patches"]))
        M, rms = estimate_color_matrix(meas, ref)
        name = "color_matrix.json"
        payload = {"spec_version": SPEC_VERSION, "matrix": M.tolist(), "rms": rms, "patches": len(meas)}
    payload["max_rms"] = max_rms
    payload["passed"] = bool(rms <= max_rms)
    _write_outputs(out_dir, {name: _dump(payload)})
    if rms > max_rms:
        raise RunFailure(f"rms error {rms:.4g} exceeds threshold {max_rms:.4g}")
    return 0


def cmd_suite(manifest=None, out=None) -> int:
    from rscd import bench

    config = {}
    if manifest:
        config = json.loads(Path(manifest).read_text())
    report = bench.run_suite(config)
    text = bench.dumps_report(report)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "suite_report.json").write_text(text)
    sys.stdout.write(text)
    if not report["passed"]:
        raise RunFailure("one or more acceptance criteria failed")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "oracle": cmd_oracle,
    "flow": cmd_flow,
    "rectify": cmd_rectify,
    "eval": cmd_eval,
    "calib": cmd_calib,
    "suite": cmd_suite,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rscd", description="Rolling-shutter frame synthesis and correction tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("manifest", nargs="?" if name == "suite" else None)
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; never changes output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("rscd: error: --threads must be >= 1", file=sys.stderr)
        return 2
    _parallel.set_threads(args.threads)
    try:
        return COMMANDS[args.command](args.manifest, args.out)
    except (ManifestError, TimeRangeError, DegenerateConfigurationError) as exc:
        print(f"rscd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"rscd {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"rscd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    finally:
        _parallel.set_threads(1)


if __name__ == "__main__":
    sys.exit(main())
