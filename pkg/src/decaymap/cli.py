"""Command-line entry point for reproducible mapping runs.

Subcommands: build-dct, build-grid, simulate, eval, render, check-grads.
Every command prints one summary line to stdout and writes its artifacts to
the declared paths. Option precedence is CLI flag over --config JSON file
over built-in defaults (the built-ins follow the reference experimental
setup). Reruns with identical inputs and seeds produce byte-identical
artifacts; reports may differ only in wall-time fields.

Exit codes: 0 success, 1 error, 2 fit did not converge within max-iters,
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dataio import (
    PatchSpec,
    extract_patch,
    load_scans,
    parse_carmen,
    save_scans,
    scans_to_rays,
)
from .derivatives import fd_check
from .errors import CarmenParseError, InitFailureError, InvalidInputError
from .evaluate import (
    PAPER_RESOLUTIONS,
    rasterize,
    render_pgm,
    run_map_comparison_with_maps,
)
from .fit import FitConfig, fit
from .forward import DEFAULT_R_MAX, DEFAULT_R_MIN, ScanSet, SensorLimits
from .grid import GridGeometry, build_grid, load_grid_map, save_grid_map
from .simulate import fan_rays, simulate_scan
from .spectral import SpectralMap, load_spectral_map, save_spectral_map

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve that for
    non-converged fits, so usage problems exit 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(USAGE_EXIT)


def _require_path(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InvalidInputError(f"input path does not exist: {p}")
    return p


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(_require_path(path)) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise InvalidInputError("config file must hold a JSON object")
    return cfg


class _Opts:
    """Resolves option values: CLI flag > config file > built-in default."""

    def __init__(self, args: argparse.Namespace, defaults: dict):
        self.args = vars(args)
        self.config = _load_config(self.args.get("config"))
        self.defaults = defaults

    def get(self, key: str):
        v = self.get_explicit(key)
        return self.defaults.get(key) if v is None else v

    def get_explicit(self, key: str):
        """Flag or config value only; None when neither was given."""
        v = self.args.get(key)
        if v is not None:
            return v
        return self.config.get(key)


_FIT_DEFAULTS = {
    "rows": 10,
    "cols": 10,
    "max_iters": 200,
    "rel_tol": 1e-3,
    "init": "grid-dct",
    "noise_scale": 1e-3,
    "seed": 0,
    "mode": "newton",
    "rmin": DEFAULT_R_MIN,
    "rmax": DEFAULT_R_MAX,
    "patch_width": 10.0,
    "patch_height": 10.0,
    "max_rays": 10_000,
    "poses": 20,
    "beams": 100,
    "truth_rows": 200,
    "truth_cols": 200,
    "extent": 10.0,
}


def _threads(opts: _Opts) -> int:
    v = opts.get("threads")
    if v is None:
        v = os.environ.get("DECAYMAP_THREADS")
    return int(v) if v else max(os.cpu_count() or 1, 1)


def _fit_config(opts: _Opts) -> FitConfig:
    return FitConfig(
        rows=int(opts.get("rows")),
        cols=int(opts.get("cols")),
        max_iters=int(opts.get("max_iters")),
        rel_tol=float(opts.get("rel_tol")),
        init=str(opts.get("init")),
        noise_scale=float(opts.get("noise_scale")),
        seed=int(opts.get("seed")),
        hessian_mode=str(opts.get("mode")),
    )


def _input_scans(opts: _Opts) -> tuple[ScanSet, tuple]:
    """Load scans from --scans, or parse+patch a Carmen log from --log."""
    scans_path = opts.get("scans")
    log_path = opts.get("log")
    if scans_path:
        return load_scans(_require_path(scans_path))
    if not log_path:
        raise InvalidInputError("give --scans or --log as input")
    with open(_require_path(log_path)) as fh:
        raw = parse_carmen(fh)
    limits = SensorLimits(float(opts.get("rmin")), float(opts.get("rmax")))
    world = scans_to_rays(raw, limits)
    corner = opts.get("patch_corner")
    center = opts.get("patch_center")
    patch = PatchSpec(
        corner=tuple(corner) if corner else None,
        center=tuple(center) if center else None,
        width=float(opts.get("patch_width")),
        height=float(opts.get("patch_height")),
        max_rays=int(opts.get("max_rays")),
    )
    local = extract_patch(world, patch)
    return local, (patch.width, patch.height)


def _load_field(opts: _Opts):
    map_path = opts.get("map")
    grid_path = opts.get("grid")
    if map_path:
        return load_spectral_map(_require_path(map_path))
    if grid_path:
        return load_grid_map(_require_path(grid_path))
    raise InvalidInputError("give --map or --grid")


def cmd_build_dct(opts: _Opts) -> int:
    scans, extent = _input_scans(opts)
    config = _fit_config(opts)
    spectral, report = fit(scans, extent, config)
    out = opts.get("out")
    save_spectral_map(spectral, out)
    report_path = opts.get("report")
    if report_path:
        with open(report_path, "w") as fh:
            json.dump(asdict(report), fh, sort_keys=True)
            fh.write("\n")
    print(
        f"build-dct: rows={config.rows} cols={config.cols} rays={len(scans)} "
        f"loglik={report.final_loglik:.6f} iters={report.iterations} "
        f"converged={report.converged} -> {out}"
    )
    return 0 if report.converged else 2


def cmd_build_grid(opts: _Opts) -> int:
    scans, extent = _input_scans(opts)
    rows = int(opts.get("rows"))
    cols = int(opts.get("cols"))
    grid = build_grid(scans, GridGeometry(rows, cols, float(extent[0]) / rows))
    out = opts.get("out")
    save_grid_map(grid, out)
    observed = int(np.count_nonzero(grid.observed))
    print(
        f"build-grid: rows={rows} cols={cols} rays={len(scans)} "
        f"observed_cells={observed} -> {out}"
    )
    return 0


def cmd_simulate(opts: _Opts) -> int:
    field = _load_field(opts)
    seed = opts.get_explicit("seed")
    if seed is None:
        raise InvalidInputError("--seed is required for simulate")
    limits = SensorLimits(float(opts.get("rmin")), float(opts.get("rmax")))
    extent = field.extent if isinstance(field, SpectralMap) else field.geometry.extent
    rng = np.random.default_rng(int(seed))
    origins, dirs = fan_rays(extent, int(opts.get("poses")), int(opts.get("beams")), rng)
    scans = simulate_scan(field, origins, dirs, limits, int(seed) + 1)
    out = opts.get("out")
    save_scans(scans, extent, out)
    n_ret = sum(1 for lr in scans.rays if lr.outcome.is_return)
    print(
        f"simulate: rays={len(scans)} returns={n_ret} seed={int(seed)} -> {out}"
    )
    return 0


def cmd_eval(opts: _Opts) -> int:
    scans, extent = _input_scans(opts)
    res_opt = opts.get("resolutions")
    if res_opt is None:
        resolutions = PAPER_RESOLUTIONS
    else:
        resolutions = tuple(int(v) for v in str(res_opt).split(",") if v)
    truth_shape = (int(opts.get("truth_rows")), int(opts.get("truth_cols")))
    fit_cfg = _fit_config(opts)
    out_dir = Path(opts.get("out_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    report, truth, maps = run_map_comparison_with_maps(
        scans, extent, resolutions, truth_shape, fit_cfg, threads=_threads(opts)
    )
    (out_dir / "report.jsonl").write_text(report.to_jsonl())
    (out_dir / "report.csv").write_text(report.to_csv())
    (out_dir / "truth.pgm").write_bytes(render_pgm(rasterize(truth, *truth_shape)))
    for n, (spectral, grid) in maps.items():
        (out_dir / f"dct_{n}.pgm").write_bytes(render_pgm(rasterize(spectral, *truth_shape)))
        (out_dir / f"grid_{n}.pgm").write_bytes(render_pgm(rasterize(grid, *truth_shape)))
    print(
        f"eval: rays={len(scans)} resolutions={','.join(str(r) for r in resolutions)} "
        f"-> {out_dir}/report.csv"
    )
    return 0


def cmd_render(opts: _Opts) -> int:
    field = _load_field(opts)
    rows = opts.get_explicit("rows")
    cols = opts.get_explicit("cols")
    if isinstance(field, SpectralMap):
        rows = int(rows) if rows else 200
        cols = int(cols) if cols else 200
    else:
        rows = int(rows) if rows else field.rows
        cols = int(cols) if cols else field.cols
    raster = rasterize(field, rows, cols)
    out = opts.get("out")
    Path(out).write_bytes(render_pgm(raster))
    print(f"render: {rows}x{cols} -> {out}")
    return 0


def cmd_check_grads(opts: _Opts) -> int:
    scans, extent = _input_scans(opts)
    map_path = opts.get("map")
    if map_path:
        spectral = load_spectral_map(_require_path(map_path))
    else:
        rng = np.random.default_rng(int(opts.get("seed")))
        rows = int(opts.get("rows"))
        cols = int(opts.get("cols"))
        A = rng.normal(0.0, 0.3, size=(rows, cols))
        A[0, 0] += 0.8
        spectral = SpectralMap(A, *extent)
    order = int(opts.get("order") or 1)
    step = opts.get("step")
    tol = opts.get("tol")
    tol = float(tol) if tol is not None else (1e-5 if order == 1 else 1e-4)
    rep = fd_check(spectral, scans, step=float(step) if step else None, order=order)
    payload = {
        "order": rep.order,
        "max_rel_err": rep.max_rel_err,
        "worst_index": list(rep.worst_index),
        "step": rep.step,
        "tol": tol,
        "ok": bool(rep.max_rel_err <= tol),
    }
    print(json.dumps(payload, sort_keys=True))
    return 0 if rep.max_rel_err <= tol else 1


def _add_common(p: argparse.ArgumentParser, *groups: str) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--threads", type=int, help="worker-thread cap (env DECAYMAP_THREADS)")
    if "input" in groups:
        p.add_argument("--scans", help="scan-set text file")
        p.add_argument("--log", help="Carmen log file")
        p.add_argument("--patch-corner", nargs=2, type=float, metavar=("X0", "Y0"))
        p.add_argument("--patch-center", nargs=2, type=float, metavar=("CX", "CY"))
        p.add_argument("--patch-width", type=float)
        p.add_argument("--patch-height", type=float)
        p.add_argument("--max-rays", type=int)
        p.add_argument("--rmin", type=float, help="sensor minimum range (m)")
        p.add_argument("--rmax", type=float, help="sensor maximum range (m)")
    if "fit" in groups:
        p.add_argument("--rows", type=int, help="coefficient rows L")
        p.add_argument("--cols", type=int, help="coefficient cols M")
        p.add_argument("--max-iters", type=int)
        p.add_argument("--rel-tol", type=float)
        p.add_argument("--init", choices=["grid-dct", "constant-noise"])
        p.add_argument("--noise-scale", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=["newton", "gradient"], help="optimizer mode")
    if "field" in groups:
        p.add_argument("--map", help="spectral map text file")
        p.add_argument("--grid", help="grid map text file")


def build_parser() -> _Parser:
    parser = _Parser(prog="decaymap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dct", parents=[], help="fit a spectral map to scans")
    _add_common(p, "input", "fit")
    p.add_argument("--out", required=True, help="output map path")
    p.add_argument("--report", help="optional fit-report JSON path")
    p.set_defaults(func=cmd_build_dct)

    p = sub.add_parser("build-grid", help="accumulate a decay-rate grid map")
    _add_common(p, "input")
    p.add_argument("--rows", type=int, help="grid rows")
    p.add_argument("--cols", type=int, help="grid cols")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_grid)

    p = sub.add_parser("simulate", help="sample scans exactly from a field")
    _add_common(p, "field")
    p.add_argument("--poses", type=int, help="number of sensor poses")
    p.add_argument("--beams", type=int, help="beams per pose")
    p.add_argument("--seed", type=int, help="RNG seed (required)")
    p.add_argument("--rmin", type=float)
    p.add_argument("--rmax", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="equal-parameter spectral vs grid comparison")
    _add_common(p, "input", "fit")
    p.add_argument("--resolutions", help="comma-separated list, e.g. 10,13,20")
    p.add_argument("--truth-rows", type=int)
    p.add_argument("--truth-cols", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a field to a PGM image")
    _add_common(p, "field")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("check-grads", help="finite-difference derivative check")
    _add_common(p, "input", "fit")
    p.add_argument("--map", help="spectral map file (else a seeded random map)")
    p.add_argument("--order", type=int, choices=[1, 2])
    p.add_argument("--step", type=float)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_check_grads)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    opts = _Opts(args, _FIT_DEFAULTS)
    try:
        return args.func(opts)
    except (InvalidInputError, CarmenParseError, InitFailureError, OSError) as exc:
        print(f"decaymap {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
