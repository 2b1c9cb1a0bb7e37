"""Command-line entry point: ``twolevel-lpbf {run,verify,mesh-info,classify-test}``.

Exit status 0 on success, 1 for configuration or input errors, 2 for
runtime and solver failures.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import geometry, grid, metrics, process, verification

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("twolevel_lpbf")


class InputError(Exception):
    pass


def _load(args, require=True):
    if args.config is None:
        if require:
            raise InputError("--config is required for this command")
        return None
    try:
        cfg = cfgmod.load_config(args.config)
    except cfgmod.ConfigError as exc:
        raise InputError(str(exc)) from None
    if getattr(args, "workers", None):
        cfg = cfg.with_values(run__workers=args.workers)
    return cfg


def _load_part(cfg):
    path = cfg.path("stl")
    try:
        soup = geometry.load_stl(path)
    except (OSError, geometry.StlError) as exc:
        raise InputError(f"cannot read STL {path}: {exc}") from None
    return process.place_part(soup, cfg.setup().plate_size)


def _measured(cfg):
    path = cfg.path("measured_csv")
    if path is None or not path.is_file():
        return None
    try:
        return metrics.read_measured_csv(path)
    except metrics.MetricsError as exc:
        raise InputError(str(exc)) from None


def write_dwell_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer_index", "sim_time_s", "dwell_T_K", "dwell_T_degC", "mode"])
        for r in records:
            w.writerow([r.layer, f"{r.time:.6f}", f"{r.T:.9f}", f"{r.T - 273.15:.9f}", r.mode])


def read_dwell_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([int(r["layer_index"]) for r in rows]), np.array([float(r["dwell_T_K"]) for r in rows])


def write_audit_csv(path, audits):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer_index", "check", "ok"])
        for layer, checks in audits:
            w.writerows((layer, k, int(bool(v))) for k, v in checks.items())


def write_trace_csv(path, traces):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer_index", "phase", "sim_time_s", "iteration", "residual", "mode", "wall_s"])
        w.writerows(traces)


def cmd_run(args):
    cfg = _load(args)
    part = _load_part(cfg)
    measured = _measured(cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_manifest(out / "manifest.ini", cfg,
                          extra={"command": "run", "started": time.strftime("%Y-%m-%d %H:%M:%S")})
    try:
        res = process.run_build(part, cfg.setup(), cfg.material(), cfg.boundary(),
                                cfg.process_params(), cfg.coupling(), out_dir=out / "snapshots",
                                verbose=args.verbose)
    except process.BuildError as exc:
        print(f"error: build failed at {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_dwell_csv(out / "dwell.csv", res.dwell)
    if res.audits:
        write_audit_csv(out / "audit.csv", res.audits)
    if args.verbose:
        write_trace_csv(out / "coupling_trace.csv", res.traces)
    sim = metrics.DwellSeries.of([r.T for r in res.dwell])
    meas_plot = None
    if measured is not None and len(measured):
        report = metrics.metrics_report(sim, measured)
        metrics.write_report(out / "metrics.txt", report)
        meas_plot = (measured.layers, measured.T - 273.15)
        print(f"max relative error {report['max_relative_error_pct']:.2f}% "
              f"(layer {report['max_error_layer']}), pearson {report['pearson_pct']}")
    if cfg.get("output", "plots") and len(res.dwell):
        from .plotting import plot_dwell

        plot_dwell(out / "dwell.png", sim.layers, sim.T - 273.15, meas_plot)
    print(f"{len(res.dwell)} layers, {res.time:.1f} s simulated in {res.wall:.1f} s; "
          f"outputs in {out}")
    return EXIT_OK


def cmd_verify(args):
    cfg = _load(args, require=False)
    tol = cfg.get("coupling", "tol") if cfg is not None else 1e-6
    workers = args.workers or (cfg.get("run", "workers") if cfg is not None else 1)
    results = verification.run_all(tol, workers)
    lines = [r.line() for r in results]
    print("\n".join(lines))
    print(f"{sum(r.passed for r in results)}/{len(results)} suites passed")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text("\n".join(lines) + "\n")
        mms = next(r for r in results if r.name == "MMS convergence")
        from .plotting import plot_convergence

        plot_convergence(out / "mms.png", mms.values["h"], mms.values["l2_error"])
    return EXIT_OK


def cmd_mesh_info(args):
    cfg = _load(args)
    part = _load_part(cfg)
    setup, params = cfg.setup(), cfg.process_params()
    px, py, pz = setup.plate_size
    gm = grid.build_global_mesh(((0, 0, 0), (px, py, pz)), setup.h_plane, setup.h_plate_z)
    lo, hi = part.bbox
    n_layers = setup.n_layers
    if n_layers is None:
        n_layers = int(np.ceil((hi[2] * 1e-3 - pz) / params.t_a - 1e-9))
    growth = grid.start_growth(gm, params.t_a, n_layers)
    print(f"part bbox [mm]: {np.round(lo, 3).tolist()} .. {np.round(hi, 3).tolist()} "
          f"({len(part.triangles)} facets, {part.dropped} degenerate dropped)")
    print(f"plate mesh: {gm.shape} cells, {gm.n_nodes} nodes, {gm.n_elements} tets")
    print(f"layers: {n_layers} of {params.t_a * 1e3:.3f} mm "
          f"(adds {6 * gm.shape[0] * gm.shape[1]} tets each)")
    gm1, growth, _ = grid.activate_layer(gm, growth)
    box = grid.default_local_box(1e-3 * lo, 1e-3 * hi, gm1, growth, setup.local_margin,
                                 setup.local_depth, setup.h_local, setup.local_full_bed)
    lm = grid.build_local_mesh(box, gm1)
    print(f"local box [mm]: x {box.x_lo * 1e3:.2f}..{box.x_hi * 1e3:.2f}, "
          f"y {box.y_lo * 1e3:.2f}..{box.y_hi * 1e3:.2f}, "
          f"z {box.z_bottom * 1e3:.2f}..{box.z_top * 1e3:.2f}")
    print(f"local mesh: {lm.shape} cells, {lm.n_nodes} nodes, {lm.n_elements} tets")
    audits = {"global": grid.audit_mesh(gm1), "local": grid.audit_mesh(lm)}
    for name, checks in audits.items():
        print(f"{name} audits: " + ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()))
    ok = all(all(c.values()) for c in audits.values())
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_classify_test(args):
    res = verification.geometry_oracle_suite(args.points)
    print(res.line())
    cfg = _load(args, require=False)
    if cfg is not None:
        soup = _load_part(cfg)
        lo, hi = soup.bbox
        rng = np.random.default_rng(0)
        pts = rng.uniform(lo, hi, (args.points, 3))
        frac = geometry.inside_mask(soup, pts).mean()
        tri = soup.triangles
        vol = abs(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum()) / 6
        box_vol = np.prod(hi - lo)
        print(f"{cfg.path('stl').name}: solid fraction {frac:.4f}, "
              f"sampled volume {frac * box_vol:.2f} mm^3 vs facet volume {vol:.2f} mm^3")
    return EXIT_OK if res.passed else EXIT_RUNTIME


def build_parser():
    p = argparse.ArgumentParser(prog="twolevel-lpbf",
                                description="Two-level part-scale thermal simulation of LPBF builds.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (INI)")
    common.add_argument("--output", type=Path, help="output directory")
    common.add_argument("--workers", type=int, help="worker threads for PARALLEL coupling")
    common.add_argument("--verbose", action="store_true", help="debug logging and coupling trace")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate a build").set_defaults(func=cmd_run)
    sub.add_parser("verify", parents=[common], help="run verification suites").set_defaults(func=cmd_verify)
    sub.add_parser("mesh-info", parents=[common], help="describe meshes").set_defaults(func=cmd_mesh_info)
    ct = sub.add_parser("classify-test", parents=[common], help="check STL point classification")
    ct.add_argument("--points", type=int, default=10_000)
    ct.set_defaults(func=cmd_classify_test)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "run" and args.output is None:
        args.output = Path("out")
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
