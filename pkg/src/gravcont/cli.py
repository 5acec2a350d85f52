"""Command line front end.

Subcommands::

    gravcont synth    CONFIG                 -> observations.csv
    gravcont scan     CONFIG OBSERVATIONS    -> scan.csv
    gravcont continue CONFIG OBSERVATIONS --depth H -> density_h<H>.csv
    gravcont select   CONFIG SCAN OBSERVATIONS -> selection.json
    gravcont peel     CONFIG OBSERVATIONS    -> sources.csv

Every output file gets a ``<stem>.meta.json`` sibling with the resolved
configuration.  Exit codes: 0 success, 2 configuration or usage error,
3 non-convergence of a required solve, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import io
from .continuation import (
    add_noise,
    depth_scan,
    discrepancy_threshold,
    peel_sources,
    select_depth,
    DepthScanResult,
)
from .exceptions import FileFormatError, GravcontError, UsageError
from .forward import assemble_matrix, synth_field
from .model import LayerDensity, make_continuation_grid, make_regular_observation_grid
from .nnls import nnls_solve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NONCONVERGED = 3
EXIT_IO = 4

logger = logging.getLogger("gravcont")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args):
    cfg = io.load_config(args.config)
    return io.with_overrides(
        cfg,
        delta=getattr(args, "delta", None),
        seed=getattr(args, "seed", None),
        output_directory=getattr(args, "output_dir", None),
        depth_start=getattr(args, "depth_start", None),
        depth_stop=getattr(args, "depth_stop", None),
        depth_step=getattr(args, "depth_step", None),
        ls_solver=getattr(args, "ls_solver", None),
        max_rounds=getattr(args, "max_rounds", None),
        stop_fraction=getattr(args, "stop_fraction", None),
    )


def _outdir(cfg) -> Path:
    out = Path(cfg.output_directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    if not cfg.sources:
        raise UsageError("configuration lists no sources")
    o = cfg.observation
    obs = make_regular_observation_grid(o.extent, o.n1, o.n2, o.elevation)
    clean = synth_field(cfg.sources, obs.points, cfg.gravitational_constant)
    noisy = add_noise(clean, cfg.noise) if cfg.noise.delta > 0 else None
    path = io.write_observations(_outdir(cfg) / f"{args.name}.csv", obs.points, clean, noisy)
    io.write_meta(path, cfg, command="synth", rows=len(clean),
                  wall_time_s=time.perf_counter() - t0)
    print(path)
    return EXIT_OK


def _read_obs(args, cfg):
    obs, clean, noisy = io.read_observations(args.observations)
    column = "g_noisy" if noisy is not None else "g_clean"
    return obs, column


def cmd_scan(args) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    obs, column = _read_obs(args, cfg)
    c = cfg.continuation
    scan = depth_scan(obs, c.extent, c.n1, c.n2, cfg.depths, cfg.gravitational_constant,
                      cfg.solver, n_jobs=args.jobs)
    out = _outdir(cfg)
    path = io.write_scan(out / f"{args.name}.csv", scan)
    if args.densities:
        chi_of = dict(zip(scan.depths, scan.residuals))
        for h, dens in zip(scan.depths, scan.solutions):
            dp = io.write_density(out / "densities" / f"density_h{io.fmt(h)}.csv", dens)
            io.write_meta(dp, cfg, command="scan", depth=float(h),
                          residual=float(chi_of[h]))
    io.write_meta(
        path, cfg, command="scan", observations=str(args.observations), fitted_column=column,
        failures=[list(f) for f in scan.failures], wall_time_s=time.perf_counter() - t0,
    )
    for h, msg in scan.failures:
        print(f"depth {h}: {msg}", file=sys.stderr)
    print(path)
    return EXIT_OK


def cmd_continue(args) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    obs, column = _read_obs(args, cfg)
    c = cfg.continuation
    grid = make_continuation_grid(c.extent, c.n1, c.n2, args.depth)
    A = assemble_matrix(obs, grid, cfg.gravitational_constant)
    lines = []
    trace = (lambda it, k, r: lines.append(f"{it} {k} {io.fmt(r)}")) if args.trace else None
    res = nnls_solve(A.entries, obs.values, cfg.solver, trace=trace)
    density = LayerDensity(grid, res.phi)
    path = io.write_density(_outdir(cfg) / f"density_h{io.fmt(args.depth)}.csv", density)
    extra = dict(
        command="continue", depth=float(args.depth), residual=res.residual_norm,
        iterations=res.iterations, converged=res.converged, fitted_column=column,
        observations=str(args.observations), wall_time_s=time.perf_counter() - t0,
    )
    if cfg.noise.delta > 0:
        extra["threshold"] = discrepancy_threshold(cfg.noise.delta, obs.values)
    io.write_meta(path, cfg, **extra)
    if args.trace:
        tp = Path(args.trace)
        tp.write_text("iteration support residual\n" + "\n".join(lines) + "\n", encoding="utf-8")
        io.write_meta(tp, cfg, command="continue", depth=float(args.depth))
    print(path)
    if not res.converged:
        print(f"solver did not converge in {res.iterations} iterations", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_select(args) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    obs, column = _read_obs(args, cfg)
    h, chi, conv, its = io.read_scan(args.scan)
    if h.size == 0:
        raise UsageError(f"{args.scan}: scan has no rows")
    scan = DepthScanResult(h, chi, (), conv, its)
    sel = select_depth(scan, cfg.noise.delta, obs.values)
    report = {
        "delta": cfg.noise.delta,
        "threshold": sel.threshold,
        "admissible": sel.admissible,
        "depth": sel.depth,
        "residual": sel.residual,
        "fitted_column": column,
    }
    out = _outdir(cfg) / f"{args.name}.json"
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    io.write_meta(out, cfg, command="select", scan=str(args.scan),
                  observations=str(args.observations), wall_time_s=time.perf_counter() - t0)
    if sel.admissible:
        print(f"h* = {io.fmt(sel.depth)}  tau = {io.fmt(sel.threshold)}  chi = {io.fmt(sel.residual)}")
    else:
        print(f"no admissible depth  tau = {io.fmt(sel.threshold)}")
    return EXIT_OK


def cmd_peel(args) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    if args.depth_step is not None:
        # for peel the step flag sets the per-round scan spacing
        cfg = replace(cfg, peel=replace(cfg.peel, depth_step=args.depth_step))
    obs, column = _read_obs(args, cfg)
    c = cfg.continuation
    start, stop = min(cfg.depths), max(cfg.depths)
    sources = peel_sources(
        obs, c.extent, c.n1, c.n2,
        depth_step=cfg.peel.depth_step,
        max_rounds=cfg.peel.max_rounds,
        stop_fraction=cfg.peel.stop_fraction,
        G=cfg.gravitational_constant,
        options=cfg.solver,
        depth_start=start,
        depth_stop=stop,
        delta=cfg.noise.delta if column == "g_noisy" else 0.0,
        n_jobs=args.jobs,
    )
    path = io.write_sources(_outdir(cfg) / f"{args.name}.csv", sources)
    io.write_meta(path, cfg, command="peel", observations=str(args.observations),
                  fitted_column=column, rounds=len(sources),
                  wall_time_s=time.perf_counter() - t0)
    for s in sources:
        print(f"round {s.provenance}: mass {s.mass:.6g} at ({s.position[0]:.4g}, "
              f"{s.position[1]:.4g}) depth {-s.position[2]:.4g}")
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gravcont", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, name):
        sp.add_argument("config", help="experiment configuration (JSON)")
        sp.add_argument("--output-dir", help="overrides output_directory")
        sp.add_argument("--delta", type=float, help="overrides noise.delta")
        sp.add_argument("--seed", type=int, help="overrides noise.seed")
        sp.add_argument("--ls-solver", choices=("qr", "normal"), help="overrides solver.ls_solver")
        sp.add_argument("--name", default=name, help=f"output file stem (default {name})")

    def depth_flags(sp):
        sp.add_argument("--depth-start", type=float)
        sp.add_argument("--depth-stop", type=float)
        sp.add_argument("--depth-step", type=float)
        sp.add_argument("--jobs", type=int, default=None, help="parallel depth workers")

    sp = sub.add_parser("synth", help="generate synthetic observations")
    common(sp, "observations")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("scan", help="residual versus continuation depth")
    common(sp, "scan")
    sp.add_argument("observations")
    depth_flags(sp)
    sp.add_argument("--densities", action="store_true", help="also write per-depth density grids")
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("continue", help="layer density at one depth")
    common(sp, "density")
    sp.add_argument("observations")
    sp.add_argument("--depth", type=float, required=True)
    sp.add_argument("--trace", metavar="FILE", help="write per-iteration solver trace")
    sp.set_defaults(func=cmd_continue)

    sp = sub.add_parser("select", help="discrepancy-principle depth from a scan")
    common(sp, "selection")
    sp.add_argument("scan")
    sp.add_argument("observations")
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("peel", help="estimate point sources one by one")
    common(sp, "sources")
    sp.add_argument("observations")
    depth_flags(sp)
    sp.add_argument("--max-rounds", type=int)
    sp.add_argument("--stop-fraction", type=float)
    sp.set_defaults(func=cmd_peel)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, FileFormatError) as exc:
        print(f"gravcont: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GravcontError, ValueError) as exc:
        print(f"gravcont: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
