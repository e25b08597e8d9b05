"""Command-line entry points.

::

    psmflow run <config.yaml> [--steps N] [--output DIR] [--workers N] [--blocks BX BY BZ]
    psmflow validate <case> [--preset-config FILE]      case: poiseuille | mapping | settling | <preset name>
    psmflow scale <config.yaml> --mode weak|strong --workers 1,2,4,8 [--steps N] [--repeats N]
    psmflow perf-model --tmin [--bytes B --cells N --bandwidth GBs]
    psmflow perf-model --speedup [--frac F --bw-slow GBs --bw-fast GBs]
    psmflow perf-model --measured BASE ACC
    psmflow perf-model --efficiency BASE VALUE [VALUE ...]

Exit codes: 0 success, 1 generic failure, 2 configuration error,
3 numerical failure, 4 synchronization failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

from . import perf
from .config import build_scenario, load_config, preset, scaled_count
from .errors import ConfigError, PsmflowError
from .io import OutputWriter
from .partition import comm_volume_report

log = logging.getLogger("psmflow")


def run_config(cfg, steps=None, output=None, workers=None, blocks=None, quiet=False):
    steps = cfg.run.steps if steps is None else steps
    scenario = build_scenario(cfg)
    sim = scenario.simulation(blocks=blocks, workers=workers)
    writer = OutputWriter(
        output or cfg.run.output_dir, cfg.run.cadence, steps, cfg.run.grid, cfg.run.particles, cfg.run.scalars
    )
    try:
        writer(sim)
        t0 = time.perf_counter()
        sim.run(steps, callback=writer)
        wall = time.perf_counter() - t0
    finally:
        sim.close()
    if not quiet:
        rep = perf.TimingReport.from_totals(sim.timers.totals, wall, steps, sim.n_cells, len(sim.workers))
        print(rep.to_table())
        print(f"MLUPs\t{perf.mlups(sim.n_cells, steps, wall) if steps else 0.0:.4f}")
    return sim, writer


def weak_factory(cfg, workers_threads=True):
    """Scenario factory for weak scaling: the config's block shape is the per-worker block."""
    block = [d // b for d, b in zip(cfg.domain, cfg.blocks)]
    base_blocks = cfg.blocks[0] * cfg.blocks[1] * cfg.blocks[2]

    def make(n):
        b = perf.weak_blocks(n)
        c = build_cfg_copy(cfg)
        c.domain = [s * k for s, k in zip(block, b)]
        c.blocks = list(b)
        if cfg.particles.count:
            c.particles.count = max(1, round(cfg.particles.count * n / base_blocks))
        sc = build_scenario(c)
        return sc.simulation(workers=n if workers_threads else None)

    return make


def strong_factory(cfg, workers_threads=True):
    def make(n):
        c = build_cfg_copy(cfg)
        c.blocks = list(perf.weak_blocks(n))
        sc = build_scenario(c)
        return sc.simulation(workers=n if workers_threads else None)

    return make


def build_cfg_copy(cfg):
    from .config import config_from_dict

    return config_from_dict(cfg.to_dict())


def _parse_workers(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--workers: {text!r} is not a comma-separated list of integers") from exc
    if not vals:
        raise ConfigError("--workers: empty list")
    return vals


def _load(name):
    try:
        return preset(name)
    except ConfigError:
        return load_config(name)


def cmd_run(args):
    cfg = _load(args.config)
    run_config(cfg, args.steps, args.output, args.workers, tuple(args.blocks) if args.blocks else None)
    return 0


def cmd_validate(args):
    from . import validation

    case = args.case
    if case in validation.CASES:
        result = validation.CASES[case]()
        for k, v in result.items():
            print(f"{k}\t{v}")
        return 0 if result["passed"] else 1
    cfg = _load(case)
    sc = build_scenario(cfg)
    sim = sc.simulation()
    print(f"kind\t{cfg.kind}")
    print(f"domain\t{' '.join(map(str, cfg.domain))}")
    print(f"particles\t{len(sc.particles)}")
    if sc.units is not None:
        print(f"nu\t{sc.units.nu:.6g}\ngravity\t{sc.units.gravity:.6g}\ninflow\t{sc.units.inflow:.6g}")
        print(f"galileo\t{sc.units.galileo:.6g}\nreynolds\t{sc.units.reynolds:.6g}")
    rep = comm_volume_report(sim.decomp)
    print(f"max_partners\t{rep['max_partners']}\nmax_halo_bytes\t{rep['max_bytes']}")
    sim.close()
    return 0


def cmd_scale(args):
    cfg = _load(args.config)
    counts = _parse_workers(args.workers)
    factory = weak_factory(cfg) if args.mode == "weak" else strong_factory(cfg)
    rep = perf.scaling_harness(factory, counts, args.mode, args.steps, args.repeats, scenario=cfg.to_dict())
    print(rep.to_table())
    print(rep.meta_block())
    return 0


def cmd_perf_model(args):
    if args.tmin:
        model = perf.MachineModel(args.bandwidth, args.bw_slow, args.bytes)
        t = perf.roofline_tmin(model, args.cells)
        print(f"T_min = {t:.3g} ms/time step ({t:.6f} ms)")
    if args.speedup:
        s = perf.hybrid_speedup(args.frac, args.bw_slow, args.bw_fast)
        print(f"S_hyb = {s:.3g} ({s:.6f})")
    if args.measured:
        s = perf.measured_speedup(*args.measured)
        print(f"S_measured = {s:.3g} ({s:.6f})")
    if args.efficiency:
        eff = perf.parallel_efficiency(args.efficiency)
        print("efficiency = " + " ".join(f"{e:.4f}" for e in eff))
    if not (args.tmin or args.speedup or args.measured or args.efficiency):
        raise ConfigError("perf-model needs --tmin, --speedup, --measured or --efficiency")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="psmflow", description="Coupled LBM/PSM/DEM simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario from a YAML config or preset name")
    r.add_argument("config")
    r.add_argument("--steps", type=int)
    r.add_argument("--output")
    r.add_argument("--workers", type=int)
    r.add_argument("--blocks", type=int, nargs=3)
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("validate", help="run a validation case or check a config")
    v.add_argument("case")
    v.set_defaults(fn=cmd_validate)

    s = sub.add_parser("scale", help="weak or strong scaling sweep")
    s.add_argument("config")
    s.add_argument("--mode", choices=("weak", "strong"), default="weak")
    s.add_argument("--workers", default="1,2,4,8")
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--repeats", type=int, default=3)
    s.set_defaults(fn=cmd_scale)

    m = sub.add_parser("perf-model", help="roofline and speedup models")
    m.add_argument("--tmin", action="store_true", help="roofline lower bound per time step")
    m.add_argument("--speedup", action="store_true", help="hybrid speedup estimate")
    m.add_argument("--measured", type=float, nargs=2, metavar=("BASE", "ACC"), help="speedup from two MLUPs values")
    m.add_argument("--efficiency", type=float, nargs="+", metavar="MLUPS", help="baseline then per-worker MLUPs")
    m.add_argument("--bytes", type=float, default=304.0, help="bytes per cell update")
    m.add_argument("--cells", type=float, default=500 * 200 * 800)
    m.add_argument("--bandwidth", type=float, default=1400.0, help="fast memory bandwidth (GB/s) for --tmin")
    m.add_argument("--frac", type=float, default=0.95)
    m.add_argument("--bw-slow", type=float, default=70.0)
    m.add_argument("--bw-fast", type=float, default=1400.0)
    m.set_defaults(fn=cmd_perf_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except PsmflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for v in getattr(exc, "violations", [])[:50]:
            if v != str(exc):
                print(f"  - {v}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
