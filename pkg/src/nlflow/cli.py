"""Command-line surface binding the solvers into reproducible runs.

Subcommands: rof, flow, levelset, curvature, validate, bench-ball.
Exit codes: 0 success, 1 usage or config error, 2 numerical failure
(non-convergence or a domain-limited run).  Outputs are written
atomically and each run echoes its fully resolved configuration.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import formats
from .curvature import DiskProbe, EllipseProbe, HalfSpaceProbe, ball_constant, \
    frac_curvature, minkowski_curvature
from .errors import ConfigError, DomainTooSmallError, FormatError, \
    NlflowError, NotConvergedError
from .frac_energy import FracDual, FracEnergyParams
from .grid import GridSpec, ScalarField, SetMask, ball_offsets
from .oracle import EnumerationBudget, brute_distance, brute_pairsum, \
    brute_window, enumerate_geometric, exact_rof
from .osc_energy import OscDual, OscEnergyParams, WeightedOscParams
from .rof_solver import RofProblem, solve_rof, threshold_solution
from .flow import FlowConfig, ball_benchmark, run_flow, run_levelset
from .shapes import SplitMix64, builtin_shapes

USAGE_ERROR = 1
NUMERICAL_ERROR = 2


def _load_config(path: str) -> dict:
    with open(path, "r", encoding="ascii") as f:
        return formats.parse_config(f.read())


def _require(cfg: dict, keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError("missing config keys: %s" % ", ".join(missing))


def _grid_from_config(cfg: dict) -> GridSpec:
    _require(cfg, ["dims", "dx", "halo"])
    dims = tuple(int(x) for x in cfg["dims"].split(","))
    return GridSpec(dims, float(cfg["dx"]), int(cfg["halo"]))


def _energy_from_config(cfg: dict, spec: GridSpec):
    _require(cfg, ["energy"])
    kind = cfg["energy"]
    if kind == "osc":
        _require(cfg, ["r"])
        return OscEnergyParams.create(spec, float(cfg["r"]))
    if kind == "frac":
        _require(cfg, ["s"])
        return FracEnergyParams.create(spec, float(cfg["s"]),
                                       float(cfg.get("cutoff", 8.0 * spec.dx)))
    if kind == "weighted_osc":
        _require(cfg, ["radii", "weights"])
        radii = [float(x) for x in cfg["radii"].split(",")]
        weights = [float(x) for x in cfg["weights"].split(",")]
        return WeightedOscParams.create(spec, radii, weights)
    raise ConfigError("unknown energy %r" % kind)


def _flow_config(cfg: dict, energy) -> FlowConfig:
    _require(cfg, ["h", "t_max"])
    return FlowConfig(
        energy=energy,
        h=float(cfg["h"]),
        t_max=float(cfg["t_max"]),
        record_certificates=bool(cfg.get("record_certificates", False)),
        tol=float(cfg.get("tol", 1e-6)),
        max_iter=int(cfg.get("max_iter", 50000)),
        calibration=cfg.get("calibration"),
        frac_tail_compensation=bool(cfg.get("frac_tail_compensation", True)),
    )


def _echo_config(cfg: dict, outdir: str, name: str):
    os.makedirs(outdir, exist_ok=True)
    formats.atomic_write(os.path.join(outdir, name + ".resolved.cfg"),
                         formats.format_config(cfg).encode("ascii"))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("NLFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _cmd_rof(args) -> int:
    cfg = _load_config(args.config)
    g = formats.read_field(args.input)
    energy = _energy_from_config(cfg, g.spec)
    _require(cfg, ["h"])
    prob = RofProblem(energy, g, float(cfg["h"]))
    sol = solve_rof(prob, tol=float(cfg.get("tol", 1e-6)),
                    max_iter=int(cfg.get("max_iter", 50000)))
    formats.write_field(args.out, sol.u)
    if args.dual:
        if isinstance(sol.dual, OscDual):
            formats.write_osc_dual(args.dual, sol.dual)
        elif isinstance(sol.dual, FracDual):
            formats.write_frac_dual(args.dual, sol.dual)
        else:
            raise ConfigError("dual dump supports the plain energies only")
    outdir = os.path.dirname(os.path.abspath(args.out))
    _echo_config(cfg, outdir, os.path.basename(args.out))
    print("{residual: %.6e, gap: %.6e, iterations: %d}"
          % (sol.residual, sol.gap, sol.iterations))
    return 0


def _init_mask(cfg: dict, spec: GridSpec, descriptor: str, energy) -> SetMask:
    from .flow import guard_width

    guard_cells = int(math.ceil(guard_width(energy) / spec.dx))
    shape = builtin_shapes(spec, descriptor, guard_cells=guard_cells)
    if not isinstance(shape, SetMask):
        raise ConfigError("descriptor %r is a field, need a mask" % descriptor)
    return shape


def _cmd_flow(args) -> int:
    cfg = _load_config(args.config)
    spec = _grid_from_config(cfg)
    energy = _energy_from_config(cfg, spec)
    fcfg = _flow_config(cfg, energy)
    e0 = _init_mask(cfg, spec, args.init, energy)
    traj = run_flow(e0, fcfg)
    outdir = cfg.get("outdir", args.outdir or ".")
    os.makedirs(outdir, exist_ok=True)
    formats.write_flow_csv(os.path.join(outdir, "flow.csv"), traj)
    if bool(cfg.get("dump_masks", False)):
        for step in traj.steps:
            formats.write_mask_pgm(
                os.path.join(outdir, "mask_%06d.pgm" % step.k), step.mask)
    _echo_config(cfg, outdir, "flow")
    print("{status: %s, steps: %d, T_ext: %s, T_all: %s}"
          % (traj.status, len(traj.steps) - 1, traj.T_ext, traj.T_all))
    return 0 if traj.status != "domain-limited" else NUMERICAL_ERROR


def _cmd_levelset(args) -> int:
    cfg = _load_config(args.config)
    _require(cfg, ["levels"])
    spec = _grid_from_config(cfg)
    energy = _energy_from_config(cfg, spec)
    fcfg = _flow_config(cfg, energy)
    u0 = builtin_shapes(spec, args.init)
    if not isinstance(u0, ScalarField):
        raise ConfigError("levelset needs a field initializer such as cone:R=...")
    levels = [float(x) for x in cfg["levels"].split(",")]
    state = run_levelset(u0, levels, fcfg, max_workers=_threads())
    outdir = cfg.get("outdir", args.outdir or ".")
    os.makedirs(outdir, exist_ok=True)
    for lam, traj in state.trajectories.items():
        formats.write_flow_csv(os.path.join(outdir, "level_%g.csv" % lam), traj)
    for k, w in enumerate(state.w_fields):
        formats.write_field(os.path.join(outdir, "w_%06d.fld" % k), w)
    _echo_config(cfg, outdir, "levelset")
    print("{levels: %d, times: %d}" % (len(levels), len(state.times)))
    return 0


def _parse_shape_probe(descriptor: str):
    name, _, rest = descriptor.partition(":")
    params = dict(item.split("=") for item in rest.split(",") if item)
    if name in ("disk", "ball"):
        ndim = 3 if name == "ball" else 2
        return DiskProbe(float(params.get("R", 8.0)), ndim=ndim)
    if name == "halfspace":
        normal = [float(x) for x in params.get("n", "1;0").split(";")]
        return HalfSpaceProbe(normal, float(params.get("c", 0.0)))
    if name == "ellipse":
        return EllipseProbe(float(params.get("a", 8.0)), float(params.get("b", 4.0)))
    raise ConfigError("unknown probe shape %r" % name)


def _cmd_curvature(args) -> int:
    probe = _parse_shape_probe(args.shape)
    x = probe.boundary_point()
    print("x,value,branch_plus,branch_minus,flag,error_estimate")
    if args.kind == "minkowski":
        res = minkowski_curvature(probe, x, args.r)
        bp = res.branch_report["plus"]["value"]
        bm = res.branch_report["minus"]["value"]
        print("%s,%.12g,%.12g,%.12g,%s,%s"
              % (";".join("%g" % c for c in x), res.value, bp, bm,
                 res.flag or "", ""))
    else:
        spec = GridSpec((8,) * probe.ndim, args.dx, 0)
        p = FracEnergyParams.create(spec, args.s, args.cutoff * args.dx)
        res = frac_curvature(probe, x, p)
        print("%s,%.12g,,,%s,%s"
              % (";".join("%g" % c for c in x), res.value, res.flag or "",
                 "" if res.error_estimate is None else "%.6g" % res.error_estimate))
    return 0


def _validate_rows(suite: str):
    rng = SplitMix64(2024)
    rows = []

    def record(name, ok, detail=""):
        rows.append((name, bool(ok), detail))

    spec = GridSpec((16, 16), 1.0, 3)
    u = ScalarField(spec, rng.uniform(spec.dims) * 2.0 - 1.0)
    st = ball_offsets(spec, 2.0)
    from .grid import window_extrema

    ok = True
    for w in [(3, 3), (8, 9), (12, 5)]:
        ok &= window_extrema(u, st, w) == brute_window(u, st, w)
    record("window extrema vs brute scan", ok)

    from .distance import signed_distance

    for seed in (1, 2, 3):
        mrng = SplitMix64(seed)
        mask = SetMask(spec, mrng.uniform(spec.dims) < 0.4)
        fast = signed_distance(mask).d.values
        slow = brute_distance(mask).values
        record("signed distance vs brute (seed %d)" % seed,
               np.allclose(fast, slow, atol=1e-12),
               "max dev %.2e" % np.abs(fast - slow).max())

    from .frac_energy import js_value

    fp = FracEnergyParams.create(spec, 0.5, 3.0)
    for seed in (4, 5, 6):
        frng = SplitMix64(seed)
        uu = ScalarField(spec, frng.uniform(spec.dims))
        fast = js_value(uu, fp)
        slow = brute_pairsum(uu, fp)
        record("pair sum vs brute (seed %d)" % seed,
               abs(fast - slow) <= 1e-12 * max(1.0, abs(slow)),
               "rel dev %.2e" % (abs(fast - slow) / max(1.0, abs(slow))))

    if suite == "all":
        spec4 = GridSpec((8, 8), 1.0, 2)
        p4 = OscEnergyParams.create(spec4, 1.0)
        budget = EnumerationBudget(max_cells=16, timeout=300.0)
        for seed in (7, 8):
            grng = SplitMix64(seed)
            g = ScalarField(spec4, (grng.uniform(spec4.dims) - 0.45) * 2.0)
            prob = RofProblem(p4, g, 1.0)
            sol = solve_rof(prob, tol=1e-9, max_iter=200000)
            enum = enumerate_geometric(g, 1.0, p4, budget, t=0.0)
            _, e_t = threshold_solution(sol.u, 0.0)
            record("geometric enumeration vs solver (seed %d)" % seed,
                   bool(np.array_equal(e_t.member, enum.maximal_mask.member)),
                   "enumerated min %.6f" % enum.min_value)
        spec8 = GridSpec((12, 12), 1.0, 2)
        p8 = OscEnergyParams.create(spec8, 1.0)
        grng = SplitMix64(11)
        g = ScalarField(spec8, (grng.uniform(spec8.dims) - 0.5) * 2.0)
        prob = RofProblem(p8, g, 1.0)
        sol = solve_rof(prob, tol=1e-10, max_iter=200000)
        ref_val, _ = exact_rof(prob)
        record("convex-programming reference vs solver",
               abs(sol.objective - ref_val) <= 1e-6 * (1.0 + abs(ref_val)),
               "rel dev %.2e" % (abs(sol.objective - ref_val) / (1.0 + abs(ref_val))))
    return rows


def _cmd_validate(args) -> int:
    rows = _validate_rows(args.suite)
    width = max(len(r[0]) for r in rows)
    all_ok = True
    for name, ok, detail in rows:
        all_ok &= ok
        print("%-*s  %s  %s" % (width, name, "PASS" if ok else "FAIL", detail))
    print("%d/%d checks passed" % (sum(1 for r in rows if r[1]), len(rows)))
    return 0 if all_ok else NUMERICAL_ERROR


def _cmd_bench_ball(args) -> int:
    cfg = _load_config(args.config)
    spec = _grid_from_config(cfg)
    energy = _energy_from_config(cfg, spec)
    fcfg = _flow_config(cfg, energy)
    probe = None
    if args.probe:
        c0, eta = (float(x) for x in args.probe.split(","))
        probe = (c0, eta)
    res = ball_benchmark(args.R0, fcfg, spec, probe=probe)
    print("t,radius")
    for t, r in zip(res.times, res.radii):
        print("%.6g,%.6g" % (t, r))
    print("{fit_exponent: %g, fit_slope: %.6g, expected_slope: %.6g}"
          % (res.fit_exponent, res.fit_slope, res.expected_slope))
    if res.probe is not None:
        print("{h: %g, phi0: %.6g, sup_excess: %.6g}"
              % (res.probe.h, res.probe.phi0, res.probe.sup_excess))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlflow", add_help=True)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rof", help="solve one step problem")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dual")
    p.set_defaults(func=_cmd_rof)

    p = sub.add_parser("flow", help="run a minimizing-movement flow")
    p.add_argument("--config", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--outdir")
    p.set_defaults(func=_cmd_flow)

    p = sub.add_parser("levelset", help="run per-level flows of a field")
    p.add_argument("--config", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--outdir")
    p.set_defaults(func=_cmd_levelset)

    p = sub.add_parser("curvature", help="evaluate pointwise curvatures")
    p.add_argument("--shape", required=True)
    p.add_argument("--kind", choices=("minkowski", "frac"), default="minkowski")
    p.add_argument("--r", type=float, default=3.0)
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--cutoff", type=float, default=8.0, help="in cells")
    p.add_argument("--dx", type=float, default=0.5)
    p.set_defaults(func=_cmd_curvature)

    p = sub.add_parser("validate", help="run oracle cross-checks")
    p.add_argument("--suite", choices=("smoke", "all"), default="all")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("bench-ball", help="ball shrinkage benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--R0", type=float, required=True)
    p.add_argument("--probe", help="c0,eta")
    p.set_defaults(func=_cmd_bench_ball)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else USAGE_ERROR
    try:
        return args.func(args)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return USAGE_ERROR
    except (NotConvergedError, DomainTooSmallError) as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return NUMERICAL_ERROR
    except NlflowError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
