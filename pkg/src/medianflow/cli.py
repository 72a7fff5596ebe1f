"""Command line entry point.

Subcommands:
  evolve2p          two-phase median evolution of a level set field
  evolve-mp         multiphase evolution (saved system or reaper preset)
  study             convergence presets: table1, table2, table3, fig3
  verify-kernel     exact rational kernel consistency diagnostics
  check-obstruction two-shell moment constraint solve
  stacking-test     median / threshold-dynamics stacking identity counts
  energy-test       dissipation monitoring on seeded random fields
  denoise           PGM image in, median-denoised PGM out

Configuration may come from a line-oriented ``key = value`` file given
with --config; command line flags override file values, unknown keys
are rejected by name.  Exit codes: 0 success, 2 configuration error,
3 numerical validation failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import bench, energy, kernels, median2p, multiphase, tdyn
from ._backend import backend_name
from .denoise import DenoiseProblem, read_pgm, run_denoise, write_pgm
from .errors import ConfigError, NumericalError
from .grid import (GridSpec, Circle, Ellipse, Flower, HalfPlane, init_shape,
                   extract_contour, save_field, save_polylines)


# ---------------------------------------------------------------------------
# option tables

_REQUIRED = object()


@dataclass(frozen=True)
class Opt:
    name: str
    conv: object
    default: object
    help: str


def _pos_float(raw: str) -> float:
    v = float(raw)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _nonneg_float(raw: str) -> float:
    v = float(raw)
    if not v >= 0:
        raise ValueError("must be nonnegative")
    return v


def _pos_int(raw: str) -> int:
    v = int(raw)
    if not v > 0:
        raise ValueError("must be a positive integer")
    return v


def _nonneg_int(raw: str) -> int:
    v = int(raw)
    if v < 0:
        raise ValueError("must be a nonnegative integer")
    return v


def _choice(*vals):
    def conv(raw: str) -> str:
        if raw not in vals:
            raise ValueError(f"must be one of {', '.join(vals)}")
        return raw
    return conv


def parse_shape(text: str):
    """Shape grammar: circle:cx,cy,r | ellipse:cx,cy,a,b |
    flower:cx,cy,r0,amp,petals | halfplane:nx,ny,offset."""
    name, _, body = text.strip().partition(":")
    name = name.strip().lower()
    try:
        nums = [float(t) for t in body.split(",")] if body.strip() else []
    except ValueError as exc:
        raise ConfigError(f"bad shape parameters in '{text}': {exc}") from exc
    forms = {"circle": (Circle, 3), "ellipse": (Ellipse, 4),
             "flower": (Flower, 5), "halfplane": (HalfPlane, 3)}
    if name not in forms:
        raise ConfigError(f"unknown shape '{name}' "
                          f"(expected one of {', '.join(sorted(forms))})")
    cls, arity = forms[name]
    if len(nums) != arity:
        raise ConfigError(f"shape '{name}' takes {arity} numbers, got {len(nums)}")
    if name == "flower":
        nums[4] = int(nums[4])
    return cls(*nums)


def _grid_size(raw: str) -> tuple[int, int]:
    parts = raw.lower().split("x")
    if len(parts) == 1:
        n = int(parts[0])
        return n, n
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise ValueError("grid must look like 256 or 512x256")


OPTIONS: dict[str, list[Opt]] = {
    "evolve2p": [
        Opt("grid", _grid_size, (256, 256), "node counts, N or NXxNY"),
        Opt("lx", _pos_float, 1.0, "domain extent in x"),
        Opt("ly", _pos_float, 1.0, "domain extent in y"),
        Opt("boundary", str, "periodic", "periodic | clamped | periodic-x | periodic-y"),
        Opt("shape", str, _REQUIRED, "initial interface, e.g. circle:0.5,0.5,0.25"),
        Opt("scheme", _choice("median", "median2", "two-step"), "median",
            "median | median2 | two-step"),
        Opt("kernel", str, None, "kernel spec, e.g. circles:1@1 (median2 fixes it)"),
        Opt("dt", _pos_float, _REQUIRED, "time step size"),
        Opt("steps", _pos_int, _REQUIRED, "number of steps"),
        Opt("method", _choice("bisection", "sampled"), "bisection",
            "median evaluation method"),
        Opt("eps-arc", _pos_float, 2.0 * math.pi * 1e-3, "arc recursion cutoff"),
        Opt("eps-lambda", _pos_float, None, "bisection tolerance (default hx/100)"),
        Opt("m-per-circle", _pos_int, 64, "sample count per circle (sampled method)"),
        Opt("rule", _choice("midpoint", "sup"), "midpoint", "median tie rule"),
        Opt("out", str, "evolve2p", "output prefix"),
    ],
    "evolve-mp": [
        Opt("reaper", _pos_float, None, "alpha: init the translating comb preset"),
        Opt("h", _pos_float, 0.01, "grid spacing for the reaper preset"),
        Opt("y0", _pos_float, 0.5, "junction height for the reaper preset"),
        Opt("system", str, None, "prefix of a saved phase system"),
        Opt("phases", _pos_int, None, "phase count of the saved system"),
        Opt("sigma", str, None, "surface tension matrix file"),
        Opt("dt", _pos_float, _REQUIRED, "time step size"),
        Opt("steps", _pos_int, _REQUIRED, "number of steps"),
        Opt("clamp-factor", _pos_float, None, "clip fields to factor * radius"),
        Opt("rule", _choice("sup", "midpoint"), "sup",
            "walk exit rule: first losing sample, or its midpoint with "
            "the last winning value"),
        Opt("out", str, "evolvemp", "output prefix"),
    ],
    "study": [
        Opt("preset", _choice("table1", "table2", "table3", "fig3"), _REQUIRED,
            "which convergence study to run"),
        Opt("full", bool, False, "full-scale grids instead of desk scale"),
        Opt("petals", _pos_int, 4, "flower petal count for table2 (4 or 6)"),
        Opt("alpha", _pos_float, 3.0, "reaper alpha for table3"),
        Opt("jobs", _pos_int, 1, "ladder rows run in this many processes"),
        Opt("out", str, None, "output CSV path (default <preset>.csv)"),
    ],
    "verify-kernel": [
        Opt("kernel", str, None, "kernel spec (default: the three-circle kernel)"),
    ],
    "check-obstruction": [
        Opt("starts", _pos_int, 32, "number of solver starts"),
        Opt("seed", _nonneg_int, 0, "random start seed"),
        Opt("tol", _pos_float, 1e-8, "smallness threshold for the report"),
        Opt("out", str, None, "optional report file"),
    ],
    "stacking-test": [
        Opt("fields", _pos_int, 100, "number of random fields"),
        Opt("size", _pos_int, 64, "grid nodes per side"),
        Opt("levels", _pos_int, 21, "threshold levels per field"),
        Opt("seed", _nonneg_int, 0, "random field seed"),
    ],
    "energy-test": [
        Opt("variant", _choice("two_step", "jacobi"), "two_step", "step variant"),
        Opt("stencil", _choice("circle", "gauss"), "circle", "stencil family"),
        Opt("radius-cells", _pos_float, 6.0, "circle stencil radius in cells"),
        Opt("sigma-cells", _pos_float, 1.5, "gaussian stencil width in cells"),
        Opt("p", _pos_int, 3, "gaussian stencil half-width in cells"),
        Opt("fields", _pos_int, 20, "number of random fields"),
        Opt("steps", _pos_int, 50, "steps per field"),
        Opt("size", _pos_int, 64, "grid nodes per side"),
        Opt("seed", _nonneg_int, 0, "random field seed"),
        Opt("rel-tol", _pos_float, 1e-12, "relative increase counted as violation"),
        Opt("out", str, None, "optional energy CSV prefix"),
    ],
    "denoise": [
        Opt("input", str, _REQUIRED, "input PGM (binary, P5)"),
        Opt("gamma", _pos_float, _REQUIRED, "fidelity weight"),
        Opt("steps", _pos_int, 20, "median iterations"),
        Opt("stencil", _choice("gauss", "ball"), "gauss", "stencil family"),
        Opt("sigma-cells", _pos_float, 1.5, "gaussian stencil width in cells"),
        Opt("p", _pos_int, 3, "gaussian stencil half-width in cells"),
        Opt("radius-cells", _pos_float, 3.0, "ball stencil radius in cells"),
        Opt("out", str, "denoised.pgm", "output PGM path"),
        Opt("energy-out", str, None, "optional energy CSV path"),
    ],
}

_HELP = {
    "evolve2p": "evolve a level set field by the median filter scheme",
    "evolve-mp": "evolve a multiphase system by the multiphase median filter",
    "study": "run a convergence study preset and write its CSV table",
    "verify-kernel": "print exact kernel consistency diagnostics",
    "check-obstruction": "solve the two-shell moment constraints and report",
    "stacking-test": "count median/threshold stacking mismatches",
    "energy-test": "monitor energy dissipation on random fields",
    "denoise": "denoise a PGM image by fidelity-tilted medians",
}


# ---------------------------------------------------------------------------
# config assembly


@dataclass(frozen=True)
class RunConfig:
    command: str
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medianflow", description="median filter schemes for curvature flow")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name, help=_HELP[name])
        sp.add_argument("--config", default=None, metavar="FILE",
                        help="key = value file; flags override its entries")
        for o in opts:
            if o.conv is bool:
                sp.add_argument("--" + o.name, dest=o.name, action="store_const",
                                const="true", default=None, help=o.help)
            else:
                sp.add_argument("--" + o.name, dest=o.name, default=None,
                                metavar="V", help=o.help)
    return parser


def _read_config_file(path: str) -> list[tuple[str, str]]:
    pairs = []
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected 'key = value'")
                key, _, val = line.partition("=")
                pairs.append((key.strip(), val.strip()))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return pairs


def _convert(opt: Opt, raw: str):
    if opt.conv is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"invalid value for '{opt.name}': {raw!r} (must be boolean)")
    if opt.conv is str:
        return raw
    try:
        return opt.conv(raw)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"invalid value for '{opt.name}': {raw!r} ({exc})") from exc


def parse_config(argv: list[str]) -> RunConfig:
    ns = _build_parser().parse_args(argv)
    opts = OPTIONS[ns.command]
    byname = {o.name: o for o in opts}
    values: dict = {}
    if ns.config is not None:
        for key, raw in _read_config_file(ns.config):
            if key not in byname:
                raise ConfigError(
                    f"unknown config key '{key}' for command {ns.command}")
            values[key] = _convert(byname[key], raw)
    for o in opts:
        raw = getattr(ns, o.name)
        if raw is not None:
            values[o.name] = _convert(o, raw)
    for o in opts:
        if o.name not in values:
            if o.default is _REQUIRED:
                raise ConfigError(
                    f"missing required key '{o.name}' for command {ns.command}")
            values[o.name] = o.default
    return RunConfig(ns.command, values)


# ---------------------------------------------------------------------------
# command bodies


def _check_cli_radius(spec: GridSpec, radius: float):
    limit = 0.25 * min(spec.lx, spec.ly)
    if not radius < limit:
        raise ConfigError(
            f"kernel radius {radius:g} must stay below min(lx,ly)/4 = {limit:g}")


def _run_evolve2p(cfg: RunConfig) -> int:
    nx, ny = cfg["grid"]
    spec = GridSpec(nx, ny, cfg["lx"], cfg["ly"], cfg["boundary"])
    shape = parse_shape(cfg["shape"])
    scheme = cfg["scheme"]
    if scheme == "median2":
        if cfg["kernel"] is not None:
            raise ConfigError("scheme median2 fixes the kernel; drop --kernel")
        kern = kernels.second_order_kernel()
    else:
        kern = kernels.parse_kernel(cfg["kernel"] or "circles:1@1")
        if not isinstance(kern, kernels.CircleSumKernel):
            raise ConfigError("evolve2p needs a circle-sum kernel (circles:...)")
    variant = "two_step" if scheme == "two-step" else "jacobi"
    dt, steps = cfg["dt"], cfg["steps"]
    _check_cli_radius(spec, kernels.radius_for_dt(kern, dt) *
                      float(max(kern.alphas)))
    eps_lambda = cfg["eps-lambda"]
    params = median2p.BisectionParams(
        eps_arc=cfg["eps-arc"],
        eps_lambda=spec.hx / 100.0 if eps_lambda is None else eps_lambda)
    fld = init_shape(spec, shape)
    for _ in range(steps):
        fld = median2p.step_median(fld, kern, dt, params=params,
                                   variant=variant, method=cfg["method"],
                                   m_per_circle=cfg["m-per-circle"],
                                   rule=cfg["rule"])
    save_field(fld, cfg["out"] + "_field.bin")
    contours = extract_contour(fld, 0.0)
    save_polylines(contours, cfg["out"] + "_contour.csv")
    print(f"evolve2p: {steps} steps of dt={dt:g} on {nx}x{ny} "
          f"({backend_name} backend)")
    print(f"wrote {cfg['out']}_field.bin and {cfg['out']}_contour.csv "
          f"({len(contours)} contour(s))")
    return 0


def _run_evolve_mp(cfg: RunConfig) -> int:
    dt, steps = cfg["dt"], cfg["steps"]
    if cfg["reaper"] is not None:
        if cfg["system"] is not None:
            raise ConfigError("give either --reaper or --system, not both")
        rspec = bench.GrimReaperSpec(cfg["reaper"])
        grid = bench.reaper_grid(cfg["h"])
        system = bench.make_reaper_system(grid, rspec, cfg["y0"])
        sigma = rspec.sigma()
    else:
        if cfg["system"] is None or cfg["phases"] is None:
            raise ConfigError("evolve-mp needs --reaper or --system with --phases")
        if cfg["sigma"] is None:
            raise ConfigError("evolve-mp with --system needs --sigma")
        system = multiphase.load_system(cfg["system"], cfg["phases"])
        sigma = multiphase.load_sigma(cfg["sigma"])
    _check_cli_radius(system.spec, kernels.ball_radius_for_dt(dt))
    system = multiphase.run_multiphase(system, sigma, dt, steps,
                                       clamp_factor=cfg["clamp-factor"],
                                       rule=cfg["rule"])
    multiphase.save_system(system, cfg["out"])
    print(f"evolve-mp: {steps} steps of dt={dt:g}, {system.n_phases} phases "
          f"({backend_name} backend)")
    if cfg["reaper"] is not None:
        err = bench.reaper_profile_error(system, rspec, cfg["y0"], dt * steps)
        print(f"profile L2 error vs exact translation: {err:.6g}")
    print(f"wrote {cfg['out']}_phase*.field and {cfg['out']}_labels.csv")
    return 0


def _rows_for_preset(cfg: RunConfig) -> list[bench.StudyRow]:
    preset, full, jobs = cfg["preset"], cfg["full"], cfg["jobs"]
    if preset == "table1":
        return bench.study_table1(bench.TABLE1_FULL if full else None, jobs=jobs)
    if preset == "table2":
        if cfg["petals"] not in (4, 6):
            raise ConfigError("table2 petals must be 4 or 6")
        return bench.study_table2(cfg["petals"],
                                  bench.TABLE2_FULL if full else None, jobs=jobs)
    if preset == "table3":
        return bench.study_table3(cfg["alpha"],
                                  bench.TABLE3_FULL if full else None, jobs=jobs)
    err, hx = bench.study_fig3(bench.FIG3_FULL if full else None)
    nt = (bench.FIG3_FULL if full else bench.FIG3)["steps"]
    return [bench.StudyRow(hx, nt, err, None)]


def _run_study(cfg: RunConfig) -> int:
    rows = _rows_for_preset(cfg)
    out = cfg["out"] or (cfg["preset"] + ".csv")
    bench.save_study_csv(rows, out)
    print(f"study {cfg['preset']}: wrote {out}")
    for r in rows:
        o = "-" if r.order is None else f"{r.order:.3f}"
        print(f"  h={r.h:<10.6g} nt={r.nt:<5d} error={r.error:<12.6g} order={o}")
    if cfg["preset"] == "fig3":
        hx = rows[0].h
        print(f"  hausdorff/hx = {rows[0].error / hx:.4f}")
    return 0


def _run_verify_kernel(cfg: RunConfig) -> int:
    if cfg["kernel"] is None:
        kern = kernels.second_order_kernel()
    else:
        kern = kernels.parse_kernel(cfg["kernel"])
        if not isinstance(kern, kernels.CircleSumKernel):
            raise ConfigError("verify-kernel needs a circle-sum kernel")
    print(f"kernel {kern.spec_string()}")
    rep = kernels.consistency_report(kern)
    for key in ("time_ratio", "fpp_cubed", "odd_ratio"):
        val, tgt, res = rep[key], rep[key + "_target"], rep[key + "_residual"]
        print(f"{key:>12}: {val} (target {tgt}, residual {res})")
    return 0


def _run_check_obstruction(cfg: RunConfig) -> int:
    rep = kernels.check_obstruction(n_starts=cfg["starts"], seed=cfg["seed"],
                                    tol=cfg["tol"])
    lines = [
        f"two-shell constraint solve: {rep.n_converged}/{rep.n_starts} "
        f"starts converged",
        f"single-shell residual B0^2 - 2 B1 = {rep.single_shell_residual} (exact)",
    ]
    for s in rep.solutions:
        lines.append(f"  w=({s.w1:.3e},{s.w2:.3e}) rho=({s.rho1:.3e},{s.rho2:.3e})"
                     f" |K5|/K1={s.k5_over_k1:.3e} |B0|={s.b0_abs:.3e}")
    verdict = "all solutions degenerate" if rep.all_small else \
        "FOUND a non-degenerate solution"
    lines.append(f"{verdict} at tol {rep.tol:g}")
    text = "\n".join(lines)
    print(text)
    if cfg["out"]:
        with open(cfg["out"], "w") as fh:
            fh.write(text + "\n")
    if not rep.all_small or rep.n_converged == 0:
        raise NumericalError("obstruction check did not confirm degeneracy")
    return 0


def _stacking_stencil(spec: GridSpec):
    return median2p.lattice_rings_stencil(spec, (1, 2, 4, 5, 9, 10))


def _run_stacking_test(cfg: RunConfig) -> int:
    n = cfg["size"]
    spec = GridSpec(n, n)
    stencil = _stacking_stencil(spec)
    rng = np.random.default_rng(cfg["seed"])
    from .grid import ScalarField2D

    total = 0
    for _ in range(cfg["fields"]):
        fld = ScalarField2D(spec, rng.random((n, n)))
        levels = np.linspace(float(fld.values.min()), float(fld.values.max()),
                             cfg["levels"])
        total += int(tdyn.stacked_td(fld, stencil, levels).sum())
    print(f"stacking-test: {cfg['fields']} fields x {cfg['levels']} levels on "
          f"{n}x{n}, stencil m={stencil.m}: {total} mismatches")
    if total != 0:
        raise NumericalError(f"stacking identity violated at {total} nodes")
    return 0


def _energy_random_field(spec: GridSpec, rng) -> np.ndarray:
    """Smooth periodic field from a handful of low Fourier modes."""
    modes = rng.standard_normal((5, 5, 2))
    X, Y = spec.mesh()
    out = np.zeros_like(X)
    for kx in range(5):
        for ky in range(5):
            ph = 2.0 * math.pi * (kx * X / spec.lx + ky * Y / spec.ly)
            out += modes[kx, ky, 0] * np.cos(ph) + modes[kx, ky, 1] * np.sin(ph)
    return out / np.max(np.abs(out))


def _run_energy_test(cfg: RunConfig) -> int:
    from .grid import ScalarField2D

    n = cfg["size"]
    spec = GridSpec(n, n)
    if cfg["stencil"] == "circle":
        kern = kernels.single_circle_kernel().with_scale(
            cfg["radius-cells"] * spec.hx)
        stencil = median2p.snapped_stencil(
            median2p.circle_stencil(kern), spec)
    else:
        stencil = median2p.gaussian_grid_stencil(
            spec, cfg["p"], cfg["sigma-cells"] * spec.hx)
        if not energy.stencil_symbol_psd(stencil, spec):
            raise NumericalError("gaussian stencil symbol is not PSD")

    def one_step(fld: ScalarField2D) -> ScalarField2D:
        med = median2p.sampled_median_field(fld, stencil, rule="sup",
                                            eval_mode="nearest")
        if cfg["variant"] == "jacobi":
            return med
        half = ScalarField2D(spec, np.maximum(fld.values, med.values))
        med2 = median2p.sampled_median_field(half, stencil, rule="sup",
                                             eval_mode="nearest")
        return ScalarField2D(spec, np.minimum(half.values, med2.values))

    rng = np.random.default_rng(cfg["seed"])
    worst = 0
    for k in range(cfg["fields"]):
        fld = ScalarField2D(spec, _energy_random_field(spec, rng))
        report, _ = energy.monitor(
            one_step, lambda f: energy.field_energy(f, stencil), fld,
            cfg["steps"], rel_tol=cfg["rel-tol"])
        worst += report.monotone_violations
        if cfg["out"]:
            energy.save_energy_csv(report, f"{cfg['out']}_{k:02d}.csv")
    print(f"energy-test: variant={cfg['variant']} stencil={cfg['stencil']} "
          f"({cfg['fields']} fields x {cfg['steps']} steps): "
          f"{worst} monotonicity violations at rel_tol={cfg['rel-tol']:g}")
    if worst:
        raise NumericalError(f"{worst} energy increases detected")
    return 0


def _run_denoise(cfg: RunConfig) -> int:
    data = read_pgm(cfg["input"])
    spec = data.spec
    if cfg["stencil"] == "gauss":
        stencil = median2p.gaussian_grid_stencil(
            spec, cfg["p"], cfg["sigma-cells"] * spec.hx)
    else:
        stencil = median2p.ball_stencil(spec, cfg["radius-cells"] * spec.hx)
    problem = DenoiseProblem(data, cfg["gamma"], stencil)
    phi, report = run_denoise(problem, cfg["steps"])
    write_pgm(phi, cfg["out"])
    if cfg["energy-out"]:
        energy.save_energy_csv(report, cfg["energy-out"])
    print(f"denoise: {cfg['steps']} iterations, gamma={cfg['gamma']:g}, "
          f"energy {report.series[0]:.6g} -> {report.series[-1]:.6g}, "
          f"{report.monotone_violations} increases")
    print(f"wrote {cfg['out']}")
    return 0


_RUNNERS = {
    "evolve2p": _run_evolve2p,
    "evolve-mp": _run_evolve_mp,
    "study": _run_study,
    "verify-kernel": _run_verify_kernel,
    "check-obstruction": _run_check_obstruction,
    "stacking-test": _run_stacking_test,
    "energy-test": _run_energy_test,
    "denoise": _run_denoise,
}


def run(config: RunConfig) -> int:
    """Execute a parsed configuration; returns the process exit code."""
    return _RUNNERS[config.command](config)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(parse_config(argv))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
