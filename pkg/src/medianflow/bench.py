"""Convergence harnesses: exact solutions, front tracking, study drivers.

Oracles come in two kinds.  Closed forms: the shrinking circle and the
translating three-phase comb of log-cosine humps ("grim reapers").
Computed: explicit front tracking of a closed curve with circumcenter
curvature estimates, self-validated against the circle closed form
before it is trusted as a benchmark.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .errors import ConfigError, NumericalError
from .grid import (GridSpec, ScalarField2D, FrontPolyline, Circle, Ellipse,
                   Flower, init_shape, extract_contour, hausdorff_distance,
                   _distance_to_polyline)
from .kernels import single_circle_kernel, second_order_kernel, radius_for_dt
from .median2p import BisectionParams, step_median
from .multiphase import PhaseSystem, SurfaceTensionMatrix, multiphase_step


# ---------------------------------------------------------------------------
# closed-form oracles


def exact_circle_radius(r0: float, t: float) -> float:
    """Radius of a circle after time t of curvature flow."""
    if r0 <= 0:
        raise ConfigError(f"circle radius must be positive, got {r0}")
    if t >= 0.5 * r0 * r0:
        raise ConfigError(f"circle is extinct at t={t} (limit {0.5 * r0 * r0})")
    return math.sqrt(r0 * r0 - 2.0 * t)


@dataclass(frozen=True)
class GrimReaperSpec:
    """Translating three-phase solution with a log-cosine profile.

    The curved interface is y = (alpha/pi) log cos(pi x / alpha) - (pi/alpha) t
    over x in [0, 1/2], with a triple junction at x = 1/2 whose angles
    are (pi(alpha-1)/alpha, pi(alpha+1)/(2 alpha), pi(alpha+1)/(2 alpha)).
    """

    alpha: float

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ConfigError(f"grim reaper needs alpha > 1, got {self.alpha}")

    @property
    def speed(self) -> float:
        return math.pi / self.alpha

    def junction_angles(self) -> tuple[float, float, float]:
        a = self.alpha
        return (math.pi * (a - 1.0) / a,
                math.pi * (a + 1.0) / (2.0 * a),
                math.pi * (a + 1.0) / (2.0 * a))

    def sigma(self) -> SurfaceTensionMatrix:
        """Surface tensions normalized to sigma_12 = 1 via the angle law."""
        th3, th1, _ = self.junction_angles()
        s = math.sin(th1) / math.sin(th3)
        m = np.array([[0.0, 1.0, s], [1.0, 0.0, s], [s, s, 0.0]])
        return SurfaceTensionMatrix(m)


def grim_reaper_profile(spec: GrimReaperSpec, x, t: float):
    """Exact interface height over the graph window x in [0, alpha/2)."""
    xs = np.asarray(x, dtype=np.float64)
    if np.any(xs < 0) or np.any(xs >= 0.5 * spec.alpha):
        raise ConfigError("profile is defined for 0 <= x < alpha/2")
    val = (spec.alpha / math.pi) * np.log(np.cos(math.pi * xs / spec.alpha))
    val -= spec.speed * t
    return float(val) if np.isscalar(x) else val


# ---------------------------------------------------------------------------
# front tracking


def _resample_closed(pts: np.ndarray, n: int) -> np.ndarray:
    """n points equally spaced in arclength along the closed curve."""
    p = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    if np.any(seg == 0.0):
        keep = np.concatenate([[True], seg[:-1] > 0.0])
        p = np.vstack([pts[keep], pts[:1]])
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0.0 or len(p) < 4:
        raise NumericalError("front-tracked curve degenerated")
    sx = CubicSpline(s, p[:, 0], bc_type="periodic")
    sy = CubicSpline(s, p[:, 1], bc_type="periodic")
    si = np.linspace(0.0, total, n, endpoint=False)
    return np.column_stack([sx(si), sy(si)])


def _curvature_velocity(pts: np.ndarray) -> np.ndarray:
    """Curvature vector at each vertex from the circumscribed circle
    through it and its two neighbors; collinear triples contribute 0."""
    a = np.roll(pts, 1, axis=0)
    b = pts
    c = np.roll(pts, -1, axis=0)
    d = 2.0 * ((a[:, 0] - c[:, 0]) * (b[:, 1] - c[:, 1])
               - (b[:, 0] - c[:, 0]) * (a[:, 1] - c[:, 1]))
    a2 = np.einsum("ij,ij->i", a - c, a - c)
    b2 = np.einsum("ij,ij->i", b - c, b - c)
    ux = c[:, 0] + (a2 * (b[:, 1] - c[:, 1]) - b2 * (a[:, 1] - c[:, 1])) / d
    uy = c[:, 1] + (b2 * (a[:, 0] - c[:, 0]) - a2 * (b[:, 0] - c[:, 0])) / d
    scale = a2 + b2
    flat = np.abs(d) <= 1e-14 * scale
    off_x = np.where(flat, 0.0, ux - b[:, 0])
    off_y = np.where(flat, 0.0, uy - b[:, 1])
    r2 = off_x * off_x + off_y * off_y
    r2[r2 == 0.0] = 1.0
    return np.column_stack([off_x / r2, off_y / r2])


def front_track(curve: FrontPolyline, t_final: float, n_points: int | None = None,
                dt_ft: float | None = None) -> FrontPolyline:
    """Evolve a closed curve by curvature flow with explicit Euler steps.

    Vertices move by dt times the circumcenter curvature vector, with
    arclength resampling every 10 steps (skipped while the spacing is
    still uniform, which also keeps exact circles exactly polygonal).
    The default time step 0.25 * min_seg^2 is recomputed after each
    resampling as the curve shrinks.
    """
    if not curve.closed:
        raise ConfigError("front tracking needs a closed curve")
    if t_final < 0:
        raise ConfigError("t_final must be nonnegative")
    n = n_points or len(curve.points)
    if n < 8:
        raise ConfigError("front tracking needs at least 8 points")
    pts = _resample_closed(curve.points, n)
    length0 = FrontPolyline(pts).length
    t = 0.0
    k = 0
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    dt_cur = dt_ft if dt_ft is not None else 0.25 * float(seg.min()) ** 2
    if dt_cur <= 0:
        raise ConfigError("front-tracking step must be positive")
    while t < t_final * (1.0 - 1e-12):
        step = min(dt_cur, t_final - t)
        pts = pts + step * _curvature_velocity(pts)
        t += step
        k += 1
        if k % 10 == 0:
            seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
            smin, smax = float(seg.min()), float(seg.max())
            if smin < 0.05 * (smax + smin) / 2.0:
                raise NumericalError(
                    "front tracking pinched: possible self-intersection")
            if smax > 1.001 * smin:
                pts = _resample_closed(pts, n)
                seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
                smin = float(seg.min())
            if dt_ft is None:
                dt_cur = 0.25 * smin * smin
            out_len = float(seg.sum())
            if out_len > 1.01 * length0:
                raise NumericalError("front-tracked curve grew: unstable run")
    return FrontPolyline(pts, closed=True)


def shape_polyline(shape, n: int) -> FrontPolyline:
    """Dense parametric boundary of a circle, ellipse, or flower."""
    th = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    if isinstance(shape, Circle):
        rho = np.full(n, shape.r)
    elif isinstance(shape, Ellipse):
        return FrontPolyline(np.column_stack([shape.cx + shape.a * np.cos(th),
                                              shape.cy + shape.b * np.sin(th)]))
    elif isinstance(shape, Flower):
        rho = shape.r0 + shape.amp * np.cos(shape.petals * th)
    else:
        raise ConfigError(f"no parametric boundary for {shape!r}")
    return FrontPolyline(np.column_stack([shape.cx + rho * np.cos(th),
                                          shape.cy + rho * np.sin(th)]))


# ---------------------------------------------------------------------------
# grim reaper comb realization

# The exact solution is realized on [0, 2] x [0, 1], periodic in x and
# clamped in y, as a comb: log-cosine humps peaking at x = s and x = 1+s
# (s = hx/2 keeps every wall strictly between node columns), junctions
# at x = 1/2+s and x = 3/2+s at height y0, vertical phase-1|2 walls from
# the junctions out through the bottom edge, phase 3 above the humps.
# The whole configuration translates downward with speed pi/alpha.


def _hump_height(spec: GrimReaperSpec, u) -> np.ndarray:
    """Interface height above the junction level at distance u from a
    peak, u in [0, 1/2]."""
    a = spec.alpha
    f = (a / math.pi) * np.log(np.cos(math.pi * np.asarray(u) / a))
    f_half = (a / math.pi) * math.log(math.cos(math.pi * 0.5 / a))
    return f - f_half


def _peak_distance(x: np.ndarray, shift: float) -> np.ndarray:
    """Distance in x to the nearest hump peak, in [0, 1/2]."""
    xm = np.mod(x - shift, 2.0)
    return np.minimum(np.minimum(xm, np.abs(xm - 1.0)), 2.0 - xm)


def reaper_grid(h: float) -> GridSpec:
    nx = round(2.0 / h)
    ny = round(1.0 / h)
    return GridSpec(nx, ny, 2.0, 1.0, "periodic-x")


def make_reaper_system(grid: GridSpec, spec: GrimReaperSpec,
                       y0: float = 0.5) -> PhaseSystem:
    """Signed-distance initialization of the comb at t = 0."""
    peak = float(_hump_height(spec, 0.0))
    if not (0.1 < y0 and y0 + peak < grid.ly - 0.05):
        raise ConfigError("junction height leaves no headroom in the strip")
    shift = 0.5 * grid.hx
    X, Y = grid.mesh()
    hump = y0 + _hump_height(spec, _peak_distance(X, shift))
    xm = np.mod(X - shift, 2.0)
    lab = np.where(Y > hump, 3, np.where((xm > 0.5) & (xm < 1.5), 1, 2))

    # interface skeleton in unwrapped x: two humps and two walls
    nu = max(4096, 4 * grid.nx)
    u = np.linspace(-0.5, 0.5, nu)
    pieces = []
    for peak_x in (0.0, 1.0):
        hx_ = shift + peak_x + u
        hy_ = y0 + _hump_height(spec, np.abs(u))
        pieces.append(np.column_stack([hx_, hy_]))
    for wall_x in (0.5, 1.5):
        pieces.append(np.array([[shift + wall_x, 0.0], [shift + wall_x, y0]]))

    q = np.column_stack([X.ravel(), Y.ravel()])
    d = np.full(q.shape[0], np.inf)
    for verts in pieces:
        for sx in (-2.0, 0.0, 2.0):
            shifted = verts + np.array([sx, 0.0])
            d = np.minimum(d, _distance_to_polyline(q, shifted, closed=False))
    d = d.reshape(grid.nx, grid.ny)

    fields = tuple(ScalarField2D(grid, np.where(lab == i, d, -d))
                   for i in (1, 2, 3))
    return PhaseSystem(fields)


def reaper_profile_error(system: PhaseSystem, spec: GrimReaperSpec,
                         y0: float, t: float) -> float:
    """L2 distance between the computed and exact curved interface over
    the graph window between the center peak and its right junction."""
    grid = system.spec
    shift = 0.5 * grid.hx
    d = system.fields[0].values - system.fields[2].values
    xs = grid.x_nodes()
    xm = xs - shift - 1.0
    cols = np.flatnonzero((xm >= 0.0) & (xm <= 0.5))
    if cols.size == 0:
        raise ConfigError("grid too coarse for the profile window")
    errs = np.empty(cols.size)
    for k, i in enumerate(cols):
        col = d[i]
        sign = col > 0.0
        idx = np.flatnonzero(sign[:-1] & ~sign[1:])
        if idx.size == 0:
            raise NumericalError("curved interface left the profile window")
        j = idx[-1]
        y_cross = (j + col[j] / (col[j] - col[j + 1])) * grid.hy
        u = min(xm[i], 0.5)
        y_exact = y0 + float(_hump_height(spec, u)) - spec.speed * t
        errs[k] = y_cross - y_exact
    return float(math.sqrt(np.sum(errs * errs) * grid.hx))


# ---------------------------------------------------------------------------
# study drivers


@dataclass(frozen=True)
class StudyRow:
    h: float
    nt: int
    error: float
    order: float | None


def order_ladder(errors) -> list[float | None]:
    """log2 ratios of consecutive errors (halving refinement assumed)."""
    out: list[float | None] = [None]
    for prev, cur in zip(errors, errors[1:]):
        out.append(math.log2(prev / cur) if prev > 0 and cur > 0 else None)
    return out


def fitted_order(dts, errors) -> float:
    """Least-squares slope of log error against log step size."""
    ld = np.log(np.asarray(dts, dtype=np.float64))
    le = np.log(np.asarray(errors, dtype=np.float64))
    return float(np.polyfit(ld, le, 1)[0])


def save_study_csv(rows: list[StudyRow], path: str):
    with open(path, "w") as fh:
        fh.write("h,nt,error,order\n")
        for r in rows:
            o = "" if r.order is None else "%.6g" % r.order
            fh.write("%.12g,%d,%.12g,%s\n" % (r.h, r.nt, r.error, o))


def _run_rows(worker, configs, jobs: int):
    if jobs <= 1 or len(configs) <= 1:
        return [worker(c) for c in configs]
    with ProcessPoolExecutor(max_workers=min(jobs, len(configs))) as ex:
        return list(ex.map(worker, configs))


# -- Table 1: ellipse, single-circle kernel, refine dt at fixed grid --------

TABLE1 = {
    "n": 500,
    "nts": (5, 10, 20, 40),
    "shape": Ellipse(0.5, 0.5, 0.35, 0.2),
    "T": 0.02,
    "oracle_points": 2048,
    "eps_arc": 2.0 * math.pi * 1e-5,
    "lambda_cells": 0.001,
    "spacing": 5e-5,
}
TABLE1_FULL = dict(TABLE1, n=1000, nts=(5, 10, 20, 40, 80))


def _ellipse_row(cfg) -> StudyRow:
    n, nt, shape, T, eps_arc, lambda_cells, spacing, oracle = cfg
    spec = GridSpec(n, n)
    fld = init_shape(spec, shape)
    kern = single_circle_kernel()
    dt = T / nt
    params = BisectionParams.for_grid(spec, eps_arc=eps_arc,
                                      lambda_cells=lambda_cells)
    for _ in range(nt):
        fld = step_median(fld, kern, dt, params=params)
    contour = extract_contour(fld, 0.0)
    err = hausdorff_distance(contour, oracle, spacing=spacing)
    return StudyRow(1.0 / n, nt, err, None)


def study_table1(preset=None, jobs: int = 1) -> list[StudyRow]:
    cfg = dict(TABLE1 if preset is None else preset)
    start = shape_polyline(cfg["shape"], 4 * cfg["oracle_points"])
    oracle = front_track(start, cfg["T"], n_points=cfg["oracle_points"])
    rows_cfg = [(cfg["n"], nt, cfg["shape"], cfg["T"], cfg["eps_arc"],
                 cfg["lambda_cells"], cfg["spacing"], oracle)
                for nt in cfg["nts"]]
    rows = _run_rows(_ellipse_row, rows_cfg, jobs)
    orders = order_ladder([r.error for r in rows])
    return [StudyRow(r.h, r.nt, r.error, o) for r, o in zip(rows, orders)]


# -- Table 2: flowers, three-circle kernel, refine h and dt together --------

TABLE2 = {
    "hs": (1e-2, 5e-3, 2.5e-3, 1.25e-3),
    "nts": (1, 2, 4, 8),
    "T": 1.0 / 200.0,
    "shape4": Flower(0.5, 0.5, 0.25, 0.05, 4),
    "shape6": Flower(0.5, 0.5, 0.25, 0.05, 6),
    "oracle_points": 2048,
    "eps_arc": 2.0 * math.pi * 1e-5,
    "lambda_cells": 0.001,
    "spacing": 2e-5,
}
TABLE2_FULL = dict(TABLE2,
                   hs=(1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4, 3.125e-4),
                   nts=(1, 2, 4, 8, 16, 32))


def _flower_row(cfg) -> StudyRow:
    h, nt, shape, T, eps_arc, lambda_cells, spacing, oracle = cfg
    n = round(1.0 / h)
    spec = GridSpec(n, n)
    fld = init_shape(spec, shape)
    kern = second_order_kernel()
    dt = T / nt
    params = BisectionParams.for_grid(spec, eps_arc=eps_arc,
                                      lambda_cells=lambda_cells)
    for _ in range(nt):
        fld = step_median(fld, kern, dt, params=params)
    contour = extract_contour(fld, 0.0)
    err = hausdorff_distance(contour, oracle, spacing=spacing)
    return StudyRow(h, nt, err, None)


def study_table2(petals: int = 4, preset=None, jobs: int = 1) -> list[StudyRow]:
    cfg = dict(TABLE2 if preset is None else preset)
    shape = cfg["shape4"] if petals == 4 else cfg["shape6"]
    start = shape_polyline(shape, 4 * cfg["oracle_points"])
    oracle = front_track(start, cfg["T"], n_points=cfg["oracle_points"])
    rows_cfg = [(h, nt, shape, cfg["T"], cfg["eps_arc"], cfg["lambda_cells"],
                 cfg["spacing"], oracle) for h, nt in zip(cfg["hs"], cfg["nts"])]
    rows = _run_rows(_flower_row, rows_cfg, jobs)
    orders = order_ladder([r.error for r in rows])
    return [StudyRow(r.h, r.nt, r.error, o) for r, o in zip(rows, orders)]


# -- Table 3: grim reapers, refine h and dt together -------------------------

TABLE3 = {
    "hs": (0.02, 0.01, 5e-3, 2.5e-3),
    "T": 0.03,
    "y0": 0.5,
}
TABLE3_FULL = dict(TABLE3, hs=(0.02, 0.01, 5e-3, 2.5e-3, 1.25e-3))


def _reaper_row(cfg) -> StudyRow:
    h, alpha, T, y0 = cfg
    spec = GrimReaperSpec(alpha)
    grid = reaper_grid(h)
    system = make_reaper_system(grid, spec, y0)
    sigma = spec.sigma()
    nt = round(0.1 / h)
    dt = T / nt
    for _ in range(nt):
        # the centered exit rule: the sup rule's half-sample bias does
        # not vanish under this coupled h, dt refinement
        system = multiphase_step(system, sigma, dt=dt, rule="midpoint")
    err = reaper_profile_error(system, spec, y0, T)
    return StudyRow(h, nt, err, None)


def study_table3(alpha: float = 3.0, preset=None, jobs: int = 1) -> list[StudyRow]:
    cfg = dict(TABLE3 if preset is None else preset)
    rows_cfg = [(h, alpha, cfg["T"], cfg["y0"]) for h in cfg["hs"]]
    rows = _run_rows(_reaper_row, rows_cfg, jobs)
    orders = order_ladder([r.error for r in rows])
    return [StudyRow(r.h, r.nt, r.error, o) for r, o in zip(rows, orders)]


# -- Fig 3: circle non-pinning at small kernel radius ------------------------

FIG3 = {
    "n": 512,
    "r0": 0.25,
    "steps": 10,
    "radius_cells": 5.0,
    "eps_arc": 2.0 * math.pi * 1e-4,
    "lambda_cells": 0.001,
    "spacing_cells": 0.02,
}
FIG3_FULL = dict(FIG3, n=2048)


def study_fig3(preset=None) -> tuple[float, float]:
    """Evolve a fine circle with a ~5-cell kernel; return (error, hx)."""
    cfg = dict(FIG3 if preset is None else preset)
    n = cfg["n"]
    spec = GridSpec(n, n)
    r_kernel = cfg["radius_cells"] * spec.hx
    dt = 0.5 * r_kernel * r_kernel
    fld = init_shape(spec, Circle(0.5, 0.5, cfg["r0"]))
    kern = single_circle_kernel()
    params = BisectionParams.for_grid(spec, eps_arc=cfg["eps_arc"],
                                      lambda_cells=cfg["lambda_cells"])
    for _ in range(cfg["steps"]):
        fld = step_median(fld, kern, dt, params=params)
    r_exact = exact_circle_radius(cfg["r0"], cfg["steps"] * dt)
    exact = shape_polyline(Circle(0.5, 0.5, r_exact), 4096)
    contour = extract_contour(fld, 0.0)
    spacing = cfg["spacing_cells"] * spec.hx
    return hausdorff_distance(contour, exact, spacing=spacing), spec.hx
