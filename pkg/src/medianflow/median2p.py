"""Two-phase median filter schemes.

Two interchangeable node updates drive the curvature flow:

* sampled weighted median over a :class:`SampledStencil` (sort based),
* arc-bisection median over a :class:`~medianflow.kernels.CircleSumKernel`
  (level bisection with recursive arc measurement, no sorting).

Point-wise operations are implemented here in plain Python as the
reference semantics; whole-grid steps delegate to the selected backend
(compiled extension or the numpy fallback), which mirrors these
semantics exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConfigError
from .grid import GridSpec, ScalarField2D
from .kernels import CircleSumKernel, radius_for_dt

PRESAMPLE_PER_CIRCLE = 64

MEDIAN_RULES = ("midpoint", "sup")
EVAL_MODES = ("bilinear", "nearest")
STEP_VARIANTS = ("jacobi", "two_step")
STEP_METHODS = ("bisection", "sampled")


@dataclass(frozen=True)
class SampledStencil:
    """Point offsets with positive weights, symmetric under reflection.

    ``offsets`` is (m, 2) in physical units, ``weights`` is (m,).  Point
    symmetry (every offset's reflection present with the same weight) is
    required so the median of a linear field is its center value.
    ``cells`` optionally records exact integer node shifts for stencils
    born on the grid lattice; nearest-node paths use them verbatim.
    """

    offsets: np.ndarray
    weights: np.ndarray
    cells: np.ndarray | None = None

    def __post_init__(self):
        offsets = np.ascontiguousarray(np.asarray(self.offsets, dtype=np.float64))
        weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if offsets.ndim != 2 or offsets.shape[1] != 2 or offsets.shape[0] == 0:
            raise ConfigError(f"offsets must be (m, 2), got {offsets.shape}")
        if weights.shape != (offsets.shape[0],):
            raise ConfigError("weights must match offsets")
        if not np.all(np.isfinite(offsets)):
            raise ConfigError("offsets must be finite")
        if not np.all(weights > 0):
            raise ConfigError("stencil weights must be positive")
        _check_symmetry(offsets, weights)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "weights", weights)
        if self.cells is not None:
            cells = np.ascontiguousarray(np.asarray(self.cells, dtype=np.intp))
            if cells.shape != offsets.shape:
                raise ConfigError("cells must match offsets")
            object.__setattr__(self, "cells", cells)

    @property
    def m(self) -> int:
        return self.offsets.shape[0]

    @property
    def total_weight(self) -> float:
        return float(np.add.reduce(self.weights))

    @property
    def max_radius(self) -> float:
        return float(np.max(np.hypot(self.offsets[:, 0], self.offsets[:, 1])))


def _check_symmetry(offsets: np.ndarray, weights: np.ndarray, tol: float = 1e-12):
    order_a = np.lexsort((offsets[:, 1], offsets[:, 0]))
    neg = -offsets
    order_b = np.lexsort((neg[:, 1], neg[:, 0]))
    if not np.allclose(offsets[order_a], neg[order_b], atol=tol, rtol=0.0):
        raise ConfigError("stencil offsets must be symmetric under point reflection")
    if not np.allclose(weights[order_a], weights[order_b], atol=tol, rtol=0.0):
        raise ConfigError("stencil weights must be symmetric under point reflection")


@dataclass(frozen=True)
class BisectionParams:
    """Tolerances of the arc-bisection median.

    ``eps_arc`` is the angular tolerance of the arc recursion (arcs
    narrower than this contribute 0, which biases the arc measure
    downward and makes the dependence on the tolerance monotone).
    ``eps_lambda`` is the termination width of the level bisection.
    """

    eps_arc: float = 2.0 * math.pi * 1e-3
    eps_lambda: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.eps_arc <= math.pi / 8.0:
            raise ConfigError(f"eps_arc must be in (0, pi/8], got {self.eps_arc}")
        if not self.eps_lambda > 0:
            raise ConfigError(f"eps_lambda must be positive, got {self.eps_lambda}")

    @staticmethod
    def for_grid(spec: GridSpec, eps_arc: float = 2.0 * math.pi * 1e-3,
                 lambda_cells: float = 0.01) -> "BisectionParams":
        """Defaults tied to the grid: eps_lambda = hx * lambda_cells."""
        return BisectionParams(eps_arc=eps_arc, eps_lambda=spec.hx * lambda_cells)


# ---------------------------------------------------------------------------
# stencil constructors


def circle_stencil(kernel: CircleSumKernel, m_per_circle: int = 64) -> SampledStencil:
    """Uniform angular sampling of a circle-sum kernel.

    Each circle contributes m points at equal angles with weight
    c_j * (circle mass) / m, i.e. weight density times arclength per
    sample. m must be even so the stencil is point symmetric.
    """
    if m_per_circle < 4 or m_per_circle % 2 != 0:
        raise ConfigError("m_per_circle must be even and at least 4")
    offs = []
    wts = []
    for c, a in kernel.components:
        radius = float(a) * kernel.scale
        mass = float(c) * 2.0 * math.pi * radius
        theta = 2.0 * math.pi * np.arange(m_per_circle) / m_per_circle
        offs.append(np.column_stack((radius * np.cos(theta), radius * np.sin(theta))))
        wts.append(np.full(m_per_circle, mass / m_per_circle))
    return SampledStencil(np.vstack(offs), np.concatenate(wts))


def ball_stencil(spec: GridSpec, radius: float) -> SampledStencil:
    """All grid offsets with |y| <= radius, unit weights (ball indicator)."""
    if not radius > 0:
        raise ConfigError(f"ball radius must be positive, got {radius}")
    px = int(math.floor(radius / spec.hx))
    py = int(math.floor(radius / spec.hy))
    dx, dy = np.meshgrid(np.arange(-px, px + 1), np.arange(-py, py + 1), indexing="ij")
    ox = dx * spec.hx
    oy = dy * spec.hy
    keep = ox * ox + oy * oy <= radius * radius
    cells = np.column_stack((dx[keep], dy[keep]))
    if cells.shape[0] == 0:
        raise ConfigError("ball radius smaller than one grid cell")
    offsets = cells * np.array([spec.hx, spec.hy])
    return SampledStencil(offsets, np.ones(cells.shape[0]), cells=cells)


def lattice_rings_stencil(spec: GridSpec, ring_r2: tuple[int, ...]) -> SampledStencil:
    """Equal-weight stencil of all lattice offsets with |cells|^2 in ring_r2."""
    wanted = set(int(v) for v in ring_r2)
    if 0 in wanted:
        raise ConfigError("ring radii must exclude the center")
    rmax = int(math.isqrt(max(wanted)))
    dx, dy = np.meshgrid(np.arange(-rmax, rmax + 1), np.arange(-rmax, rmax + 1), indexing="ij")
    r2 = dx * dx + dy * dy
    keep = np.isin(r2, sorted(wanted))
    cells = np.column_stack((dx[keep], dy[keep]))
    offsets = cells * np.array([spec.hx, spec.hy])
    return SampledStencil(offsets, np.ones(cells.shape[0]), cells=cells)


def gaussian_grid_stencil(spec: GridSpec, p: int, s: float) -> SampledStencil:
    """Gaussian weights exp(-|y|^2 / (2 s^2)) on a (2p+1)^2 offset grid."""
    if p < 1:
        raise ConfigError("gaussian stencil needs p >= 1")
    if not s > 0:
        raise ConfigError("gaussian stencil width must be positive")
    dx, dy = np.meshgrid(np.arange(-p, p + 1), np.arange(-p, p + 1), indexing="ij")
    cells = np.column_stack((dx.ravel(), dy.ravel()))
    offsets = cells * np.array([spec.hx, spec.hy])
    r2 = offsets[:, 0] ** 2 + offsets[:, 1] ** 2
    weights = np.exp(-r2 / (2.0 * s * s))
    return SampledStencil(offsets, weights, cells=cells)


def snapped_stencil(stencil: SampledStencil, spec: GridSpec) -> SampledStencil:
    """Round offsets to the nearest lattice nodes, merging duplicates."""
    dx = np.rint(stencil.offsets[:, 0] / spec.hx).astype(np.intp)
    dy = np.rint(stencil.offsets[:, 1] / spec.hy).astype(np.intp)
    merged: dict[tuple[int, int], float] = {}
    for k in range(stencil.m):
        key = (int(dx[k]), int(dy[k]))
        merged[key] = merged.get(key, 0.0) + float(stencil.weights[k])
    cells = np.array(sorted(merged.keys()), dtype=np.intp)
    weights = np.array([merged[tuple(c)] for c in cells])
    offsets = cells * np.array([spec.hx, spec.hy])
    return SampledStencil(offsets, weights, cells=cells)


def stencil_shifts(stencil: SampledStencil, spec: GridSpec, mode: str = "bilinear"):
    """Node shifts and fractional parts realizing the stencil on a grid.

    Returns (di, dj, fx, fy) with sample j read at node (i+di, j+dj)
    blended toward (i+di+1, j+dj+1) by fractions (fx, fy). Nearest mode
    rounds and zeroes the fractions; exact lattice stencils use their
    stored integer cells directly.
    """
    if mode not in EVAL_MODES:
        raise ConfigError(f"eval mode must be one of {EVAL_MODES}")
    if stencil.cells is not None:
        di = stencil.cells[:, 0].copy()
        dj = stencil.cells[:, 1].copy()
        zero = np.zeros(stencil.m)
        return di, dj, zero, zero.copy()
    ux = stencil.offsets[:, 0] / spec.hx
    uy = stencil.offsets[:, 1] / spec.hy
    if mode == "nearest":
        return (
            np.rint(ux).astype(np.intp),
            np.rint(uy).astype(np.intp),
            np.zeros(stencil.m),
            np.zeros(stencil.m),
        )
    di = np.floor(ux).astype(np.intp)
    dj = np.floor(uy).astype(np.intp)
    fx = ux - di
    fy = uy - dj
    # snap roundoff-level fractions so exact lattice offsets stay exact
    snap_lo_x = fx < 1e-9
    snap_hi_x = fx > 1.0 - 1e-9
    fx[snap_lo_x] = 0.0
    di[snap_hi_x] += 1
    fx[snap_hi_x] = 0.0
    snap_lo_y = fy < 1e-9
    snap_hi_y = fy > 1.0 - 1e-9
    fy[snap_lo_y] = 0.0
    dj[snap_hi_y] += 1
    fy[snap_hi_y] = 0.0
    return di, dj, fx, fy


# ---------------------------------------------------------------------------
# point-wise reference operations


def sampled_weighted_median(field: ScalarField2D, x, stencil: SampledStencil,
                            rule: str = "midpoint") -> float:
    """Weighted median of the field sampled at x + offsets.

    Samples are sorted ascending (ties by sample index) and weights
    accumulated until the running sum exceeds half the total.  The value
    where the crossing happens is returned; when the running sum hits
    exactly half, rule "midpoint" averages the two adjacent samples (the
    classical median of an even equal-weight list) while rule "sup"
    returns the upper sample, which is the convention that commutes
    exactly with thresholding.
    """
    if rule not in MEDIAN_RULES:
        raise ConfigError(f"rule must be one of {MEDIAN_RULES}")
    pts = np.asarray(x, dtype=np.float64) + stencil.offsets
    vals = field._eval_extended(pts)
    return _walk_median(vals, stencil.weights, rule)


def _walk_median(vals: np.ndarray, weights: np.ndarray, rule: str) -> float:
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    sw = weights[order]
    cum = np.cumsum(sw)
    half = 0.5 * cum[-1]
    below = cum <= half
    t_ex = int(np.argmin(below)) if not below.all() else sv.size - 1
    if rule == "sup":
        return float(sv[t_ex])
    if t_ex >= 1 and cum[t_ex - 1] == half:
        return float(0.5 * (sv[t_ex - 1] + sv[t_ex]))
    return float(sv[t_ex])


def arc_integral(field: ScalarField2D, x, r: float, lam: float,
                 theta1: float, theta2: float, eps: float) -> float:
    """Measure of the arc {theta in [theta1, theta2]: field >= lam}.

    Recursive bisection: an arc is accepted whole when both endpoint
    values sit at or above lam, discarded when the level does not
    separate the endpoint values, and split otherwise.  Arcs narrower
    than eps return 0.
    """
    if not (0.0 <= theta1 < theta2 and theta2 - theta1 <= math.pi / 2.0 + 1e-12):
        raise ConfigError("need 0 <= theta1 < theta2 <= theta1 + pi/2")
    cx, cy = float(x[0]), float(x[1])

    def value(theta: float) -> float:
        return float(field._eval_extended(np.array([cx + r * math.cos(theta),
                                                    cy + r * math.sin(theta)])[None])[0])

    def recurse(a: float, b: float, va: float, vb: float) -> float:
        if b - a < eps:
            return 0.0
        lo = va if va < vb else vb
        hi = va if va > vb else vb
        if lo >= lam:
            return b - a
        if not lo < lam < hi:
            return 0.0
        mid = 0.5 * (a + b)
        vm = value(mid)
        return recurse(a, mid, va, vm) + recurse(mid, b, vm, vb)

    v1 = value(theta1)
    v2 = value(theta2)
    return recurse(theta1, theta2, v1, v2)


def approx_psi(field: ScalarField2D, x, kernel: CircleSumKernel, lam: float,
               params: BisectionParams) -> float:
    """Kernel-weighted fraction of the circles where the field is >= lam.

    Sum over circles of weight times radius times the measured arc
    (four quadrant calls), normalized by the total kernel mass; lies in
    [0, 1] and is nonincreasing in lam.
    """
    total = 0.0
    mass = 0.0
    for c, a in kernel.components:
        radius = float(a) * kernel.scale
        c_f = float(c)
        arcs = 0.0
        for q in range(4):
            arcs += arc_integral(field, x, radius, lam,
                                 q * math.pi / 2.0, (q + 1) * math.pi / 2.0,
                                 params.eps_arc)
        total += c_f * radius * arcs
        mass += c_f * radius * 2.0 * math.pi
    return total / mass


def _lambda_bracket(field: ScalarField2D, x, kernel: CircleSumKernel,
                    lipschitz: float) -> tuple[float, float]:
    """Level bracket from dense presampling with a Lipschitz pad."""
    cx, cy = float(x[0]), float(x[1])
    theta = 2.0 * math.pi * np.arange(PRESAMPLE_PER_CIRCLE) / PRESAMPLE_PER_CIRCLE
    lo = math.inf
    hi = -math.inf
    pad = 0.0
    for _, a in kernel.components:
        radius = float(a) * kernel.scale
        pts = np.column_stack((cx + radius * np.cos(theta), cy + radius * np.sin(theta)))
        vals = field._eval_extended(pts)
        lo = min(lo, float(vals.min()))
        hi = max(hi, float(vals.max()))
        # half the arc spacing bounds the distance to an unseen extremum
        pad = max(pad, 0.5 * lipschitz * radius * 2.0 * math.pi / PRESAMPLE_PER_CIRCLE)
    return lo - pad, hi + pad


def bisection_median(field: ScalarField2D, x, kernel: CircleSumKernel,
                     params: BisectionParams, lipschitz: float | None = None) -> float:
    """Largest level where at least half the kernel mass sits above.

    Bisection on the level over a presampled bracket; the half-mass side
    keeps the larger level, so exact half ties resolve upward.
    """
    if lipschitz is None:
        from .grid import lipschitz_quotient

        lipschitz = lipschitz_quotient(field)
    lo, hi = _lambda_bracket(field, x, kernel, lipschitz)
    if hi - lo <= 0.0:
        return lo
    while hi - lo > params.eps_lambda:
        mid = 0.5 * (lo + hi)
        if approx_psi(field, x, kernel, mid, params) >= 0.5:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# whole-grid steps


def sampled_median_field(field: ScalarField2D, stencil: SampledStencil,
                         rule: str = "midpoint", eval_mode: str = "bilinear") -> ScalarField2D:
    """Apply the sampled weighted median at every node (Jacobi map)."""
    if rule not in MEDIAN_RULES:
        raise ConfigError(f"rule must be one of {MEDIAN_RULES}")
    di, dj, fx, fy = stencil_shifts(stencil, field.spec, eval_mode)
    out = _backend.impl.sampled_median_grid(
        field.values, di, dj, fx, fy, stencil.weights,
        field.spec.periodic_x, field.spec.periodic_y, rule
    )
    return ScalarField2D(field.spec, out)


def bisection_median_field(field: ScalarField2D, kernel: CircleSumKernel,
                           params: BisectionParams) -> ScalarField2D:
    """Apply the arc-bisection median at every node (Jacobi map)."""
    from .grid import lipschitz_quotient

    _check_kernel_fits(field.spec, kernel)
    lip = lipschitz_quotient(field)
    radii = np.array([float(a) * kernel.scale for _, a in kernel.components])
    cweights = np.array([float(c) for c, _ in kernel.components])
    out = _backend.impl.bisection_median_grid(
        field.values, radii, cweights, params.eps_arc, params.eps_lambda, lip,
        field.spec.hx, field.spec.hy,
        field.spec.periodic_x, field.spec.periodic_y,
    )
    return ScalarField2D(field.spec, out)


def _check_kernel_fits(spec: GridSpec, kernel: CircleSumKernel):
    if kernel.max_radius >= 0.5 * min(spec.lx, spec.ly):
        raise ConfigError(
            f"kernel radius {kernel.max_radius:g} exceeds half the domain "
            f"{0.5 * min(spec.lx, spec.ly):g}"
        )


def step_median(field: ScalarField2D, kernel: CircleSumKernel, dt: float,
                params: BisectionParams | None = None, variant: str = "jacobi",
                method: str = "bisection", m_per_circle: int = 64,
                rule: str = "midpoint") -> ScalarField2D:
    """One median-filter time step of size dt.

    The kernel is rescaled to the radius realizing dt.  Variant "jacobi"
    applies the median once from the immutable input; "two_step" takes
    max(phi, M phi) then min against its own median, which keeps the
    update inside the input's value range and dissipates the nonlocal
    interface energy.
    """
    if variant not in STEP_VARIANTS:
        raise ConfigError(f"variant must be one of {STEP_VARIANTS}")
    if method not in STEP_METHODS:
        raise ConfigError(f"method must be one of {STEP_METHODS}")
    r = radius_for_dt(kernel, dt)
    scaled = kernel.with_scale(r)
    _check_kernel_fits(field.spec, scaled)
    if params is None:
        params = BisectionParams.for_grid(field.spec)

    if method == "bisection":
        def apply(f: ScalarField2D) -> ScalarField2D:
            return bisection_median_field(f, scaled, params)
    else:
        stencil = circle_stencil(scaled, m_per_circle)

        def apply(f: ScalarField2D) -> ScalarField2D:
            return sampled_median_field(f, stencil, rule=rule)

    if variant == "jacobi":
        return apply(field)
    half = ScalarField2D(field.spec, np.maximum(field.values, apply(field).values))
    return ScalarField2D(field.spec, np.minimum(half.values, apply(half).values))
