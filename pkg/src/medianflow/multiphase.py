"""Multiphase median dynamics under pairwise surface tensions.

Each phase carries a level-set field; one step updates every field to
the level where its phase stops winning the tension-weighted comparison
against the competitors.  The zero super level sets of the updated
fields reproduce the threshold-dynamics partition step exactly when
both use the same stencil, tensions, and tie conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConfigError
from .grid import GridSpec, ScalarField2D
from .kernels import ball_radius_for_dt
from .median2p import SampledStencil, ball_stencil, stencil_shifts
from .tdyn import PartitionField


@dataclass(frozen=True)
class SurfaceTensionMatrix:
    """Symmetric pairwise tensions, zero diagonal, triangle inequality."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.matrix, dtype=np.float64))
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ConfigError("tension matrix must be square, at least 2x2")
        if not np.allclose(m, m.T, atol=1e-12, rtol=0.0):
            raise ConfigError("tension matrix must be symmetric")
        if np.any(np.abs(np.diag(m)) > 0.0):
            raise ConfigError("tension matrix diagonal must be zero")
        off = m[~np.eye(m.shape[0], dtype=bool)]
        if np.any(off <= 0.0):
            raise ConfigError("off-diagonal tensions must be positive")
        n = m.shape[0]
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    if i != j and j != k and i != k:
                        if m[i, k] > m[i, j] + m[j, k] + 1e-12:
                            raise ConfigError(
                                f"triangle inequality fails: sigma[{i},{k}] > "
                                f"sigma[{i},{j}] + sigma[{j},{k}]"
                            )
        object.__setattr__(self, "matrix", m)

    @property
    def n_phases(self) -> int:
        return self.matrix.shape[0]

    @staticmethod
    def equal(n: int) -> "SurfaceTensionMatrix":
        m = np.ones((n, n)) - np.eye(n)
        return SurfaceTensionMatrix(m)


@dataclass(frozen=True)
class PhaseSystem:
    """One level-set field per phase on a shared grid."""

    fields: tuple[ScalarField2D, ...]

    def __post_init__(self):
        fields = tuple(self.fields)
        if len(fields) < 2:
            raise ConfigError("a phase system needs at least 2 phases")
        spec = fields[0].spec
        for f in fields[1:]:
            if f.spec != spec:
                raise ConfigError("all phase fields must share one grid")
        object.__setattr__(self, "fields", fields)

    @property
    def spec(self) -> GridSpec:
        return self.fields[0].spec

    @property
    def n_phases(self) -> int:
        return len(self.fields)

    def stack(self) -> np.ndarray:
        return np.stack([f.values for f in self.fields])

    @staticmethod
    def from_stack(spec: GridSpec, stack: np.ndarray) -> "PhaseSystem":
        return PhaseSystem(tuple(ScalarField2D(spec, stack[i])
                                 for i in range(stack.shape[0])))

    def partition(self) -> PartitionField:
        """Label each node by the largest field, ties to the lowest index."""
        labels = np.argmax(self.stack(), axis=0).astype(np.int32) + 1
        return PartitionField(self.spec, labels, self.n_phases)


def system_from_masks(spec: GridSpec, masks: list[np.ndarray]) -> PhaseSystem:
    """Signed-distance fields from a node partition given as masks."""
    from scipy.ndimage import distance_transform_edt

    total = np.zeros((spec.nx, spec.ny), dtype=np.int64)
    for m in masks:
        if m.shape != (spec.nx, spec.ny) or m.dtype != np.bool_:
            raise ConfigError("masks must be boolean node grids")
        total += m
    if np.any(total != 1):
        raise ConfigError("masks must partition the grid")
    fields = []
    sampling = (spec.hx, spec.hy)
    tx = 3 if spec.periodic_x else 1
    ty = 3 if spec.periodic_y else 1
    ox = spec.nx if spec.periodic_x else 0
    oy = spec.ny if spec.periodic_y else 0
    for m in masks:
        big = np.tile(m, (tx, ty))
        inside = distance_transform_edt(big, sampling=sampling)
        outside = distance_transform_edt(~big, sampling=sampling)
        sd = (inside - outside)[ox:ox + spec.nx, oy:oy + spec.ny]
        fields.append(ScalarField2D(spec, sd))
    return PhaseSystem(tuple(fields))


# ---------------------------------------------------------------------------
# point-wise reference semantics


def _sample_system(system: PhaseSystem, x, stencil: SampledStencil) -> np.ndarray:
    pts = np.asarray(x, dtype=np.float64) + stencil.offsets
    return np.stack([f._eval_extended(pts) for f in system.fields])


def _competitors(samples: np.ndarray, i: int) -> np.ndarray:
    """Per sample, the strongest phase other than i (ties: lowest index)."""
    l1 = np.argmax(samples, axis=0)
    masked = samples.copy()
    masked[l1, np.arange(samples.shape[1])] = -np.inf
    l2 = np.argmax(masked, axis=0)
    return np.where(l1 != i, l1, l2)


def psi_ij(system: PhaseSystem, sigma: SurfaceTensionMatrix, i: int, j: int,
           x, lam: float, stencil: SampledStencil) -> float:
    """Tension cost of phase j at level lam, normalized by total weight.

    Each sample is classed as phase i where phi_i >= lam and as its
    strongest competitor elsewhere; the cost sums sigma[j, class] times
    the sample weight.
    """
    n = system.n_phases
    if not (0 <= i < n and 0 <= j < n):
        raise ConfigError("phase indices out of range")
    samples = _sample_system(system, x, stencil)
    comp = _competitors(samples, i)
    cls = np.where(samples[i] >= lam, i, comp)
    s = sigma.matrix
    total = 0.0
    acc = 0.0
    w = stencil.weights
    for k in range(samples.shape[1]):
        acc += s[j, cls[k]] * w[k]
        total += w[k]
    return acc / total


def _check_rule(rule: str) -> bool:
    """True for the pair-midpoint exit rule, False for the sup rule."""
    if rule not in ("sup", "midpoint"):
        raise ConfigError(f"unknown exit rule {rule!r}, expected sup or midpoint")
    return rule == "midpoint"


def multiphase_median_node(system: PhaseSystem, sigma: SurfaceTensionMatrix,
                           i: int, x, stencil: SampledStencil,
                           rule: str = "sup") -> float:
    """Walk the sorted samples of phi_i until phase i stops winning.

    Mirrors the grid step exactly: processed samples move weight from
    the sigma[i, .] pricing to their competitor's row.  Under the sup
    rule the exit sample's value is returned (extreme samples when the
    comparison fails immediately or never); the midpoint rule averages
    the exit value with the largest sample value strictly below it,
    which centers the update between the last winning and first losing
    levels.
    """
    n = system.n_phases
    mid = _check_rule(rule)
    if not 0 <= i < n:
        raise ConfigError("phase index out of range")
    samples = _sample_system(system, x, stencil)
    comp = _competitors(samples, i)
    s = sigma.matrix
    vals = samples[i]
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    sc = comp[order]
    sw = stencil.weights[order]
    m = sv.size
    tall = np.zeros((n, m))
    for c in range(n):
        tall[c] = np.cumsum(sw * (sc == c))
    cum = np.cumsum(sw)
    total = cum[-1]
    for t in range(m):
        cost = np.empty(n)
        for j in range(n):
            acc = s[i, j] * (total - cum[t])
            for c in range(n):
                if s[j, c] != 0.0:
                    acc = acc + s[j, c] * tall[c, t]
            cost[j] = acc
        ok = True
        for j in range(n):
            if j < i and not cost[i] < cost[j]:
                ok = False
            elif j > i and not cost[i] <= cost[j]:
                ok = False
        if not ok:
            if mid:
                below = int((sv < sv[t]).sum())
                if below > 0:
                    return float(0.5 * (sv[below - 1] + sv[t]))
            return float(sv[t])
    return float(sv[m - 1])


# ---------------------------------------------------------------------------
# grid step


def multiphase_step(system: PhaseSystem, sigma: SurfaceTensionMatrix,
                    dt: float | None = None, stencil: SampledStencil | None = None,
                    clamp_factor: float | None = None,
                    rule: str = "sup") -> PhaseSystem:
    """One multiphase median step of size dt (or with an explicit stencil).

    The stencil defaults to the lattice ball whose radius realizes dt
    for the ball density.  clamp_factor, when given, clips all fields to
    |phi| <= clamp_factor * radius afterwards, which changes nothing
    within that band of the interfaces.  rule picks the exit value: sup
    returns the first losing sample, which keeps the thresholded update
    identical to the set dynamics; midpoint centers the update between
    the last winning and first losing sample values, which removes the
    one-sided bias of sampling a discrete window and is the right
    choice for interface position measurements.
    """
    mid = _check_rule(rule)
    if sigma.n_phases != system.n_phases:
        raise ConfigError("tension matrix size does not match phase count")
    if stencil is None:
        if dt is None:
            raise ConfigError("multiphase_step needs dt or an explicit stencil")
        radius = ball_radius_for_dt(dt)
        if radius >= 0.5 * min(system.spec.lx, system.spec.ly):
            raise ConfigError("time step too large: ball radius exceeds half domain")
        stencil = ball_stencil(system.spec, radius)
    di, dj, _, _ = stencil_shifts(stencil, system.spec, mode="nearest")
    out = _backend.impl.multiphase_step_grid(
        system.stack(), sigma.matrix, di, dj, stencil.weights,
        system.spec.periodic_x, system.spec.periodic_y, mid
    )
    if clamp_factor is not None:
        band = clamp_factor * stencil.max_radius
        np.clip(out, -band, band, out=out)
    return PhaseSystem.from_stack(system.spec, out)


def run_multiphase(system: PhaseSystem, sigma: SurfaceTensionMatrix, dt: float,
                   steps: int, clamp_factor: float | None = None,
                   rule: str = "sup") -> PhaseSystem:
    for _ in range(steps):
        system = multiphase_step(system, sigma, dt=dt,
                                 clamp_factor=clamp_factor, rule=rule)
    return system


# ---------------------------------------------------------------------------
# file formats


def save_sigma(sigma: SurfaceTensionMatrix, path: str):
    """Whitespace-separated n x n matrix, one row per line."""
    with open(path, "w") as fh:
        for row in sigma.matrix:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_sigma(path: str) -> SurfaceTensionMatrix:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split()])
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ConfigError(f"{path} does not hold a square tension matrix")
    return SurfaceTensionMatrix(np.array(rows))


def save_system(system: PhaseSystem, prefix: str):
    """Per-phase field dumps plus the combined label grid."""
    from .grid import save_field
    from .tdyn import save_partition

    for i, f in enumerate(system.fields):
        save_field(f, f"{prefix}_phase{i}.field")
    save_partition(system.partition(), f"{prefix}_labels.csv")


def load_system(prefix: str, n_phases: int) -> PhaseSystem:
    from .grid import load_field

    fields = tuple(load_field(f"{prefix}_phase{i}.field") for i in range(n_phases))
    return PhaseSystem(fields)
