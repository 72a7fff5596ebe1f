"""Nonlocal interface energies and dissipation monitoring.

All energies read the field through the same stencil shifts as the
evolution operators (nearest-node lattice semantics), which is what
makes the per-step dissipation statements exact discrete inequalities
rather than asymptotic ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import ConfigError
from .grid import ScalarField2D
from .median2p import SampledStencil, stencil_shifts
from .multiphase import SurfaceTensionMatrix
from .tdyn import IndicatorField2D, PartitionField


def _shift(values: np.ndarray, di: int, dj: int,
           periodic_x: bool, periodic_y: bool) -> np.ndarray:
    """values sampled at node + (di, dj), wrapping or replicating edges."""
    nx, ny = values.shape
    ii = np.arange(nx) + di
    jj = np.arange(ny) + dj
    ii = ii % nx if periodic_x else np.clip(ii, 0, nx - 1)
    jj = jj % ny if periodic_y else np.clip(jj, 0, ny - 1)
    return values[ii[:, None], jj[None, :]]


def _lattice(stencil: SampledStencil, spec):
    di, dj, _, _ = stencil_shifts(stencil, spec, mode="nearest")
    return di, dj


def set_energy(ind: IndicatorField2D, stencil: SampledStencil) -> float:
    """Stencil mass of the set seen from outside, integrated over nodes."""
    spec = ind.spec
    di, dj = _lattice(stencil, spec)
    mask = ind.mask.astype(np.float64)
    u = np.zeros_like(mask)
    total = 0.0
    for k in range(stencil.m):
        w = float(stencil.weights[k])
        u += w * _shift(mask, int(di[k]), int(dj[k]),
                        spec.periodic_x, spec.periodic_y)
        total += w
    outside = ~ind.mask
    return float(np.sum(u[outside])) / total * spec.hx * spec.hy


def field_energy(fld: ScalarField2D, stencil: SampledStencil) -> float:
    """Weighted mean absolute difference across stencil offsets."""
    spec = fld.spec
    di, dj = _lattice(stencil, spec)
    v = fld.values
    acc = 0.0
    total = 0.0
    for k in range(stencil.m):
        w = float(stencil.weights[k])
        acc += w * float(np.sum(np.abs(v - _shift(v, int(di[k]), int(dj[k]),
                                                  spec.periodic_x,
                                                  spec.periodic_y))))
        total += w
    return acc / total * spec.hx * spec.hy


def movement_limiter(new: ScalarField2D, old: ScalarField2D,
                     stencil: SampledStencil) -> float:
    """Cross-difference excess of the update against both endpoints.

    Nonnegative whenever the stencil's lattice symbol is positive
    semidefinite; sampled circle stencils can make it negative.
    """
    if new.spec != old.spec:
        raise ConfigError("fields must share one grid")
    spec = new.spec
    di, dj = _lattice(stencil, spec)
    a = new.values
    b = old.values
    acc = 0.0
    total = 0.0
    for k in range(stencil.m):
        w = float(stencil.weights[k])
        sa = _shift(a, int(di[k]), int(dj[k]), spec.periodic_x, spec.periodic_y)
        sb = _shift(b, int(di[k]), int(dj[k]), spec.periodic_x, spec.periodic_y)
        acc += w * float(np.sum(2.0 * np.abs(a - sb) - np.abs(a - sa)
                                - np.abs(b - sb)))
        total += w
    return acc / total * spec.hx * spec.hy


def multiphase_energy(part: PartitionField, sigma: SurfaceTensionMatrix,
                      stencil: SampledStencil) -> float:
    """Tension-weighted cross mass over all phase pairs."""
    if sigma.n_phases != part.n_phases:
        raise ConfigError("tension matrix size does not match partition")
    spec = part.spec
    di, dj = _lattice(stencil, spec)
    total = float(np.add.reduce(stencil.weights))
    acc = 0.0
    for j in range(1, part.n_phases + 1):
        mask_j = (part.labels == j).astype(np.float64)
        u = np.zeros_like(mask_j)
        for k in range(stencil.m):
            u += float(stencil.weights[k]) * _shift(mask_j, int(di[k]), int(dj[k]),
                                                    spec.periodic_x,
                                                    spec.periodic_y)
        u /= total
        for i in range(1, j):
            s = sigma.matrix[i - 1, j - 1]
            acc += 2.0 * s * float(np.sum(u[part.labels == i]))
    return acc * spec.hx * spec.hy


def layer_cake_energy(fld: ScalarField2D, stencil: SampledStencil) -> float:
    """Exact integral over levels of the super-level-set energies.

    The super level set is constant between consecutive distinct field
    values, so the integral is a finite sum; it equals half the field
    energy for any symmetric stencil.
    """
    levels = np.unique(fld.values)
    acc = 0.0
    for k in range(1, levels.size):
        ind = IndicatorField2D.from_level(fld, float(levels[k]))
        acc += (levels[k] - levels[k - 1]) * set_energy(ind, stencil)
    return float(acc)


def stencil_symbol_psd(stencil: SampledStencil, spec, tol: float = 1e-11) -> bool:
    """Check the lattice Fourier symbol of the stencil is nonnegative."""
    di, dj, _, _ = stencil_shifts(stencil, spec, mode="nearest")
    emb = np.zeros((spec.nx, spec.ny))
    for k in range(stencil.m):
        emb[int(di[k]) % spec.nx, int(dj[k]) % spec.ny] += stencil.weights[k]
    symbol = np.fft.fft2(emb)
    if np.abs(symbol.imag).max() > tol * np.abs(symbol.real).max():
        return False
    return bool(symbol.real.min() >= -tol * symbol.real.max())


@dataclass(frozen=True)
class EnergyReport:
    """Per-step energies of a run and where monotonicity failed."""

    series: np.ndarray
    violations: tuple[int, ...] = dataclass_field(default=())
    rel_tol: float = 1e-12

    @property
    def monotone_violations(self) -> int:
        return len(self.violations)

    @property
    def steps(self) -> int:
        return self.series.size - 1


def monitor(run, energy, state, steps: int, rel_tol: float = 1e-12):
    """Apply `run` repeatedly, recording energies and flagging increases.

    An increase counts when E_{k+1} - E_k exceeds rel_tol times the
    larger magnitude of the two values.
    """
    if steps < 1:
        raise ConfigError("monitor needs at least one step")
    series = np.empty(steps + 1)
    series[0] = energy(state)
    violations = []
    for k in range(steps):
        state = run(state)
        series[k + 1] = energy(state)
        scale = max(abs(series[k]), abs(series[k + 1]))
        if series[k + 1] - series[k] > rel_tol * scale:
            violations.append(k)
    return EnergyReport(series, tuple(violations), rel_tol), state


def save_energy_csv(report: EnergyReport, path: str):
    """CSV rows step,energy,delta (delta blank on the first row)."""
    with open(path, "w") as fh:
        fh.write("step,energy,delta\n")
        for k, e in enumerate(report.series):
            if k == 0:
                fh.write("0,%.17g,\n" % e)
            else:
                fh.write("%d,%.17g,%.17g\n" % (k, e, e - report.series[k - 1]))
