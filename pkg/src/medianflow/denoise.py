"""Median-flow image denoising with a quadratic fidelity term.

Each step replaces a node value by the exact minimizer of

    sum_j (w_j / W) |lam - phi(x + y_j)|  +  (gamma / 2) (lam - f(x))^2

clamped to lam >= 0.  The minimizer is found in closed form by scanning
the sorted neighbor samples for the subgradient sign change, so the
step is a fidelity-tilted weighted median.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import impl
from .energy import field_energy, monitor, EnergyReport
from .errors import ConfigError
from .grid import GridSpec, ScalarField2D
from .median2p import SampledStencil, stencil_shifts, EVAL_MODES


@dataclass(frozen=True)
class DenoiseProblem:
    """Noisy data, fidelity weight, and the neighborhood stencil."""

    data: ScalarField2D
    gamma: float
    stencil: SampledStencil

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.data.values.min() < 0:
            raise ConfigError("denoise data must be nonnegative")


def nl_energy(phi: ScalarField2D, problem: DenoiseProblem) -> float:
    """Nonlocal interface energy plus quadratic distance to the data."""
    if phi.spec != problem.data.spec:
        raise ConfigError("field and data must share one grid")
    spec = phi.spec
    fid = 0.5 * problem.gamma * float(np.sum((phi.values - problem.data.values) ** 2))
    return field_energy(phi, problem.stencil) + fid * spec.hx * spec.hy


def denoise_step(phi: ScalarField2D, problem: DenoiseProblem,
                 eval_mode: str = "nearest") -> ScalarField2D:
    """One fidelity-tilted median sweep over all nodes.

    The nearest mode keeps the step on the lattice graph, matching the
    neighborhoods the energy is computed with; bilinear samples the
    stencil offsets exactly.
    """
    if phi.spec != problem.data.spec:
        raise ConfigError("field and data must share one grid")
    if eval_mode not in EVAL_MODES:
        raise ConfigError(f"eval_mode must be one of {EVAL_MODES}, got {eval_mode!r}")
    spec = phi.spec
    di, dj, fx, fy = stencil_shifts(problem.stencil, spec, mode=eval_mode)
    out = impl.denoise_step_grid(phi.values, problem.data.values,
                                 float(problem.gamma), di, dj, fx, fy,
                                 problem.stencil.weights,
                                 spec.periodic_x, spec.periodic_y)
    return ScalarField2D(spec, out)


def run_denoise(problem: DenoiseProblem, steps: int,
                phi0: ScalarField2D | None = None,
                eval_mode: str = "nearest"):
    """Iterate the step from the data, returning the result and an
    energy report over the iterates."""
    if phi0 is None:
        phi0 = problem.data.copy()
    report, phi = monitor(lambda p: denoise_step(p, problem, eval_mode),
                          lambda p: nl_energy(p, problem), phi0, steps)
    return phi, report


def read_pgm(path: str) -> ScalarField2D:
    """Load a binary PGM image as a field with values in [0, 1].

    Image rows map to decreasing y so the picture keeps its visual
    orientation; the longer image side spans a unit length and the
    boundary is clamped.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P5":
        raise ConfigError("only binary (P5) PGM images are supported")
    # Header tokens: magic, width, height, maxval, with # comments.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ConfigError("truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1
    width, height, maxval = (int(t) for t in tokens)
    if not (width >= 4 and height >= 4 and 0 < maxval < 65536):
        raise ConfigError(f"bad PGM dimensions {width}x{height} maxval {maxval}")
    count = width * height
    if maxval < 256:
        pix = np.frombuffer(raw, dtype=np.uint8, count=count, offset=pos)
    else:
        pix = np.frombuffer(raw, dtype=">u2", count=count, offset=pos)
    if pix.size != count:
        raise ConfigError("truncated PGM pixel data")
    img = pix.reshape(height, width).astype(np.float64) / maxval
    side = max(width, height)
    spec = GridSpec(width, height, width / side, height / side, "clamped")
    values = img[::-1, :].T.copy()
    return ScalarField2D(spec, values)


def write_pgm(phi: ScalarField2D, path: str, maxval: int = 255):
    """Save a field as a binary PGM, clipping values to [0, 1]."""
    if not 0 < maxval < 65536:
        raise ConfigError(f"maxval must be in [1, 65535], got {maxval}")
    img = np.clip(phi.values, 0.0, 1.0).T[::-1, :]
    quant = np.rint(img * maxval)
    if maxval < 256:
        data = quant.astype(np.uint8).tobytes()
    else:
        data = quant.astype(">u2").tobytes()
    header = f"P5\n{phi.spec.nx} {phi.spec.ny}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + data)
