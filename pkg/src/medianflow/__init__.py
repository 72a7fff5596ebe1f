"""Median-filter and threshold-dynamics schemes for motion by mean curvature.

Two-phase evolution runs a weighted median filter over circle-sum kernels
(either exactly on sampled stencils or through the fast arc-bisection
transform), multiphase evolution runs the surface-tension-weighted median
walk, and both are tied to their threshold-dynamics counterparts by an exact
level-set stacking identity.  Submodules:

grid        fields, shapes, contours, distances
kernels     circle-sum and radial-density kernels, moment identities
median2p    two-phase median filters (sampled and arc-bisection)
tdyn        threshold dynamics and the stacking identity
multiphase  N-phase median walk and partitions
energy      nonlocal energies, dissipation monitoring
denoise     thresholded nonlocal denoising
bench       exact solutions, front tracking, convergence studies
cli         command-line interface
"""

from . import bench, denoise, energy, grid, kernels, median2p, multiphase, tdyn
from ._backend import backend_name

__all__ = [
    "backend_name",
    "bench",
    "denoise",
    "energy",
    "grid",
    "kernels",
    "median2p",
    "multiphase",
    "tdyn",
]

__version__ = "0.1.0"
