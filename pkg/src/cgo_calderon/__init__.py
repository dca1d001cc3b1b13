"""Numerical toolkit for complex geometrical optics solutions of (Laplacian + q) u = 0 in the plane.

Modules: ``grid`` (grids, fields, potentials), ``cauchy`` (solid Cauchy
transforms), ``cgo`` (CGO Neumann series), ``osc`` (oscillatory operator and
stationary phase), ``forward`` (Dirichlet solver, DtN maps), ``recon``
(boundary pairing, pointwise recovery, decay studies) and ``cli``.
"""

from .grid import ComplexField, Grid2D, PotentialSpec, make_grid, sample_potential, square_grid

__all__ = ["ComplexField", "Grid2D", "PotentialSpec", "make_grid", "sample_potential", "square_grid"]
__version__ = "0.1.0"
