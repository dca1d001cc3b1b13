"""Wirtinger derivatives and discrete solid Cauchy transforms.

``dbar_inv`` approximates

    (dbar^{-1} g)(z) = (1/pi) * integral g(zeta) / (z - zeta) dA(zeta)

over the grid rectangle by a midpoint-rule convolution.  The singular cell
receives the exact average of the kernel over that cell instead of a point
value.  ``dz_inv`` uses the conjugate kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .grid import ComplexField, Grid2D


def _wirtinger(f: ComplexField, sign: float) -> ComplexField:
    g = f.grid
    v = f.values
    d1 = np.gradient(v, g.hx, axis=0, edge_order=2)
    d2 = np.gradient(v, g.hy, axis=1, edge_order=2)
    return ComplexField(g, 0.5 * (d1 + sign * 1j * d2))


def dbar(f: ComplexField) -> ComplexField:
    """d/dzbar = (d1 + i d2)/2; centered differences, one-sided at the edges."""
    return _wirtinger(f, +1.0)


def dz(f: ComplexField) -> ComplexField:
    """d/dz = (d1 - i d2)/2."""
    return _wirtinger(f, -1.0)


def singular_cell_average(hx: float, hy: float, method: str = "closed", n: int = 100) -> complex:
    """Average of 1/(pi*d) over the cell [-hx/2, hx/2] x [-hy/2, hy/2].

    The kernel is odd and the cell is symmetric, so the closed form is zero.
    ``method="quadrature"`` evaluates an ``n x n`` midpoint rule (``n**2``
    points) as an independent check.
    """
    if method == "closed":
        return 0.0j
    if method != "quadrature":
        raise ValueError(method)
    s = (np.arange(n) + 0.5) / n - 0.5
    X, Y = np.meshgrid(s * hx, s * hy, indexing="ij")
    return complex(np.mean(1.0 / (np.pi * (X + 1j * Y))))


@dataclass(frozen=True, eq=False)
class CauchyKernelTable:
    """Kernel 1/(pi (z - zeta)) on the difference lattice, plus its FFT.

    ``kernel[a + nx - 1, b + ny - 1]`` holds the value at ``d = a*hx + i*b*hy``.
    With ``conjugate=True`` the table holds 1/(pi (zbar - zetabar)).
    """

    grid: Grid2D
    conjugate: bool
    kernel: np.ndarray = field(repr=False)
    fft_shape: tuple
    kernel_hat: np.ndarray = field(repr=False)

    @property
    def singular_value(self) -> complex:
        return complex(self.kernel[self.grid.nx - 1, self.grid.ny - 1])


@lru_cache(maxsize=16)
def kernel_table(grid: Grid2D, conjugate: bool = False) -> CauchyKernelTable:
    nx, ny = grid.shape
    a = np.arange(-(nx - 1), nx) * grid.hx
    b = np.arange(-(ny - 1), ny) * grid.hy
    A, B = np.meshgrid(a, b, indexing="ij")
    d = A + 1j * B
    d[nx - 1, ny - 1] = 1.0
    k = 1.0 / (np.pi * d)
    k[nx - 1, ny - 1] = singular_cell_average(grid.hx, grid.hy)
    if conjugate:
        k = np.conj(k)
    shape = (sfft.next_fast_len(2 * nx - 1), sfft.next_fast_len(2 * ny - 1))
    # place offset (a, b) at index (a mod P, b mod Q) for circular convolution
    wrapped = np.zeros(shape, dtype=np.complex128)
    wrapped[:nx, :ny] = k[nx - 1 :, ny - 1 :]
    wrapped[-(nx - 1) :, :ny] = k[: nx - 1, ny - 1 :]
    wrapped[:nx, -(ny - 1) :] = k[nx - 1 :, : ny - 1]
    wrapped[-(nx - 1) :, -(ny - 1) :] = k[: nx - 1, : ny - 1]
    k.flags.writeable = False
    khat = sfft.fft2(wrapped)
    khat.flags.writeable = False
    return CauchyKernelTable(grid, conjugate, k, shape, khat)


def apply_table(table: CauchyKernelTable, g: ComplexField) -> ComplexField:
    if g.grid != table.grid:
        raise ValueError("field and kernel table live on different grids")
    nx, ny = g.grid.shape
    ghat = sfft.fft2(g.values, s=table.fft_shape)
    conv = sfft.ifft2(ghat * table.kernel_hat)[:nx, :ny]
    return ComplexField(g.grid, conv * g.grid.cell_area)


def apply_table_direct(table: CauchyKernelTable, g: ComplexField, chunk: int = 256) -> ComplexField:
    """O(N^2) summation of the same discrete convolution; test oracle."""
    grid = g.grid
    nx, ny = grid.shape
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    src = g.values.ravel()
    out = np.empty(nx * ny, dtype=np.complex128)
    for s in range(0, nx * ny, chunk):
        ti, tj = I[s : s + chunk, None], J[s : s + chunk, None]
        kvals = table.kernel[ti - I[None, :] + nx - 1, tj - J[None, :] + ny - 1]
        out[s : s + chunk] = kvals @ src
    return ComplexField(grid, out.reshape(nx, ny) * grid.cell_area)


def dbar_inv(g: ComplexField) -> ComplexField:
    return apply_table(kernel_table(g.grid, False), g)


def dz_inv(g: ComplexField) -> ComplexField:
    return apply_table(kernel_table(g.grid, True), g)
