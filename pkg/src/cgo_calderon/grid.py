"""Uniform tensor grids, sampled complex fields, mollification and zero-extension.

Fields are stored as 2D arrays indexed ``values[i, j]`` for the node
``(xmin + i*hx, ymin + j*hy)``.  Flattened in C order this is the row-major
layout (node ``(i, j)`` at offset ``i*ny + j``) used by the binary format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import fftconvolve

MIN_NODES = 8


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("node counts must be integers")
        if self.nx < MIN_NODES or self.ny < MIN_NODES:
            raise ValueError(f"need nx, ny >= {MIN_NODES}, got ({self.nx}, {self.ny})")
        bounds = (self.xmin, self.xmax, self.ymin, self.ymax)
        if not all(np.isfinite(b) for b in bounds):
            raise ValueError("grid bounds must be finite")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate bounds {bounds}")

    @property
    def hx(self) -> float:
        return (self.xmax - self.xmin) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.ymax - self.ymin) / (self.ny - 1)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return (self.xmin, self.xmax, self.ymin, self.ymax)

    @property
    def x(self) -> np.ndarray:
        return self.xmin + np.arange(self.nx) * self.hx

    @property
    def y(self) -> np.ndarray:
        return self.ymin + np.arange(self.ny) * self.hy

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def z(self) -> np.ndarray:
        """Node coordinates as complex numbers ``x1 + i x2``."""
        X, Y = self.mesh()
        return X + 1j * Y

    def distance_to_boundary(self) -> np.ndarray:
        X, Y = self.mesh()
        return np.minimum.reduce(
            [X - self.xmin, self.xmax - X, Y - self.ymin, self.ymax - Y]
        )

    def interior_mask(self, margin: float) -> np.ndarray:
        """Nodes at distance >= margin from the grid boundary."""
        return self.distance_to_boundary() >= margin - 1e-12 * self.h

    def node_index(self, point: complex, tol: float = 1e-9) -> Tuple[int, int]:
        """Index of the node at ``point``; raises if ``point`` is off the lattice."""
        fi = (point.real - self.xmin) / self.hx
        fj = (point.imag - self.ymin) / self.hy
        i, j = int(round(fi)), int(round(fj))
        if abs(fi - i) > tol or abs(fj - j) > tol:
            raise ValueError(f"point {point} is not a grid node")
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise ValueError(f"point {point} lies outside the grid")
        return i, j

    def contains(self, other: "Grid2D") -> bool:
        return (
            self.xmin <= other.xmin
            and self.xmax >= other.xmax
            and self.ymin <= other.ymin
            and self.ymax >= other.ymax
        )


def make_grid(nx: int, ny: int, bounds: Sequence[float]) -> Grid2D:
    if len(bounds) != 4:
        raise ValueError("bounds must be (xmin, xmax, ymin, ymax)")
    return Grid2D(int(nx), int(ny), *(float(b) for b in bounds))


def square_grid(n: int, half_side: float) -> Grid2D:
    return make_grid(n, n, (-half_side, half_side, -half_side, half_side))


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128, copy=True)
        if v.ndim == 1 and v.size == self.grid.nx * self.grid.ny:
            v = v.reshape(self.grid.shape)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ComplexField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))

    def with_values(self, values: np.ndarray) -> "ComplexField":
        return ComplexField(self.grid, values)

    def conj(self) -> "ComplexField":
        return ComplexField(self.grid, np.conj(self.values))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def mass(self) -> complex:
        """Cell-weighted sum of node values."""
        return complex(self.values.sum() * self.grid.cell_area)

    def norm(self, p: float = 2.0, mask: Optional[np.ndarray] = None) -> float:
        """Discrete L^p norm with cell-area weights, optionally over a node mask."""
        v = self.values if mask is None else self.values[mask]
        a = np.abs(v)
        if np.isinf(p):
            return float(a.max()) if a.size else 0.0
        return float((np.sum(a**p) * self.grid.cell_area) ** (1.0 / p))

    def at(self, point: complex) -> complex:
        return complex(self.values[self.grid.node_index(point)])

    def interp(self, point: complex) -> complex:
        """Bilinear interpolation; exact at nodes."""
        g = self.grid
        point = complex(point)
        fi = (point.real - g.xmin) / g.hx
        fj = (point.imag - g.ymin) / g.hy
        if not (-1e-9 <= fi <= g.nx - 1 + 1e-9 and -1e-9 <= fj <= g.ny - 1 + 1e-9):
            raise ValueError(f"point {point} lies outside the grid")
        i = min(max(int(np.floor(fi + 1e-9)), 0), g.nx - 2)
        j = min(max(int(np.floor(fj + 1e-9)), 0), g.ny - 2)
        s, t = fi - i, fj - j
        if abs(s) < 1e-9 and abs(t) < 1e-9:
            return complex(self.values[i, j])
        v = self.values
        return complex(
            (1 - s) * (1 - t) * v[i, j] + s * (1 - t) * v[i + 1, j]
            + (1 - s) * t * v[i, j + 1] + s * t * v[i + 1, j + 1]
        )


# --- potentials ------------------------------------------------------------

POTENTIAL_KINDS = ("zero", "gaussian", "two_bumps", "disk_indicator", "file")


@dataclass(frozen=True)
class PotentialSpec:
    """Library of synthetic potentials.

    ``gaussian`` is ``A exp(-|x-c|^2 / w^2)``; ``two_bumps`` places gaussians of
    amplitude ``A`` and ``A/2`` at ``c -/+ (1.5 w, 0)``; ``disk_indicator`` is
    ``A`` on the closed disk of radius ``w`` about ``c``.
    """

    kind: str = "zero"
    amplitude: float = 1.0
    center: Tuple[float, float] = (0.0, 0.0)
    width: float = 0.3
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        nums = (self.amplitude, self.width, *self.center)
        if not all(np.isfinite(v) for v in nums):
            raise ValueError("potential parameters must be finite")
        if self.kind in ("gaussian", "two_bumps", "disk_indicator") and self.width <= 0:
            raise ValueError("width must be positive")
        if self.kind == "file" and not self.path:
            raise ValueError("file potential needs a path")


def _gaussian(X, Y, cx, cy, w):
    return np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / w**2)


def sample_potential(spec: PotentialSpec, g: Grid2D) -> ComplexField:
    if spec.kind == "file":
        from .formats import read_field

        try:
            f = read_field(spec.path)
        except OSError as exc:
            raise ValueError(f"cannot read potential file {spec.path}: {exc}") from exc
        if f.grid != g:
            raise ValueError("potential file grid does not match the requested grid")
        return ComplexField(g, f.values.real.astype(np.complex128))

    X, Y = g.mesh()
    cx, cy = spec.center
    A, w = spec.amplitude, spec.width
    if spec.kind == "zero":
        q = np.zeros(g.shape)
    elif spec.kind == "gaussian":
        q = A * _gaussian(X, Y, cx, cy, w)
    elif spec.kind == "two_bumps":
        d = 1.5 * w
        q = A * _gaussian(X, Y, cx - d, cy, w) + 0.5 * A * _gaussian(X, Y, cx + d, cy, w)
    else:
        q = np.where((X - cx) ** 2 + (Y - cy) ** 2 <= w**2, A, 0.0)
    return ComplexField(g, q.astype(np.complex128))


# --- mollification ---------------------------------------------------------


def bump_kernel(g: Grid2D, epsilon: float) -> np.ndarray:
    """exp(1/(|x/eps|^2 - 1)) sampled on grid offsets, with unit discrete mass."""
    mx = int(np.floor(epsilon / g.hx))
    my = int(np.floor(epsilon / g.hy))
    ox = np.arange(-mx, mx + 1) * g.hx
    oy = np.arange(-my, my + 1) * g.hy
    OX, OY = np.meshgrid(ox, oy, indexing="ij")
    r2 = (OX**2 + OY**2) / epsilon**2
    k = np.zeros_like(r2)
    inside = r2 < 1.0
    k[inside] = np.exp(1.0 / (r2[inside] - 1.0))
    return k / (k.sum() * g.cell_area)


def mollify(q: ComplexField, epsilon: float) -> ComplexField:
    g = q.grid
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if epsilon < 2 * g.h:
        raise ValueError(
            f"epsilon={epsilon} below grid resolution (need >= {2 * g.h:.6g})"
        )
    k = bump_kernel(g, epsilon) * g.cell_area
    v = q.values
    out = fftconvolve(v.real, k, mode="same") + 1j * fftconvolve(v.imag, k, mode="same")
    # fftconvolve leaves rounding noise where the input vanishes identically
    if not np.any(v):
        out = np.zeros_like(out)
    return ComplexField(g, out)


# --- extension / restriction ----------------------------------------------


def _lattice_offset(small: Grid2D, big: Grid2D) -> Tuple[int, int]:
    for hs, hb in ((small.hx, big.hx), (small.hy, big.hy)):
        if abs(hs - hb) > 1e-12 * hb:
            raise ValueError("incompatible node lattices: spacings differ")
    if not big.contains(small):
        raise ValueError("target grid does not contain the source grid")
    fi = (small.xmin - big.xmin) / big.hx
    fj = (small.ymin - big.ymin) / big.hy
    i0, j0 = int(round(fi)), int(round(fj))
    if abs(fi - i0) > 1e-12 * max(1.0, abs(fi)) or abs(fj - j0) > 1e-12 * max(1.0, abs(fj)):
        raise ValueError("incompatible node lattices: nodes do not coincide")
    if i0 + small.nx > big.nx or j0 + small.ny > big.ny:
        raise ValueError("target grid does not contain the source grid")
    return i0, j0


def extend_zero(q: ComplexField, big: Grid2D) -> ComplexField:
    i0, j0 = _lattice_offset(q.grid, big)
    out = np.zeros(big.shape, dtype=np.complex128)
    out[i0 : i0 + q.grid.nx, j0 : j0 + q.grid.ny] = q.values
    return ComplexField(big, out)


def restrict(f: ComplexField, small: Grid2D) -> ComplexField:
    i0, j0 = _lattice_offset(small, f.grid)
    return ComplexField(small, f.values[i0 : i0 + small.nx, j0 : j0 + small.ny])


def nested_grids(n_omega: int, omega: float, K: float) -> Tuple[Grid2D, Grid2D]:
    """Grid on Omega = (-omega, omega)^2 and a node-compatible grid on (-K, K)^2.

    K is rounded up to a whole number of cells.
    """
    inner = square_grid(n_omega, omega)
    pad = int(np.ceil((K - omega) / inner.hx - 1e-9))
    Kr = omega + pad * inner.hx
    outer = make_grid(n_omega + 2 * pad, n_omega + 2 * pad, (-Kr, Kr, -Kr, Kr))
    return inner, outer
