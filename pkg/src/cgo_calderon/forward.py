"""Finite-difference Dirichlet solver for (Laplacian + q) u = 0 and DtN assembly.

Boundary nodes are ordered counterclockwise starting at the bottom-left
corner: bottom edge left to right, right edge upwards, top edge right to left,
left edge downwards.  There are ``2 (nx + ny) - 4`` of them.

The Neumann trace is the discrete flux

    F_b u = (u_b - u_in) / h + (h / 2) (-q_b u_b - (L u)_b)

where ``u_in`` is the interior neighbour along the inward normal (absent at
corners) and ``L`` is the second difference along the closed boundary
polygon.  The correction term restores second-order accuracy, and because
``L`` is symmetric the discrete Green identity

    h sum_b (w_b F_b u - u_b F_b w) = h^2 sum_interior (w Lap_h u - u Lap_h w)

holds exactly.  DtN maps are therefore exactly symmetric, and the boundary
pairing equals the discrete volume integral to rounding.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import ComplexField, Grid2D

COND_LIMIT = 1e12


class EigenvalueCollisionError(RuntimeError):
    """0 is (numerically) a Dirichlet eigenvalue of Laplacian + q."""


@lru_cache(maxsize=32)
def boundary_indices(g: Grid2D) -> Tuple[np.ndarray, np.ndarray]:
    nx, ny = g.shape
    bi = [np.arange(nx), np.full(ny - 1, nx - 1), np.arange(nx - 2, -1, -1), np.zeros(ny - 2, int)]
    bj = [np.zeros(nx, int), np.arange(1, ny), np.full(nx - 1, ny - 1), np.arange(ny - 2, 0, -1)]
    I, J = np.concatenate(bi), np.concatenate(bj)
    I.flags.writeable = False
    J.flags.writeable = False
    return I, J


def boundary_count(g: Grid2D) -> int:
    return 2 * (g.nx + g.ny) - 4


def _corner_positions(g: Grid2D):
    nx, ny = g.shape
    return np.array([0, nx - 1, nx + ny - 2, 2 * nx + ny - 3])


def arc_length_weights(g: Grid2D) -> np.ndarray:
    I, J = boundary_indices(g)
    w = np.where((J == 0) | (J == g.ny - 1), g.hx, g.hy).astype(float)
    w[_corner_positions(g)] = 0.5 * (g.hx + g.hy)
    return w


def arc_length_positions(g: Grid2D) -> np.ndarray:
    """Arc-length coordinate of each boundary node, 0 at the bottom-left corner."""
    I, J = boundary_indices(g)
    X = g.xmin + I * g.hx
    Y = g.ymin + J * g.hy
    steps = np.hypot(np.diff(X), np.diff(Y))
    return np.concatenate([[0.0], np.cumsum(steps)])


def perimeter(g: Grid2D) -> float:
    return 2 * (g.xmax - g.xmin) + 2 * (g.ymax - g.ymin)


def outward_normals(g: Grid2D) -> np.ndarray:
    """Unit side normals; corners get the average of the two side normals."""
    I, J = boundary_indices(g)
    n = np.zeros((I.size, 2))
    n[J == 0] += (0, -1)
    n[I == g.nx - 1] += (1, 0)
    n[J == g.ny - 1] += (0, 1)
    n[I == 0] += (-1, 0)
    c = _corner_positions(g)
    n[c] *= 0.5
    return n


@dataclass(frozen=True, eq=False)
class BoundaryFunction:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128, copy=True).reshape(-1)
        if v.size != boundary_count(self.grid):
            raise ValueError(
                f"boundary function needs {boundary_count(self.grid)} values, got {v.size}"
            )
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def weights(self) -> np.ndarray:
        return arc_length_weights(self.grid)

    @classmethod
    def from_field(cls, u: ComplexField) -> "BoundaryFunction":
        I, J = boundary_indices(u.grid)
        return cls(u.grid, u.values[I, J])

    @classmethod
    def from_function(cls, g: Grid2D, fn) -> "BoundaryFunction":
        I, J = boundary_indices(g)
        return cls(g, fn(g.xmin + I * g.hx, g.ymin + J * g.hy))

    def inner(self, other: "BoundaryFunction") -> complex:
        """Bilinear (unconjugated) arc-length pairing."""
        return complex(np.sum(self.weights * self.values * other.values))


def _require_square_cells(g: Grid2D) -> float:
    if abs(g.hx - g.hy) > 1e-12 * g.hx:
        raise ValueError("Neumann traces and DtN maps need hx == hy")
    return g.hx


# --- Dirichlet solver -------------------------------------------------------


class DirichletSolver:
    """Sparse LU of the interior 5-point operator Lap_h + q, factored once."""

    def __init__(self, q: ComplexField):
        g = q.grid
        self.grid = g
        self.q = q
        nx, ny = g.shape
        mx, my = nx - 2, ny - 2
        ex = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(mx, mx)) / g.hx**2
        ey = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(my, my)) / g.hy**2
        lap = sp.kron(ex, sp.identity(my)) + sp.kron(sp.identity(mx), ey)
        qi = q.values[1:-1, 1:-1].reshape(-1)
        A = (lap + sp.diags(qi)).astype(np.complex128).tocsc()
        try:
            self.lu = spla.splu(A)
        except RuntimeError as exc:
            raise EigenvalueCollisionError(f"Laplacian + q is singular: {exc}") from exc
        d = np.abs(self.lu.U.diagonal())
        ratio = d.max() / d.min() if d.min() > 0 else np.inf
        if not ratio < COND_LIMIT:
            raise EigenvalueCollisionError(
                f"Laplacian + q is near-singular (pivot ratio {ratio:.3g} >= {COND_LIMIT:.0e}); "
                "0 is close to a Dirichlet eigenvalue"
            )
        self.pivot_ratio = float(ratio)

    def _boundary_rhs(self, full: np.ndarray) -> np.ndarray:
        """-(coupling of interior nodes to prescribed boundary values), per column."""
        g = self.grid
        rhs = np.zeros((g.nx - 2, g.ny - 2) + full.shape[2:], dtype=np.complex128)
        rhs[0] -= full[0, 1:-1] / g.hx**2
        rhs[-1] -= full[-1, 1:-1] / g.hx**2
        rhs[:, 0] -= full[1:-1, 0] / g.hy**2
        rhs[:, -1] -= full[1:-1, -1] / g.hy**2
        return rhs

    def solve_many(self, boundary: np.ndarray, source: Optional[np.ndarray] = None) -> np.ndarray:
        """Solve for k right-hand sides at once.

        ``boundary`` has shape (nb, k); ``source`` (interior right-hand side of
        (Lap_h + q) u = source) has shape (nx, ny, k).  Returns (nx, ny, k).
        """
        g = self.grid
        I, J = boundary_indices(g)
        k = boundary.shape[1]
        full = np.zeros((g.nx, g.ny, k), dtype=np.complex128)
        full[I, J] = boundary
        rhs = self._boundary_rhs(full)
        if source is not None:
            rhs = rhs + source[1:-1, 1:-1]
        sol = self.lu.solve(rhs.reshape(-1, k))
        full[1:-1, 1:-1] = sol.reshape(g.nx - 2, g.ny - 2, k)
        return full

    def solve(self, f: "BoundaryFunction") -> ComplexField:
        if f.grid != self.grid:
            raise ValueError("boundary data and potential live on different grids")
        return ComplexField(self.grid, self.solve_many(f.values[:, None])[..., 0])


def solve_dirichlet(q: ComplexField, f: BoundaryFunction) -> ComplexField:
    return DirichletSolver(q).solve(f)


# --- Neumann trace ----------------------------------------------------------


def _flux(full: np.ndarray, g: Grid2D, qb: np.ndarray) -> np.ndarray:
    """Discrete flux for fields of shape (nx, ny, k); returns (nb, k)."""
    h = _require_square_cells(g)
    I, J = boundary_indices(g)
    nx, ny = g.shape
    ub = full[I, J]
    # inward neighbour; corners have none
    ii = I.copy()
    jj = J.copy()
    ii[I == 0] = 1
    ii[I == nx - 1] = nx - 2
    jj[J == 0] = 1
    jj[J == ny - 1] = ny - 2
    uin = full[ii, jj]
    normal = (ub - uin) / h
    normal[_corner_positions(g)] = 0.0
    tang = (np.roll(ub, -1, axis=0) - 2 * ub + np.roll(ub, 1, axis=0)) / h**2
    return normal + 0.5 * h * (-qb[:, None] * ub - tang)


def neumann_trace(u: ComplexField, q: Optional[ComplexField] = None) -> BoundaryFunction:
    """Outward normal derivative of a solution of (Lap_h + q) u = 0.

    ``q`` only enters through its boundary values; omit it when q vanishes on
    the boundary.
    """
    g = u.grid
    I, J = boundary_indices(g)
    qb = np.zeros(I.size) if q is None else q.values[I, J]
    return BoundaryFunction(g, _flux(u.values[..., None], g, qb)[:, 0])


# --- DtN maps ---------------------------------------------------------------


BASES = ("trig", "nodal")


def trig_basis(g: Grid2D, M: int) -> np.ndarray:
    """(nb, M) matrix of 1, cos(2 pi k s/L), sin(2 pi k s/L), k = 1, 2, ..."""
    s = arc_length_positions(g) / perimeter(g)
    cols = [np.ones_like(s)]
    k = 1
    while len(cols) < M:
        cols.append(np.cos(2 * np.pi * k * s))
        if len(cols) < M:
            cols.append(np.sin(2 * np.pi * k * s))
        k += 1
    return np.stack(cols, axis=1).astype(np.complex128)


def basis_matrix(g: Grid2D, basis: str, M: int) -> np.ndarray:
    if basis == "nodal":
        return np.eye(boundary_count(g), dtype=np.complex128)
    return trig_basis(g, M)


@dataclass(frozen=True, eq=False)
class DtNMap:
    """Matrix of the DtN map in a boundary basis.

    ``matrix[:, k]`` holds the basis coefficients of the Neumann data for the
    k-th basis function as Dirichlet data.  ``delta`` is Lambda_q - Lambda_0,
    computed from difference solves rather than by subtracting matrices.
    """

    grid: Grid2D
    basis: str
    M: int
    matrix: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}")
        for a in (self.matrix, self.delta):
            if a.shape != (self.M, self.M):
                raise ValueError("DtN matrices must be M x M")

    @property
    def descriptor(self) -> str:
        g = self.grid
        return f"{self.basis}:M={self.M}:nx={g.nx}:ny={g.ny}:bounds={g.xmin!r},{g.xmax!r},{g.ymin!r},{g.ymax!r}"

    def basis_functions(self) -> np.ndarray:
        return basis_matrix(self.grid, self.basis, self.M)

    def gram(self) -> np.ndarray:
        B = self.basis_functions()
        return B.T @ (arc_length_weights(self.grid)[:, None] * B)

    def project(self, f: BoundaryFunction) -> Tuple[np.ndarray, float]:
        """Arc-length least-squares coefficients of f and the relative projection error."""
        if f.grid != self.grid:
            raise ValueError("boundary function lives on a different grid")
        if self.basis == "nodal":
            return f.values.copy(), 0.0
        B = self.basis_functions()
        w = arc_length_weights(self.grid)
        c = np.linalg.solve(self.gram(), B.T @ (w * f.values))
        r = f.values - B @ c
        den = np.sqrt(np.sum(w * np.abs(f.values) ** 2))
        err = float(np.sqrt(np.sum(w * np.abs(r) ** 2)) / den) if den > 0 else 0.0
        return c, err

    def apply(self, f: BoundaryFunction) -> BoundaryFunction:
        c, _ = self.project(f)
        return BoundaryFunction(self.grid, self.basis_functions() @ (self.matrix @ c))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# M={self.M} basis={self.descriptor}\n")
        w = csv.writer(buf, lineterminator="\n")
        for row in self.matrix:
            w.writerow([f"{z.real:.17g}{z.imag:+.17g}j" for z in row])
        return buf.getvalue()


def _coefficients(g: Grid2D, basis: str, B: np.ndarray, data: np.ndarray) -> np.ndarray:
    if basis == "nodal":
        return data
    w = arc_length_weights(g)
    G = B.T @ (w[:, None] * B)
    return np.linalg.solve(G, B.T @ (w[:, None] * data))


@lru_cache(maxsize=8)
def _reference(g: Grid2D, basis: str, M: int):
    """Harmonic extensions of the basis functions and Lambda_0."""
    zero = ComplexField.zeros(g)
    B = basis_matrix(g, basis, M)
    u0 = DirichletSolver(zero).solve_many(B)
    I, _ = boundary_indices(g)
    lam0 = _coefficients(g, basis, B, _flux(u0, g, np.zeros(I.size)))
    u0.flags.writeable = False
    lam0.flags.writeable = False
    return B, u0, lam0


def assemble_dtn(q: ComplexField, M: int = 32, basis: str = "trig", chunk: int = 128) -> DtNMap:
    g = q.grid
    _require_square_cells(g)
    nb = boundary_count(g)
    if basis not in BASES:
        raise ValueError(f"unknown basis {basis!r}")
    if basis == "nodal":
        M = nb
    elif not 1 <= M <= nb // 4:
        raise ValueError(f"M={M} must lie in [1, {nb // 4}] (boundary nodes / 4)")
    B, u0, lam0 = _reference(g, basis, M)
    if not np.any(q.values):
        return DtNMap(g, basis, M, lam0.copy(), np.zeros_like(lam0))
    solver = DirichletSolver(q)
    I, J = boundary_indices(g)
    qb = q.values[I, J]
    delta = np.empty((M, M), dtype=np.complex128)
    for s in range(0, M, chunk):
        cols = slice(s, min(M, s + chunk))
        try:
            # w = u_q - u_0 solves (Lap_h + q) w = -q u_0 with zero boundary data
            w = solver.solve_many(np.zeros((nb, cols.stop - s)), -q.values[..., None] * u0[..., cols])
        except Exception as exc:  # pragma: no cover - splu solve failures are rare
            raise RuntimeError(f"solve failed for modes {cols.start}..{cols.stop - 1}: {exc}") from exc
        flux = _flux(w, g, np.zeros(nb)) - 0.5 * g.hx * qb[:, None] * B[:, cols]
        delta[:, cols] = _coefficients(g, basis, B, flux)
    return DtNMap(g, basis, M, lam0 + delta, delta)
