"""Oscillatory integral operator T_tau, its norm decay, and stationary phase.

    T_tau f(x) = sum_y exp(-i tau psi(x, y)) chi(x) chi(y) f(y) dA,
    psi(x, y) = 2 (x1 - y1)(x2 - y2).

Because psi is bilinear in the coordinates, the kernel factors as

    exp(-2i tau x1 x2) exp(2i tau x1 y2) exp(2i tau x2 y1) exp(-2i tau y1 y2)

so T_tau is applied with two dense matrix products of side nx and ny instead
of a (nx*ny)^2 summation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .cgo import PhaseFunction
from .grid import ComplexField, Grid2D

# Nyquist bound on the phase advance between neighbouring nodes.
MAX_PHASE_STEP = np.pi
SP_MIN_INTERIOR = 0.2
# largest |q| allowed at an aliased stationary point, relative to max |q|
ALIAS_RTOL = 1e-3


class ResolutionError(ValueError):
    pass


class PowerIterationError(RuntimeError):
    def __init__(self, message, last, previous):
        super().__init__(message)
        self.last = last
        self.previous = previous


def smooth_step(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(u, 0.0, 1.0)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def window_1d(t: np.ndarray, center: float, inner: float, outer: float) -> np.ndarray:
    d = np.abs(t - center)
    return smooth_step((outer - d) / (outer - inner))


@dataclass(frozen=True, eq=False)
class OscillatoryOperator:
    """T_tau on ``grid`` with window a(x, y) = chi(x) chi(y).

    chi is a tensor-product bump equal to 1 on the box of half-width
    ``inner`` (Omega) and 0 within ``margin = 0.1 * side`` of the grid edge.
    ``inner`` defaults to two thirds of the half-side, which is Omega = (-1, 1)^2
    inside Pi = (-1.5, 1.5)^2.
    """

    grid: Grid2D
    tau: float
    inner: Optional[float] = None
    chi_x: np.ndarray = field(init=False, repr=False)
    chi_y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.grid
        if not (np.isfinite(self.tau) and self.tau >= 0):
            raise ValueError("tau must be >= 0")
        half = np.array([g.xmax - g.xmin, g.ymax - g.ymin]) / 2
        ctr = np.array([g.xmax + g.xmin, g.ymax + g.ymin]) / 2
        outer = half - 0.1 * 2 * half
        inner = np.full(2, self.inner) if self.inner is not None else half * 2 / 3
        if np.any(inner >= outer):
            raise ValueError("window plateau must lie inside the window support")
        object.__setattr__(self, "chi_x", window_1d(g.x, ctr[0], inner[0], outer[0]))
        object.__setattr__(self, "chi_y", window_1d(g.y, ctr[1], inner[1], outer[1]))
        step = self.max_phase_step()
        if step > MAX_PHASE_STEP:
            raise ResolutionError(
                f"tau={self.tau} under-resolved on this grid: phase step {step:.3g} rad "
                f"per cell exceeds {MAX_PHASE_STEP:.3g}"
            )

    @property
    def chi(self) -> np.ndarray:
        return np.outer(self.chi_x, self.chi_y)

    def support_extent(self):
        g = self.grid
        sx = g.x[self.chi_x > 0]
        sy = g.y[self.chi_y > 0]
        return (sx.max() - sx.min(), sy.max() - sy.min())

    def max_phase_step(self) -> float:
        """Largest change of tau*psi between neighbouring nodes on supp a."""
        ex, ey = self.support_extent()
        return 2 * self.tau * max(ey * self.grid.hx, ex * self.grid.hy)


def _factors(op: OscillatoryOperator):
    cached = op.__dict__.get("_factor_cache")
    if cached is None:
        g = op.grid
        t = op.tau
        X, Y = g.mesh()
        E = op.chi * np.exp(-2j * t * X * Y)
        A = np.exp(2j * t * np.outer(g.x, g.y))  # A[i, j'] = e^{2i t x1_i y2_j'}
        B = np.exp(2j * t * np.outer(g.y, g.x))  # B[j, i'] = e^{2i t x2_j y1_i'}
        cached = (E, A, B.T.copy())
        object.__setattr__(op, "_factor_cache", cached)
    return cached


def _apply(f: np.ndarray, op: OscillatoryOperator, sign: float) -> np.ndarray:
    E, A, Bt = _factors(op)
    if sign < 0:
        E, A, Bt = np.conj(E), np.conj(A), np.conj(Bt)
    S = A @ (f * E * op.grid.cell_area).T @ Bt
    return E * S


def apply_T_tau(f: ComplexField, op: OscillatoryOperator) -> ComplexField:
    if f.grid != op.grid:
        raise ValueError("field and operator live on different grids")
    return f.with_values(_apply(f.values, op, 1.0))


def apply_T_tau_adjoint(f: ComplexField, op: OscillatoryOperator) -> ComplexField:
    # psi and a are symmetric in (x, y), so T_tau^* = T_{-tau}
    return f.with_values(_apply(f.values, op, -1.0))


def apply_T_tau_dense(f: ComplexField, op: OscillatoryOperator, chunk: int = 512) -> ComplexField:
    """Direct O(N^2) kernel summation; test oracle for ``apply_T_tau``."""
    g = op.grid
    X, Y = g.mesh()
    x1, x2 = X.ravel(), Y.ravel()
    chi = op.chi.ravel()
    src = f.values.ravel() * chi * g.cell_area
    out = np.empty(x1.size, dtype=np.complex128)
    for s in range(0, x1.size, chunk):
        psi = 2 * (x1[s : s + chunk, None] - x1[None, :]) * (x2[s : s + chunk, None] - x2[None, :])
        out[s : s + chunk] = np.exp(-1j * op.tau * psi) @ src
    return f.with_values(out.reshape(g.shape) * op.chi)


def estimate_op_norm(op: OscillatoryOperator, iters: int = 60, rtol: float = 1e-6) -> float:
    """sqrt of the top eigenvalue of T^* T by power iteration from the all-ones vector.

    Raises PowerIterationError when the relative change of the eigenvalue
    estimate is still above ``rtol`` after ``iters`` steps.
    """
    if iters < 20:
        raise ValueError("iters must be >= 20")
    g = op.grid
    w = g.cell_area
    v = np.ones(g.shape, dtype=np.complex128)
    v /= np.sqrt(np.sum(np.abs(v) ** 2) * w)
    lam_prev = None
    lam = 0.0
    for _ in range(iters):
        Tv = _apply(v, op, 1.0)
        lam = float(np.sum(np.abs(Tv) ** 2) * w)
        if lam_prev is not None and abs(lam - lam_prev) <= rtol * lam:
            return float(np.sqrt(lam))
        x = _apply(Tv, op, -1.0)
        nrm = np.sqrt(np.sum(np.abs(x) ** 2) * w)
        if nrm == 0:
            return 0.0
        v = x / nrm
        lam_prev = lam
    raise PowerIterationError(
        f"power iteration not converged after {iters} steps "
        f"(last two estimates {np.sqrt(lam):.12g}, {np.sqrt(lam_prev):.12g})",
        float(np.sqrt(lam)),
        float(np.sqrt(lam_prev)),
    )


# --- stationary phase -------------------------------------------------------


def check_sp_resolution(g: Grid2D, tau: float) -> None:
    """Aliased stationary points of the lattice sum sit pi/(2 tau h) from y;
    tau*h <= pi keeps them at least half a unit away."""
    if tau * g.h > MAX_PHASE_STEP:
        raise ResolutionError(
            f"tau={tau} too large for h={g.h:.4g}: need tau*h <= {MAX_PHASE_STEP:.4g}"
        )


def alias_points(g: Grid2D, y: complex, tau: float) -> List[complex]:
    """Stationary points of the lattice sum other than y itself.

    On the lattice e^{2i tau psi} is periodic in each coordinate offset with
    period d = pi / (2 tau h), so the sum has stationary points at y + (j d, k d).
    """
    d = np.pi / (2 * tau * g.h)
    jr = range(int(np.floor((g.xmin - y.real) / d)), int(np.ceil((g.xmax - y.real) / d)) + 1)
    kr = range(int(np.floor((g.ymin - y.imag) / d)), int(np.ceil((g.ymax - y.imag) / d)) + 1)
    pts = []
    for j in jr:
        for k in kr:
            p = y + complex(j * d, k * d)
            if (j or k) and g.xmin <= p.real <= g.xmax and g.ymin <= p.imag <= g.ymax:
                pts.append(p)
    return pts


def check_aliasing(q: ComplexField, y: complex, tau: float) -> None:
    peak = np.abs(q.values).max()
    for p in alias_points(q.grid, y, tau):
        a = abs(q.interp(p))
        if a > ALIAS_RTOL * peak:
            raise ResolutionError(
                f"tau={tau} too large for h={q.grid.h:.4g}: aliased stationary point {p:.3f} "
                f"carries |q| = {a / peak:.2e} of its peak (limit {ALIAS_RTOL:.0e})"
            )


def stationary_phase_integral(q: ComplexField, y: complex, tau: float) -> complex:
    """Cell-weighted sum of q * exp(tau (Phi - conj Phi)) with Phi = (z - y)^2."""
    g = q.grid
    if not tau > 0:
        raise ValueError("tau must be positive")
    y = complex(y)
    dist = min(y.real - g.xmin, g.xmax - y.real, y.imag - g.ymin, g.ymax - y.imag)
    if dist < SP_MIN_INTERIOR:
        raise ValueError(f"stationary point {y} within {SP_MIN_INTERIOR} of the boundary")
    check_sp_resolution(g, tau)
    check_aliasing(q, y, tau)
    w = PhaseFunction(y).weight(g, tau)
    return complex(np.sum(q.values * w) * g.cell_area)


@dataclass(frozen=True)
class ConstantEstimate:
    value: float
    spread: float
    imag: float
    taus: tuple
    scaled: tuple  # tau * I(tau, y) / q(y)

    REFERENCE_VALUE = 2 * np.pi

    @property
    def ratio_to_reference(self) -> float:
        return self.value / self.REFERENCE_VALUE


def richardson(taus: Sequence[float], values: Sequence[complex], order: float = 1.0) -> complex:
    """Eliminate a c/tau^order term using the two largest taus."""
    t1, t2 = taus[-2], taus[-1]
    r = (t2 / t1) ** order
    return (r * values[-1] - values[-2]) / (r - 1)


def spread(values: Sequence[complex]) -> float:
    """Largest pairwise distance relative to the magnitude of the mean."""
    v = np.asarray(values, dtype=np.complex128)
    return float(np.abs(v[:, None] - v[None, :]).max() / np.abs(v.mean()))


def extract_constant(q: ComplexField, y: complex, taus: Sequence[float]) -> ConstantEstimate:
    taus = sorted(float(t) for t in taus)
    if len(taus) < 3:
        raise ValueError("need at least 3 tau values")
    ratios = np.array(taus[1:]) / np.array(taus[:-1])
    if np.ptp(ratios) > 1e-9 * ratios.mean():
        raise ValueError("tau values must be geometrically spaced")
    qy = q.interp(complex(y))
    if qy == 0:
        raise ZeroDivisionError(f"q vanishes at y={y}; pick another point")
    scaled = [t * stationary_phase_integral(q, y, t) / qy for t in taus]
    lim = richardson(taus, scaled)
    return ConstantEstimate(
        value=float(lim.real),
        spread=spread(scaled[-3:]),
        imag=float(lim.imag),
        taus=tuple(taus),
        scaled=tuple(complex(s) for s in scaled),
    )


def norm_study_csv(taus, norms, slope) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "norm_estimate", "slope"])
    for t, n in zip(taus, norms):
        w.writerow([f"{t:.17g}", f"{n:.17g}", f"{slope:.17g}"])
    return buf.getvalue()


def phase_study_csv(q: ComplexField, ys, taus) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "y_re", "y_im", "integral_re", "integral_im", "tau_times_integral"])
    for y in ys:
        for t in taus:
            I = stationary_phase_integral(q, y, t)
            w.writerow([f"{t:.17g}", f"{y.real:.17g}", f"{y.imag:.17g}",
                        f"{I.real:.17g}", f"{I.imag:.17g}", f"{abs(t * I):.17g}"])
    return buf.getvalue()
