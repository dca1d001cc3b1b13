"""Holomorphic phase, the weighted Cauchy operators and CGO Neumann series.

Weight convention shared by every module::

    exp(tau (Phi - conj Phi)) = exp(4 i tau (x1 - y1)(x2 - y2)) = exp(2 i tau psi)

with Phi(z) = (z - y)^2 and psi(x, y) = 2 (x1 - y1)(x2 - y2).
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .cauchy import dbar, dbar_inv, dz, dz_inv
from .grid import ComplexField, Grid2D

log = logging.getLogger(__name__)

R_CONVENTIONS = ("antisymmetric", "printed")
V_CONVENTIONS = ("consistent", "printed")


class NonConvergenceError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class PhaseFunction:
    y: complex

    def __post_init__(self):
        if not np.isfinite(complex(self.y)):
            raise ValueError("phase center must be finite")
        object.__setattr__(self, "y", complex(self.y))

    def phi(self, g: Grid2D) -> np.ndarray:
        return (g.z() - self.y) ** 2

    def dphi(self, g: Grid2D) -> np.ndarray:
        return 2.0 * (g.z() - self.y)

    def psi(self, g: Grid2D) -> np.ndarray:
        """Im Phi = 2 (x1 - y1)(x2 - y2)."""
        X, Y = g.mesh()
        return 2.0 * (X - self.y.real) * (Y - self.y.imag)

    def weight(self, g: Grid2D, tau: float) -> np.ndarray:
        """exp(tau (Phi - conj Phi)), unimodular."""
        return np.exp(2j * tau * self.psi(g))


def psi_hessian_det(x=None, y=None) -> float:
    """det of the mixed Hessian d^2 psi / dx_i dy_j for psi = 2(x1-y1)(x2-y2).

    psi is bilinear in the differences, so the mixed Hessian is the constant
    matrix [[0, -2], [-2, 0]] regardless of the point.
    """
    H = np.array([[0.0, -2.0], [-2.0, 0.0]])
    return float(np.linalg.det(H))


def phase_eval(y: complex, g: Grid2D) -> Tuple[ComplexField, ComplexField]:
    p = PhaseFunction(y)
    return ComplexField(g, p.phi(g)), ComplexField(g, p.dphi(g))


def _as_phase(phase) -> PhaseFunction:
    return phase if isinstance(phase, PhaseFunction) else PhaseFunction(phase)


def r_tilde_tau(g: ComplexField, phase, tau: float) -> ComplexField:
    """(1/2) e^{tau(conj Phi - Phi)} dz^{-1}(g e^{tau(Phi - conj Phi)})."""
    w = _as_phase(phase).weight(g.grid, tau)
    inner = dz_inv(g.with_values(g.values * w))
    return g.with_values(0.5 * np.conj(w) * inner.values)


def r_tau(g: ComplexField, phase, tau: float, convention: str = "antisymmetric") -> ComplexField:
    """(1/2) e^{tau(Phi - conj Phi)} dbar^{-1}(g e^{tau(conj Phi - Phi)}).

    ``convention="printed"`` replaces the inner weight by
    e^{tau(conj Phi - conj Phi)} = 1.
    """
    if convention not in R_CONVENTIONS:
        raise ValueError(f"unknown R convention {convention!r}")
    w = _as_phase(phase).weight(g.grid, tau)
    inner_w = np.conj(w) if convention == "antisymmetric" else np.ones_like(w)
    inner = dbar_inv(g.with_values(g.values * inner_w))
    return g.with_values(0.5 * w * inner.values)


@dataclass(frozen=True)
class NeumannSeriesConfig:
    tau: float
    max_terms: int = 8
    tail_tol: float = 1e-6
    beta1: complex = 0.0
    beta2: complex = 0.0
    r_convention: str = "antisymmetric"
    v_convention: str = "consistent"

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError("tau must be positive")
        if self.max_terms < 2:
            raise ValueError("max_terms must be >= 2")
        if not self.tail_tol > 0:
            raise ValueError("tail_tol must be positive")
        if self.r_convention not in R_CONVENTIONS:
            raise ValueError(f"unknown R convention {self.r_convention!r}")
        if self.v_convention not in V_CONVENTIONS:
            raise ValueError(f"unknown V convention {self.v_convention!r}")


@dataclass(frozen=True, eq=False)
class CgoSolution:
    """Truncated CGO series ``exp(sign-weight) * sum (-1)^j terms[j]``.

    ``terms[0]`` is the constant 1, so ``term_norms[1]`` is the norm of the
    first correction.  ``sign`` is +1 for u1 (weight e^{tau Phi}) and -1 for v
    (weight e^{-tau conj Phi}).
    """

    phase: PhaseFunction
    tau: float
    terms: List[ComplexField] = field(repr=False)
    amplitude: ComplexField = field(repr=False)
    sign: int
    term_norms: List[float]
    converged: bool
    tail_reached: bool

    @property
    def grid(self) -> Grid2D:
        return self.amplitude.grid

    @property
    def ratios(self) -> List[float]:
        """Consecutive ratios ||T_{j+1}|| / ||T_j|| for j >= 1."""
        n = self.term_norms
        return [n[j + 1] / n[j] if n[j] > 0 else 0.0 for j in range(1, len(n) - 1)]

    @property
    def max_ratio(self) -> float:
        r = self.ratios
        return max(r) if r else 0.0

    def exponent(self, g: Optional[Grid2D] = None) -> np.ndarray:
        g = g or self.grid
        phi = self.phase.phi(g)
        return self.tau * phi if self.sign > 0 else -self.tau * np.conj(phi)

    def values(self, g: Optional[Grid2D] = None) -> np.ndarray:
        """Full solution on ``g`` (default: the construction grid).

        ``g`` must be a node-aligned subgrid; e^{tau Re Phi} grows fast, so
        evaluate only where it is representable.
        """
        from .grid import restrict

        g = g or self.grid
        A = self.amplitude if g == self.grid else restrict(self.amplitude, g)
        with np.errstate(over="raise"):
            return np.exp(self.exponent(g)) * A.values

    def diagnostics_rows(self) -> List[tuple]:
        rows = []
        n = self.term_norms
        for j in range(len(n)):
            ratio = n[j] / n[j - 1] if j >= 2 and n[j - 1] > 0 else float("nan")
            rows.append((self.tau, self.phase.y.real, self.phase.y.imag, j, n[j], ratio))
        return rows


def _build_series(q, cfg, y, first, step, sign, strict) -> CgoSolution:
    g = q.grid
    phase = PhaseFunction(y)
    one = ComplexField(g, np.ones(g.shape, dtype=np.complex128))
    terms = [one, first]
    norms = [one.norm(), first.norm()]
    tail = norms[1] == 0.0
    while not tail and len(terms) <= cfg.max_terms:
        nxt = step(terms[-1])
        terms.append(nxt)
        norms.append(nxt.norm())
        if norms[-1] <= cfg.tail_tol * norms[1]:
            tail = True
    signs = np.array([(-1.0) ** j for j in range(len(terms))])
    amp = np.tensordot(signs, np.stack([t.values for t in terms]), axes=1)
    sol = CgoSolution(
        phase=phase,
        tau=cfg.tau,
        terms=terms,
        amplitude=ComplexField(g, amp),
        sign=sign,
        term_norms=norms,
        converged=True,
        tail_reached=tail,
    )
    ratio = sol.max_ratio
    if ratio >= 1.0:
        object.__setattr__(sol, "converged", False)
        msg = f"Neumann series diverges at tau={cfg.tau}, y={y}: max term ratio {ratio:.3g}"
        if strict:
            raise NonConvergenceError(msg, sol)
        log.warning(msg)
    return sol


def build_u1_series(q1: ComplexField, cfg: NeumannSeriesConfig, y: complex, strict: bool = True) -> CgoSolution:
    """u1 = e^{tau Phi} sum (-1)^j U_j with U_0 = 1,
    U_1 = Rt((dbar^{-1} q1 - beta1)/2), U_j = Rt(dbar^{-1}(q1 U_{j-1})/2)."""
    tau = cfg.tau
    first = r_tilde_tau(q1.with_values(0.5 * (dbar_inv(q1).values - cfg.beta1)), y, tau)

    def step(prev):
        return r_tilde_tau(q1.with_values(0.5 * dbar_inv(q1.with_values(q1.values * prev.values)).values), y, tau)

    return _build_series(q1, cfg, y, first, step, +1, strict)


def build_v_series(q2: ComplexField, cfg: NeumannSeriesConfig, y: complex, strict: bool = True) -> CgoSolution:
    """v = e^{-tau conj Phi} sum (-1)^j V_j with V_0 = 1,
    V_1 = R_{-tau}(c (dz^{-1} q2 - beta2)), V_j = R_{-tau}(c dz^{-1}(q2 V_{j-1})).

    ``c = 1/2`` under the default ``v_convention="consistent"``, which makes v
    solve (Laplacian + q2) v = 0; ``"printed"`` takes ``c = 1``.
    """
    tau = cfg.tau
    c = 0.5 if cfg.v_convention == "consistent" else 1.0
    rc = cfg.r_convention
    first = r_tau(q2.with_values(c * (dz_inv(q2).values - cfg.beta2)), y, -tau, rc)

    def step(prev):
        return r_tau(q2.with_values(c * dz_inv(q2.with_values(q2.values * prev.values)).values), y, -tau, rc)

    return _build_series(q2, cfg, y, first, step, -1, strict)


def laplacian(v: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """5-point Laplacian on interior nodes; edges are left at zero."""
    out = np.zeros_like(v)
    out[1:-1, 1:-1] = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / hx**2 + (
        v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]
    ) / hy**2
    return out


def residual_amplitude(sol: CgoSolution, q: ComplexField) -> np.ndarray:
    """(Laplacian + q)(full solution) divided by the analytic exponential weight.

    For u1 = e^{tau Phi} A this is  Lap A + 4 tau Phi' dbar A + q A;
    for v = e^{-tau conj Phi} A it is  Lap A - 4 tau conj(Phi') dz A + q A.
    """
    g = sol.grid
    A = sol.amplitude
    dphi = sol.phase.dphi(g)
    lap = laplacian(A.values, g.hx, g.hy)
    if sol.sign > 0:
        first = 4 * sol.tau * dphi * dbar(A).values
    else:
        first = -4 * sol.tau * np.conj(dphi) * dz(A).values
    return lap + first + q.values * A.values


def schrodinger_residual(sol: CgoSolution, q: ComplexField, margin: float = 0.15) -> float:
    """Relative interior L2 residual ||(Lap + q) s|| / ||q s||, weights factored out.

    Measured on nodes at distance >= ``margin`` from the grid boundary.  When
    ``q`` vanishes there the absolute residual is returned.
    """
    if q.grid != sol.grid:
        raise ValueError("solution and potential live on different grids")
    m = sol.grid.interior_mask(margin)
    r = residual_amplitude(sol, q)[m]
    ref = (q.values * sol.amplitude.values)[m]
    num = float(np.linalg.norm(r))
    den = float(np.linalg.norm(ref))
    return num / den if den > 0 else num * np.sqrt(sol.grid.cell_area)


def measure_tau0(q: ComplexField, taus, y: complex = 0.0, which: str = "u", **cfg_kw) -> Optional[float]:
    """Smallest tested tau at which every consecutive term ratio (j >= 1) is <= 1/2."""
    build = build_u1_series if which == "u" else build_v_series
    for tau in sorted(taus):
        sol = build(q, NeumannSeriesConfig(tau=tau, **cfg_kw), y, strict=False)
        if sol.ratios and max(sol.ratios) <= 0.5:
            return tau
    return None


def series_csv(solutions) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "y_re", "y_im", "j", "term_norm", "ratio"])
    for sol in solutions:
        for row in sol.diagnostics_rows():
            w.writerow([row[0], repr(row[1]), repr(row[2]), row[3], f"{row[4]:.17g}", f"{row[5]:.17g}"])
    return buf.getvalue()
