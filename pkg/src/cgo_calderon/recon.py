"""Boundary pairing, pointwise recovery of q, and the decay-study harnesses.

Sign convention: with Lambda_q the map Dirichlet data -> outward normal
derivative for (Laplacian + q) u = 0,

    <(Lambda_1 - Lambda_2) f, g> = -integral (q1 - q2) u1 u2 dx.

Recovery pairs the trace of a CGO solution u1 ~ e^{tau Phi} against the trace
of v = e^{-tau conj Phi}, so the pairing is -integral q e^{tau (Phi - conj Phi)}
(1 + small) ~ -c q(y) / tau, and q(y) ~ -tau P / c.

Both traces grow like e^{tau |Re Phi|} on the boundary while their product
stays of unit size, so the pairing loses roughly 2 tau max|Re Phi| / ln 10
digits to rounding.  Every (tau, y) pair carries a rounding bound and values
whose bound is not small compared with the estimate are dropped.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import osc
from .cauchy import dbar_inv, dz_inv
from .cgo import NeumannSeriesConfig, PhaseFunction, build_u1_series, build_v_series, r_tilde_tau
from .forward import BoundaryFunction, DtNMap, arc_length_weights, boundary_indices
from .grid import ComplexField, Grid2D, PotentialSpec, extend_zero, make_grid, mollify, nested_grids, sample_potential, square_grid

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
CONSTANT_SOURCES = ("measured", "reference_2pi")
DECAY_KINDS = ("rtau", "ttau", "tail", "correction")


# --- pairing ----------------------------------------------------------------


@dataclass(frozen=True)
class PairingResult:
    value: complex
    projection_error_u: float
    projection_error_v: float
    rounding_bound: float  # estimated absolute rounding error of ``value``


def _check_compatible(dtn1: DtNMap, dtn2: DtNMap) -> None:
    if dtn1.descriptor != dtn2.descriptor:
        raise ValueError(f"basis mismatch: {dtn1.descriptor} vs {dtn2.descriptor}")


def pair_traces(dtn1: DtNMap, dtn2: DtNMap, u_trace: BoundaryFunction, v_trace: BoundaryFunction) -> PairingResult:
    _check_compatible(dtn1, dtn2)
    a, eu = dtn1.project(u_trace)
    b, ev = dtn1.project(v_trace)
    # both maps share Lambda_0, so Lambda_1 - Lambda_2 = delta_1 - delta_2
    D = dtn1.delta - dtn2.delta
    if dtn1.basis == "nodal":
        Gb = arc_length_weights(dtn1.grid) * b
    else:
        Gb = dtn1.gram() @ b
    value = complex(Gb @ (D @ a))
    bound = float(EPS * (np.abs(Gb) @ (np.abs(D) @ np.abs(a))))
    return PairingResult(value, eu, ev, bound)


def boundary_pairing(dtn1: DtNMap, dtn2: DtNMap, u_trace: BoundaryFunction, v_trace: BoundaryFunction) -> complex:
    """<(Lambda_1 - Lambda_2) f, g> with arc-length weights, f and g projected on the basis."""
    return pair_traces(dtn1, dtn2, u_trace, v_trace).value


def volume_pairing(q1: ComplexField, q2: ComplexField, u1: ComplexField, u2: ComplexField) -> complex:
    """-integral (q1 - q2) u1 u2, the interior counterpart of ``boundary_pairing``.

    Boundary nodes carry half weight, which makes the identity exact for the
    discrete flux used by the forward solver.
    """
    g = q1.grid
    w = np.ones(g.shape)
    w[0, :] = w[-1, :] = w[:, 0] = w[:, -1] = 0.5
    return complex(-np.sum(w * (q1.values - q2.values) * u1.values * u2.values) * g.cell_area)


# --- stationary-phase constant ---------------------------------------------


@lru_cache(maxsize=1)
def measured_constant() -> float:
    """Constant c in tau * integral q e^{tau (Phi - conj Phi)} -> c q(y).

    Measured once on a reference gaussian, tau = 40..320.
    """
    g = square_grid(257, 1.0)
    q = sample_potential(PotentialSpec("gaussian", 1.0, (0.0, 0.0), 0.2), g)
    return osc.extract_constant(q, 0.0, (40.0, 80.0, 160.0, 320.0)).value


def stationary_constant(source: str) -> float:
    if source == "measured":
        return measured_constant()
    if source == "reference_2pi":
        return 2 * np.pi
    raise ValueError(f"unknown constant source {source!r}")


# --- recovery ---------------------------------------------------------------


@dataclass(frozen=True)
class RecoveryConfig:
    """Parameters of the pointwise recovery.

    ``points`` lists the evaluation points y; alternatively ``y_grid`` gives a
    grid whose nodes are used (and makes ``RecoveryResult.field`` available).
    """

    taus: Tuple[float, ...] = (4.0, 8.0, 16.0)
    points: Tuple[complex, ...] = (0j,)
    y_grid: Optional[Grid2D] = None
    epsilon: float = 0.0
    constant: str = "measured"
    K: float = 1.5
    max_terms: int = 8
    noise_rtol: float = 1e-2
    spread_tol: float = 0.5
    min_interior: float = 0.2
    threads: int = 1

    def __post_init__(self):
        taus = tuple(sorted(float(t) for t in self.taus))
        if len(taus) < 3 or taus[0] <= 0:
            raise ValueError("need at least 3 positive tau values")
        r = np.array(taus[1:]) / np.array(taus[:-1])
        if np.ptp(r) > 1e-9 * r.mean() or r.min() <= 1:
            raise ValueError("tau values must be distinct and geometrically spaced")
        object.__setattr__(self, "taus", taus)
        if self.y_grid is not None:
            X, Y = self.y_grid.mesh()
            pts = tuple(complex(a, b) for a, b in zip(X.ravel(), Y.ravel()))
        else:
            pts = tuple(complex(p) for p in self.points)
        if not pts:
            raise ValueError("no evaluation points")
        object.__setattr__(self, "points", pts)
        if self.constant not in CONSTANT_SOURCES:
            raise ValueError(f"constant must be one of {CONSTANT_SOURCES}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.spread_tol > 0:
            raise ValueError("spread_tol must be positive")
        if self.K <= 1.0:
            raise ValueError("K must exceed the half-side of Omega")

    def validate(self, omega: Grid2D) -> None:
        """Check the evaluation points and taus against the Omega grid."""
        for p in self.points:
            d = min(p.real - omega.xmin, omega.xmax - p.real, p.imag - omega.ymin, omega.ymax - p.imag)
            if d < self.min_interior - 1e-12:
                raise ValueError(f"y={p} is closer than {self.min_interior} to the boundary")
        for t in self.taus:
            osc.check_sp_resolution(omega, t)


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    points: Tuple[complex, ...]
    qhat: np.ndarray  # nan where flagged
    per_tau: np.ndarray  # (npoints, ntaus) scaled estimates, nan where dropped
    tau_spread: np.ndarray
    flagged: np.ndarray
    reasons: Tuple[str, ...]
    projection_error: float
    constant: float
    y_grid: Optional[Grid2D] = None

    def field(self) -> ComplexField:
        """Recovered values on the y-grid; flagged points are set to 0."""
        if self.y_grid is None:
            raise ValueError("recovery was run on a point list, not a grid")
        v = np.where(self.flagged, 0.0, self.qhat)
        return ComplexField(self.y_grid, v.reshape(self.y_grid.shape))

    def to_csv(self, truth: Optional[Sequence[complex]] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["y_re", "y_im", "qhat_re", "qhat_im", "truth", "rel_err", "tau_spread"])
        for k, p in enumerate(self.points):
            qh = self.qhat[k]
            t = truth[k] if truth is not None else float("nan")
            rel = abs(qh - t) / abs(t) if truth is not None and t != 0 else float("nan")
            w.writerow([f"{x:.17g}" for x in (p.real, p.imag, qh.real, qh.imag, np.real(t), rel, self.tau_spread[k])])
        return buf.getvalue()


def _omega_and_pi(dtn: DtNMap, K: float) -> Tuple[Grid2D, Grid2D]:
    om = dtn.grid
    if om.nx != om.ny or abs(om.xmin + om.xmax) > 1e-12 or abs(om.ymin + om.ymax) > 1e-12:
        raise ValueError("recovery expects a square Omega centred at the origin")
    return nested_grids(om.nx, om.xmax, K)


def _recover_one(y, dtn_q, dtn_0, cfg, q_pi, zero_pi, omega, c):
    I, J = boundary_indices(omega)
    vals = np.full(len(cfg.taus), np.nan, dtype=np.complex128)
    perr = 0.0
    reason = ""
    beta1 = dbar_inv(q_pi).interp(y) if q_pi is not None else 0.0
    for k, tau in enumerate(cfg.taus):
        ncfg = NeumannSeriesConfig(tau=tau, max_terms=cfg.max_terms, beta1=beta1)
        if q_pi is not None:
            u = build_u1_series(q_pi, ncfg, y, strict=False)
            if not u.converged:
                reason = f"CGO series diverges at tau={tau}, y={y}"
                return vals, np.nan, perr, reason
        else:
            u = build_u1_series(zero_pi, ncfg, y, strict=False)
        v = build_v_series(zero_pi, ncfg, y, strict=False)
        with np.errstate(over="raise"):
            try:
                f = BoundaryFunction(omega, u.values(omega)[I, J])
                gb = BoundaryFunction(omega, v.values(omega)[I, J])
            except FloatingPointError:
                continue
        res = pair_traces(dtn_q, dtn_0, f, gb)
        perr = max(perr, res.projection_error_u, res.projection_error_v)
        est = -tau * res.value / c
        noise = tau * res.rounding_bound / c
        if noise <= cfg.noise_rtol * abs(est) or res.rounding_bound == 0.0:
            vals[k] = est
    ok = np.isfinite(vals)
    if ok.sum() < 2:
        return vals, np.nan, perr, f"fewer than 2 taus survive the rounding guard at y={y}"
    t_ok = [t for t, m in zip(cfg.taus, ok) if m]
    v_ok = vals[ok]
    return vals, osc.richardson(t_ok, v_ok), perr, reason


def recover_pointwise(
    dtn_q: DtNMap,
    dtn_0: DtNMap,
    cfg: RecoveryConfig,
    cgo_potential: Optional[ComplexField] = None,
) -> RecoveryResult:
    """Estimate q(y) = -(tau / c) <(Lambda_q - Lambda_0) u1, v>, Richardson-combined over tau.

    ``cgo_potential`` is the potential (on the Omega grid) used to build u1;
    ``None`` uses the zero-potential exponential e^{tau Phi}.  v is always the
    zero-potential solution e^{-tau conj Phi}.  Points where the CGO series
    diverges, where fewer than two taus pass the rounding guard, or where the
    surviving per-tau estimates spread by more than ``spread_tol``, are
    flagged and returned as nan.
    """
    omega, pi_grid = _omega_and_pi(dtn_q, cfg.K)
    _check_compatible(dtn_q, dtn_0)
    cfg.validate(omega)
    c = stationary_constant(cfg.constant)
    zero_pi = ComplexField.zeros(pi_grid)
    q_pi = None
    if cgo_potential is not None:
        q = mollify(cgo_potential, cfg.epsilon) if cfg.epsilon > 0 else cgo_potential
        q_pi = extend_zero(q, pi_grid)

    def task(y):
        return _recover_one(y, dtn_q, dtn_0, cfg, q_pi, zero_pi, omega, c)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            out = list(ex.map(task, cfg.points))
    else:
        out = [task(y) for y in cfg.points]
    per_tau = np.array([o[0] for o in out])
    qhat = np.array([o[1] for o in out], dtype=np.complex128)
    spreads = np.array(
        [osc.spread(row[np.isfinite(row)][-3:]) if np.isfinite(row).sum() >= 2 and np.any(row[np.isfinite(row)]) else 0.0
         for row in per_tau]
    )
    reasons = list(o[3] for o in out)
    for k, (y, s) in enumerate(zip(cfg.points, spreads)):
        # lattice dispersion of e^{tau Phi} is amplified by e^{tau max|Re Phi|};
        # it shows up as per-tau estimates that disagree
        if not reasons[k] and s > cfg.spread_tol:
            reasons[k] = f"per-tau estimates disagree at y={y} (spread {s:.3g} > {cfg.spread_tol})"
            qhat[k] = np.nan
    reasons = tuple(reasons)
    flagged = np.array([bool(r) for r in reasons])
    bad = [r for r in reasons if r]
    if bad:
        log.warning("%d of %d points flagged; first: %s", len(bad), len(reasons), bad[0])
    return RecoveryResult(
        points=cfg.points,
        qhat=qhat,
        per_tau=per_tau,
        tau_spread=spreads,
        flagged=flagged,
        reasons=reasons,
        projection_error=max(o[2] for o in out),
        constant=c,
        y_grid=cfg.y_grid,
    )


# --- correction terms -------------------------------------------------------


def correction_terms(q1: ComplexField, q2: ComplexField, y: complex, beta: str = "centered") -> ComplexField:
    """g = 1/4 (dbar^{-1} q (dz^{-1} q1 - b1) + dz^{-1} q (dbar^{-1} q2 - b2)), q = q1 - q2.

    ``beta="centered"`` takes b1 = dz^{-1} q1 (y) and b2 = dbar^{-1} q2 (y),
    so both brackets, and hence g, vanish at y.  ``beta="zero"`` uses
    b1 = b2 = 0.
    """
    if q1.grid != q2.grid:
        raise ValueError("potentials must share a grid")
    q = q1.with_values(q1.values - q2.values)
    dq1 = dz_inv(q1)
    bq2 = dbar_inv(q2)
    if beta == "centered":
        b1, b2 = dq1.interp(y), bq2.interp(y)
    elif beta == "zero":
        b1 = b2 = 0.0
    else:
        raise ValueError(f"unknown beta source {beta!r}")
    g = dbar_inv(q).values * (dq1.values - b1) + dz_inv(q).values * (bq2.values - b2)
    return q.with_values(0.25 * g)


# --- decay studies ----------------------------------------------------------


@dataclass(frozen=True)
class DecayStudy:
    quantity: str
    taus: Tuple[float, ...]
    values: Tuple[float, ...]
    slope: float
    intercept: float
    fit_residual: float
    target: str
    verdict: str  # pass, fail or inconclusive

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "tau", "value", "tau_times_value", "slope", "fit_residual", "verdict"])
        for t, v in zip(self.taus, self.values):
            w.writerow([self.quantity, f"{t:.17g}", f"{v:.17g}", f"{t * v:.17g}",
                        f"{self.slope:.17g}", f"{self.fit_residual:.17g}", self.verdict])
        return buf.getvalue()


SLOPE_TARGETS = {"rtau": (-np.inf, -0.8), "ttau": (-1.15, -0.85)}
FIT_RESIDUAL_TOL = 0.1


def evaluate_decay(kind: str, taus: Sequence[float], values: Sequence[float],
                   residual_tol: float = FIT_RESIDUAL_TOL) -> DecayStudy:
    """Fit log(value) = slope log(tau) + b and judge against the target for ``kind``.

    rtau and ttau are judged by the slope (inconclusive when the RMS log
    residual of the fit exceeds ``residual_tol``); tail and correction pass
    when tau * value strictly decreases.
    """
    if kind not in DECAY_KINDS:
        raise ValueError(f"unknown study kind {kind!r}")
    t = np.asarray(taus, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 4:
        raise ValueError("a decay study needs at least 4 tau values")
    if np.any(v <= 0) or np.any(t <= 0):
        raise ValueError("decay studies need positive taus and values")
    lt, lv = np.log(t), np.log(v)
    slope, b = np.polyfit(lt, lv, 1)
    resid = float(np.sqrt(np.mean((lv - (slope * lt + b)) ** 2)))
    if kind in SLOPE_TARGETS:
        lo, hi = SLOPE_TARGETS[kind]
        target = f"slope in [{lo}, {hi}]"
        ok = lo <= slope <= hi
        verdict = "inconclusive" if ok and resid > residual_tol else ("pass" if ok else "fail")
    else:
        target = "tau*value strictly decreasing"
        verdict = "pass" if np.all(np.diff(t * v) < 0) else "fail"
    return DecayStudy(kind, tuple(t.tolist()), tuple(v.tolist()), float(slope), float(b), resid, target, verdict)


@dataclass(frozen=True)
class DecayConfig:
    taus: Tuple[float, ...]
    n: int = 257
    K: float = 1.5
    potential: PotentialSpec = field(default_factory=lambda: PotentialSpec("gaussian", 1.0, (0.0, 0.0), 0.35))
    potential2: PotentialSpec = field(default_factory=lambda: PotentialSpec("zero"))
    y: complex = 0j
    max_terms: int = 8
    power_iters: int = 200
    power_rtol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        if len(self.taus) < 4:
            raise ValueError("a decay study needs at least 4 tau values")


def ttau_grid(tau: float, half_side: float = 1.0, margin: float = 1.0) -> Grid2D:
    """Smallest odd square grid on (-s, s)^2 whose T_tau phase step is at most pi / margin."""
    side = 2 * half_side
    n = int(np.ceil(2 * tau * 0.8 * side * side * margin / np.pi)) + 1
    n = max(65, n + (n % 2 == 0))
    return square_grid(n, half_side)


def _pi_grid(cfg: DecayConfig) -> Grid2D:
    return square_grid(cfg.n, cfg.K)


def measure_decay(kind: str, cfg: DecayConfig, taus: Optional[Sequence[float]] = None) -> List[float]:
    """Raw measurements for a study; ``taus`` overrides ``cfg.taus``."""
    taus = cfg.taus if taus is None else tuple(float(t) for t in taus)
    if kind == "ttau":
        out = []
        for t in taus:
            op = osc.OscillatoryOperator(ttau_grid(t), t)
            out.append(osc.estimate_op_norm(op, iters=cfg.power_iters, rtol=cfg.power_rtol))
        return out
    g = _pi_grid(cfg)
    q = sample_potential(cfg.potential, g)
    if kind == "rtau":
        nrm = q.norm()
        return [r_tilde_tau(q, cfg.y, t).norm() / nrm for t in taus]
    if kind == "tail":
        out = []
        for t in taus:
            sol = build_u1_series(q, NeumannSeriesConfig(tau=t, max_terms=cfg.max_terms), cfg.y, strict=False)
            tail = sum(((-1) ** j) * sol.terms[j].values for j in range(2, len(sol.terms)))
            out.append(q.with_values(tail).norm() if len(sol.terms) > 2 else 0.0)
        return out
    if kind == "correction":
        q2 = sample_potential(cfg.potential2, g)
        gfield = correction_terms(q, q2, cfg.y)
        return [abs(osc.stationary_phase_integral(gfield, cfg.y, t)) for t in taus]
    raise ValueError(f"unknown study kind {kind!r}")


def run_decay_study(kind: str, cfg: DecayConfig) -> DecayStudy:
    return evaluate_decay(kind, cfg.taus, measure_decay(kind, cfg))
