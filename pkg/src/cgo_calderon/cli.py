"""Config-driven experiment runner.

Usage::

    cgo-calderon SUBCOMMAND --config run.cfg [--out DIR] [--threads N]

The config is plain text, one ``section.key = value`` per line; ``#`` starts
a comment.  Every run writes CSV (17 significant digits) and binary artifacts
plus ``summary.txt`` with one PASS/FAIL line per checked invariant.

Exit codes: 0 all invariants passed, 1 an invariant failed or a computation
raised, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import cauchy, cgo, formats, forward, osc, recon
from .grid import ComplexField, PotentialSpec, extend_zero, make_grid, mollify, nested_grids, sample_potential, square_grid

log = logging.getLogger("cgo_calderon")

COMMANDS = ("forward", "cgo", "decay", "phase", "pair", "recover", "selftest")
OUT_ENV = "CGO_CALDERON_OUT"


class ConfigError(ValueError):
    pass


# --- config -----------------------------------------------------------------


def _floats(s: str) -> Tuple[float, ...]:
    parts = [p for p in s.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _ints(s: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in s.replace(",", " ").split())


def _pair(s: str) -> Tuple[float, float]:
    v = _floats(s)
    if len(v) != 2:
        raise ValueError("expected two numbers")
    return v


def _points(s: str) -> Tuple[complex, ...]:
    """``x y; x y; ...``"""
    out = []
    for chunk in s.split(";"):
        if chunk.strip():
            x, y = _pair(chunk)
            out.append(complex(x, y))
    if not out:
        raise ValueError("no points")
    return tuple(out)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_POTENTIAL_KEYS = {
    "kind": (str, "zero"),
    "amplitude": (float, 1.0),
    "center": (_pair, (0.0, 0.0)),
    "width": (float, 0.3),
    "path": (str, None),
}

SCHEMA: Dict[str, Tuple[Callable, object]] = {
    "grid.n": (int, None),
    "grid.omega": (float, 1.0),
    "grid.K": (float, 1.5),
    "tau.list": (_floats, None),
    "y.points": (_points, (0j,)),
    "y.grid_n": (int, None),
    "y.grid_half": (float, 0.6),
    "dtn.M": (int, 32),
    "dtn.basis": (str, "trig"),
    "cgo.max_terms": (int, 8),
    "cgo.tail_tol": (float, 1e-6),
    "cgo.r_convention": (str, "antisymmetric"),
    "cgo.v_convention": (str, "consistent"),
    "decay.kind": (str, "rtau"),
    "decay.power_iters": (int, 200),
    "decay.power_rtol": (float, 1e-6),
    "recover.constant": (str, "measured"),
    "recover.epsilon": (float, 0.0),
    "recover.noise_rtol": (float, 1e-2),
    "recover.spread_tol": (float, 0.5),
    "recover.basis": (str, "nodal"),
    "recover.use_truth_cgo": (_bool, True),
    "forward.manufactured": (_bool, False),
    "forward.levels": (_ints, (33, 65, 129)),
    "pair.modes": (_ints, (0, 1, 1, 2, 2, 5, 3, 3)),
    "run.threads": (int, 1),
    "run.out": (str, None),
}
for _sec in ("potential", "potential2"):
    for _k, _v in _POTENTIAL_KEYS.items():
        SCHEMA[f"{_sec}.{_k}"] = _v

REQUIRED = {
    "forward": ("grid.n",),
    "cgo": ("grid.n", "tau.list"),
    "decay": ("grid.n", "tau.list"),
    "phase": ("grid.n", "tau.list"),
    "pair": ("grid.n",),
    "recover": ("grid.n", "tau.list"),
    "selftest": (),
}


@dataclass
class RunConfig:
    values: Dict[str, object]
    source: str = "<config>"

    def __getitem__(self, key):
        return self.values[key]

    def potential(self, section: str = "potential") -> PotentialSpec:
        v = self.values
        return PotentialSpec(
            kind=v[f"{section}.kind"],
            amplitude=v[f"{section}.amplitude"],
            center=v[f"{section}.center"],
            width=v[f"{section}.width"],
            path=v[f"{section}.path"],
        )


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {k: d for k, (_, d) in SCHEMA.items()}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}' (first on line {seen[key]})")
        seen[key] = lineno
        conv = SCHEMA[key][0]
        try:
            values[key] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {exc}") from exc
    return RunConfig(values, source)


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path)


# --- output -----------------------------------------------------------------


def fresh_output_dir(base: Path) -> Path:
    """``base`` if absent or empty, otherwise a new timestamped sibling."""
    if not base.exists() or (base.is_dir() and not any(base.iterdir())):
        base.mkdir(parents=True, exist_ok=True)
        return base
    stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S")
    k = 0
    while True:
        cand = base.with_name(f"{base.name}-{stamp}" + (f"-{k}" if k else ""))
        if not cand.exists():
            cand.mkdir(parents=True)
            return cand
        k += 1


def _g(x: float) -> str:
    return f"{x:.17g}"


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_g(x) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


class Report:
    def __init__(self, command: str):
        self.command = command
        self.checks: List[Tuple[str, bool, str]] = []
        self.notes: List[str] = []
        self.files: Dict[str, bytes] = {}

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append((name, bool(ok), detail))

    def note(self, text: str) -> None:
        self.notes.append(text)

    def add(self, name: str, data) -> None:
        self.files[name] = data.encode() if isinstance(data, str) else data

    @property
    def ok(self) -> bool:
        return all(c[1] for c in self.checks)

    def summary(self) -> str:
        lines = [f"cgo-calderon {self.command}"]
        for name, ok, detail in self.checks:
            lines.append(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        lines += [f"note  {n}" for n in self.notes]
        lines.append(f"overall: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines) + "\n"


def pmap(fn, items, threads: int):
    """Ordered map; results do not depend on ``threads``."""
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# --- commands ---------------------------------------------------------------


def _omega(cfg: RunConfig):
    return square_grid(cfg["grid.n"], cfg["grid.omega"])


def _potential_on(cfg: RunConfig, g, section="potential") -> ComplexField:
    return sample_potential(cfg.potential(section), g)


def _y_points(cfg: RunConfig) -> Tuple[complex, ...]:
    if cfg["y.grid_n"] is not None:
        X, Y = square_grid(cfg["y.grid_n"], cfg["y.grid_half"]).mesh()
        return tuple(complex(a, b) for a, b in zip(X.ravel(), Y.ravel()))
    return cfg["y.points"]


def manufactured_table(levels: Sequence[int], omega: float = 1.0):
    rows = []
    prev = None
    for n in levels:
        g = square_grid(n, omega)
        X, Y = g.mesh()
        s = np.sin(np.pi * X) * np.sin(np.pi * Y)
        ustar = 2 + s
        q = ComplexField(g, 2 * np.pi**2 * s / ustar)
        u = forward.solve_dirichlet(q, forward.BoundaryFunction.from_field(ComplexField(g, ustar)))
        err = float(np.sqrt(np.sum(np.abs(u.values - ustar)[1:-1, 1:-1] ** 2) * g.cell_area))
        I, J = forward.boundary_indices(g)
        nrm = forward.outward_normals(g)
        d1 = np.pi * np.cos(np.pi * X) * np.sin(np.pi * Y)
        d2 = np.pi * np.sin(np.pi * X) * np.cos(np.pi * Y)
        exact = d1[I, J] * nrm[:, 0] + d2[I, J] * nrm[:, 1]
        terr = float(np.max(np.abs(forward.neumann_trace(u, q).values - exact)))
        ratio = prev[0] / err if prev else float("nan")
        tratio = prev[1] / terr if prev else float("nan")
        rows.append((n, g.h, err, ratio, terr, tratio))
        prev = (err, terr)
    return rows


def _dtn_asymmetry(d: forward.DtNMap) -> float:
    S = d.gram() @ d.matrix if d.basis == "trig" else forward.arc_length_weights(d.grid)[:, None] * d.matrix
    return float(np.linalg.norm(S - S.T) / np.linalg.norm(S))


def cmd_forward(cfg: RunConfig, rep: Report, threads: int) -> None:
    g = _omega(cfg)
    q = _potential_on(cfg, g)
    d = forward.assemble_dtn(q, cfg["dtn.M"], cfg["dtn.basis"])
    rep.add("dtn.csv", d.to_csv())
    rep.add("dtn.cgo2", formats.dtn_to_bytes(d))
    if not np.any(q.values.imag):
        asym = _dtn_asymmetry(d)
        rep.check("DtN symmetric for real q", asym <= 1e-6, f"relative asymmetry {asym:.3e}")
    if cfg.potential().kind == "zero" and d.basis == "trig":
        c0 = float(np.linalg.norm(d.matrix[:, 0]))
        rep.check("constant mode maps to zero Neumann data", c0 <= 1e-8, f"column norm {c0:.3e}")
    rep.note(f"||Lambda_q - Lambda_0||_F = {np.linalg.norm(d.delta):.17g}")
    if cfg["forward.manufactured"]:
        rows = manufactured_table(cfg["forward.levels"], cfg["grid.omega"])
        rep.add("manufactured.csv", _csv(["n", "h", "l2_error", "ratio", "trace_error", "trace_ratio"], rows))
        ratios = [r[3] for r in rows[1:]]
        rep.check("manufactured solution second order", all(3.5 <= r <= 4.5 for r in ratios),
                  "ratios " + ", ".join(f"{r:.3f}" for r in ratios))


def cmd_cgo(cfg: RunConfig, rep: Report, threads: int) -> None:
    omega, pi_grid = nested_grids(cfg["grid.n"], cfg["grid.omega"], cfg["grid.K"])
    q = extend_zero(_potential_on(cfg, omega), pi_grid)
    y = _y_points(cfg)[0]
    kw = dict(max_terms=cfg["cgo.max_terms"], tail_tol=cfg["cgo.tail_tol"],
              r_convention=cfg["cgo.r_convention"], v_convention=cfg["cgo.v_convention"])
    taus = sorted(cfg["tau.list"])

    def build(t):
        s = cgo.build_u1_series(q, cgo.NeumannSeriesConfig(tau=t, **kw), y, strict=False)
        return s, cgo.schrodinger_residual(s, q)

    sols = pmap(build, taus, threads)
    rep.add("series.csv", cgo.series_csv([s for s, _ in sols]))
    rep.add("residual.csv", _csv(["tau", "residual", "max_ratio", "converged"],
                                 [(float(t), r, float(s.max_ratio), int(s.converged)) for t, (s, r) in zip(taus, sols)]))
    zero = not np.any(q.values)
    if zero:
        worst = max(r for _, r in sols)
        rep.check("q = 0: CGO is the exact solution e^{tau Phi}", worst == 0.0, f"max residual {worst:.3e}")
        return
    tau0 = next((t for t, (s, _) in zip(taus, sols) if s.ratios and s.max_ratio <= 0.5), None)
    rep.note(f"tau0 (first tau with all term ratios <= 1/2) = {tau0}")
    rep.check("Neumann series converges at some tested tau", tau0 is not None)
    if tau0 is not None:
        bad = [t for t, (s, _) in zip(taus, sols) if t >= tau0 and s.max_ratio > 0.5]
        rep.check("term ratios <= 1/2 for every tau >= tau0", not bad, f"violations at {bad}" if bad else "")


def cmd_decay(cfg: RunConfig, rep: Report, threads: int) -> None:
    kind = cfg["decay.kind"]
    dc = recon.DecayConfig(
        taus=tuple(cfg["tau.list"]), n=cfg["grid.n"], K=cfg["grid.K"],
        potential=cfg.potential(), potential2=cfg.potential("potential2"),
        y=_y_points(cfg)[0], max_terms=cfg["cgo.max_terms"],
        power_iters=cfg["decay.power_iters"], power_rtol=cfg["decay.power_rtol"],
    )
    vals = pmap(lambda t: recon.measure_decay(kind, dc, (t,))[0], dc.taus, threads)
    study = recon.evaluate_decay(kind, dc.taus, vals)
    rep.add(f"decay_{kind}.csv", study.to_csv())
    if kind == "ttau":
        rep.add("norm_study.csv", osc.norm_study_csv(study.taus, study.values, study.slope))
    rep.check(f"{kind} decay: {study.target}", study.passed,
              f"slope {study.slope:.4f}, fit residual {study.fit_residual:.3g}, verdict {study.verdict}")


def cmd_phase(cfg: RunConfig, rep: Report, threads: int) -> None:
    g = _omega(cfg)
    q = _potential_on(cfg, g)
    ys = _y_points(cfg)
    taus = tuple(sorted(cfg["tau.list"]))
    ests = pmap(lambda y: osc.extract_constant(q, y, taus), ys, threads)
    rep.add("phase.csv", osc.phase_study_csv(q, ys, taus))
    rep.add("constant.csv", _csv(
        ["y_re", "y_im", "constant", "spread", "imag", "ratio_to_2pi"],
        [(y.real, y.imag, e.value, e.spread, e.imag, e.ratio_to_reference) for y, e in zip(ys, ests)]))
    for y, e in zip(ys, ests):
        rep.check(f"tau*I(tau, y) spread <= 5% at y={y}", e.spread <= 0.05, f"spread {e.spread:.4f}")
    vals = np.array([e.value for e in ests])
    if vals.size > 1:
        dev = float(np.ptp(vals) / abs(vals.mean()))
        rep.check("constant independent of y within 5%", dev <= 0.05, f"relative range {dev:.4f}")
    rep.note(f"measured constant {vals.mean():.17g}; ratio to 2*pi {vals.mean() / (2 * np.pi):.6f}; "
             f"ratio to pi/2 {vals.mean() / (np.pi / 2):.6f}")


def cmd_pair(cfg: RunConfig, rep: Report, threads: int) -> None:
    g = _omega(cfg)
    q1 = _potential_on(cfg, g)
    q2 = _potential_on(cfg, g, "potential2")
    M, basis = cfg["dtn.M"], cfg["dtn.basis"]
    if basis != "trig":
        raise ConfigError("pair: dtn.basis must be trig")
    modes = cfg["pair.modes"]
    if len(modes) % 2 or max(modes) >= M:
        raise ConfigError(f"pair.modes must hold index pairs below dtn.M={M}")
    d1 = forward.assemble_dtn(q1, M, basis)
    d2 = forward.assemble_dtn(q2, M, basis)
    B = forward.trig_basis(g, M)
    s1, s2 = forward.DirichletSolver(q1), forward.DirichletSolver(q2)
    rows, worst, same = [], 0.0, 0.0
    for k, l in zip(modes[::2], modes[1::2]):
        f = forward.BoundaryFunction(g, B[:, k])
        h = forward.BoundaryFunction(g, B[:, l])
        bp = recon.boundary_pairing(d1, d2, f, h)
        vp = recon.volume_pairing(q1, q2, s1.solve(f), s2.solve(h))
        rel = abs(bp - vp) / abs(vp) if vp != 0 else abs(bp)
        worst = max(worst, rel)
        same = max(same, abs(recon.boundary_pairing(d1, d1, f, h)))
        rows.append((k, l, bp.real, bp.imag, vp.real, vp.imag, rel))
    rep.add("pairing.csv", _csv(["mode_f", "mode_g", "boundary_re", "boundary_im", "volume_re", "volume_im", "rel_err"], rows))
    rep.check("identical DtN maps give zero pairing", same <= 1e-10, f"max |pairing| {same:.3e}")
    rep.check("boundary pairing matches volume integral", worst <= 1e-3, f"max relative error {worst:.3e}")


def cmd_recover(cfg: RunConfig, rep: Report, threads: int) -> None:
    g = _omega(cfg)
    q = _potential_on(cfg, g)
    y_grid = square_grid(cfg["y.grid_n"], cfg["y.grid_half"]) if cfg["y.grid_n"] is not None else None
    rc = recon.RecoveryConfig(
        taus=tuple(cfg["tau.list"]), points=cfg["y.points"], y_grid=y_grid,
        epsilon=cfg["recover.epsilon"], constant=cfg["recover.constant"], K=cfg["grid.K"],
        max_terms=cfg["cgo.max_terms"], noise_rtol=cfg["recover.noise_rtol"],
        spread_tol=cfg["recover.spread_tol"], threads=threads,
    )
    rc.validate(g)
    basis = cfg["recover.basis"]
    dq = forward.assemble_dtn(q, cfg["dtn.M"], basis)
    d0 = forward.assemble_dtn(ComplexField.zeros(g), cfg["dtn.M"], basis)
    res = recon.recover_pointwise(dq, d0, rc, cgo_potential=q if cfg["recover.use_truth_cgo"] else None)
    truth_field = mollify(q, rc.epsilon) if rc.epsilon > 0 else q
    truth = [truth_field.interp(p) for p in rc.points]
    rep.add("recover.csv", res.to_csv(truth))
    if y_grid is not None:
        rep.add("qhat.cgo2", formats.field_to_bytes(res.field()))
    rep.note(f"stationary-phase constant {res.constant:.17g} ({rc.constant}); trace projection error {res.projection_error:.3e}")
    flagged = [p for p, f in zip(rc.points, res.flagged) if f]
    rep.check("no evaluation point flagged", not flagged, "; ".join(r for r in res.reasons if r))
    t = np.abs(np.array(truth))
    if t.max() == 0:
        m = float(np.nanmax(np.abs(res.qhat))) if np.any(np.isfinite(res.qhat)) else float("nan")
        rep.check("q = 0 recovers 0 within 1e-6", m <= 1e-6, f"max |qhat| {m:.3e}")
    else:
        sel = (t >= 0.5 * t.max()) & ~res.flagged
        errs = np.abs(res.qhat[sel] - np.array(truth)[sel]) / t[sel]
        worst = float(errs.max()) if errs.size else float("nan")
        rep.check("relative error <= 20% where |q| >= half its peak", errs.size > 0 and worst <= 0.2,
                  f"max relative error {worst:.4f}")


def cmd_selftest(cfg: RunConfig, rep: Report, threads: int) -> None:
    st = recon.evaluate_decay("rtau", (10, 20, 40, 80), (1.0, 1.0, 1.0, 1.0))
    rep.check("constant input rejected by the decay verdict", st.verdict == "fail", f"verdict {st.verdict}")
    st = recon.evaluate_decay("tail", (10, 20, 40, 80), (1.0, 1.0, 1.0, 1.0))
    rep.check("constant input fails the tau*value test", st.verdict == "fail", f"verdict {st.verdict}")
    q = cauchy.singular_cell_average(0.1, 0.1, "quadrature")
    rep.check("singular cell average closed form vs quadrature", abs(q) <= 1e-12, f"|quadrature| {abs(q):.3e}")
    g = square_grid(17, 1.0)
    X, Y = g.mesh()
    f = ComplexField(g, np.exp(-(X**2 + Y**2) / 0.1) * (1 + 0.5j * X))
    tab = cauchy.kernel_table(g)
    a, b = cauchy.apply_table(tab, f).values, cauchy.apply_table_direct(tab, f).values
    e = float(np.abs(a - b).max() / np.abs(b).max())
    rep.check("Cauchy FFT path equals direct summation", e <= 1e-11, f"relative error {e:.3e}")
    op = osc.OscillatoryOperator(square_grid(33, 1.0), 5.0)
    f = ComplexField(op.grid, np.exp(-(op.grid.mesh()[0] ** 2) / 0.1) + 0j)
    a, b = osc.apply_T_tau(f, op).values, osc.apply_T_tau_dense(f, op).values
    e = float(np.abs(a - b).max() / np.abs(b).max())
    rep.check("T_tau separable path equals dense summation", e <= 1e-11, f"relative error {e:.3e}")
    ph = cgo.PhaseFunction(0.1 + 0.2j)
    w1 = np.exp(3.0 * (ph.phi(g) - np.conj(ph.phi(g))))
    e = float(np.abs(w1 - ph.weight(g, 3.0)).max())
    rep.check("e^{tau(Phi - conj Phi)} = e^{2i tau psi}", e <= 1e-12, f"max difference {e:.3e}")
    blob = formats.field_to_bytes(f)
    rep.check("CGO2 field round trip", np.array_equal(formats.field_from_bytes(blob).values, f.values))


HANDLERS = {
    "forward": cmd_forward,
    "cgo": cmd_cgo,
    "decay": cmd_decay,
    "phase": cmd_phase,
    "pair": cmd_pair,
    "recover": cmd_recover,
    "selftest": cmd_selftest,
}


def validate(command: str, cfg: RunConfig) -> None:
    """Fail-fast checks of everything that can be checked before computing."""
    v = cfg.values
    for key in REQUIRED[command]:
        if v.get(key) is None:
            raise ConfigError(f"{cfg.source}: missing required key '{key}'")
    try:
        if v["grid.n"] is not None:
            g = _omega(cfg)
            for sec in ("potential", "potential2"):
                sample_potential(cfg.potential(sec), g)
        taus = v["tau.list"]
        if taus is not None and min(taus) <= 0:
            raise ValueError("tau.list must be positive")
        if v["run.threads"] < 1:
            raise ValueError("run.threads must be >= 1")
        if command in ("forward", "pair"):
            nb = forward.boundary_count(g)
            if v["dtn.basis"] not in forward.BASES:
                raise ValueError(f"dtn.basis must be one of {forward.BASES}")
            if v["dtn.basis"] == "trig" and not 1 <= v["dtn.M"] <= nb // 4:
                raise ValueError(f"dtn.M={v['dtn.M']} must lie in [1, {nb // 4}]")
        if command == "cgo":
            cgo.NeumannSeriesConfig(tau=min(taus), max_terms=v["cgo.max_terms"], tail_tol=v["cgo.tail_tol"],
                                    r_convention=v["cgo.r_convention"], v_convention=v["cgo.v_convention"])
            nested_grids(v["grid.n"], v["grid.omega"], v["grid.K"])
        if command == "decay":
            if v["decay.kind"] not in recon.DECAY_KINDS:
                raise ValueError(f"decay.kind must be one of {recon.DECAY_KINDS}")
            if len(taus) < 4:
                raise ValueError("decay needs at least 4 taus")
            if v["decay.kind"] in ("rtau", "tail", "correction"):
                pg = square_grid(v["grid.n"], v["grid.K"])
                if v["decay.kind"] == "correction":
                    for t in taus:
                        osc.check_sp_resolution(pg, t)
        if command == "phase":
            for t in taus:
                osc.check_sp_resolution(g, t)
            if len(taus) < 3:
                raise ValueError("phase needs at least 3 taus")
        if command == "recover":
            if v["recover.basis"] not in forward.BASES:
                raise ValueError(f"recover.basis must be one of {forward.BASES}")
            yg = square_grid(v["y.grid_n"], v["y.grid_half"]) if v["y.grid_n"] is not None else None
            recon.RecoveryConfig(taus=taus, points=v["y.points"], y_grid=yg, epsilon=v["recover.epsilon"],
                                 constant=v["recover.constant"], K=v["grid.K"],
                                 spread_tol=v["recover.spread_tol"]).validate(g)
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(f"{cfg.source}: {exc}") from exc


def run(command: str, cfg: RunConfig, out: Path, threads: int) -> Tuple[int, Path, Report]:
    validate(command, cfg)
    rep = Report(command)
    with threadpool_limits(limits=1):
        HANDLERS[command](cfg, rep, threads)
    target = fresh_output_dir(out)
    for name, data in rep.files.items():
        (target / name).write_bytes(data)
    (target / "summary.txt").write_text(rep.summary())
    return (0 if rep.ok else 1), target, rep


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgo-calderon", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="path to a section.key = value config file")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}, run.out, or ./cgo_out)")
    p.add_argument("--threads", type=int, help="worker threads for independent tasks")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            cfg.values["run.threads"] = args.threads
        out = args.out or os.environ.get(OUT_ENV) or cfg["run.out"] or "cgo_out"
        code, target, rep = run(args.command, cfg, Path(out), cfg["run.threads"])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors carry the failing tau / y in their message
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(rep.summary())
    print(f"artifacts written to {target}")
    return code


if __name__ == "__main__":
    sys.exit(main())
