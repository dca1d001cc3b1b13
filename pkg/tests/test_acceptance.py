"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (shown in the terminal summary)
before asserting.
"""

import numpy as np

from cgo_calderon import cli
from cgo_calderon.cauchy import apply_table, apply_table_direct, dbar, dbar_inv, kernel_table
from cgo_calderon.cgo import NeumannSeriesConfig, build_u1_series, measure_tau0, r_tilde_tau, schrodinger_residual
from cgo_calderon.forward import BoundaryFunction, DirichletSolver, assemble_dtn, trig_basis
from cgo_calderon.grid import ComplexField, PotentialSpec, extend_zero, nested_grids, sample_potential, square_grid
from cgo_calderon.osc import extract_constant
from cgo_calderon.recon import (
    DecayConfig,
    RecoveryConfig,
    boundary_pairing,
    measure_decay,
    recover_pointwise,
    run_decay_study,
    volume_pairing,
)


def test_criterion_1_cauchy_round_trip(report_criterion):
    errs = []
    for n in (129, 257):
        g = square_grid(n, 1.0)
        q = sample_potential(PotentialSpec("gaussian", 1.0, (0.1, -0.05), 0.2), g)
        m = g.interior_mask(0.1)
        r = dbar(dbar_inv(q)).values - q.values
        errs.append(np.linalg.norm(r[m]) / np.linalg.norm(q.values[m]))
    g = square_grid(65, 1.0)
    X, Y = g.mesh()
    f = ComplexField(g, np.exp(-(X**2 + Y**2) / 0.1) * (1 + 1j * X))
    t = kernel_table(g)
    a, b = apply_table(t, f).values, apply_table_direct(t, f).values
    oracle = np.abs(a - b).max() / np.abs(b).max()
    ok = errs[1] <= 1e-3 and errs[1] < errs[0] and oracle <= 1e-11
    report_criterion(1, ok, f"round trip {errs[0]:.2e} (129) -> {errs[1]:.2e} (257); FFT vs direct {oracle:.1e}")
    assert ok


def test_criterion_2_rtilde_decay(report_criterion):
    taus = np.array([10, 20, 40, 80, 160.0])
    g = square_grid(513, 1.5)
    fields = [
        PotentialSpec("gaussian", 1.0, (0.0, 0.0), 0.35),
        PotentialSpec("gaussian", 1.0, (0.2, -0.1), 0.3),
        PotentialSpec("gaussian", 1.0, (-0.3, 0.2), 0.4),
    ]
    slopes = []
    for s in fields:
        q = sample_potential(s, g)
        norms = [r_tilde_tau(q, 0j, t).norm() for t in taus]
        slopes.append(np.polyfit(np.log(taus), np.log(norms), 1)[0])
    ok = all(-1.05 <= s <= -0.8 for s in slopes)
    report_criterion(2, ok, "slopes " + ", ".join(f"{s:.3f}" for s in slopes) + " (target [-1.05, -0.8])")
    assert ok


def test_criterion_3_neumann_series(report_criterion):
    def q_on(n):
        om, pi = nested_grids(n, 1.0, 1.5)
        return extend_zero(sample_potential(PotentialSpec("gaussian", 30.0, (0, 0), 0.3), om), pi)

    q = q_on(257)
    tau0 = measure_tau0(q, (1, 2, 5, 10, 20, 40))
    sol = build_u1_series(q, NeumannSeriesConfig(tau=tau0), 0j)
    res = [schrodinger_residual(build_u1_series(q_on(n), NeumannSeriesConfig(tau=tau0), 0j), q_on(n)) for n in (129, 257)]
    zero = ComplexField.zeros(q.grid)
    z = schrodinger_residual(build_u1_series(zero, NeumannSeriesConfig(tau=tau0), 0j), zero)
    ok = sol.max_ratio <= 0.5 and res[1] < res[0] and z == 0.0
    report_criterion(3, ok, f"tau0={tau0}, max term ratio {sol.max_ratio:.3f}; residual {res[0]:.2e} -> {res[1]:.2e}; q=0 residual {z}")
    assert ok


def test_criterion_4_hormander_decay(report_criterion):
    cfg = DecayConfig(taus=(20, 40, 80, 160, 320))
    study = run_decay_study("ttau", cfg)
    halving = [b / a for a, b in zip(study.values, study.values[1:])]
    ok = all(0.4 <= h <= 0.6 for h in halving) and -1.15 <= study.slope <= -0.85 and study.passed
    report_criterion(4, ok, "ratios " + ", ".join(f"{h:.4f}" for h in halving) + f"; slope {study.slope:.4f}")
    assert ok


def test_criterion_5_stationary_phase(report_criterion):
    # tau = 320 on a width-0.4 potential needs h = 1/256 to keep aliased stationary points off its mass
    g = square_grid(513, 1.0)
    taus = (40, 80, 160, 320)
    q1 = sample_potential(PotentialSpec("gaussian", 1.0, (0, 0), 0.2), g)
    q2 = sample_potential(PotentialSpec("gaussian", -2.5, (0.05, 0.1), 0.4), g)
    e1, e2 = extract_constant(q1, 0j, taus), extract_constant(q2, 0j, taus)
    indep = abs(e1.value - e2.value) / abs(e1.value)
    ok = e1.spread <= 0.05 and e2.spread <= 0.05 and indep <= 0.05
    report_criterion(
        5, ok,
        f"spreads {e1.spread:.4f}, {e2.spread:.4f}; constants {e1.value:.5f}, {e2.value:.5f} (diff {indep:.2%}); "
        f"ratio to 2*pi {e1.ratio_to_reference:.4f}, to pi/2 {e1.value / (np.pi / 2):.4f}",
    )
    assert ok


def test_criterion_6_alessandrini(report_criterion):
    pairs = [
        (PotentialSpec("gaussian", 1.0, (0.15, -0.1), 0.3), PotentialSpec("zero")),
        (PotentialSpec("gaussian", 2.0, (0.1, 0), 0.3), PotentialSpec("two_bumps", 1.0, (0, 0), 0.2)),
        (PotentialSpec("disk_indicator", 3.0, (0.1, 0), 0.4), PotentialSpec("gaussian", -1.0, (0, 0.2), 0.25)),
    ]
    worst, same = {}, 0.0
    for n in (129, 257):
        g = square_grid(n, 1.0)
        B = trig_basis(g, 32)
        worst[n] = 0.0
        for s1, s2 in pairs:
            q1, q2 = sample_potential(s1, g), sample_potential(s2, g)
            d1, d2 = assemble_dtn(q1, 32), assemble_dtn(q2, 32)
            S1, S2 = DirichletSolver(q1), DirichletSolver(q2)
            for k, l in ((0, 1), (3, 3), (5, 2), (10, 7)):
                f, h = BoundaryFunction(g, B[:, k]), BoundaryFunction(g, B[:, l])
                bp = boundary_pairing(d1, d2, f, h)
                vp = volume_pairing(q1, q2, S1.solve(f), S2.solve(h))
                worst[n] = max(worst[n], abs(bp - vp) / abs(vp))
                same = max(same, abs(boundary_pairing(d1, d1, f, h)))
    ok = same <= 1e-10 and worst[257] <= 1e-3 and worst[129] <= 1e-3
    report_criterion(6, ok, f"identical maps {same:.1e}; boundary vs volume {worst[129]:.1e} (129), {worst[257]:.1e} (257)")
    assert ok


def test_criterion_7_recovery(report_criterion):
    g = square_grid(257, 1.0)
    d0 = assemble_dtn(ComplexField.zeros(g), basis="nodal")
    cfg = RecoveryConfig(taus=(4, 8, 16))

    def peak(amp):
        q = sample_potential(PotentialSpec("gaussian", amp, (0, 0), 0.4), g)
        r = recover_pointwise(assemble_dtn(q, basis="nodal"), d0, cfg, cgo_potential=q)
        assert not r.flagged[0], r.reasons[0]
        return r.qhat[0]

    p1 = peak(1.0)
    small = peak(0.1), peak(0.2)
    ratio = abs(small[1] / small[0])
    z = recover_pointwise(d0, d0, cfg).qhat[0]
    ok = abs(p1 - 1.0) <= 0.2 and abs(z) <= 1e-6 and 1.9 <= ratio <= 2.1
    report_criterion(7, ok, f"peak {p1.real:.4f}{p1.imag:+.1e}j (truth 1); q=0 gives {abs(z):.1e}; amplitude 0.1 -> 0.2 ratio {ratio:.4f}")
    assert ok


def test_criterion_8_correction_vanishing(report_criterion):
    cfg = DecayConfig(
        taus=(20, 40, 80, 160),
        n=513,
        potential=PotentialSpec("gaussian", 1.0, (0.1, 0.05), 0.3),
        potential2=PotentialSpec("gaussian", 0.5, (-0.1, 0.0), 0.25),
    )
    vals = measure_decay("correction", cfg, taus=(40, 80, 160))
    scaled = [t * v for t, v in zip((40, 80, 160), vals)]
    ok = scaled[0] > scaled[1] > scaled[2]
    report_criterion(8, ok, "tau*|I| at 40, 80, 160: " + ", ".join(f"{s:.3e}" for s in scaled))
    assert ok


CONFIGS = {
    "forward": "grid.n = 65\ndtn.M = 16\npotential.kind = gaussian\nforward.manufactured = true\n",
    "cgo": "grid.n = 129\ntau.list = 2 5 10 20\npotential.kind = gaussian\npotential.amplitude = 30\n",
    "decay": "grid.n = 129\ntau.list = 10 20 40 80\npotential.kind = gaussian\npotential.width = 0.35\n",
    "phase": "grid.n = 129\ntau.list = 20 40 80 160\npotential.kind = gaussian\npotential.width = 0.2\ny.points = 0 0; 0.1 0\n",
    "pair": "grid.n = 65\npotential.kind = gaussian\npotential2.kind = two_bumps\n",
    "recover": "grid.n = 65\ntau.list = 4 8 16\npotential.kind = gaussian\npotential.width = 0.4\ny.points = 0 0; 0.25 0.125; 0 0.25\n",
}


def test_criterion_9_determinism(tmp_path, report_criterion):
    mismatches, compared = [], 0
    for cmd, text in CONFIGS.items():
        cfg = tmp_path / f"{cmd}.cfg"
        cfg.write_text(text)
        outs = []
        for threads in (1, 1, 4):
            out = tmp_path / f"{cmd}-{len(outs)}"
            cli.main([cmd, "--config", str(cfg), "--out", str(out), "--threads", str(threads)])
            outs.append(out)
        for f in sorted(outs[0].glob("*.csv")):
            compared += 1
            if any((o / f.name).read_bytes() != f.read_bytes() for o in outs[1:]):
                mismatches.append(f"{cmd}/{f.name}")
    ok = compared > 0 and not mismatches
    report_criterion(9, ok, f"{compared} CSV files compared over 3 runs (threads 1, 1, 4); mismatches: {mismatches or 'none'}")
    assert ok
