import numpy as np
import pytest

from cgo_calderon.grid import ComplexField, PotentialSpec, make_grid, sample_potential, square_grid
from cgo_calderon.osc import (
    ConstantEstimate,
    OscillatoryOperator,
    PowerIterationError,
    ResolutionError,
    alias_points,
    apply_T_tau,
    apply_T_tau_adjoint,
    apply_T_tau_dense,
    check_sp_resolution,
    estimate_op_norm,
    extract_constant,
    richardson,
    smooth_step,
    stationary_phase_integral,
)


def _rand(g, seed=0):
    rng = np.random.default_rng(seed)
    return ComplexField(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))


def test_tau_zero_is_rank_one():
    g = square_grid(33, 1.5)
    op = OscillatoryOperator(g, 0.0)
    f = _rand(g)
    out = apply_T_tau(f, op).values
    expected = op.chi * np.sum(op.chi * f.values) * g.cell_area
    assert np.abs(out - expected).max() <= 1e-12 * np.abs(expected).max()


@pytest.mark.parametrize("tau", [3.0, 10.0])
def test_factored_matches_dense(tau):
    g = square_grid(65, 1.5)
    op = OscillatoryOperator(g, tau)
    f = _rand(g, 1)
    a = apply_T_tau(f, op).values
    b = apply_T_tau_dense(f, op).values
    assert np.abs(a - b).max() <= 1e-11 * np.abs(b).max()


def test_adjoint_identity():
    g = square_grid(65, 1.5)
    op = OscillatoryOperator(g, 7.0)
    f, h = _rand(g, 2), _rand(g, 3)
    lhs = np.vdot(h.values, apply_T_tau(f, op).values)
    rhs = np.vdot(apply_T_tau_adjoint(h, op).values, f.values)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_norm_halves_when_tau_doubles():
    g = square_grid(257, 1.5)
    taus = [5.0, 10.0, 20.0, 40.0]
    norms = [estimate_op_norm(OscillatoryOperator(g, t), iters=300) for t in taus]
    for a, b in zip(norms, norms[1:]):
        assert 0.4 <= b / a <= 0.6
    slope = np.polyfit(np.log(taus), np.log(norms), 1)[0]
    assert -1.1 <= slope <= -0.9


def test_norm_independent_of_refinement():
    a = estimate_op_norm(OscillatoryOperator(square_grid(129, 1.5), 10.0), iters=300)
    b = estimate_op_norm(OscillatoryOperator(square_grid(257, 1.5), 10.0), iters=300)
    assert abs(a - b) <= 1e-3 * b


def test_power_iteration_errors():
    op = OscillatoryOperator(square_grid(65, 1.5), 5.0)
    with pytest.raises(ValueError):
        estimate_op_norm(op, iters=10)
    with pytest.raises(PowerIterationError) as info:
        estimate_op_norm(op, iters=20, rtol=1e-15)
    assert info.value.last > 0 and info.value.previous > 0


def test_resolution_error():
    with pytest.raises(ResolutionError):
        OscillatoryOperator(square_grid(65, 1.5), 40.0)
    with pytest.raises(ValueError):
        OscillatoryOperator(square_grid(65, 1.5), -1.0)
    with pytest.raises(ResolutionError):
        check_sp_resolution(square_grid(65, 1.0), 200.0)


def test_aliasing_guard():
    # on h = 1/128 the lattice sum has a second stationary point 0.628 from y at tau = 320
    g = square_grid(257, 1.0)
    assert alias_points(g, 0j, 320.0)[0] == pytest.approx(-np.pi / 5 - 1j * np.pi / 5)
    assert alias_points(g, 0j, 40.0) == []
    wide = sample_potential(PotentialSpec("gaussian", 1.0, (0, 0), 0.4), g)
    with pytest.raises(ResolutionError, match="aliased"):
        stationary_phase_integral(wide, 0j, 320.0)
    narrow = sample_potential(PotentialSpec("gaussian", 1.0, (0, 0), 0.2), g)
    assert np.isfinite(stationary_phase_integral(narrow, 0j, 320.0))


def test_smooth_step_limits():
    u = np.linspace(-1, 2, 301)
    s = smooth_step(u)
    assert np.all(s[u <= 0] == 0) and np.all(s[u >= 1] == 1)
    assert np.all(np.diff(s) >= 0)


def test_sp_zero_potential():
    g = square_grid(257, 1.0)
    assert stationary_phase_integral(ComplexField.zeros(g), 0j, 20.0) == 0


def test_sp_gaussian_constant_stable():
    g = square_grid(257, 1.0)
    q = sample_potential(PotentialSpec("gaussian", 1.0, (0, 0), 0.3), g)
    est = extract_constant(q, 0j, [20, 40, 80, 160])
    assert isinstance(est, ConstantEstimate)
    assert est.spread <= 0.05
    assert abs(est.imag) <= 0.01 * abs(est.value)
    assert est.value == pytest.approx(np.pi / 2, rel=0.02)
    assert est.ratio_to_reference == pytest.approx(est.value / (2 * np.pi))


def test_sp_translation_covariance():
    g = square_grid(257, 1.0)
    s = 16 * g.hx
    q0 = sample_potential(PotentialSpec("gaussian", 1.0, (0, 0), 0.25), g)
    q1 = sample_potential(PotentialSpec("gaussian", 1.0, (s, 0), 0.25), g)
    for t in (20.0, 80.0):
        a = stationary_phase_integral(q0, 0j, t)
        b = stationary_phase_integral(q1, s + 0j, t)
        assert abs(a - b) <= 1e-3 * abs(a)


def test_sp_localization():
    # q vanishes near y: the integral decays much faster than 1/tau
    g = square_grid(257, 1.0)
    X, Y = g.mesh()
    R = np.hypot(X, Y)
    base = np.exp(-(R**2) / 0.5)
    q = ComplexField(g, base * smooth_step((R - 0.3) / 0.25))
    i40 = abs(stationary_phase_integral(q, 0j, 40.0))
    i160 = abs(stationary_phase_integral(q, 0j, 160.0))
    assert i40 / i160 >= 100


def test_sp_constant_independent_of_potential():
    g = square_grid(257, 1.0)
    q1 = sample_potential(PotentialSpec("gaussian", 1.0, (0, 0), 0.3), g)
    q2 = sample_potential(PotentialSpec("gaussian", -2.5, (0.05, 0.1), 0.4), g)
    c1 = extract_constant(q1, 0j, [20, 40, 80, 160]).value
    c2 = extract_constant(q2, 0j, [20, 40, 80, 160]).value
    assert abs(c1 - c2) <= 0.05 * abs(c1)


def test_sp_errors():
    g = square_grid(129, 1.0)
    X, Y = g.mesh()
    q = ComplexField(g, X)
    with pytest.raises(ZeroDivisionError):
        extract_constant(q, 0j, [10, 20, 40])
    with pytest.raises(ValueError):
        stationary_phase_integral(q, 0.9 + 0j, 10.0)
    with pytest.raises(ValueError):
        stationary_phase_integral(q, 0j, 0.0)
    with pytest.raises(ValueError):
        extract_constant(q, 0.5 + 0j, [10, 20])
    with pytest.raises(ValueError):
        extract_constant(q, 0.5 + 0j, [10, 20, 50])


def test_richardson_removes_first_order_term():
    taus = [10.0, 20.0, 40.0]
    vals = [3.0 + 7.0 / t for t in taus]
    assert richardson(taus, vals) == pytest.approx(3.0, abs=1e-12)


def test_sp_rectangular_grid():
    g = make_grid(257, 129, (-1, 1, -0.5, 0.5))
    q = sample_potential(PotentialSpec("gaussian", 1.0, (0, 0), 0.15), g)
    assert np.isfinite(stationary_phase_integral(q, 0j, 20.0))
