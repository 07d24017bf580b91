import numpy as np
import pytest

from bundlemf import (
    ExponentOverflowError,
    ScalarField,
    SolverOptions,
    bundle_laplacian,
    el_residual,
    evaluate_J,
    integrate,
    l2_inner,
    laplacian,
    make_problem,
    minimize,
    project_H1,
)
from bundlemf.geometry import random_band_limited

from conftest import cos_x_field, df_connection, ones_field, zero_connection


def classical_J(u, spec):
    # independent route through the scalar Laplacian (valid when omega = 0)
    g = spec.grid
    grad_energy = l2_inner(u, laplacian(u, g), g)
    mean_term = spec.rho / g.total_area * integrate(u, g)
    shift = float(u.values.max())
    log_mu = shift + np.log(np.sum(spec.hweight.values * np.exp(u.values - shift)
                                   * g.area_element))
    return 0.5 * grad_energy + mean_term - spec.rho * log_mu


def l2_norm(values, grid):
    return float(np.sqrt(np.sum(values**2 * grid.area_element)))


class TestEvaluate:
    def test_zero_section(self, grid64):
        h = ScalarField(np.exp(cos_x_field(64, 1.0).values))
        spec = make_problem(grid64, zero_connection(grid64), h, 4 * np.pi)
        expected = -4 * np.pi * np.log(integrate(h, grid64))
        zero = ScalarField(np.zeros((64, 64)))
        assert evaluate_J(zero, spec) == pytest.approx(expected, rel=1e-14)

    def test_unit_weight_zero(self, flat_problem64):
        zero = ScalarField(np.zeros((64, 64)))
        assert abs(evaluate_J(zero, flat_problem64)) < 1e-14

    def test_classical_reduction(self, flat_problem64):
        rng = np.random.default_rng(17)
        for _ in range(20):
            u = random_band_limited(flat_problem64.grid, rng, amplitude=1.0)
            a = evaluate_J(u, flat_problem64)
            b = classical_J(u, flat_problem64)
            assert abs(a - b) <= 1e-12 * max(1.0, abs(a))

    def test_overflow_guard(self, flat_problem64):
        u = ScalarField(np.full((64, 64), 701.0))
        with pytest.raises(ExponentOverflowError):
            evaluate_J(u, flat_problem64)


class TestResidual:
    def test_rho_zero(self, grid64):
        spec = make_problem(grid64, df_connection(grid64), ones_field(64), 0.0)
        r, lam = el_residual(ScalarField(np.zeros((64, 64))), spec)
        assert np.max(np.abs(r.values)) < 1e-14
        assert lam == 0.0

    def test_constant_state_critical(self, flat_problem64):
        r, lam = el_residual(ScalarField(np.zeros((64, 64))), flat_problem64)
        assert np.max(np.abs(r.values)) < 1e-13
        assert abs(lam) < 1e-13

    def test_lambda_two_routes(self, df_problem64):
        spec = df_problem64
        g = spec.grid
        rng = np.random.default_rng(23)
        u = random_band_limited(g, rng, amplitude=0.7)
        _, lam_proj = el_residual(u, spec)
        mu = integrate(ScalarField(spec.hweight.values * np.exp(u.values)), g)
        density = ScalarField(spec.hweight.values * np.exp(u.values) / mu
                              - 1.0 / g.total_area)
        lam_quad = spec.rho * l2_inner(density, spec.kb.tau1, g)
        assert abs(lam_proj - lam_quad) < 1e-10 * max(1.0, abs(lam_quad))

    def test_gradient_matches_finite_differences(self, df_problem64):
        spec = df_problem64
        g = spec.grid
        rng = np.random.default_rng(29)
        u = project_H1(random_band_limited(g, rng, amplitude=0.5), spec.kb, g)
        for _ in range(3):
            phi = project_H1(random_band_limited(g, rng), spec.kb, g)
            r, _ = el_residual(u, spec)
            pairing = l2_inner(r, phi, g)
            eps = 1e-6
            jp = evaluate_J(ScalarField(u.values + eps * phi.values), spec)
            jm = evaluate_J(ScalarField(u.values - eps * phi.values), spec)
            fd = (jp - jm) / (2 * eps)
            assert abs(pairing - fd) <= 1e-6 * max(1.0, abs(fd))


class TestMinimize:
    def test_rho_zero_exact(self, grid64):
        spec = make_problem(grid64, df_connection(grid64), ones_field(64), 0.0)
        res = minimize(spec)
        assert res.converged
        assert np.max(np.abs(res.u.values)) == 0.0
        assert res.residual == 0.0
        assert res.mu > 0.0

    def test_flat_unit_weight(self, flat_problem64):
        rng = np.random.default_rng(31)
        init = random_band_limited(flat_problem64.grid, rng, amplitude=0.5)
        res = minimize(flat_problem64, init, SolverOptions(tol=1e-11))
        j0 = evaluate_J(ScalarField(np.zeros((64, 64))), flat_problem64)
        assert res.converged
        assert res.residual <= 1e-8
        assert res.jvalue <= j0 + 1e-10
        assert np.max(np.abs(res.u.values)) <= 1e-6

    def test_flat_minimality_probes(self, flat_problem64):
        res = minimize(flat_problem64, opts=SolverOptions(tol=1e-11))
        rng = np.random.default_rng(37)
        for _ in range(100):
            phi = project_H1(random_band_limited(flat_problem64.grid, rng),
                             flat_problem64.kb, flat_problem64.grid)
            probe = ScalarField(res.u.values + 1e-3 * phi.values)
            assert evaluate_J(probe, flat_problem64) >= res.jvalue - 1e-12

    def test_exact_connection_case(self, df_problem64):
        spec = df_problem64
        rng = np.random.default_rng(41)
        init = random_band_limited(spec.grid, rng, amplitude=0.5)
        res = minimize(spec, init, SolverOptions(tol=1e-11))
        assert res.converged
        assert res.residual <= 1e-8
        # full unprojected optimality system
        g = spec.grid
        full = (bundle_laplacian(res.u, spec.conn, g).values
                - spec.rho * (spec.hweight.values * np.exp(res.u.values) / res.mu
                              - 1.0 / g.total_area)
                + res.lambda1 * spec.kb.tau1.values)
        assert l2_norm(full, g) <= 1e-7

    def test_nonuniform_weight_descends(self, grid64):
        h = ScalarField(np.exp(cos_x_field(64, 1.0).values))
        spec = make_problem(grid64, zero_connection(grid64), h, 4 * np.pi)
        res = minimize(spec, opts=SolverOptions(tol=1e-11))
        zero = ScalarField(np.zeros((64, 64)))
        assert res.converged
        assert res.jvalue < evaluate_J(zero, spec)
        # mu and lambda1 self-consistent with the returned field
        mu = integrate(ScalarField(h.values * np.exp(res.u.values)), grid64)
        assert res.mu == pytest.approx(mu, rel=1e-12)
        _, lam = el_residual(res.u, spec)
        assert res.lambda1 == pytest.approx(lam, abs=1e-12)

    def test_descent_from_init(self, df_problem64):
        rng = np.random.default_rng(43)
        init = project_H1(random_band_limited(df_problem64.grid, rng, amplitude=0.8),
                          df_problem64.kb, df_problem64.grid)
        res = minimize(df_problem64, init, SolverOptions(tol=1e-11))
        assert res.jvalue <= evaluate_J(init, df_problem64) + 1e-12

    def test_iterates_stay_constrained(self, df_problem64):
        rng = np.random.default_rng(47)
        init = random_band_limited(df_problem64.grid, rng, amplitude=0.5)
        res = minimize(df_problem64, init, SolverOptions(tol=1e-11))
        assert abs(l2_inner(res.u, df_problem64.kb.tau1, df_problem64.grid)) <= 1e-10

    def test_trivial_kernel_branch(self, grid64):
        # holonomy-obstructed connection: no multiplier, no projection
        from conftest import harmonic_connection

        h = ScalarField(np.exp(cos_x_field(64, 1.0).values))
        spec = make_problem(grid64, harmonic_connection(grid64), h, 4 * np.pi)
        assert spec.kb.dim == 0
        res = minimize(spec, opts=SolverOptions(tol=1e-11))
        assert res.converged
        assert res.residual <= 1e-8
        assert res.lambda1 == 0.0
        assert res.jvalue < evaluate_J(ScalarField(np.zeros((64, 64))), spec)

    def test_supercritical_warns(self, flat_problem64):
        spec = flat_problem64.with_rho(9 * np.pi)
        with pytest.warns(RuntimeWarning):
            minimize(spec, opts=SolverOptions(max_iter=5))

    def test_max_iter_returns_best(self, df_problem64):
        rng = np.random.default_rng(53)
        init = random_band_limited(df_problem64.grid, rng, amplitude=0.8)
        res = minimize(df_problem64, init, SolverOptions(tol=1e-14, max_iter=3))
        assert not res.converged
        assert res.iterations == 3
        assert np.isfinite(res.jvalue)


class TestCoercivityProbe:
    @pytest.mark.parametrize("rho_over_pi", [2.0, 4.0, 6.0])
    def test_bounded_below_on_unit_energy_ball(self, flat_problem64, rho_over_pi):
        from bundlemf import bundle_energy

        spec = flat_problem64.with_rho(rho_over_pi * np.pi)
        g = spec.grid
        rng = np.random.default_rng(61)
        worst = np.inf
        for _ in range(400):
            u = project_H1(random_band_limited(g, rng, kmax=8), spec.kb, g)
            e = bundle_energy(u, spec.conn, g)
            if e > 1e-12:
                u = ScalarField(u.values / max(1.0, np.sqrt(e)))
            worst = min(worst, evaluate_J(u, spec))
        assert worst > -50.0
