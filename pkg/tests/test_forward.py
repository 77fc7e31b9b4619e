import numpy as np
import pytest

from fracmono import (
    Potential,
    ResonanceViolation,
    ResonantPotential,
    assemble_dtn,
    bilinear_form,
    dtn_derivative,
    dtn_difference,
    dtn_quadratic_form,
    neumann_trace,
    resonance_data,
    solve_dirichlet,
    solution_operator,
    stiffness,
)

from conftest import make_op


def resonant_shift(op):
    """Constant potential placing the lowest stiffness eigenvalue at zero."""
    mu1 = np.linalg.eigvalsh(op.L_II)[0]
    return np.full(op.grid.n_I, -mu1 / op.m)


class TestStiffness:
    def test_zero_potential_positive_definite(self, op32):
        k = stiffness(op32, np.zeros(op32.grid.n_I))
        assert np.allclose(k, op32.L_II)
        assert np.linalg.eigvalsh(k)[0] > 0

    def test_constant_shift(self, op32):
        c = 0.7
        k0 = np.linalg.eigvalsh(op32.L_II)
        kc = np.linalg.eigvalsh(stiffness(op32, np.full(op32.grid.n_I, c)))
        assert np.allclose(kc, k0 + op32.m * c, rtol=1e-10, atol=1e-12)

    def test_entrywise_oracle(self, op32, rng):
        q = rng.uniform(-2, 2, op32.grid.n_I)
        k = stiffness(op32, q)
        expected = op32.L_II + op32.m * np.diag(q)
        assert np.array_equal(k, expected) or np.allclose(k, expected, rtol=0, atol=0)


class TestResonanceData:
    def test_zero_potential(self, op32):
        res = resonance_data(op32, np.zeros(op32.grid.n_I))
        assert res.d_q == 0
        assert res.dim_nq == 0
        assert res.gap > 0

    def test_shifted_kernel(self, op32):
        res = resonance_data(op32, resonant_shift(op32))
        assert res.dim_nq >= 1
        assert res.d_q == 0
        k = stiffness(op32, resonant_shift(op32))
        resid = np.linalg.norm(k @ res.kernel_basis)
        assert resid <= 1e-8 * np.linalg.norm(k)

    def test_fully_negative(self, op32):
        lam_max = np.linalg.eigvalsh(op32.L_II)[-1]
        q = np.full(op32.grid.n_I, -(lam_max / op32.m) * 1.1)
        res = resonance_data(op32, q)
        assert res.d_q == op32.grid.n_I


class TestSolveDirichlet:
    def test_zero_data(self, op32):
        u = solve_dirichlet(op32, np.zeros(op32.grid.n_I), np.zeros(op32.grid.n_E))
        assert np.all(u == 0)

    def test_residual(self, op32, rng):
        for _ in range(5):
            q = rng.uniform(-1, 1, op32.grid.n_I)
            g = rng.standard_normal(op32.grid.n_E)
            f = rng.standard_normal(op32.grid.n_I)
            u = solve_dirichlet(op32, q, g, f)
            k = stiffness(op32, q)
            rhs = op32.m * f - op32.L_IE @ g
            resid = np.linalg.norm(k @ u[op32.I] - rhs)
            scale = np.linalg.norm(k) * np.linalg.norm(u[op32.I]) + np.linalg.norm(rhs)
            assert resid <= 1e-10 * scale
            assert np.array_equal(u[op32.E], g)

    def test_resonance_violation(self, op32):
        q = resonant_shift(op32)
        res = resonance_data(op32, q)
        kv = res.kernel_basis[:, 0]
        g_bad = op32.L_IE.T @ kv
        assert np.linalg.norm(g_bad) > 1e-8
        with pytest.raises(ResonanceViolation):
            solve_dirichlet(op32, q, g_bad)

    def test_resonant_admissible_solve(self, op32, rng):
        q = resonant_shift(op32)
        res = resonance_data(op32, q)
        kv = res.kernel_basis[:, 0]
        row = kv @ op32.L_IE
        g = rng.standard_normal(op32.grid.n_E)
        g = g - row * (row @ g) / (row @ row)
        u = solve_dirichlet(op32, q, g)
        # minimal-norm representative is orthogonal to the kernel
        assert abs(kv @ u[op32.I]) <= 1e-8 * np.linalg.norm(u[op32.I])


class TestNeumannTrace:
    def test_zero(self, op32):
        assert np.all(neumann_trace(op32, np.zeros(op32.grid.n_nodes)) == 0)

    def test_entrywise_oracle(self, op32, rng):
        u = rng.standard_normal(op32.grid.n_nodes)
        t = neumann_trace(op32, u)
        expected = op32.L_EI @ u[op32.I] + op32.L_EE @ u[op32.E]
        assert np.allclose(t, expected, rtol=1e-14, atol=1e-15)

    def test_duality_identity(self, op32, rng):
        # v supported on the exterior pairs the trace with the energy form
        q = rng.uniform(-1, 1, op32.grid.n_I)
        g = rng.standard_normal(op32.grid.n_E)
        u = solve_dirichlet(op32, q, g)
        v = np.zeros(op32.grid.n_nodes)
        v[op32.E] = rng.standard_normal(op32.grid.n_E)
        lhs = v[op32.E] @ neumann_trace(op32, u)
        rhs = bilinear_form(op32, q, u, v) - op32.m * np.sum(q * u[op32.I] * v[op32.I])
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


class TestDtnMap:
    def test_quadratic_form_identity(self, op32, rng):
        q = rng.uniform(-1, 1, op32.grid.n_I)
        dtn = assemble_dtn(op32, q)
        for _ in range(20):
            g = rng.standard_normal(op32.grid.n_E)
            lhs = g @ dtn.matrix @ g
            rhs = dtn_quadratic_form(op32, q, g)
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)

    def test_self_difference_zero(self, op32, rng):
        q = rng.uniform(-1, 1, op32.grid.n_I)
        d1 = assemble_dtn(op32, q)
        d2 = assemble_dtn(op32, q)
        diff, basis = dtn_difference(d1, d2)
        assert basis.shape == (op32.grid.n_E, op32.grid.n_E)
        assert np.abs(diff).max() == 0.0

    def test_monotone_psd(self, op32, rng):
        q2 = rng.uniform(-1, 1, op32.grid.n_I)
        q1 = q2 + np.abs(rng.standard_normal(op32.grid.n_I))
        assert resonance_data(op32, q2).d_q == 0
        d1 = assemble_dtn(op32, q1)
        d2 = assemble_dtn(op32, q2)
        w = np.linalg.eigvalsh(d1.matrix - d2.matrix)
        assert w.min() >= -1e-10 * np.abs(w).max()

    def test_resonant_domain_codim(self, op32):
        q = np.full(op32.grid.n_I, resonant_shift(op32)[0])
        dtn = assemble_dtn(op32, q)
        assert dtn.resonance.dim_nq >= 1
        assert 0 < dtn.codim <= dtn.resonance.dim_nq
        # admissible data satisfy the kernel-orthogonality condition
        proj = dtn.resonance.kernel_basis.T @ op32.L_IE @ dtn.domain_basis
        assert np.abs(proj).max() <= 1e-8

    def test_difference_common_domain(self, op32, rng):
        q_res = resonant_shift(op32)
        q_ok = rng.uniform(-0.5, 0.5, op32.grid.n_I)
        d1 = assemble_dtn(op32, q_res)
        d2 = assemble_dtn(op32, q_ok)
        diff, basis = dtn_difference(d1, d2)
        codim = op32.grid.n_E - basis.shape[1]
        assert codim <= d1.resonance.dim_nq + d2.resonance.dim_nq
        assert diff.shape == (basis.shape[1], basis.shape[1])


class TestDtnDerivative:
    def test_zero_direction(self, op32):
        d = dtn_derivative(op32, np.zeros(op32.grid.n_I), np.zeros(op32.grid.n_I))
        assert np.abs(d).max() == 0.0

    def test_psd_for_nonnegative_direction(self, op32, rng):
        q = rng.uniform(-0.5, 0.5, op32.grid.n_I)
        r = np.abs(rng.standard_normal(op32.grid.n_I))
        d = dtn_derivative(op32, q, r)
        w = np.linalg.eigvalsh(d)
        assert w.min() >= -1e-12 * max(np.abs(w).max(), 1e-30)

    def test_rejects_resonant(self, op32):
        mu1 = np.linalg.eigvalsh(op32.L_II)[0]
        q = np.full(op32.grid.n_I, -mu1 / op32.m)
        with pytest.raises(ResonantPotential):
            dtn_derivative(op32, q, np.ones(op32.grid.n_I))

    def test_finite_difference_consistency(self, op32, rng):
        q = rng.uniform(-0.5, 0.5, op32.grid.n_I)
        r = rng.uniform(-1, 1, op32.grid.n_I)
        d = dtn_derivative(op32, q, r)
        base = assemble_dtn(op32, q).matrix
        ts = np.array([1e-1, 1e-2, 1e-3, 1e-4])
        errs = []
        for t in ts:
            pert = assemble_dtn(op32, q + t * r).matrix
            errs.append(np.linalg.norm(pert - base - t * d, 2))
        slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.2)


class TestSolutionOperator:
    def test_columns_match_solves(self, op32, rng):
        q = rng.uniform(-1, 1, op32.grid.n_I)
        s = solution_operator(op32, q)
        for a in (0, op32.grid.n_E // 2, op32.grid.n_E - 1):
            e = np.zeros(op32.grid.n_E)
            e[a] = 1.0
            u = solve_dirichlet(op32, q, e)
            assert np.allclose(s[:, a], u[op32.I], rtol=1e-12, atol=1e-14)


class TestPotential:
    def test_norm_inf(self):
        p = Potential(values=np.array([0.5, -2.0, 1.0]))
        assert p.norm_inf == 2.0

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Potential(values=np.array([1.0, np.nan]))
