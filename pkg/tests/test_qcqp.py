import numpy as np
import pytest
from scipy.optimize import minimize

from riscf.qcqp import (ModulusCappedQP, QcqpOptions, kkt_residual, lambda_max, project_circle,
                        project_disc, solve_modulus_capped_qp)

from conftest import crandn, random_psd, unit_phases


def random_qp(rng, n, rank=None):
    return ModulusCappedQP(random_psd(rng, n, rank), crandn(rng, n))


def scipy_oracle(qp, rng, starts=6):
    """Best SLSQP solution over the discs in real coordinates."""
    n = qp.n

    def f(v):
        return qp.objective(v[:n] + 1j * v[n:])

    def jac(v):
        g = 2 * qp.grad(v[:n] + 1j * v[n:])
        return np.concatenate([g.real, g.imag])

    cons = {"type": "ineq", "fun": lambda v: 1 - v[:n] ** 2 - v[n:] ** 2,
            "jac": lambda v: np.hstack([-2 * np.diag(v[:n]), -2 * np.diag(v[n:])])}
    best = np.inf
    for _ in range(starts):
        v0 = rng.uniform(-0.5, 0.5, 2 * n)
        r = minimize(f, v0, jac=jac, constraints=[cons], method="SLSQP",
                     options=dict(ftol=1e-14, maxiter=500))
        if np.all(r.x[:n] ** 2 + r.x[n:] ** 2 <= 1 + 1e-9):
            best = min(best, r.fun)
    return best


class TestProjections:
    def test_disc(self):
        np.testing.assert_allclose(project_disc(np.array([0.5, 2j, -3.0])), [0.5, 1j, -1.0])

    def test_circle(self):
        np.testing.assert_allclose(project_circle(np.array([0.0, 0.5j, -3.0])), [1, 1j, -1])

    def test_lambda_max(self):
        rng = np.random.default_rng(0)
        Z = random_psd(rng, 8)
        exact = np.linalg.eigvalsh(Z)[-1]
        est = lambda_max(Z, iters=200)
        assert est <= exact * (1 + 1e-12) and est > 0.99 * exact
        assert lambda_max(np.zeros((3, 3))) == 0.0


class TestSolver:
    def test_identity_zero_kappa(self):
        rng = np.random.default_rng(1)
        res = solve_modulus_capped_qp(ModulusCappedQP(np.eye(4, dtype=complex), np.zeros(4, complex)),
                                      project_disc(crandn(rng, 4)))
        np.testing.assert_allclose(res.phi, 0, atol=1e-7)

    def test_zero_quadratic(self):
        rng = np.random.default_rng(2)
        kappa = crandn(rng, 5)
        res = solve_modulus_capped_qp(ModulusCappedQP(np.zeros((5, 5), complex), kappa),
                                      np.zeros(5, complex))
        np.testing.assert_allclose(res.phi, -kappa / np.abs(kappa), atol=1e-7)

    @pytest.mark.parametrize("n,seed", [(1, 0), (2, 1), (2, 2), (3, 3), (3, 4)])
    def test_small_oracle(self, n, seed):
        rng = np.random.default_rng(seed)
        qp = random_qp(rng, n, rank=1 if seed % 2 else None)
        res = solve_modulus_capped_qp(qp, np.zeros(n, complex), QcqpOptions(tol=1e-10))
        ref = scipy_oracle(qp, rng)
        assert abs(res.trace[-1] - ref) <= 1e-6 * max(1.0, abs(ref))

    def test_residual_positive_off_optimum(self):
        rng = np.random.default_rng(5)
        qp = random_qp(rng, 6)
        res = solve_modulus_capped_qp(qp, np.zeros(6, complex))
        assert res.converged and res.kkt_residual <= 1e-7
        assert kkt_residual(qp, np.zeros(6, complex)) > 1e-3
        assert kkt_residual(qp, res.phi + 0.1 * project_disc(crandn(rng, 6))) > 1e-4

    @pytest.mark.parametrize("accelerate", [True, False])
    @pytest.mark.parametrize("phase_only", [True, False])
    def test_monotone_feasible(self, accelerate, phase_only):
        rng = np.random.default_rng(6)
        qp = random_qp(rng, 32, rank=4)
        res = solve_modulus_capped_qp(qp, unit_phases(rng, 32),
                                      QcqpOptions(accelerate=accelerate, phase_only=phase_only))
        assert np.all(np.diff(res.trace) <= 0)
        assert np.abs(res.phi).max() <= 1 + 1e-12
        if phase_only:
            np.testing.assert_allclose(np.abs(res.phi), 1, atol=1e-12)

    def test_invalid(self):
        rng = np.random.default_rng(7)
        with pytest.raises(ValueError):
            solve_modulus_capped_qp(ModulusCappedQP(-np.eye(2), np.zeros(2)), np.zeros(2))
        with pytest.raises(ValueError):
            solve_modulus_capped_qp(random_qp(rng, 2), np.array([2.0, 0.0]))
        with pytest.raises(ValueError):
            solve_modulus_capped_qp(random_qp(rng, 2), np.zeros(3))
