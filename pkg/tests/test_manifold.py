import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riscf.manifold import (CcmOptions, DegenerateRetraction, UnitModulusQP, euclidean_grad,
                            project_tangent, retract, riemannian_grad, solve_unit_modulus_qp)

from conftest import crandn, random_psd, unit_phases


def random_qp(rng, n):
    return UnitModulusQP(random_psd(rng, n), crandn(rng, n))


class TestGeometry:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 8))
    def test_tangent_and_idempotent(self, seed, n):
        rng = np.random.default_rng(seed)
        x, v = unit_phases(rng, n), crandn(rng, n)
        p = project_tangent(x, v)
        assert np.abs(np.real(p * x.conj())).max() <= 1e-12 * max(1, np.abs(v).max())
        np.testing.assert_allclose(project_tangent(x, p), p, atol=1e-12)

    def test_retraction_unit_modulus_and_second_order(self):
        rng = np.random.default_rng(0)
        x = unit_phases(rng, 6)
        v = project_tangent(x, crandn(rng, 6))
        errs = []
        for h in (1e-2, 1e-3):
            y = retract(x, v, h)
            np.testing.assert_allclose(np.abs(y), 1, atol=1e-14)
            errs.append(np.linalg.norm(y - (x - h * v)))
        # Distance to the first-order curve shrinks quadratically.
        assert errs[1] / errs[0] < 0.02

    def test_degenerate_retraction(self):
        with pytest.raises(DegenerateRetraction):
            retract(np.array([1.0 + 0j]), np.array([1.0 + 0j]), 1.0)

    def test_finite_difference_gradient(self):
        rng = np.random.default_rng(1)
        qp = random_qp(rng, 5)
        x = unit_phases(rng, 5)
        g = euclidean_grad(qp, x)
        h = 1e-6
        for i in range(5):
            for direction in (1.0, 1j):
                e = np.zeros(5, dtype=complex)
                e[i] = direction
                fd = (qp.objective(x + h * e) - qp.objective(x - h * e)) / (2 * h)
                # d/dt f(x + t e) = 2 Re(grad^H e).
                assert abs(fd - 2 * np.real(np.vdot(g, e))) < 1e-6
        # Riemannian gradient matches the derivative along phase rotations.
        rg = riemannian_grad(qp, x)
        for i in range(5):
            def f(t):
                y = x.copy()
                y[i] *= np.exp(1j * t)
                return qp.objective(y)
            fd = (f(h) - f(-h)) / (2 * h)
            assert abs(fd - 2 * np.real(np.conj(rg[i]) * 1j * x[i])) < 1e-6


class TestSolver:
    def test_identity_keeps_start(self):
        rng = np.random.default_rng(2)
        x0 = unit_phases(rng, 4)
        res = solve_unit_modulus_qp(UnitModulusQP(np.eye(4, dtype=complex), np.zeros(4, complex)),
                                    x0)
        np.testing.assert_allclose(res.x, x0, atol=1e-12)
        assert res.converged

    def test_zero_quadratic_closed_form(self):
        rng = np.random.default_rng(3)
        b = crandn(rng, 6)
        res = solve_unit_modulus_qp(UnitModulusQP(np.zeros((6, 6), complex), b),
                                    unit_phases(rng, 6), CcmOptions(max_iters=2000, grad_tol=1e-10))
        np.testing.assert_allclose(res.x, -b / np.abs(b), atol=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_two_dim_grid_oracle(self, seed):
        rng = np.random.default_rng(seed)
        qp = random_qp(rng, 2)
        th = np.linspace(0, 2 * np.pi, 720, endpoint=False)
        T1, T2 = np.meshgrid(th, th)
        X = np.stack([np.exp(1j * T1), np.exp(1j * T2)], axis=-1)
        vals = (np.real(np.einsum("...i,ij,...j->...", X.conj(), qp.A, X))
                + 2 * np.real(X @ qp.b.conj()))
        grid_best = vals.min()
        best = min(solve_unit_modulus_qp(qp, unit_phases(rng, 2),
                                         CcmOptions(max_iters=2000, grad_tol=1e-10)).trace[-1]
                   for _ in range(8))
        # The grid can only be worse than the true optimum.
        assert best <= grid_best + 1e-12
        assert grid_best - best <= 1e-4 * max(1.0, abs(best))

    @pytest.mark.parametrize("conjugate", [False, True])
    def test_monotone_and_feasible(self, conjugate):
        rng = np.random.default_rng(5)
        qp = random_qp(rng, 16)
        res = solve_unit_modulus_qp(qp, unit_phases(rng, 16), CcmOptions(conjugate=conjugate))
        assert np.all(np.diff(res.trace) <= 0)
        np.testing.assert_allclose(np.abs(res.x), 1, atol=1e-12)
        assert res.grad_norms[-1] < res.grad_norms[0]

    def test_invalid_inputs(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError):
            solve_unit_modulus_qp(UnitModulusQP(crandn(rng, 3, 3), np.zeros(3)), np.ones(3))
        with pytest.raises(ValueError):
            solve_unit_modulus_qp(UnitModulusQP(-np.eye(3), np.zeros(3)), np.ones(3))
        with pytest.raises(ValueError):
            solve_unit_modulus_qp(random_qp(rng, 3), np.full(3, 0.5))
        with pytest.raises(ValueError):
            CcmOptions(shrink=1.5)


def test_armijo_condition_every_step():
    rng = np.random.default_rng(7)
    qp = random_qp(rng, 12)
    opts = CcmOptions()
    res = solve_unit_modulus_qp(qp, unit_phases(rng, 12), opts)
    for i, step in enumerate(res.steps):
        assert res.trace[i + 1] <= res.trace[i] - opts.armijo_c * step * res.grad_norms[i] ** 2


def test_stationary_when_converged():
    rng = np.random.default_rng(8)
    qp = random_qp(rng, 8)
    opts = CcmOptions(max_iters=5000)
    res = solve_unit_modulus_qp(qp, unit_phases(rng, 8), opts)
    assert res.converged
    scale = np.abs(qp.A).sum(axis=1).max() + np.abs(qp.b).max()
    assert np.linalg.norm(riemannian_grad(qp, res.x)) <= opts.grad_tol * max(1, scale)


def test_multistart_never_worse():
    rng = np.random.default_rng(9)
    for _ in range(20):
        qp = random_qp(rng, 3)
        x0 = unit_phases(rng, 3)
        single = solve_unit_modulus_qp(qp, x0)
        multi = solve_unit_modulus_qp(qp, x0, CcmOptions(multistart=True))
        assert multi.trace[-1] <= single.trace[-1]
        np.testing.assert_allclose(np.abs(multi.x), 1, atol=1e-12)
