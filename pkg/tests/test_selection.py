import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riscf.hbf import build_contexts
from riscf.objective import update_aux
from riscf.scenario import build_scenario, desk_config
from riscf.selection import (BilpOptions, SelectionBiqp, SelectionInfeasible,
                             assemble_selection_biqp, coverage_vector, export_lp,
                             greedy_selection, lp_relaxation_bound, ncr, quotas_from_alpha,
                             random_selection, rla_linearize, select_all_bs, selection_objective,
                             solve_bilp, solve_biqp)

from conftest import random_admm_state, random_beams


def brute_force(U, r, z, K_b):
    """Minimum of tau^T U tau + r^T tau over quota- and coverage-feasible binaries."""
    best, arg = np.inf, None
    for bits in itertools.product([0.0, 1.0], repeat=len(r)):
        tau = np.array(bits)
        if tau.sum() != K_b or np.any(tau < z):
            continue
        val = tau @ U @ tau + r @ tau
        if val < best:
            best, arg = val, tau
    return best, arg


def random_biqp(rng, K, K_b=None, forced=0):
    A = rng.standard_normal((K, K))
    U = A @ A.T
    r = rng.standard_normal(K) * 3
    z = -rng.integers(0, 3, K).astype(float)
    z[rng.choice(K, size=forced, replace=False)] = 1.0
    K_b = K_b or int(rng.integers(max(1, forced), K + 1))
    return SelectionBiqp(U, r, z, K_b)


def desk_selection_setup(seed=0, **cfg):
    scn, ch = build_scenario(desk_config(**cfg), seed=seed)
    rng = np.random.default_rng(seed)
    beams = random_beams(ch, scn.N_RF, scn.P_b, rng)
    aux = update_aux(ch, beams, scn.sigma2, scn.omega)
    ctxs = build_contexts(ch, beams, aux, scn.sigma2, scn.omega, scn.P_b)
    states = [random_admm_state(c, scn.N_RF, scn.P_b, 1.0 / scn.P_b, rng) for c in ctxs]
    return scn, ctxs, states, rng


class TestAssembly:
    @pytest.mark.parametrize("seed", range(5))
    def test_identity_all_binaries(self, seed):
        scn, ctxs, states, _ = desk_selection_setup(seed, K=3, omega=[1 / 3] * 3)
        biqp = assemble_selection_biqp(ctxs[0], states[0], 2, np.ones((2, 3)))
        for bits in itertools.product([0.0, 1.0], repeat=3):
            ref = selection_objective(ctxs[0], states[0], np.array(bits))
            assert biqp.value(bits) == pytest.approx(ref, rel=1e-9, abs=1e-15 * abs(biqp.const))

    def test_zero_precoder_and_xi(self):
        _, ctxs, states, _ = desk_selection_setup()
        ctx, st_ = ctxs[0], states[0]
        ctx.xi = np.zeros_like(ctx.xi)
        st_.F_BB[:] = 0
        biqp = assemble_selection_biqp(ctx, st_, 1, np.ones((2, 2)))
        np.testing.assert_array_equal(biqp.U, 0)
        np.testing.assert_array_equal(biqp.r, 0)

    def test_u_symmetric_psd(self):
        _, ctxs, states, _ = desk_selection_setup(3)
        U = assemble_selection_biqp(ctxs[1], states[1], 1, np.ones((2, 2))).U
        np.testing.assert_array_equal(U, U.T)
        assert np.linalg.eigvalsh(U)[0] >= -1e-8 * max(1, np.abs(U).max())

    def test_coverage_vector(self):
        tau = np.array([[1, 0, 1], [1, 0, 0], [0, 0, 1]])
        np.testing.assert_array_equal(coverage_vector(tau, 0), [0, 1, 0])
        assert coverage_vector(tau, 2)[0] <= 0

    def test_invalid_biqp(self):
        with pytest.raises(ValueError):
            SelectionBiqp(np.array([[0, 1], [2, 0]]), np.zeros(2), np.zeros(2), 1)
        with pytest.raises(ValueError):
            SelectionBiqp(np.zeros((2, 2)), np.zeros(2), np.zeros(2), 3)


class TestLinearization:
    def test_forced_products(self):
        inst = rla_linearize(SelectionBiqp(np.eye(3), np.zeros(3), np.zeros(3) - 1, 2))
        np.testing.assert_array_equal(inst.forced_zeta([1, 1, 0]), [1, 0, 0])

    def test_full_quota(self):
        inst = rla_linearize(SelectionBiqp(np.eye(3), np.ones(3), np.zeros(3), 3))
        res = solve_bilp(inst)
        np.testing.assert_array_equal(res.tau, 1)
        np.testing.assert_array_equal(res.zeta, 1)

    @pytest.mark.parametrize("seed", range(10))
    def test_exact_at_binaries(self, seed):
        rng = np.random.default_rng(seed)
        biqp = random_biqp(rng, 5)
        inst = rla_linearize(biqp)
        for bits in itertools.product([0.0, 1.0], repeat=5):
            tau = np.array(bits)
            if not biqp.feasible(tau):
                continue
            v = np.concatenate([tau, inst.forced_zeta(tau)])
            assert inst.is_feasible(v)
            assert inst.objective(v) == pytest.approx(tau @ biqp.U @ tau + biqp.r @ tau,
                                                      rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_strengthened_same_feasible_set_tighter_bound(self, seed):
        rng = np.random.default_rng(seed)
        biqp = random_biqp(rng, 4, forced=seed % 2)
        std, strong = rla_linearize(biqp, False), rla_linearize(biqp, True)
        for bits in itertools.product([0.0, 1.0], repeat=std.n):
            assert std.is_feasible(bits) == strong.is_feasible(bits)
        assert lp_relaxation_bound(strong) >= lp_relaxation_bound(std) - 1e-9

    def test_every_product_in_three_standard_rows(self):
        inst = rla_linearize(random_biqp(np.random.default_rng(0), 4), strengthen=False)
        counts = (inst.A_ub[:, inst.K:] != 0).sum(axis=0)
        np.testing.assert_array_equal(counts, 3)

    def test_infeasible_quota(self):
        biqp = SelectionBiqp(np.eye(3), np.zeros(3), np.array([1.0, 1.0, 0.0]), 1)
        with pytest.raises(SelectionInfeasible) as err:
            rla_linearize(biqp)
        assert set(err.value.uncovered) == {0, 1}


class TestSolver:
    def test_linear_example(self):
        biqp = SelectionBiqp(np.zeros((4, 4)), np.array([3.0, 1, 2, 4]), np.zeros(4), 2)
        for method in ("bnb", "exhaustive"):
            res = solve_biqp(biqp, opts=BilpOptions(method=method))
            np.testing.assert_array_equal(res.tau, [0, 1, 1, 0])
            assert res.objective == 3.0

    @pytest.mark.parametrize("K", [2, 4, 6, 8])
    @pytest.mark.parametrize("strengthen", [True, False])
    def test_bnb_matches_enumeration(self, K, strengthen):
        rng = np.random.default_rng(K)
        for _ in range(25):
            biqp = random_biqp(rng, K, forced=int(rng.integers(0, 2)))
            res = solve_biqp(biqp, strengthen)
            ref, _ = brute_force(biqp.U, biqp.r, biqp.z, biqp.K_b)
            assert res.objective == pytest.approx(ref, rel=1e-9, abs=1e-9)
            assert biqp.feasible(res.tau)

    def test_exhaustive_matches_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            biqp = random_biqp(rng, 6)
            res = solve_biqp(biqp, opts=BilpOptions(method="exhaustive"))
            assert res.objective == pytest.approx(brute_force(biqp.U, biqp.r, biqp.z, biqp.K_b)[0],
                                                  rel=1e-9, abs=1e-9)

    def test_infeasible_status(self):
        biqp = SelectionBiqp(np.eye(2), np.zeros(2), np.zeros(2), 1)
        inst = rla_linearize(biqp)
        inst.b_ub[:2] = -1.0  # force both users against quota 1
        assert solve_bilp(inst).status == "infeasible"

    def test_unknown_method(self):
        inst = rla_linearize(random_biqp(np.random.default_rng(0), 3))
        inst.c[inst.K:] = 1.0
        with pytest.raises(ValueError):
            solve_bilp(inst, BilpOptions(method="magic"))

    def test_lp_export(self, tmp_path):
        inst = rla_linearize(SelectionBiqp(np.eye(3), np.array([1.0, -2, 0.5]), np.zeros(3), 2))
        text = export_lp(inst, tmp_path / "sel.lp")
        assert (tmp_path / "sel.lp").read_text() == text
        assert text.startswith("Minimize") and text.rstrip().endswith("End")
        assert "quota: + 1 tau_0 + 1 tau_1 + 1 tau_2 = 2" in text
        assert "zeta_1_2" in text.split("Binary")[1]


class TestQuotas:
    @pytest.mark.parametrize("alpha,B,K,total", [(1.0, 6, 4, 24), (0.5, 6, 4, 12),
                                                 (0.75, 2, 2, 3), (0.6, 3, 5, 9)])
    def test_sum_contract(self, alpha, B, K, total):
        q = quotas_from_alpha(alpha, B, K)
        assert q.sum() == total and q.min() >= 1 and q.max() <= K

    def test_infeasible_alpha(self):
        with pytest.raises(SelectionInfeasible):
            quotas_from_alpha(0.25, 2, 2)
        with pytest.raises(ValueError):
            quotas_from_alpha(0.0, 2, 2)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.floats(0.05, 1.0))
    def test_quota_property(self, B, K, alpha):
        try:
            q = quotas_from_alpha(alpha, B, K)
        except SelectionInfeasible:
            assert np.floor(alpha * B * K + 0.5) < max(B, K)
            return
        assert q.sum() == int(np.floor(alpha * B * K + 0.5))

    def test_ncr(self):
        assert ncr(np.ones((6, 4))) == 1.0
        tau = np.zeros((6, 4))
        tau[:, :2] = 1
        assert ncr(tau) == 0.5

    def test_greedy_and_random_cover(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            gains = rng.uniform(size=(3, 4))
            q = quotas_from_alpha(0.5, 3, 4)
            for tau in (greedy_selection(gains, q), random_selection(rng, q, 4)):
                assert np.all(tau.sum(axis=0) >= 1)
                np.testing.assert_array_equal(tau.sum(axis=1), q)


class TestSweep:
    def test_single_bs_full_quota(self):
        _, ctxs, states, _ = desk_selection_setup(B=1)
        out = select_all_bs(ctxs, states, [2], np.ones((1, 2)))
        np.testing.assert_array_equal(out.tau, 1)

    @pytest.mark.parametrize("seed", range(5))
    def test_each_user_covered_once(self, seed):
        _, ctxs, states, _ = desk_selection_setup(seed)
        out = select_all_bs(ctxs, states, [1, 1], np.ones((2, 2)))
        np.testing.assert_array_equal(out.tau.sum(axis=0), 1)
        assert out.covered()

    def test_reverse_order_covers(self):
        _, ctxs, states, _ = desk_selection_setup(1)
        out = select_all_bs(ctxs, states, [1, 1], np.ones((2, 2)), order=[1, 0])
        np.testing.assert_array_equal(out.tau.sum(axis=0), 1)

    def test_uncoverable(self):
        _, ctxs, states, _ = desk_selection_setup(K=3, omega=[1 / 3] * 3)
        with pytest.raises(SelectionInfeasible):
            select_all_bs(ctxs, states, [1, 1], np.ones((2, 3)))
