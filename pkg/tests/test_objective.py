import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riscf.objective import (AuxState, BeamState, compute_sinr, compute_sinrs, compute_wsr,
                             compute_wsr_nats, eval_f, eval_fq, eval_fq_bits, update_aux)
from riscf.scenario import ChannelSet, build_scenario, desk_config

from conftest import crandn, random_beams


def sinr_loop(ch, beams, sigma2, tau=None):
    """Term-by-term SINR oracle."""
    B, K = ch.dims["B"], ch.dims["K"]
    tau = np.ones((B, K)) if tau is None else tau
    X = beams.precoders()
    out = []
    for k in range(K):
        amps = []
        for j in range(K):
            s = 0j
            for b in range(B):
                Hbk = ch.Hbar[b, k] + ch.V_stacked[k] @ np.diag(beams.phi) @ ch.G_stacked[b]
                s += beams.w[k].conj() @ Hbk @ X[b][:, j] * tau[b, j]
            amps.append(s)
        amps = np.abs(np.array(amps)) ** 2
        out.append(amps[k] / (amps.sum() - amps[k] + sigma2))
    return np.array(out)


def scalar_channel(g):
    """B=1, K=1, N_t=N_r=1, one-element RIS with zero links: effective gain g."""
    return ChannelSet(np.full((1, 1, 1, 1), g), np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))


def scalar_beams(x=1.0):
    one = np.ones((1, 1, 1), dtype=complex) * x
    return BeamState(np.ones((1, 1, 1), dtype=complex), one.copy(), one.copy(),
                     np.zeros_like(one), np.ones((1, 1), dtype=complex), np.ones(1, dtype=complex))


class TestSinr:
    def test_zero_beams(self, desk):
        scn, ch = desk
        beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(0))
        beams.F_BB[:] = 0
        np.testing.assert_array_equal(compute_sinrs(ch, beams, scn.sigma2), 0.0)

    def test_single_user(self):
        g = 0.3 - 0.4j
        assert abs(compute_sinr(0, scalar_channel(g), scalar_beams(), 0.1) - 0.25 / 0.1) < 1e-14

    def test_loop_oracle(self):
        for seed in range(5):
            scn, ch = build_scenario(desk_config(), seed=seed)
            beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(seed))
            np.testing.assert_allclose(compute_sinrs(ch, beams, scn.sigma2),
                                       sinr_loop(ch, beams, scn.sigma2), rtol=1e-10)

    def test_gated_loop_oracle(self, desk):
        scn, ch = desk
        beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(1))
        tau = np.array([[1.0, 0.0], [1.0, 1.0]])
        np.testing.assert_allclose(compute_sinrs(ch, beams, scn.sigma2, tau),
                                   sinr_loop(ch, beams, scn.sigma2, tau), rtol=1e-10)

    def test_all_ones_selection_exact(self, desk):
        scn, ch = desk
        beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(2))
        np.testing.assert_array_equal(compute_sinrs(ch, beams, scn.sigma2, np.ones((2, 2))),
                                      compute_sinrs(ch, beams, scn.sigma2))

    def test_scaling_invariance(self, desk):
        scn, ch = desk
        beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(3))
        c = 7.5
        scaled = ChannelSet(ch.Hbar * c, ch.G * c, ch.V)
        # The cascade scales by c as well because only G is scaled.
        ref = compute_sinrs(ch, beams, scn.sigma2)
        np.testing.assert_allclose(compute_sinrs(scaled, beams, scn.sigma2 * c ** 2), ref,
                                   rtol=1e-10)

    def test_bad_noise(self, desk):
        scn, ch = desk
        beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(0))
        with pytest.raises(ValueError):
            compute_sinrs(ch, beams, 0.0)


class TestWsr:
    def test_zero(self):
        assert compute_wsr([0.5, 0.5], [0.0, 0.0]) == 0.0

    def test_known_value(self):
        assert compute_wsr([0.5, 0.5], [1.0, 3.0]) == pytest.approx(1.5, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1e6), min_size=1, max_size=8))
    def test_loop_oracle(self, gammas):
        w = np.full(len(gammas), 1 / len(gammas))
        ref = sum(wk * np.log2(1 + g) for wk, g in zip(w, gammas))
        assert compute_wsr(w, gammas) == pytest.approx(ref, rel=1e-12, abs=1e-15)
        assert compute_wsr_nats(w, gammas) == pytest.approx(ref * np.log(2), rel=1e-12, abs=1e-15)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            compute_wsr([1.0], [-0.1])


class TestSurrogate:
    def test_zero_everything(self, desk):
        scn, ch = desk
        beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(0))
        beams.F_BB[:] = 0
        assert eval_fq(ch, beams, AuxState.zeros(2), scn.sigma2, scn.omega) == 0.0

    def test_zero_beams_aux(self, desk):
        scn, ch = desk
        beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(0))
        beams.F_BB[:] = 0
        aux = update_aux(ch, beams, scn.sigma2, scn.omega)
        np.testing.assert_array_equal(aux.lam, 0)
        np.testing.assert_array_equal(aux.xi, 0)

    def test_scalar_aux(self):
        g, s2, w = 0.3 - 0.4j, 0.1, 1.0
        aux = update_aux(scalar_channel(g), scalar_beams(), s2, [w])
        lam = abs(g) ** 2 / s2
        assert aux.lam[0] == pytest.approx(lam, rel=1e-14)
        xi = np.sqrt(w * (1 + lam)) * g / (abs(g) ** 2 + s2)
        assert abs(aux.xi[0] - xi) < 1e-14

    def test_tightness(self):
        for seed in range(20):
            scn, ch = build_scenario(desk_config(), seed=seed)
            beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(seed))
            aux = update_aux(ch, beams, scn.sigma2, scn.omega)
            wsr = compute_wsr_nats(scn.omega, compute_sinrs(ch, beams, scn.sigma2))
            assert eval_fq(ch, beams, aux, scn.sigma2, scn.omega) == pytest.approx(wsr, rel=1e-9)
            assert eval_fq_bits(ch, beams, aux, scn.sigma2, scn.omega) == pytest.approx(
                wsr / np.log(2), rel=1e-9)
            assert eval_f(ch, beams, aux, scn.sigma2, scn.omega) == pytest.approx(-wsr, rel=1e-9)

    def test_xi_perturbation_decreases(self, desk):
        scn, ch = desk
        rng = np.random.default_rng(4)
        beams = random_beams(ch, scn.N_RF, scn.P_b, rng)
        aux = update_aux(ch, beams, scn.sigma2, scn.omega)
        best = eval_fq(ch, beams, aux, scn.sigma2, scn.omega)
        for _ in range(50):
            xi = aux.xi + 0.05 * np.abs(aux.xi).max() * crandn(rng, 2)
            val = eval_fq(ch, beams, AuxState(aux.lam, xi), scn.sigma2, scn.omega)
            assert val < best

    def test_lambda_is_maximizer(self, desk):
        scn, ch = desk
        rng = np.random.default_rng(5)
        beams = random_beams(ch, scn.N_RF, scn.P_b, rng)
        aux = update_aux(ch, beams, scn.sigma2, scn.omega)
        best = eval_fq(ch, beams, aux, scn.sigma2, scn.omega)
        for _ in range(50):
            lam = np.maximum(aux.lam * (1 + 0.3 * rng.standard_normal(2)), 0)
            # With lambda changed, xi is re-optimized for that lambda.
            xi = aux.xi * np.sqrt((1 + lam) / (1 + aux.lam))
            assert eval_fq(ch, beams, AuxState(lam, xi), scn.sigma2, scn.omega) <= best + 1e-12
