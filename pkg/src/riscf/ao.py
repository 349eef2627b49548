"""Alternating optimization for the fully and partially connected systems.

One outer iteration updates, in order: the FP auxiliaries (closed form),
every BS precoder (ADMM hybrid beamforming, or an exact fully-digital
solve), the user combiners (manifold descent) and the RIS coefficients
(modulus-capped QP).  With the auxiliaries fixed each block can only raise
``f_Q``: a candidate block is kept only when it does not lower ``f_Q``,
which makes the surrogate trace non-decreasing.

The partially connected run shares this code path; with ``alpha = 1`` the
gating vector is all ones and the results are bitwise equal to the fully
connected run.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import hbf
from .assembly import assemble_combiner_qp, assemble_ris_qp
from .manifold import CcmOptions, solve_unit_modulus_qp
from .objective import (BeamState, compute_sinrs, compute_wsr, eval_fq, per_user_rates,
                        update_aux)
from .qcqp import QcqpOptions, solve_modulus_capped_qp
from .selection import (SelectionInfeasible, SelectionState, assemble_selection_biqp,
                        greedy_selection, ncr, quotas_from_alpha, random_selection,
                        select_all_bs, solve_biqp)

log = logging.getLogger(__name__)

SELECTION_STARTS = ("multistart", "cf", "biqp", "greedy")
BASELINES = ("none", "fd_bf", "random_ris", "quantized_ris", "no_ris", "random_selection")


@dataclass
class AoOptions:
    I_max: int = 50
    t_max: int = 20
    rho: float = 1.0  # penalty in units of 1 / P_b
    wsr_tol: float = 1e-4
    patience: int = 3
    early_stop: bool = True
    schedule: str = "jacobi"  # or "gauss_seidel"
    mode: str = "CF"  # or "PCF"
    alpha: float = 1.0
    baseline: str = "none"
    ris_bits: Optional[int] = None
    init_seed: int = 0
    accept_rtol: float = 1e-12
    proxy_mode: str = "kkt"
    balance: bool = False
    strengthen: bool = True
    selection_init: str = "multistart"  # or "cf", "biqp", "greedy"
    admm_ccm: CcmOptions = field(default_factory=lambda: CcmOptions(max_iters=50, validate=False))
    combiner_ccm: CcmOptions = field(default_factory=lambda: CcmOptions(max_iters=100, validate=False))
    qcqp: QcqpOptions = field(default_factory=lambda: QcqpOptions(validate=False))

    def __post_init__(self):
        if self.I_max < 1:
            raise ValueError("I_max must be at least 1")
        if self.mode not in ("CF", "PCF"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha!r}")
        if self.schedule not in ("jacobi", "gauss_seidel"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.selection_init not in SELECTION_STARTS:
            raise ValueError(f"unknown selection_init {self.selection_init!r}")
        if self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.baseline == "quantized_ris" and not (self.ris_bits and self.ris_bits >= 1):
            raise ValueError("quantized_ris needs ris_bits >= 1")


@dataclass
class RunMetrics:
    wsr_trace: list = field(default_factory=list)  # bits/s/Hz after each outer iteration
    fq_trace: list = field(default_factory=list)  # nats, after the block updates
    per_user_rates: np.ndarray = None
    admm_residuals: list = field(default_factory=list)  # per iteration, one list per BS
    ncr: float = 1.0
    wall_time: float = 0.0
    iterations: int = 0
    converged: bool = False
    accepted: list = field(default_factory=list)  # per iteration: (precoder, combiner, ris) flags

    @property
    def wsr(self):
        return self.wsr_trace[-1] if self.wsr_trace else float("nan")


def quantize_ris(phi, bits):
    """Nearest point of ``{exp(2j pi m / 2^bits)}`` for every entry."""
    if bits < 1:
        raise ValueError("bits must be at least 1")
    levels = 2 ** int(bits)
    step = 2 * np.pi / levels
    m = np.round(np.angle(phi) / step) % levels
    return np.exp(1j * step * m)


def discrete_coordinate_descent(qp, phi, bits, max_sweeps=50):
    """Improve a quantized RIS vector one entry at a time.

    With the others fixed, entry ``m`` sees ``2 Re(conj(phi_m) c_m)`` with
    ``c_m = sum_{n != m} Z_mn phi_n + kappa_m``; the best unit-modulus phase
    is ``angle(-c_m)`` and the best grid point is its nearest level.
    """
    phi = phi.copy()
    for _ in range(max_sweeps):
        changed = False
        for m in range(phi.shape[0]):
            c = qp.Z[m] @ phi - qp.Z[m, m] * phi[m] + qp.kappa[m]
            if c == 0:
                continue
            cand = quantize_ris(np.array([-c]), bits)[0]
            if np.real(np.conj(cand) * c) < np.real(np.conj(phi[m]) * c) - 1e-15 * abs(c):
                phi[m] = cand
                changed = True
        if not changed:
            break
    return phi


# -- initialization ---------------------------------------------------------------

def _initial_beams(channels, scn, seed, fully_digital):
    d = channels.dims
    B, K, N_t = d["B"], d["K"], d["N_t"]
    # Separate streams so that changing M leaves the analog start unchanged.
    phi_rng = np.random.default_rng([scn.seed, seed, 0])
    rf_rng = np.random.default_rng([scn.seed, seed, 1])
    phi = np.exp(1j * phi_rng.uniform(0, 2 * np.pi, d["R"] * d["M"]))
    F_RF = np.stack([hbf.random_analog(rf_rng, N_t, scn.N_RF) for _ in range(B)])
    H = channels.equivalent(phi)
    w = np.empty((K, d["N_r"]), dtype=complex)
    for k in range(K):
        stacked = np.concatenate(list(H[:, k]), axis=1)
        u = np.linalg.svd(stacked)[0][:, 0]
        w[k] = np.exp(1j * np.angle(u))
    rows = np.einsum("kr,bkrt->bkt", w.conj(), H)
    F_BB = np.stack([hbf.matched_digital(F_RF[b], rows[b], scn.P_b) for b in range(B)])
    if fully_digital:
        X = rows.conj().transpose(0, 2, 1)
        norms = np.linalg.norm(X, axis=(1, 2))
        X = X * (np.sqrt(scn.P_b) / np.where(norms > 0, norms, 1.0))[:, None, None]
    else:
        X = F_RF @ F_BB
    return BeamState(F_RF, F_BB, X.copy(), np.zeros_like(X), w, phi, fully_digital)


def _link_gains(channels, beams):
    H = channels.equivalent(beams.phi)
    return (np.abs(H) ** 2).sum(axis=(2, 3))


# -- the loop ---------------------------------------------------------------------

class _Run:
    def __init__(self, channels, scn, opts, selection_kind=None, quotas=None, tau=None,
                 fully_digital=False, ris_mode="ideal"):
        self.ch = channels
        self.scn = scn
        self.opts = opts
        self.sigma2 = scn.sigma2
        self.omega = np.asarray(scn.omega, dtype=float)
        self.selection_kind = selection_kind  # None, "rla" or "fixed"
        self.quotas = quotas
        self.tau = tau
        self.fully_digital = fully_digital
        self.ris_mode = ris_mode
        self.rho = opts.rho / scn.P_b
        self.admm_opts = hbf.AdmmOptions(rho=self.rho, t_max=opts.t_max, proxy_mode=opts.proxy_mode,
                                         balance=opts.balance, ccm=opts.admm_ccm)

    def fq(self, beams, aux, tau=None):
        return eval_fq(self.ch, beams, aux, self.sigma2, self.omega,
                       self.tau if tau is None else tau)

    def _accept(self, new, old):
        return new >= old - self.opts.accept_rtol * max(1.0, abs(old))

    # precoders ------------------------------------------------------------
    def _candidate(self, ctx, beams, b, tau_snapshot):
        if self.fully_digital:
            X = hbf.fd_precoder(ctx)
            return dict(F=X, tau=ctx.tau.copy())
        init = hbf.AdmmState(beams.F_RF[b], beams.F_BB[b], beams.F[b], beams.Delta[b],
                             self.rho, ctx.tau.copy())
        selector = None
        if self.selection_kind == "rla":
            quota = int(self.quotas[b])

            def selector(c, s):
                biqp = assemble_selection_biqp(c, s, quota, tau_snapshot)
                return solve_biqp(biqp, self.opts.strengthen).tau

        st = hbf.run_admm(ctx, init, self.admm_opts, selector)
        F_BB = hbf.enforce_power(st.F_RF, st.F_BB, st.tau, ctx.P)
        return dict(F_RF=st.F_RF, F_BB=F_BB, F=st.F, Delta=st.Delta, tau=st.tau,
                    residuals=st.residuals)

    def _apply(self, beams, tau, b, cand):
        out = beams.copy()
        tau = tau.copy()
        if self.fully_digital:
            out.F[b] = cand["F"]
        else:
            out.F_RF[b], out.F_BB[b] = cand["F_RF"], cand["F_BB"]
            out.F[b], out.Delta[b] = cand["F"], cand["Delta"]
        tau[b] = cand["tau"]
        return out, tau

    def _tau_full(self):
        d = self.ch.dims
        return np.ones((d["B"], d["K"])) if self.tau is None else self.tau

    def update_precoders(self, beams, aux, metrics):
        B = beams.B
        tau = self._tau_full()
        current = self.fq(beams, aux, tau)
        residuals = []
        accepted = False
        if self.opts.schedule == "jacobi":
            ctxs = hbf.build_contexts(self.ch, beams, aux, self.sigma2, self.omega,
                                      self.scn.P_b, tau)
            cands = [self._candidate(ctxs[b], beams, b, tau) for b in range(B)]
            residuals = [c.get("residuals", []) for c in cands]
            joint, joint_tau = beams, tau
            for b in range(B):
                joint, joint_tau = self._apply(joint, joint_tau, b, cands[b])
            value = self.fq(joint, aux, joint_tau)
            if _covered(joint_tau) and self._accept(value, current):
                beams, tau, accepted = joint, joint_tau, True
            else:
                for b in range(B):
                    trial, trial_tau = self._apply(beams, tau, b, cands[b])
                    value = self.fq(trial, aux, trial_tau)
                    if _covered(trial_tau) and self._accept(value, current):
                        beams, tau, current, accepted = trial, trial_tau, value, True
        else:
            for b in range(B):
                ctx = hbf.build_contexts(self.ch, beams, aux, self.sigma2, self.omega,
                                         self.scn.P_b, tau)[b]
                cand = self._candidate(ctx, beams, b, tau)
                residuals.append(cand.get("residuals", []))
                trial, trial_tau = self._apply(beams, tau, b, cand)
                value = self.fq(trial, aux, trial_tau)
                if _covered(trial_tau) and self._accept(value, current):
                    beams, tau, current, accepted = trial, trial_tau, value, True
        if self.tau is not None:
            self.tau = tau
        metrics.admm_residuals.append(residuals)
        return beams, accepted

    # combiners and RIS -------------------------------------------------------
    def update_combiners(self, beams, aux):
        cqp = assemble_combiner_qp(self.ch, beams, aux, self.tau, self.omega)
        w = beams.w.copy()
        for k in range(w.shape[0]):
            w[k] = solve_unit_modulus_qp(cqp.user_qp(k), w[k], self.opts.combiner_ccm).x
        trial = replace(beams.copy(), w=w)
        if self._accept(self.fq(trial, aux), self.fq(beams, aux)):
            return trial, True
        return beams, False

    def update_ris(self, beams, aux):
        if self.ris_mode == "fixed":
            return beams, False
        rqp = assemble_ris_qp(self.ch, beams, aux, self.tau, self.omega)
        if self.ris_mode == "ideal":
            phi = solve_modulus_capped_qp(rqp, beams.phi, self.opts.qcqp).phi
        else:
            bits = self.ris_mode
            opts = replace(self.opts.qcqp, phase_only=True)
            phi = quantize_ris(solve_modulus_capped_qp(rqp, beams.phi, opts).phi, bits)
            if rqp.objective(phi) > rqp.objective(beams.phi):
                phi = beams.phi
            phi = discrete_coordinate_descent(rqp, phi, bits)
        trial = replace(beams.copy(), phi=phi)
        if self._accept(self.fq(trial, aux), self.fq(beams, aux)):
            return trial, True
        return beams, False

    # selection start ----------------------------------------------------------
    def _sweep_from(self, beams):
        """One BIQP sweep at a fully connected state with zero duals."""
        d = self.ch.dims
        ones = np.ones((d["B"], d["K"]))
        aux = update_aux(self.ch, beams, self.sigma2, self.omega, ones)
        ctxs = hbf.build_contexts(self.ch, beams, aux, self.sigma2, self.omega,
                                  self.scn.P_b, ones)
        states = [hbf.AdmmState(beams.F_RF[b], beams.F_BB[b], beams.F[b],
                                np.zeros_like(beams.Delta[b]), self.rho, ones[b].copy())
                  for b in range(d["B"])]
        return select_all_bs(ctxs, states, self.quotas, ones, strengthen=self.opts.strengthen).tau

    def _initial_selection(self, beams):
        # The in-loop selection rarely leaves its start because the consensus
        # penalty charges every switch, so the start matters.
        d = self.ch.dims
        if np.all(np.asarray(self.quotas) >= d["K"]):
            return np.ones((d["B"], d["K"]))
        greedy = greedy_selection(_link_gains(self.ch, beams), self.quotas)
        if self.opts.selection_init == "greedy":
            return greedy
        start = beams
        if self.opts.selection_init == "cf":
            start = _Run(self.ch, self.scn, self.opts, fully_digital=self.fully_digital,
                         ris_mode=self.ris_mode).run()[0]
        try:
            return self._sweep_from(start)
        except SelectionInfeasible:
            # A sweep can strand a user when early BSs spend their quota elsewhere.
            return greedy

    # driver ------------------------------------------------------------------
    def run(self):
        start = time.perf_counter()
        beams = _initial_beams(self.ch, self.scn, self.opts.init_seed, self.fully_digital)
        if isinstance(self.ris_mode, int):
            beams.phi = quantize_ris(beams.phi, self.ris_mode)
        if self.selection_kind == "rla" and self.tau is None:
            self.tau = self._initial_selection(beams)
        elif self.selection_kind == "fixed" and self.tau is None:
            sel_rng = np.random.default_rng([self.scn.seed, self.opts.init_seed, 2])
            self.tau = random_selection(sel_rng, self.quotas, self.ch.dims["K"])

        metrics = RunMetrics()
        calm = 0
        aux = None
        for it in range(self.opts.I_max):
            aux = update_aux(self.ch, beams, self.sigma2, self.omega, self.tau)
            beams, a1 = self.update_precoders(beams, aux, metrics)
            beams, a2 = self.update_combiners(beams, aux)
            beams, a3 = self.update_ris(beams, aux)
            metrics.accepted.append((a1, a2, a3))
            metrics.fq_trace.append(self.fq(beams, aux))
            sinrs = compute_sinrs(self.ch, beams, self.sigma2, self.tau)
            metrics.wsr_trace.append(compute_wsr(self.omega, sinrs))
            metrics.iterations = it + 1
            if it > 0 and abs(metrics.wsr_trace[-1] - metrics.wsr_trace[-2]) < self.opts.wsr_tol:
                calm += 1
            else:
                calm = 0
            if calm >= self.opts.patience:
                metrics.converged = True
                if self.opts.early_stop:
                    break
        sinrs = compute_sinrs(self.ch, beams, self.sigma2, self.tau)
        metrics.per_user_rates = per_user_rates(sinrs)
        d = self.ch.dims
        selection = SelectionState(self._tau_full().copy(),
                                   self._tau_full().sum(axis=1).astype(int))
        metrics.ncr = ncr(selection, d["B"], d["K"])
        metrics.wall_time = time.perf_counter() - start
        aux = update_aux(self.ch, beams, self.sigma2, self.omega, self.tau)
        return beams, selection, aux, metrics


def _covered(tau):
    return bool(np.all(tau.sum(axis=0) >= 1))


def run_cbf(channels, scenario, opts=None):
    """Cooperative beamforming with every BS serving every user."""
    opts = opts or AoOptions()
    beams, _, aux, metrics = _Run(channels, scenario, opts).run()
    return beams, aux, metrics


def run_pcf(channels, scenario, alpha, opts=None):
    """Partially connected beamforming with RLA-based BS selection."""
    opts = opts or AoOptions(mode="PCF", alpha=alpha)
    d = channels.dims
    quotas = quotas_from_alpha(alpha, d["B"], d["K"])
    if opts.selection_init == "multistart":
        # The loop keeps close to its starting selection, so try two starts.
        start = time.perf_counter()
        runs = [_Run(channels, scenario, replace(opts, selection_init=s), selection_kind="rla",
                     quotas=quotas).run() for s in ("greedy", "cf")]
        beams, selection, aux, metrics = max(runs, key=lambda r: r[3].wsr)
        metrics.wall_time = time.perf_counter() - start
    else:
        run = _Run(channels, scenario, opts, selection_kind="rla", quotas=quotas)
        beams, selection, aux, metrics = run.run()
    selection.quotas = quotas
    return beams, selection, aux, metrics


def run_baseline(channels, scenario, kind, opts=None, bits=None, alpha=None):
    """Reference schemes; returns :class:`RunMetrics`.

    ``kind`` is one of ``fd_bf``, ``random_ris``, ``quantized_ris`` (with
    ``bits``), ``no_ris`` or ``random_selection`` (with ``alpha``).
    """
    opts = opts or AoOptions()
    if kind == "fd_bf":
        run = _Run(channels, scenario, opts, fully_digital=True)
    elif kind == "random_ris":
        run = _Run(channels, scenario, opts, ris_mode="fixed")
    elif kind == "quantized_ris":
        bits = bits if bits is not None else opts.ris_bits
        if not bits or bits < 1:
            raise ValueError("quantized_ris needs bits >= 1")
        run = _Run(channels, scenario, opts, ris_mode=int(bits))
    elif kind == "no_ris":
        return run_cbf(channels.with_ris_links_zeroed(), scenario, opts)[2]
    elif kind == "random_selection":
        alpha = opts.alpha if alpha is None else alpha
        d = channels.dims
        quotas = quotas_from_alpha(alpha, d["B"], d["K"])
        run = _Run(channels, scenario, opts, selection_kind="fixed", quotas=quotas)
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    return run.run()[3]
