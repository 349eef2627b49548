"""SINR, weighted sum rate and the fractional-programming surrogate.

All internal objectives use the natural logarithm, which keeps the
closed-form auxiliary update ``lambda_k = gamma_k`` exact.  Reported rates
(``*_bits`` helpers) divide by ``ln 2``.

Notation: ``X_b = F_RF,b F_BB,b`` is the precoder of BS ``b`` and
``tau[b, j]`` gates stream ``j`` at BS ``b`` (all ones for the fully
connected system).  The effective gain tensor is

    T[k, b, j] = w_k^H H_{b,k} X_b[:, j] tau[b, j]

so that ``S[k, j] = sum_b T[k, b, j]`` is the amplitude of stream ``j``
seen by user ``k``.
"""

import copy
from dataclasses import dataclass

import numpy as np

LN2 = np.log(2.0)


@dataclass
class AuxState:
    """FP auxiliaries: ``lam`` (real, >= 0) and ``xi`` (complex), one per user."""

    lam: np.ndarray
    xi: np.ndarray

    def mu(self, omega):
        return np.asarray(omega) * (1.0 + self.lam)

    @classmethod
    def zeros(cls, K):
        return cls(np.zeros(K), np.zeros(K, dtype=complex))


@dataclass
class BeamState:
    """Beamformers of the whole network.

    ``F_RF`` (B, N_t, N_RF) and ``F_BB`` (B, N_RF, K) form the hybrid
    precoders; ``F`` and ``Delta`` (B, N_t, K) are the ADMM proxy and dual.
    ``w`` is (K, N_r) and ``phi`` the stacked RIS coefficients (R M,).
    A fully-digital state transmits ``F`` directly and has no RF/BB split.
    """

    F_RF: np.ndarray
    F_BB: np.ndarray
    F: np.ndarray
    Delta: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    fully_digital: bool = False

    def precoders(self):
        if self.fully_digital:
            return self.F
        return self.F_RF @ self.F_BB

    @property
    def w_stacked(self):
        return self.w.reshape(-1)

    def copy(self):
        return copy.deepcopy(self)

    @property
    def B(self):
        return self.F.shape[0]

    @property
    def K(self):
        return self.F.shape[2]


def _tau(selection, B, K):
    if selection is None:
        return np.ones((B, K))
    tau = getattr(selection, "tau", selection)
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (B, K):
        raise ValueError(f"selection has shape {tau.shape}, expected {(B, K)}")
    return tau


def user_rows(H, w):
    """Rows ``w_k^H H_{b,k}`` for every (b, k), shape (B, K, N_t)."""
    return np.einsum("kr,bkrt->bkt", w.conj(), H)


def effective_gains(channels, beams, selection=None, H=None):
    """Gain tensor ``T[k, b, j]`` (see module docstring)."""
    if H is None:
        H = channels.equivalent(beams.phi)
    X = beams.precoders()
    B, _, K = X.shape
    rows = user_rows(H, beams.w)
    T = np.einsum("bkt,btj->kbj", rows, X)
    return T * _tau(selection, B, K)[None, :, :]


def _check_sigma2(sigma2):
    if not sigma2 > 0:
        raise ValueError(f"noise power must be positive, got {sigma2!r}")


def sinr_from_gains(S, sigma2):
    """All user SINRs from the aggregate amplitude matrix ``S[k, j]``."""
    _check_sigma2(sigma2)
    power = np.abs(S) ** 2
    signal = np.diag(power)
    interference = power.sum(axis=1) - signal
    return signal / (interference + sigma2)


def compute_sinrs(channels, beams, sigma2, selection=None):
    S = effective_gains(channels, beams, selection).sum(axis=1)
    return sinr_from_gains(S, sigma2)


def compute_sinr(k, channels, beams, sigma2, selection=None):
    """SINR of user ``k`` (0-based)."""
    return compute_sinrs(channels, beams, sigma2, selection)[k]


def compute_wsr(omega, sinrs, base=2):
    """``sum_k omega_k log(1 + gamma_k)``; ``base=2`` gives bits/s/Hz, ``base=None`` nats."""
    sinrs = np.asarray(sinrs, dtype=float)
    if np.any(sinrs < 0):
        raise ValueError("SINR values must be nonnegative")
    nats = float(np.sum(np.asarray(omega) * np.log1p(sinrs)))
    return nats if base is None else nats / np.log(base)


def compute_wsr_nats(omega, sinrs):
    return compute_wsr(omega, sinrs, base=None)


def update_aux(channels, beams, sigma2, omega, selection=None):
    """Closed-form optimal auxiliaries: ``lam = gamma`` and the matching ``xi``."""
    S = effective_gains(channels, beams, selection).sum(axis=1)
    return aux_from_gains(S, sigma2, omega)


def aux_from_gains(S, sigma2, omega):
    gamma = sinr_from_gains(S, sigma2)
    mu = np.asarray(omega) * (1.0 + gamma)
    total = (np.abs(S) ** 2).sum(axis=1) + sigma2
    xi = np.sqrt(mu) * np.diag(S) / total
    return AuxState(gamma, xi)


def fq_from_gains(S, aux, sigma2, omega):
    omega = np.asarray(omega)
    mu = aux.mu(omega)
    lin = 2 * np.real(np.sqrt(mu) * aux.xi.conj() * np.diag(S))
    quad = np.abs(aux.xi) ** 2 * ((np.abs(S) ** 2).sum(axis=1) + sigma2)
    return float(np.sum(omega * np.log1p(aux.lam) + lin - omega * aux.lam - quad))


def eval_fq(channels, beams, aux, sigma2, omega, selection=None):
    """Quadratic-transform surrogate ``f_Q`` in nats (to be maximized)."""
    _check_sigma2(sigma2)
    S = effective_gains(channels, beams, selection).sum(axis=1)
    return fq_from_gains(S, aux, sigma2, omega)


def eval_fq_bits(channels, beams, aux, sigma2, omega, selection=None):
    return eval_fq(channels, beams, aux, sigma2, omega, selection) / LN2


def eval_f(channels, beams, aux, sigma2, omega, selection=None):
    """Minimization form ``f = -f_Q`` used by the block solvers."""
    return -eval_fq(channels, beams, aux, sigma2, omega, selection)


def per_user_rates(sinrs):
    """Per-user rates ``log2(1 + gamma_k)`` in bits/s/Hz."""
    return np.log2(1.0 + np.asarray(sinrs))
