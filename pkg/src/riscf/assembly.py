"""Quadratic-form data for the combiner and RIS subproblems.

Both are built from a fixed set of precoders and FP auxiliaries.  With
``x_{b,j} = X_b[:, j] tau_{b,j}`` the stream amplitudes are

    S_kj = w_k^H p_kj,           p_kj = sum_b H_{b,k} x_{b,j}
    S_kj = E_kj + v_kj^T phi,    E_kj = sum_b w_k^H Hbar_{b,k} x_{b,j},
                                 v_kj = sum_b (w_k^H V_k)^T o (G_b x_{b,j})

so the combiner objective ``w^H P w - 2 Re(w^H q)`` and the RIS objective
``phi^H Z phi + 2 Re(kappa^H phi)`` both equal ``-f_Q`` up to a constant.
"""

from dataclasses import dataclass

import numpy as np

from .manifold import UnitModulusQP
from .objective import _tau
from .qcqp import ModulusCappedQP


@dataclass
class CombinerQP:
    """Per-user blocks ``P[k]`` (N_r x N_r) and vectors ``q[k]`` (N_r,)."""

    blocks: np.ndarray  # (K, N_r, N_r)
    q_blocks: np.ndarray  # (K, N_r)

    @property
    def P(self):
        """Stacked block-diagonal matrix (K N_r x K N_r)."""
        K, n, _ = self.blocks.shape
        out = np.zeros((K * n, K * n), dtype=complex)
        for k in range(K):
            out[k * n:(k + 1) * n, k * n:(k + 1) * n] = self.blocks[k]
        return out

    @property
    def q(self):
        return self.q_blocks.reshape(-1)

    def objective(self, w):
        """``w^H P w - 2 Re(w^H q)`` for stacked or (K, N_r) ``w``."""
        w = np.asarray(w).reshape(-1)
        return float(np.real(np.vdot(w, self.P @ w)) - 2 * np.real(np.vdot(w, self.q)))

    def user_qp(self, k):
        """User ``k``'s block as a :class:`UnitModulusQP` (``b = -q_k``)."""
        return UnitModulusQP(self.blocks[k], -self.q_blocks[k])


@dataclass
class RisQP(ModulusCappedQP):
    pass


def _gated_precoders(beams, selection):
    X = beams.precoders()
    B, _, K = X.shape
    return X * _tau(selection, B, K)[:, None, :]


def stream_vectors(channels, beams, selection=None, H=None):
    """``p[k, j] = sum_b H_{b,k} x_{b,j}``, shape (K, K, N_r)."""
    if H is None:
        H = channels.equivalent(beams.phi)
    Xg = _gated_precoders(beams, selection)
    return np.einsum("bkrt,btj->kjr", H, Xg)


def assemble_combiner_qp(channels, beams, aux, selection=None, omega=None):
    """Combiner quadratic form; ``omega`` defaults to equal weights."""
    p = stream_vectors(channels, beams, selection)
    K = p.shape[0]
    omega = np.full(K, 1.0 / K) if omega is None else np.asarray(omega, dtype=float)
    xi2 = np.abs(aux.xi) ** 2
    blocks = np.einsum("k,kjr,kjs->krs", xi2, p, p.conj())
    blocks = (blocks + blocks.conj().transpose(0, 2, 1)) / 2
    diag = p[np.arange(K), np.arange(K)]
    q = (np.sqrt(aux.mu(omega)) * aux.xi.conj())[:, None] * diag
    return CombinerQP(blocks, q)


def ris_vectors(channels, beams, selection=None):
    """``v[k, j]`` (RM,) and ``E[k, j]`` for the current combiners and precoders."""
    Xg = _gated_precoders(beams, selection)
    wV = np.einsum("kr,krm->km", beams.w.conj(), channels.V_stacked)
    GX = np.einsum("bmt,btj->bmj", channels.G_stacked, Xg)
    v = np.einsum("km,bmj->kjm", wV, GX)
    E = np.einsum("kr,bkrt,btj->kj", beams.w.conj(), channels.Hbar, Xg)
    return v, E


def assemble_ris_qp(channels, beams, aux, selection=None, omega=None):
    v, E = ris_vectors(channels, beams, selection)
    K = v.shape[0]
    omega = np.full(K, 1.0 / K) if omega is None else np.asarray(omega, dtype=float)
    xi2 = np.abs(aux.xi) ** 2
    Z = np.einsum("k,kjm,kjn->mn", xi2, v.conj(), v)
    Z = (Z + Z.conj().T) / 2
    diag_v = v[np.arange(K), np.arange(K)]
    kappa = (np.einsum("k,kj,kjm->m", xi2, E, v.conj())
             - np.einsum("k,km->m", np.sqrt(aux.mu(omega)) * aux.xi, diag_v.conj()))
    return RisQP(Z, kappa)
