"""Per-BS hybrid beamforming by ADMM.

For one base station ``b`` with every other quantity frozen, the part of
``-f_Q`` that depends on the precoder ``X = F_RF F_BB`` is

    f_b(X) = sum_k |xi_k|^2 sum_j |a_k x_j tau_j + C_kj|^2
             - 2 Re sum_k sqrt(mu_k) conj(xi_k) a_k x_k tau_k  (+ const)

with rows ``a_k = w_k^H H_{b,k}`` and cross-BS amplitudes
``C_kj = sum_{p != b} a_{p,k} X_p[:, j] tau_{p,j}``.  ADMM splits off a
power-constrained proxy ``F`` with scaled penalty ``rho`` and dual
``Delta``; the augmented Lagrangian is

    L(F, F_RF, F_BB, Delta) = f_b(X Lam) + Re tr(Delta^H (F - X Lam))
                              + rho/2 ||F - X Lam||_F^2

where ``Lam = diag(tau)`` gates streams in the partially connected system
and is the identity otherwise.  Vectors are column-major (``order="F"``).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .manifold import CcmOptions, UnitModulusQP, solve_unit_modulus_qp
from .objective import _tau, effective_gains, user_rows

log = logging.getLogger(__name__)


@dataclass
class BsContext:
    """Frozen data seen by one BS during its ADMM run."""

    rows: np.ndarray  # (K, N_t): a_k = w_k^H H_{b,k}
    C: np.ndarray  # (K, K): cross-BS amplitudes
    lam: np.ndarray
    xi: np.ndarray
    omega: np.ndarray
    sigma2: float
    P: float
    tau: np.ndarray  # (K,) own gating
    b: int = 0

    @property
    def K(self):
        return self.rows.shape[0]

    @property
    def N_t(self):
        return self.rows.shape[1]

    @property
    def mu(self):
        return self.omega * (1.0 + self.lam)

    def quad(self):
        """``Q = sum_k |xi_k|^2 a_k^H a_k``."""
        xi2 = np.abs(self.xi) ** 2
        return (self.rows.conj().T * xi2) @ self.rows

    def lin(self):
        """Linear coefficient ``Y0`` of ``f_b``: ``f_b = sum_j x_j^H Q x_j + 2 Re tr(Y0^H X) + c``."""
        xi2 = np.abs(self.xi) ** 2
        AH = self.rows.conj().T
        return AH @ (xi2[:, None] * self.C) - AH * (np.sqrt(self.mu) * self.xi)


@dataclass
class AdmmState:
    F_RF: np.ndarray
    F_BB: np.ndarray
    F: np.ndarray
    Delta: np.ndarray
    rho: float
    tau: np.ndarray
    t: int = 0
    residuals: list = field(default_factory=list)
    objectives: list = field(default_factory=list)

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"penalty must be positive, got {self.rho!r}")

    @property
    def X(self):
        return self.F_RF @ self.F_BB

    @property
    def X_gated(self):
        return self.F_RF @ self.F_BB * self.tau[None, :]

    def copy(self):
        return AdmmState(self.F_RF.copy(), self.F_BB.copy(), self.F.copy(), self.Delta.copy(),
                         self.rho, self.tau.copy(), self.t, list(self.residuals), list(self.objectives))


@dataclass
class AdmmOptions:
    rho: float = 1.0
    t_max: int = 20
    proxy_mode: str = "kkt"  # or "literal": always normalize to the power budget
    balance: bool = False
    balance_ratio: float = 10.0
    balance_factor: float = 2.0
    ccm: CcmOptions = field(default_factory=lambda: CcmOptions(max_iters=50, validate=False))
    check_equivalence: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.t_max < 0:
            raise ValueError("t_max must be nonnegative")
        if self.proxy_mode not in ("kkt", "literal"):
            raise ValueError(f"unknown proxy mode {self.proxy_mode!r}")


def build_contexts(channels, beams, aux, sigma2, omega, P, selection=None):
    """One :class:`BsContext` per BS from a snapshot of the network state."""
    H = channels.equivalent(beams.phi)
    T = effective_gains(channels, beams, selection, H=H)
    rows = user_rows(H, beams.w)
    B = rows.shape[0]
    tau = _tau(selection, B, T.shape[0])
    P = np.broadcast_to(np.asarray(P, dtype=float), (B,))
    out = []
    for b in range(B):
        others = [p for p in range(B) if p != b]
        C = T[:, others, :].sum(axis=1)
        out.append(BsContext(rows[b], C, aux.lam, aux.xi, np.asarray(omega, dtype=float),
                             float(sigma2), float(P[b]), tau[b].copy(), b))
    return out


def local_objective(ctx, X):
    """``-f_Q`` as a function of this BS's (ungated) precoder, all terms kept."""
    S = ctx.rows @ (X * ctx.tau[None, :]) + ctx.C
    xi2 = np.abs(ctx.xi) ** 2
    lin = 2 * np.real(np.sqrt(ctx.mu) * ctx.xi.conj() * np.diag(S))
    quad = xi2 * ((np.abs(S) ** 2).sum(axis=1) + ctx.sigma2)
    return float(np.sum(-ctx.omega * np.log1p(ctx.lam) + ctx.omega * ctx.lam - lin + quad))


def penalty_target(state):
    """``M = F + Delta / rho``, the point the gated precoder is pulled toward."""
    return state.F + state.Delta / state.rho


def augmented_lagrangian(ctx, state):
    Xg = state.X_gated
    R = state.F - Xg
    return (local_objective(ctx, state.X) + float(np.real(np.vdot(state.Delta, R)))
            + state.rho / 2 * float(np.linalg.norm(R) ** 2))


def matrix_objective(ctx, state, F_RF=None, F_BB=None):
    """``f_b(X Lam) + rho/2 ||X Lam - M||^2`` for the given analog/digital pair.

    Differs from :func:`augmented_lagrangian` only by terms independent of
    ``F_RF`` and ``F_BB``.
    """
    F_RF = state.F_RF if F_RF is None else F_RF
    F_BB = state.F_BB if F_BB is None else F_BB
    X = F_RF @ F_BB
    D = X * ctx.tau[None, :] - penalty_target(state)
    return local_objective(ctx, X) + state.rho / 2 * float(np.linalg.norm(D) ** 2)


# -- block updates -----------------------------------------------------------

def update_proxy_precoder(ctx, state, mode="kkt"):
    """Minimize ``L`` over ``F`` subject to ``||F||_F^2 <= P``.

    The unconstrained minimizer is ``M / rho`` with ``M = rho X Lam - Delta``.
    In ``"kkt"`` mode it is returned when feasible; otherwise (and always in
    ``"literal"`` mode) it is scaled onto the power sphere.
    """
    Mx = state.rho * state.X_gated - state.Delta
    norm = np.linalg.norm(Mx)
    if norm == 0:
        log.debug("proxy update: zero target at BS %d", ctx.b)
        return np.zeros_like(Mx)
    if mode == "kkt" and (norm / state.rho) ** 2 <= ctx.P:
        return Mx / state.rho
    return np.sqrt(ctx.P) * Mx / norm


def assemble_analog_qp(ctx, state):
    """Vectorized analog subproblem ``min x^H A x + 2 Re(b^H x)``, ``x = vec(F_RF)``.

    With ``G = F_BB Lam``: ``A = conj(G G^H) kron (Q + rho/2 I)`` and
    ``b = vec((Y0 - rho/2 M) G^H)``.
    """
    G = state.F_BB * ctx.tau[None, :]
    Qr = ctx.quad() + state.rho / 2 * np.eye(ctx.N_t)
    A = np.kron((G @ G.conj().T).conj(), Qr)
    A = (A + A.conj().T) / 2
    Y = ctx.lin() - state.rho / 2 * penalty_target(state)
    b = (Y @ G.conj().T).reshape(-1, order="F")
    return UnitModulusQP(A, b)


def vec(M):
    return M.reshape(-1, order="F")


def unvec(x, shape):
    return x.reshape(shape, order="F")


def update_analog(ctx, state, ccm_opts=None, check_equivalence=False):
    qp = assemble_analog_qp(ctx, state)
    if check_equivalence:
        _check_appendix_identity(ctx, state, qp)
    res = solve_unit_modulus_qp(qp, vec(state.F_RF), ccm_opts)
    return unvec(res.x, state.F_RF.shape)


def _check_appendix_identity(ctx, state, qp, rtol=1e-9):
    rng = np.random.default_rng(0)
    x0 = vec(state.F_RF)
    x1 = np.exp(1j * rng.uniform(0, 2 * np.pi, x0.shape))
    d_vec = qp.objective(x1) - qp.objective(x0)
    d_mat = matrix_objective(ctx, state, unvec(x1, state.F_RF.shape)) - matrix_objective(ctx, state)
    if abs(d_vec - d_mat) > rtol * max(abs(d_mat), abs(d_vec), 1e-300) + 1e-300:
        raise AssertionError(f"vectorized analog objective drifted: {d_vec!r} vs {d_mat!r}")


def update_digital(ctx, state):
    """Exact minimizer of ``L`` over ``F_BB``.

    The normal equations are block diagonal over streams and share
    ``Q0 = F_RF^H (Q + rho/2 I) F_RF``.  Streams gated off keep their
    previous columns.
    """
    F_RF = state.F_RF
    Qr = ctx.quad() + state.rho / 2 * np.eye(ctx.N_t)
    Q0 = F_RF.conj().T @ Qr @ F_RF
    Q0 = (Q0 + Q0.conj().T) / 2
    if np.linalg.cond(Q0) > 1e12:
        Q0 = Q0 + 1e-10 * np.real(np.trace(Q0)) / Q0.shape[0] * np.eye(Q0.shape[0])
        log.debug("digital update regularized at BS %d", ctx.b)
    Y = ctx.lin() - state.rho / 2 * penalty_target(state)
    rhs = -F_RF.conj().T @ Y
    try:
        sol = np.linalg.solve(Q0, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"digital system singular at BS {ctx.b} (cond={np.linalg.cond(Q0):.3e})") from exc
    active = ctx.tau > 0
    F_BB = state.F_BB.copy()
    F_BB[:, active] = sol[:, active]
    return F_BB


def dual_update(state):
    return state.Delta + state.rho * (state.F - state.X_gated)


def consensus_residual(state):
    return float(np.linalg.norm(state.F - state.X_gated))


def run_admm(ctx, init, opts=None, selector: Optional[Callable] = None):
    """Run ``opts.t_max`` ADMM sweeps: proxy, analog, digital, [selection], dual.

    ``selector(ctx, state)`` returns a new gating vector; the context's
    ``tau`` is updated in place with it.  Returns a new :class:`AdmmState`
    with per-sweep consensus residuals and augmented-Lagrangian values.
    """
    opts = opts or AdmmOptions()
    state = init.copy()
    state.tau = ctx.tau.copy()
    for _ in range(opts.t_max):
        X_prev = state.X_gated
        state.F = update_proxy_precoder(ctx, state, opts.proxy_mode)
        state.F_RF = update_analog(ctx, state, opts.ccm, opts.check_equivalence)
        state.F_BB = update_digital(ctx, state)
        if selector is not None:
            tau = np.asarray(selector(ctx, state), dtype=float)
            ctx.tau = tau
            state.tau = tau.copy()
        state.Delta = dual_update(state)
        state.t += 1
        r = consensus_residual(state)
        state.residuals.append(r)
        state.objectives.append(augmented_lagrangian(ctx, state))
        if opts.balance:
            s = state.rho * float(np.linalg.norm(state.X_gated - X_prev))
            if r > opts.balance_ratio * s:
                state.rho *= opts.balance_factor
            elif s > opts.balance_ratio * r:
                state.rho /= opts.balance_factor
    return state


# -- initialization and helpers --------------------------------------------

def random_analog(rng, N_t, N_RF):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, (N_t, N_RF)))


def matched_digital(F_RF, rows, P):
    """Least-squares fit of ``F_RF F_BB`` to the matched filter, scaled to power ``P``."""
    F_BB = np.linalg.pinv(F_RF) @ rows.conj().T
    norm = np.linalg.norm(F_RF @ F_BB)
    if norm == 0:
        return F_BB
    return F_BB * (np.sqrt(P) / norm)


def enforce_power(F_RF, F_BB, tau, P):
    """Scale ``F_BB`` down if the gated precoder exceeds the power budget."""
    power = np.linalg.norm(F_RF @ F_BB * tau[None, :]) ** 2
    if power > P:
        return F_BB * np.sqrt(P / power)
    return F_BB


def fd_precoder(ctx, tol=1e-9, max_iters=200):
    """Exact minimizer of ``f_b`` over an unconstrained precoder with power cap.

    Streams gated off are zero.  Solves ``(Q + nu I) x_j = -y_j`` and
    bisects the multiplier ``nu`` until ``||X||_F^2`` meets the budget.
    """
    Q = ctx.quad()
    Y = -ctx.lin()
    Y[:, ctx.tau == 0] = 0
    evals, U = np.linalg.eigh((Q + Q.conj().T) / 2)
    evals = np.maximum(evals, 0.0)
    Z = U.conj().T @ Y
    zsq = (np.abs(Z) ** 2).sum(axis=1)

    def power(nu):
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(zsq > 0, zsq / (evals + nu) ** 2, 0.0)
        return float(val.sum())

    def solve(nu):
        return U @ (Z / (evals + nu)[:, None])

    if np.all(zsq == 0):
        return np.zeros_like(Y)
    floor = 1e-15 * max(1.0, evals.max())
    if evals.min() > floor and power(0.0) <= ctx.P:
        return solve(0.0)
    lo, hi = 0.0, max(1.0, evals.max())
    while power(hi) > ctx.P:
        hi *= 2
    for _ in range(max_iters):
        mid = (lo + hi) / 2
        if power(mid) > ctx.P:
            lo = mid
        else:
            hi = mid
        if abs(power(hi) - ctx.P) <= tol * ctx.P:
            break
    return solve(hi)
