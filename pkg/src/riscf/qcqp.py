"""Convex RIS subproblem: ``min phi^H Z phi + 2 Re(kappa^H phi)`` s.t. ``|phi_i| <= 1``.

Solved by (monotone, optionally accelerated) projected gradient with an
exact per-entry disc projection.  Solutions are certified by the
projected-gradient fixed-point residual

    r(phi) = || phi - Proj(phi - s (Z phi + kappa)) ||_inf,   s = 1 / lambda_max(Z),

which vanishes exactly at KKT points of the convex problem.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class ModulusCappedQP:
    Z: np.ndarray
    kappa: np.ndarray

    @property
    def n(self):
        return self.kappa.shape[0]

    def objective(self, phi):
        return float(np.real(np.vdot(phi, self.Z @ phi)) + 2 * np.real(np.vdot(self.kappa, phi)))

    def grad(self, phi):
        return self.Z @ phi + self.kappa

    def validate(self, herm_tol=1e-10, psd_tol=1e-8):
        Z = self.Z
        scale = max(1.0, float(np.abs(Z).max(initial=0.0)))
        if np.abs(Z - Z.conj().T).max(initial=0.0) > herm_tol * scale:
            raise ValueError("Z is not Hermitian")
        if self.n and np.linalg.eigvalsh((Z + Z.conj().T) / 2)[0] < -psd_tol * scale:
            raise ValueError("Z is not positive semidefinite")


@dataclass
class QcqpOptions:
    tol: float = 1e-7
    max_iters: int = 2000
    accelerate: bool = True
    power_iters: int = 20
    phase_only: bool = False
    validate: bool = True


@dataclass
class QcqpResult:
    phi: np.ndarray
    kkt_residual: float
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)


def project_disc(phi):
    """Per-entry projection onto ``|phi_i| <= 1``."""
    return phi / np.maximum(1.0, np.abs(phi))


def project_circle(phi):
    """Per-entry projection onto ``|phi_i| = 1`` (zeros map to 1)."""
    mag = np.abs(phi)
    out = np.ones_like(phi)
    nz = mag > 0
    out[nz] = phi[nz] / mag[nz]
    return out


def lambda_max(Z, iters=20):
    """Largest eigenvalue of a Hermitian PSD matrix by power iteration.

    Starts from a fixed vector, so the estimate is deterministic.  The
    result is a lower bound; callers back off the step when needed.
    """
    n = Z.shape[0]
    if n == 0:
        return 0.0
    v = np.ones(n, dtype=complex) + 0.1j * np.arange(n) / max(n, 1)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        u = Z @ v
        norm = np.linalg.norm(u)
        if norm == 0:
            return 0.0
        est = float(np.real(np.vdot(v, u)))
        v = u / norm
    return max(est, float(np.real(np.vdot(v, Z @ v))))


def _step(qp, power_iters):
    lam = lambda_max(qp.Z, power_iters)
    return 1.0 / lam if lam > 0 else 1.0


def kkt_residual(qp, phi, step=None, power_iters=20):
    """Projected-gradient fixed-point residual (infinity norm)."""
    if step is None:
        step = _step(qp, power_iters)
    moved = project_disc(phi - step * qp.grad(phi))
    return float(np.abs(phi - moved).max(initial=0.0))


def solve_modulus_capped_qp(qp, phi0, opts=None):
    """Minimize the RIS quadratic over the product of unit discs.

    Uses the monotone FISTA scheme (the iterate only moves when the
    objective does not increase) with step ``1/lambda_max``; a failed
    descent halves the step.  With ``opts.phase_only`` the iterate is
    instead projected onto the unit circles (nonconvex heuristic, no
    certificate).
    """
    opts = opts or QcqpOptions()
    if opts.validate:
        qp.validate()
    phi = np.asarray(phi0, dtype=complex).copy()
    if phi.shape != (qp.n,):
        raise ValueError(f"phi0 has shape {phi.shape}, expected ({qp.n},)")
    if np.abs(phi).max(initial=0.0) > 1 + 1e-10:
        raise ValueError("phi0 violates the modulus cap")
    project = project_circle if opts.phase_only else project_disc
    if opts.phase_only:
        phi = project_circle(phi)

    s = _step(qp, opts.power_iters)
    s_ref = s
    value = qp.objective(phi)
    trace = [value]
    y, t = phi.copy(), 1.0
    residual = np.inf if opts.phase_only else kkt_residual(qp, phi, s_ref)
    it = 0
    while it < opts.max_iters:
        if not opts.phase_only and residual <= opts.tol:
            break
        it += 1
        g = qp.grad(y)
        f_y = qp.objective(y)
        while True:
            z = project(y - s * g)
            d = z - y
            # Quadratic upper bound holds whenever 1/s >= lambda_max(Z).
            bound = f_y + 2 * np.real(np.vdot(g, d)) + np.real(np.vdot(d, d)) / s
            z_value = qp.objective(z)
            if opts.phase_only or z_value <= bound + 1e-12 * max(1.0, abs(bound)):
                break
            s *= 0.5
        prev = phi
        if z_value <= value:
            phi, value = z, z_value
        if opts.accelerate:
            t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
            y = phi + (t / t_next) * (z - phi) + ((t - 1) / t_next) * (phi - prev)
            t = t_next
        else:
            y = phi.copy()
        trace.append(value)
        if opts.phase_only:
            if trace[-2] - trace[-1] <= opts.tol * max(1.0, abs(value)):
                break
        else:
            residual = kkt_residual(qp, phi, s_ref)
    converged = bool(opts.phase_only or residual <= opts.tol)
    if not converged:
        log.debug("modulus-capped QP stopped at residual %.3e after %d iterations", residual, it)
    return QcqpResult(phi, float(residual), converged, it, trace)
