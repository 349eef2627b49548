"""Riemannian descent on the complex circle manifold.

Minimizes ``g(x) = x^H A x + 2 Re(b^H x)`` subject to ``|x_i| = 1``.

Gradient convention: :func:`euclidean_grad` returns the Wirtinger gradient
``dg/dx* = A x + b``.  The real gradient (d/dRe + j d/dIm) is twice that,
so the directional derivative along ``v`` is ``2 Re(v^H (A x + b))``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class DegenerateRetraction(ArithmeticError):
    """A retraction step landed exactly on the origin of some circle."""


@dataclass
class UnitModulusQP:
    A: np.ndarray
    b: np.ndarray

    @property
    def n(self):
        return self.b.shape[0]

    def objective(self, x):
        return float(np.real(np.vdot(x, self.A @ x)) + 2 * np.real(np.vdot(self.b, x)))

    def validate(self, herm_tol=1e-10, psd_tol=1e-8):
        """Check Hermitian PSD structure (tolerances relative to ``max(1, |A|)``)."""
        A = self.A
        if A.shape != (self.n, self.n):
            raise ValueError(f"A has shape {A.shape}, expected {(self.n, self.n)}")
        scale = max(1.0, float(np.abs(A).max(initial=0.0)))
        if np.abs(A - A.conj().T).max(initial=0.0) > herm_tol * scale:
            raise ValueError("A is not Hermitian")
        if self.n and np.linalg.eigvalsh((A + A.conj().T) / 2)[0] < -psd_tol * scale:
            raise ValueError("A is not positive semidefinite")


@dataclass
class CcmOptions:
    max_iters: int = 200
    grad_tol: float = 1e-6
    step0: float = 1.0
    shrink: float = 0.5
    growth: float = 1.5
    armijo_c: float = 1e-4
    max_backtracks: int = 30
    conjugate: bool = False
    multistart: bool = False
    validate: bool = True

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not self.growth >= 1:
            raise ValueError("growth must be at least 1")
        for name in ("max_iters", "grad_tol", "step0", "armijo_c", "max_backtracks"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class CcmResult:
    x: np.ndarray
    trace: list
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def euclidean_grad(qp, x):
    return qp.A @ x + qp.b


def project_tangent(x, v):
    """Remove the radial part of ``v`` at ``x``: ``v - Re(v o x*) o x``."""
    return v - np.real(v * x.conj()) * x


def riemannian_grad(qp, x):
    return project_tangent(x, euclidean_grad(qp, x))


def retract(x, v, step):
    """Entrywise normalization of ``x - step * v``."""
    y = x - step * v
    mag = np.abs(y)
    if np.any(mag == 0):
        raise DegenerateRetraction("retraction hit zero modulus")
    return y / mag


def problem_scale(qp):
    """Cheap bound on the per-entry gradient magnitude over the manifold."""
    row_sum = np.abs(qp.A).sum(axis=1).max(initial=0.0)
    return float(row_sum + np.abs(qp.b).max(initial=0.0))


def solve_unit_modulus_qp(qp, x0, opts=None):
    """Riemannian gradient descent with Armijo backtracking.

    The first trial step is ``opts.step0 / scale`` with ``scale`` from
    :func:`problem_scale`; later trials start from ``opts.growth`` times
    the last accepted step.  A growth factor that is not a power of
    ``1 / shrink`` keeps the trial steps from cycling between two fixed
    values.  The gradient tolerance is applied to ``|grad| / max(1, scale)``.

    The problem is nonconvex, so the result is a stationary point near
    ``x0``.  With ``opts.multistart`` the descent is repeated from
    :func:`candidate_starts` and the lowest final objective is returned.
    """
    opts = opts or CcmOptions()
    if opts.validate:
        qp.validate()
    x = np.asarray(x0, dtype=complex)
    if x.shape != (qp.n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({qp.n},)")
    if np.abs(np.abs(x) - 1).max(initial=0.0) > 1e-8:
        raise ValueError("x0 must be unit-modulus")
    x = x / np.abs(x)
    best = _descend(qp, x, opts)
    if opts.multistart:
        for start in candidate_starts(qp):
            res = _descend(qp, start, opts)
            if res.trace[-1] < best.trace[-1]:
                best = res
    return best


def _phases(v):
    out = np.ones(v.shape, dtype=complex)
    nz = np.abs(v) > 0
    out[nz] = v[nz] / np.abs(v[nz])
    return out


def candidate_starts(qp):
    """Deterministic extra starts: phases of ``-b`` and of +-the lowest eigenvector of ``A``."""
    u = np.linalg.eigh((qp.A + qp.A.conj().T) / 2)[1][:, 0]
    return [_phases(-qp.b), _phases(u), _phases(-u)]


def _descend(qp, x, opts):
    scale = problem_scale(qp)
    tol = opts.grad_tol * max(1.0, scale)
    step = opts.step0 / scale if scale > 0 else opts.step0
    value = qp.objective(x)
    res = CcmResult(x, [value])
    direction = None
    grad_prev = None
    for it in range(opts.max_iters):
        grad = riemannian_grad(qp, x)
        gnorm = float(np.linalg.norm(grad))
        res.grad_norms.append(gnorm)
        res.iterations = it + 1
        if gnorm <= tol:
            res.converged = True
            break
        if opts.conjugate and direction is not None:
            # Polak-Ribiere+ with the previous direction transported by projection.
            moved = project_tangent(x, direction)
            prev = project_tangent(x, grad_prev)
            beta = max(0.0, np.real(np.vdot(grad, grad - prev)) / np.real(np.vdot(grad_prev, grad_prev)))
            direction = grad + beta * moved
            if np.real(np.vdot(grad, direction)) <= 0:
                direction = grad
        else:
            direction = grad
        slope = np.real(np.vdot(grad, direction))
        accepted = False
        for _ in range(opts.max_backtracks):
            try:
                cand = retract(x, direction, step)
            except DegenerateRetraction:
                step *= opts.shrink
                continue
            cand_value = qp.objective(cand)
            if cand_value <= value - opts.armijo_c * step * slope:
                accepted = True
                break
            step *= opts.shrink
        if not accepted:
            log.debug("armijo backtracking exhausted at iteration %d", it)
            break
        x, value, grad_prev = cand, cand_value, grad
        res.trace.append(value)
        res.steps.append(step)
        step *= opts.growth
    res.x = x
    return res
