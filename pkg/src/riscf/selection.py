"""BS selection for the partially connected system.

Each BS ``b`` picks which streams it serves with a binary vector ``tau``
(``Lam_b = diag(tau)``) under a cardinality quota ``K_b`` and a coverage
floor ``tau_k >= z_k = 1 - sum_{p != b} tau_{p,k}``.  The objective is the
part of the per-BS augmented Lagrangian that depends on ``Lam``:

    f2(tau) = sum_k |xi_k|^2 sum_j |tau_j Y_kj + C_kj|^2
              - 2 Re sum_k sqrt(mu_k) conj(xi_k) tau_k Y_kk
              + rho/2 ||X Lam - M||_F^2,          Y_kj = a_k X[:, j]

which is the binary quadratic ``tau^T U tau + r^T tau + const``.  The
quadratic is linearized with product variables ``zeta_ij = tau_i tau_j``
(i < j) and solved exactly by branch-and-bound over LP relaxations.
"""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .hbf import penalty_target

log = logging.getLogger(__name__)


class SelectionInfeasible(ValueError):
    """No binary selection satisfies the quota and coverage rows."""

    def __init__(self, message, uncovered=()):
        super().__init__(message)
        self.uncovered = tuple(uncovered)


@dataclass
class SelectionState:
    tau: np.ndarray  # (B, K) binary
    quotas: np.ndarray  # (B,)

    def covered(self):
        return np.all(self.tau.sum(axis=0) >= 1)

    def copy(self):
        return SelectionState(self.tau.copy(), self.quotas.copy())


@dataclass
class SelectionBiqp:
    U: np.ndarray
    r: np.ndarray
    z: np.ndarray
    K_b: int
    const: float = 0.0

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        K = self.r.shape[0]
        if self.U.shape != (K, K) or self.z.shape != (K,):
            raise ValueError("inconsistent BIQP dimensions")
        if not np.allclose(self.U, self.U.T, atol=1e-12 * max(1.0, np.abs(self.U).max(initial=0))):
            raise ValueError("U must be symmetric")
        if not 1 <= self.K_b <= K:
            raise ValueError(f"quota {self.K_b} outside 1..{K}")

    @property
    def K(self):
        return self.r.shape[0]

    def value(self, tau):
        tau = np.asarray(tau, dtype=float)
        return float(tau @ self.U @ tau + self.r @ tau + self.const)

    def feasible(self, tau):
        tau = np.asarray(tau)
        return bool(tau.sum() == self.K_b and np.all(tau >= self.z))


# -- BIQP assembly -------------------------------------------------------------

def coverage_vector(tau_all, b):
    """``z_k = 1 - sum_{p != b} tau_{p,k}``."""
    tau_all = np.asarray(tau_all, dtype=float)
    return 1.0 - (tau_all.sum(axis=0) - tau_all[b])


def selection_objective(ctx, state, tau):
    """``f2`` for a gating vector (see module docstring); all terms kept."""
    tau = np.asarray(tau, dtype=float)
    X = state.X
    Y = ctx.rows @ X
    S = Y * tau[None, :] + ctx.C
    xi2 = np.abs(ctx.xi) ** 2
    quad = float(np.sum(xi2[:, None] * np.abs(S) ** 2))
    lin = 2 * float(np.sum(np.real(np.sqrt(ctx.mu) * ctx.xi.conj() * tau * np.diag(Y))))
    pen = state.rho / 2 * float(np.linalg.norm(X * tau[None, :] - penalty_target(state)) ** 2)
    return quad - lin + pen


def assemble_selection_biqp(ctx, state, K_b, tau_others):
    """Selection BIQP for BS ``ctx.b``.

    ``tau_others`` is the full (B, K) gating matrix; row ``ctx.b`` is ignored.
    """
    X = state.X
    K = X.shape[1]
    Y = ctx.rows @ X  # Y[k, j] = a_k x_j
    xi2 = np.abs(ctx.xi) ** 2
    # Real stacking of the column-sampled block-diagonal precoder.
    Mt = np.zeros((K * X.shape[0], K), dtype=complex)
    for k in range(K):
        Mt[k * X.shape[0]:(k + 1) * X.shape[0], k] = X[:, k]
    Mhat = np.vstack([Mt.real, Mt.imag])
    m = penalty_target(state).reshape(-1, order="F")
    mhat = np.concatenate([m.real, m.imag])
    L_hat = (xi2[:, None] * np.abs(Y) ** 2).sum(axis=0)
    U = np.diag(L_hat) + state.rho / 2 * Mhat.T @ Mhat
    l_hat = (xi2[:, None] * Y.conj() * ctx.C).sum(axis=0)
    g = np.sqrt(ctx.mu) * ctx.xi.conj() * np.diag(Y)
    r = 2 * l_hat.real - 2 * g.real - state.rho * Mhat.T @ mhat
    const = state.rho / 2 * float(mhat @ mhat) + float(np.sum(xi2[:, None] * np.abs(ctx.C) ** 2))
    z = coverage_vector(tau_others, ctx.b)
    return SelectionBiqp((U + U.T) / 2, r, z, int(K_b), const)


# -- linearization -------------------------------------------------------------

@dataclass
class BilpInstance:
    """``min c^T [tau; zeta]`` s.t. ``A_ub v <= b_ub``, ``A_eq v = b_eq``, ``v`` binary.

    ``pairs[p] = (i, j)`` with ``i < j`` names the product variable at
    column ``K + p``.
    """

    K: int
    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    pairs: list
    strengthened: bool = False
    row_names: list = field(default_factory=list)

    @property
    def n(self):
        return self.c.shape[0]

    def forced_zeta(self, tau):
        tau = np.asarray(tau)
        return np.array([tau[i] * tau[j] for i, j in self.pairs], dtype=float)

    def is_feasible(self, v, tol=1e-9):
        v = np.asarray(v, dtype=float)
        ok_ub = self.A_ub.shape[0] == 0 or np.all(self.A_ub @ v <= self.b_ub + tol)
        ok_eq = self.A_eq.shape[0] == 0 or np.all(np.abs(self.A_eq @ v - self.b_eq) <= tol)
        return bool(ok_ub and ok_eq)

    def objective(self, v):
        return float(self.c @ np.asarray(v, dtype=float))


def pair_index(K):
    pairs = list(itertools.combinations(range(K), 2))
    return pairs, {p: idx for idx, p in enumerate(pairs)}


def check_quota(biqp):
    """Raise :class:`SelectionInfeasible` when the quota cannot meet coverage."""
    forced = np.flatnonzero(biqp.z > 0)
    if biqp.z.max(initial=-np.inf) > 1 or len(forced) > biqp.K_b:
        raise SelectionInfeasible(
            f"quota {biqp.K_b} cannot cover {len(forced)} forced users", uncovered=forced)


def rla_linearize(biqp, strengthen=True):
    """Standard product linearization, optionally with the strengthened rows.

    Strengthened rows, with ``zeta_ii = tau_i`` and ``zeta`` symmetric:
    ``sum_j zeta_ij = K_b tau_i`` and ``zeta_ij >= z_j tau_i`` for ``j != i``.
    """
    check_quota(biqp)
    K = biqp.K
    pairs, index = pair_index(K)
    n = K + len(pairs)
    U = biqp.U
    c = np.zeros(n)
    c[:K] = np.diag(U) + biqp.r
    for p, (i, j) in enumerate(pairs):
        c[K + p] = 2 * U[i, j]

    ub, ub_rhs, names = [], [], []

    def add_ub(coeffs, rhs, name):
        row = np.zeros(n)
        for col, val in coeffs:
            row[col] += val
        ub.append(row)
        ub_rhs.append(rhs)
        names.append(name)

    for i in range(K):
        add_ub([(i, -1.0)], -biqp.z[i], f"cover_{i}")
    for p, (i, j) in enumerate(pairs):
        col = K + p
        add_ub([(col, 1.0), (i, -1.0)], 0.0, f"prod_le_{i}_{j}_a")
        add_ub([(col, 1.0), (j, -1.0)], 0.0, f"prod_le_{i}_{j}_b")
        add_ub([(i, 1.0), (j, 1.0), (col, -1.0)], 1.0, f"prod_ge_{i}_{j}")

    eq = [np.concatenate([np.ones(K), np.zeros(len(pairs))])]
    eq_rhs = [float(biqp.K_b)]
    eq_names = ["quota"]
    if strengthen:
        for i in range(K):
            row = np.zeros(n)
            row[i] = 1.0 - biqp.K_b
            for j in range(K):
                if j != i:
                    row[K + index[min(i, j), max(i, j)]] += 1.0
            eq.append(row)
            eq_rhs.append(0.0)
            eq_names.append(f"rowsum_{i}")
            for j in range(K):
                if j != i:
                    add_ub([(i, biqp.z[j]), (K + index[min(i, j), max(i, j)], -1.0)], 0.0,
                           f"coverprod_{i}_{j}")
    return BilpInstance(K, c, np.array(ub).reshape(-1, n), np.array(ub_rhs), np.array(eq),
                        np.array(eq_rhs), pairs, strengthen, names + eq_names)


# -- solvers -------------------------------------------------------------------

@dataclass
class BilpResult:
    status: str  # "optimal" or "infeasible"
    tau: np.ndarray = None
    zeta: np.ndarray = None
    objective: float = np.inf
    nodes: int = 0


@dataclass
class BilpOptions:
    method: str = "bnb"  # "bnb" or "exhaustive"
    int_tol: float = 1e-7
    max_nodes: int = 100_000


def _lp(inst, lo, hi):
    res = linprog(inst.c, A_ub=inst.A_ub if inst.A_ub.size else None,
                  b_ub=inst.b_ub if inst.A_ub.size else None,
                  A_eq=inst.A_eq, b_eq=inst.b_eq, bounds=list(zip(lo, hi)), method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"LP relaxation failed: {res.message}")
    return res


def lp_relaxation_bound(inst):
    """Optimal value of the continuous relaxation (``+inf`` when infeasible)."""
    res = _lp(inst, np.zeros(inst.n), np.ones(inst.n))
    return np.inf if res is None else float(res.fun)


def _complete(inst, tau):
    v = np.concatenate([tau, inst.forced_zeta(tau)])
    return v if inst.is_feasible(v) else None


def _greedy(inst, x):
    """Round an LP point to a quota-feasible tau: forced users first, then largest x."""
    K = inst.K
    tau_x = x[:K]
    cover = -inst.b_ub[:K]
    quota = int(round(inst.b_eq[0]))
    order = sorted(range(K), key=lambda i: (cover[i] <= 0, -tau_x[i], i))
    tau = np.zeros(K)
    tau[order[:quota]] = 1.0
    return _complete(inst, tau)


def _exhaustive(inst):
    K = inst.K
    quota = int(round(inst.b_eq[0]))
    best = BilpResult("infeasible")
    for chosen in itertools.combinations(range(K), quota):
        tau = np.zeros(K)
        tau[list(chosen)] = 1.0
        v = _complete(inst, tau)
        best.nodes += 1
        if v is None:
            continue
        val = inst.objective(v)
        if val < best.objective:
            best = BilpResult("optimal", tau, v[K:], val, best.nodes)
    return best


def _linear_shortcut(inst):
    """Exact solve when every product coefficient vanishes."""
    K = inst.K
    quota = int(round(inst.b_eq[0]))
    cover = -inst.b_ub[:K]
    forced = [i for i in range(K) if cover[i] > 0]
    rest = sorted((i for i in range(K) if cover[i] <= 0), key=lambda i: (inst.c[i], i))
    tau = np.zeros(K)
    tau[forced + rest[:quota - len(forced)]] = 1.0
    v = _complete(inst, tau)
    return BilpResult("optimal", tau, v[K:], inst.objective(v), 1)


def solve_bilp(inst, opts=None):
    """Global optimum of a :class:`BilpInstance`.

    Depth-first branch-and-bound on ``tau`` (``zeta`` is implied at
    binary ``tau``) with HiGHS LP relaxations, most-fractional branching
    and a greedy-rounding incumbent.  Returns status ``"infeasible"`` when
    no binary point exists.
    """
    opts = opts or BilpOptions()
    K = inst.K
    quota = int(round(inst.b_eq[0]))
    cover = -inst.b_ub[:K]
    if np.sum(cover > 0) > quota or cover.max(initial=0) > 1:
        return BilpResult("infeasible")
    if opts.method == "exhaustive":
        return _exhaustive(inst)
    if opts.method != "bnb":
        raise ValueError(f"unknown method {opts.method!r}")
    if np.all(inst.c[K:] == 0):
        return _linear_shortcut(inst)

    best = BilpResult("infeasible")
    stack = [(np.zeros(inst.n), np.ones(inst.n))]
    nodes = 0
    while stack:
        lo, hi = stack.pop()
        nodes += 1
        if nodes > opts.max_nodes:
            raise RuntimeError("branch-and-bound node limit reached")
        res = _lp(inst, lo, hi)
        if res is None or res.fun >= best.objective - 1e-12 * max(1.0, abs(best.objective)):
            continue
        x = res.x
        v = _greedy(inst, x)
        if v is not None:
            val = inst.objective(v)
            if val < best.objective:
                best = BilpResult("optimal", v[:K].copy(), v[K:].copy(), val)
        frac = np.abs(x[:K] - np.round(x[:K]))
        if frac.max() <= opts.int_tol:
            v = _complete(inst, np.round(x[:K]))
            if v is not None:
                val = inst.objective(v)
                if val < best.objective:
                    best = BilpResult("optimal", v[:K].copy(), v[K:].copy(), val)
            continue
        i = int(np.argmax(frac))
        down_hi = hi.copy()
        down_hi[i] = 0.0
        up_lo = lo.copy()
        up_lo[i] = 1.0
        # Explore the side the relaxation leans toward first.
        if x[i] >= 0.5:
            stack += [(lo, down_hi), (up_lo, hi)]
        else:
            stack += [(up_lo, hi), (lo, down_hi)]
    best.nodes = nodes
    return best


def solve_biqp(biqp, strengthen=True, opts=None):
    res = solve_bilp(rla_linearize(biqp, strengthen), opts)
    if res.status != "optimal":
        raise SelectionInfeasible(f"no feasible selection for quota {biqp.K_b}",
                                  uncovered=np.flatnonzero(biqp.z > 0))
    return res


def export_lp(inst, path=None):
    """CPLEX LP text for cross-checking with external solvers."""

    def name(col):
        if col < inst.K:
            return f"tau_{col}"
        i, j = inst.pairs[col - inst.K]
        return f"zeta_{i}_{j}"

    def expr(row):
        terms = [f"{'+' if v >= 0 else '-'} {abs(v):.17g} {name(c)}" for c, v in enumerate(row) if v != 0]
        return " ".join(terms) if terms else "0 tau_0"

    lines = ["Minimize", f" obj: {expr(inst.c)}", "Subject To"]
    n_ub = inst.A_ub.shape[0]
    for r in range(n_ub):
        lines.append(f" {inst.row_names[r]}: {expr(inst.A_ub[r])} <= {inst.b_ub[r]:.17g}")
    for r in range(inst.A_eq.shape[0]):
        lines.append(f" {inst.row_names[n_ub + r]}: {expr(inst.A_eq[r])} = {inst.b_eq[r]:.17g}")
    lines.append("Binary")
    lines.append(" " + " ".join(name(c) for c in range(inst.n)))
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# -- quotas and sweeps -----------------------------------------------------------

def quotas_from_alpha(alpha, B, K):
    """Per-BS quotas with ``sum K_b = round(alpha B K)``.

    Starts from ``round(alpha K)`` everywhere and moves one unit at a time,
    round-robin over BSs, until the total matches.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha!r}")
    target = int(np.floor(alpha * B * K + 0.5))
    if target < max(B, K):
        raise SelectionInfeasible(
            f"alpha={alpha} gives {target} links; need one per BS and one per user ({B}, {K})")
    quotas = np.full(B, min(K, max(1, int(np.floor(alpha * K + 0.5)))))
    b = 0
    while quotas.sum() != target:
        step = 1 if quotas.sum() < target else -1
        if 1 <= quotas[b] + step <= K:
            quotas[b] += step
        b = (b + 1) % B
    return quotas


def ncr(selection, B=None, K=None):
    tau = np.asarray(getattr(selection, "tau", selection), dtype=float)
    B = tau.shape[0] if B is None else B
    K = tau.shape[1] if K is None else K
    return float(tau.sum() / (B * K))


def greedy_selection(gains, quotas):
    """Coverage-first assignment by gain, then each BS fills its quota with its strongest users.

    ``gains`` is (B, K); returns a (B, K) binary matrix covering every user.
    """
    gains = np.asarray(gains, dtype=float)
    B, K = gains.shape
    quotas = np.asarray(quotas, dtype=int)
    if quotas.sum() < K:
        raise SelectionInfeasible("quotas cannot cover every user", uncovered=range(K))
    tau = np.zeros((B, K))
    left = quotas.copy()
    for k in np.argsort(-gains.max(axis=0), kind="stable"):
        for b in np.argsort(-gains[:, k], kind="stable"):
            if left[b] > 0:
                tau[b, k] = 1
                left[b] -= 1
                break
        else:
            raise SelectionInfeasible("coverage assignment failed", uncovered=[k])
    for b in range(B):
        for k in np.argsort(-gains[b], kind="stable"):
            if left[b] == 0:
                break
            if tau[b, k] == 0:
                tau[b, k] = 1
                left[b] -= 1
    return tau


def random_selection(rng, quotas, K):
    """Uniform random quota subsets, redrawn until every user is covered."""
    quotas = np.asarray(quotas, dtype=int)
    if quotas.sum() < K:
        raise SelectionInfeasible("quotas cannot cover every user", uncovered=range(K))
    B = len(quotas)
    for _ in range(10_000):
        tau = np.zeros((B, K))
        for b, q in enumerate(quotas):
            tau[b, rng.choice(K, size=q, replace=False)] = 1
        if np.all(tau.sum(axis=0) >= 1):
            return tau
    raise SelectionInfeasible("random selection failed to cover every user")


def select_all_bs(contexts, states, quotas, tau, order=None, strengthen=True, opts=None):
    """Sequential sweep: each BS solves its BIQP against the current others.

    ``contexts`` and ``states`` are per-BS :class:`BsContext` and
    :class:`AdmmState`; ``tau`` (B, K) is the starting selection.
    """
    tau = np.array(tau, dtype=float)
    B = tau.shape[0]
    order = range(B) if order is None else order
    for b in order:
        biqp = assemble_selection_biqp(contexts[b], states[b], quotas[b], tau)
        tau[b] = solve_biqp(biqp, strengthen, opts).tau
    if not np.all(tau.sum(axis=0) >= 1):
        raise SelectionInfeasible("sweep left users uncovered",
                                  uncovered=np.flatnonzero(tau.sum(axis=0) < 1))
    return SelectionState(tau, np.asarray(quotas).copy())
