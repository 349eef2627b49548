"""Fast invariant checks run by ``riscf selftest``.

Each check returns ``(name, passed, detail)``.
"""

import itertools

import numpy as np

from . import hbf
from .manifold import UnitModulusQP, riemannian_grad, solve_unit_modulus_qp
from .objective import (BeamState, compute_sinrs, compute_wsr_nats, eval_fq, update_aux)
from .qcqp import ModulusCappedQP, solve_modulus_capped_qp
from .scenario import build_scenario, desk_config
from .selection import (BilpOptions, SelectionBiqp, assemble_selection_biqp, rla_linearize,
                        selection_objective, solve_bilp)


def random_beams(channels, N_RF, P, rng):
    d = channels.dims
    B, K, N_t = d["B"], d["K"], d["N_t"]
    F_RF = np.exp(1j * rng.uniform(0, 2 * np.pi, (B, N_t, N_RF)))
    F_BB = rng.standard_normal((B, N_RF, K)) + 1j * rng.standard_normal((B, N_RF, K))
    X = F_RF @ F_BB
    scale = np.sqrt(P) / np.linalg.norm(X, axis=(1, 2))
    F_BB *= scale[:, None, None]
    X = F_RF @ F_BB
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, (K, d["N_r"])))
    phi = np.exp(1j * rng.uniform(0, 2 * np.pi, d["R"] * d["M"]))
    return BeamState(F_RF, F_BB, X, np.zeros_like(X), w, phi)


def random_admm_state(ctx, N_RF, P, rho, rng):
    N_t, K = ctx.N_t, ctx.K
    F_RF = np.exp(1j * rng.uniform(0, 2 * np.pi, (N_t, N_RF)))
    F_BB = (rng.standard_normal((N_RF, K)) + 1j * rng.standard_normal((N_RF, K)))
    F_BB *= np.sqrt(P) / np.linalg.norm(F_RF @ F_BB)
    F = rng.standard_normal((N_t, K)) + 1j * rng.standard_normal((N_t, K))
    F *= np.sqrt(P) / np.linalg.norm(F)
    Delta = rho * np.sqrt(P) * 0.1 * (rng.standard_normal((N_t, K)) + 1j * rng.standard_normal((N_t, K)))
    return hbf.AdmmState(F_RF, F_BB, F, Delta, rho, ctx.tau.copy())


def check_fp_tightness(seed=0):
    scn, ch = build_scenario(desk_config(), seed=seed)
    beams = random_beams(ch, scn.N_RF, scn.P_b, np.random.default_rng(seed))
    aux = update_aux(ch, beams, scn.sigma2, scn.omega)
    fq = eval_fq(ch, beams, aux, scn.sigma2, scn.omega)
    wsr = compute_wsr_nats(scn.omega, compute_sinrs(ch, beams, scn.sigma2))
    rel = abs(fq - wsr) / max(abs(wsr), 1e-300)
    return "fp tightness", rel <= 1e-9, f"rel err {rel:.2e}"


def check_analog_identity(seed=0):
    rng = np.random.default_rng(seed)
    scn, ch = build_scenario(desk_config(), seed=seed)
    beams = random_beams(ch, scn.N_RF, scn.P_b, rng)
    aux = update_aux(ch, beams, scn.sigma2, scn.omega)
    ctx = hbf.build_contexts(ch, beams, aux, scn.sigma2, scn.omega, scn.P_b)[0]
    st = random_admm_state(ctx, scn.N_RF, scn.P_b, 1.0 / scn.P_b, rng)
    qp = hbf.assemble_analog_qp(ctx, st)
    x1 = np.exp(1j * rng.uniform(0, 2 * np.pi, qp.n))
    d_vec = qp.objective(x1) - qp.objective(hbf.vec(st.F_RF))
    d_mat = (hbf.matrix_objective(ctx, st, hbf.unvec(x1, st.F_RF.shape))
             - hbf.matrix_objective(ctx, st))
    rel = abs(d_vec - d_mat) / max(abs(d_mat), 1e-300)
    return "analog QP identity", rel <= 1e-9, f"rel err {rel:.2e}"


def check_selection_identity(seed=0):
    rng = np.random.default_rng(seed)
    scn, ch = build_scenario(desk_config(K=4, B=2), seed=seed)
    beams = random_beams(ch, scn.N_RF, scn.P_b, rng)
    aux = update_aux(ch, beams, scn.sigma2, scn.omega)
    ctx = hbf.build_contexts(ch, beams, aux, scn.sigma2, scn.omega, scn.P_b)[0]
    st = random_admm_state(ctx, scn.N_RF, scn.P_b, 1.0 / scn.P_b, rng)
    biqp = assemble_selection_biqp(ctx, st, 2, np.ones((2, 4)))
    worst = 0.0
    for tau in itertools.product((0, 1), repeat=4):
        ref = selection_objective(ctx, st, tau)
        worst = max(worst, abs(biqp.value(tau) - ref) / max(abs(ref), 1e-300))
    return "selection BIQP identity", worst <= 1e-9, f"max rel err {worst:.2e}"


def check_bilp(seed=0, trials=20):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        K = int(rng.integers(2, 7))
        A = rng.standard_normal((K, K))
        U = A @ A.T
        biqp = SelectionBiqp(U, rng.standard_normal(K), rng.choice([-1.0, 0.0], K),
                             int(rng.integers(1, K + 1)))
        inst = rla_linearize(biqp)
        a = solve_bilp(inst)
        b = solve_bilp(inst, BilpOptions(method="exhaustive"))
        if abs(a.objective - b.objective) > 1e-9 * max(1.0, abs(b.objective)):
            return "BILP optimality", False, f"bnb {a.objective} vs exhaustive {b.objective}"
    return "BILP optimality", True, f"{trials} instances"


def check_manifold_gradient(seed=0):
    rng = np.random.default_rng(seed)
    n = 5
    A0 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    qp = UnitModulusQP(A0 @ A0.conj().T, rng.standard_normal(n) + 1j * rng.standard_normal(n))
    x = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
    g = riemannian_grad(qp, x)
    h = 1e-6
    worst = 0.0
    for i in range(n):
        dx = np.zeros(n, dtype=complex)
        dx[i] = 1j * x[i]  # tangent direction at entry i
        fd = (qp.objective(x + h * dx) - qp.objective(x - h * dx)) / (2 * h)
        exact = 2 * np.real(np.vdot(dx, g))
        worst = max(worst, abs(fd - exact) / max(1.0, abs(exact)))
    res = solve_unit_modulus_qp(qp, x)
    mono = bool(np.all(np.diff(res.trace) <= 1e-12 * max(1.0, abs(res.trace[0]))))
    return "manifold gradient", worst <= 1e-5 and mono, f"max rel err {worst:.2e}"


def check_qcqp(seed=0):
    rng = np.random.default_rng(seed)
    n = 6
    A0 = rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))
    qp = ModulusCappedQP(A0 @ A0.conj().T, rng.standard_normal(n) + 1j * rng.standard_normal(n))
    res = solve_modulus_capped_qp(qp, np.zeros(n, dtype=complex))
    ok = res.kkt_residual <= 1e-7 and np.abs(res.phi).max() <= 1 + 1e-10
    return "modulus-capped QP KKT", bool(ok), f"residual {res.kkt_residual:.2e}"


CHECKS = (check_fp_tightness, check_analog_identity, check_selection_identity, check_bilp,
          check_manifold_gradient, check_qcqp)


def run_selftest(seed=0):
    return [check(seed) for check in CHECKS]
