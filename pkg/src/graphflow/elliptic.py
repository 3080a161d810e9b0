"""Steady problems g^ij(Du) u_ij = psi(x, u, Du) with u_gamma = phi omega.

Newton's method runs on the same discrete operator the flow integrates, so a
flow limit and a Newton solution are two routes to one discrete solution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .domain import apply_bc, boundary_residual
from .errors import NoConvergence
from .flow import Evaluator, FlowConfig, run
from .forcing import ForcingSpec, evaluate
from .graph import dginv_dp


def default_tol(mesh):
    return 1e-9 if mesh.dim == 1 else 1e-7


@dataclass
class EllipticSolution:
    u_inf: np.ndarray
    residual_pde: float
    residual_bc: float
    C: Optional[float] = None
    iterations: int = 0
    flow_verdict: Optional[str] = None
    history: list = field(default_factory=list)


def residual(mesh, forcing, u, evaluator=None):
    """g^ij(Du) u_ij - psi at every node, boundary nodes included."""
    ev = evaluator or Evaluator(mesh, forcing)
    return ev.speed(np.asarray(u, dtype=float))[0]


def jacobian(mesh, forcing, u, evaluator=None):
    """Exact sparse derivative of :func:`residual`.

    Differentiates the coefficients g^ij(Du) as well as the ghost closure.
    """
    ev = evaluator or Evaluator(mesh, forcing)
    u = np.asarray(u, dtype=float)
    nn, dim = mesh.n_nodes, mesh.dim
    q, p = mesh.graph(u)
    # derivative of all stacked partials with respect to u
    dflat = ev.D_eff
    if mesh.tangential is not None:
        b = mesh.boundary
        p_t = mesh.tangential @ u
        T = b.tangent[:, 1]
        u_T = T * p_t
        du_g = ev.phi_scale * u_T / np.sqrt(1.0 + u_T * u_T) * T
        dps = (du_g - b.normal[:, 1]) / b.normal[:, 0]
        dflat = dflat + ev.G @ sp.diags(dps) @ mesh.tangential
    dflat = dflat.tocsr()
    blocks = [dflat[k * nn : (k + 1) * nn] for k in range(dim + len(ev.pairs))]
    fe = evaluate(forcing, u, p, q.omega, q.grad, x=mesh.positions)
    dg = dginv_dp(q.grad, q.omega, q.g_inv)
    b_k = np.einsum("nkij,nij->nk", dg, q.hess) - np.einsum("nij,nkij->nk", q.g_inv, mesh.gamma) - fe.psi_du
    J = sp.diags(-np.broadcast_to(fe.psi_u, (nn,)).astype(float))
    for k in range(dim):
        J = J + sp.diags(b_k[:, k]) @ blocks[k]
    for a, (i, j) in enumerate(ev.pairs):
        c = q.g_inv[:, i, j] * (1.0 if i == j else 2.0)
        J = J + sp.diags(c) @ blocks[dim + a]
    return J.tocsr()


def newton(mesh, forcing, u0, tol=None, max_iter=50, evaluator=None):
    """Damped Newton with Armijo backtracking (factor 1/2, at most 20 halvings)."""
    tol = default_tol(mesh) if tol is None else tol
    ev = evaluator or Evaluator(mesh, forcing)
    u = np.array(u0, dtype=float)
    F = residual(mesh, forcing, u, ev)
    hist = [float(np.max(np.abs(F)))]
    for it in range(1, max_iter + 1):
        if hist[-1] < tol:
            return u, hist, it - 1
        J = jacobian(mesh, forcing, u, ev)
        du = spsolve(J.tocsc(), -F)
        if not np.all(np.isfinite(du)):
            break
        norm0 = np.linalg.norm(F)
        lam = 1.0
        for _ in range(21):
            trial = u + lam * du
            Ft = residual(mesh, forcing, trial, ev)
            if np.all(np.isfinite(Ft)) and np.linalg.norm(Ft) <= (1.0 - 1e-4 * lam) * norm0:
                break
            lam *= 0.5
        else:
            break
        u, F = trial, Ft
        hist.append(float(np.max(np.abs(F))))
    if hist[-1] < tol:
        return u, hist, len(hist) - 1
    raise NoConvergence("Newton stalled", hist[-1], boundary_residual(mesh, apply_bc(mesh, u)))


def solve_capillary(mesh, forcing, u0=None, method="flow+newton", tol=None, flow_config=None):
    """Steady solution for a forcing with positive gravity floor.

    ``method`` is ``"flow+newton"`` (pseudo-time flow to a loose tolerance,
    then Newton), ``"flow"`` (flow alone to ``flow_config.tol_steady``) or
    ``"newton"``.
    """
    if forcing.gravity_floor <= 0:
        raise ValueError("steady solves need a forcing with positive gravity floor")
    tol = default_tol(mesh) if tol is None else tol
    u = np.zeros(mesh.n_nodes) if u0 is None else np.array(u0, dtype=float)
    ev = Evaluator(mesh, forcing)
    verdict = None
    if method in ("flow", "flow+newton"):
        cfg = flow_config or FlowConfig(t_end=200.0, tol_steady=1e-4 if method == "flow+newton" else 1e-10)
        res = run(mesh, forcing, u, cfg)
        verdict = res.verdict
        if res.verdict == "rejected":
            raise NoConvergence("pseudo-time flow rejected", np.inf, np.inf)
        u = res.state.u
        if method == "flow":
            F = residual(mesh, forcing, u, ev)
            return EllipticSolution(u, float(np.max(np.abs(F))), boundary_residual(mesh, apply_bc(mesh, u)),
                                    flow_verdict=verdict)
    elif method != "newton":
        raise ValueError(f"unknown method {method!r}")
    u, hist, its = newton(mesh, forcing, u, tol=tol, evaluator=ev)
    return EllipticSolution(
        u_inf=u,
        residual_pde=hist[-1],
        residual_bc=boundary_residual(mesh, apply_bc(mesh, u)),
        iterations=its,
        flow_verdict=verdict,
        history=hist,
    )


def uniqueness_probe(mesh, forcing, u0_a, u0_b, method="flow+newton", tol=None):
    """max |u_a - u_b| between the limits reached from two initial guesses."""
    a = solve_capillary(mesh, forcing, u0_a, method=method, tol=tol)
    b = solve_capillary(mesh, forcing, u0_b, method=method, tol=tol)
    return float(np.max(np.abs(a.u_inf - b.u_inf)))


def translating_speed(mesh, u):
    """C = -int_boundary phi / int omega^-1."""
    q, _ = mesh.graph(u)
    return -mesh.boundary_integrate(mesh.boundary.phi) / mesh.integrate(1.0 / q.omega)


def solve_translator(mesh, u0=None, C0=None, tol=None, max_iter=50):
    """Solve g^ij u_ij = C with the contact-angle condition and mean(u) = 0.

    Newton on the bordered system for (u, C).
    """
    tol = default_tol(mesh) if tol is None else tol
    zero = ForcingSpec.zero()
    ev = Evaluator(mesh, zero)
    w = mesh.weights / np.sum(mesh.weights)
    u = np.zeros(mesh.n_nodes) if u0 is None else np.array(u0, dtype=float) - np.dot(w, u0)
    C = translating_speed(mesh, u) if C0 is None else float(C0)
    ones = np.ones((mesh.n_nodes, 1))

    def full(u, C):
        return np.concatenate([residual(mesh, zero, u, ev) - C, [np.dot(w, u)]])

    R = full(u, C)
    hist = [float(np.max(np.abs(R[:-1])))]
    for _ in range(max_iter):
        if hist[-1] < tol:
            break
        J = jacobian(mesh, zero, u, ev)
        K = sp.bmat([[J, -ones], [w[None, :], None]]).tocsc()
        d = spsolve(K, -R)
        lam, n0 = 1.0, np.linalg.norm(R)
        for _ in range(21):
            ut, Ct = u + lam * d[:-1], C + lam * d[-1]
            Rt = full(ut, Ct)
            if np.all(np.isfinite(Rt)) and np.linalg.norm(Rt) <= (1.0 - 1e-4 * lam) * n0:
                break
            lam *= 0.5
        else:
            break
        u, C, R = ut, Ct, Rt
        hist.append(float(np.max(np.abs(R[:-1]))))
    if hist[-1] >= tol:
        raise NoConvergence("bordered Newton stalled", hist[-1], boundary_residual(mesh, apply_bc(mesh, u)))
    return EllipticSolution(
        u_inf=u,
        residual_pde=hist[-1],
        residual_bc=boundary_residual(mesh, apply_bc(mesh, u)),
        C=C,
        iterations=len(hist) - 1,
        history=hist,
    )


@dataclass
class EpsilonPath:
    eps: np.ndarray
    solutions: list
    eps_u_max: np.ndarray  # max |eps u_eps|
    eps_u_osc: np.ndarray  # max - min of eps u_eps
    eps_u_mean: np.ndarray
    profile_change: np.ndarray  # max |v_eps - v_prev| with v = u - mean(u)
    C_estimate: float
    u_inf: np.ndarray
    residuals: np.ndarray


def epsilon_path(mesh, eps_sequence, tol=None):
    """Solve g^ij u_ij = eps u along a decreasing eps sequence.

    Each solve is warm-started from the previous profile shifted by the
    current mean of eps u.  The limit of eps u_eps comes from one
    Richardson step on the last two (halving) values.
    """
    eps = np.asarray(eps_sequence, dtype=float)
    if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("eps sequence must be positive and decreasing")
    sols, emax, eosc, emean, change, res = [], [], [], [], [], []
    u_prev, v_prev, eps_prev = None, None, None
    for e in eps:
        forcing = ForcingSpec.linear(e)
        if u_prev is None:
            guess = np.zeros(mesh.n_nodes)
        else:
            c = mesh.mean(eps_prev * u_prev)
            guess = u_prev - mesh.mean(u_prev) + c / e
        sol = solve_capillary(mesh, forcing, guess, method="newton", tol=tol)
        u = sol.u_inf
        eu = e * u
        v = u - mesh.mean(u)
        sols.append(sol)
        emax.append(float(np.max(np.abs(eu))))
        eosc.append(float(np.ptp(eu)))
        emean.append(mesh.mean(eu))
        change.append(np.nan if v_prev is None else float(np.max(np.abs(v - v_prev))))
        res.append(sol.residual_pde)
        u_prev, v_prev, eps_prev = u, v, e
    emean = np.array(emean)
    if len(eps) >= 2 and np.isclose(eps[-2], 2 * eps[-1]):
        C_est = 2 * emean[-1] - emean[-2]
    else:
        C_est = emean[-1]
    return EpsilonPath(
        eps=eps,
        solutions=sols,
        eps_u_max=np.array(emax),
        eps_u_osc=np.array(eosc),
        eps_u_mean=emean,
        profile_change=np.array(change),
        C_estimate=float(C_est),
        u_inf=v_prev,
        residuals=np.array(res),
    )
