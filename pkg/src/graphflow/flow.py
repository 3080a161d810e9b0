"""Explicit time integration of u_t = g^ij(Du) u_ij - psi(x, u, Du) with u_gamma = phi omega.

The boundary condition is a constraint, not a datum: boundary nodes evolve by
the same formula and the ghost layer is rebuilt from the contact-angle
closure before every evaluation.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .domain import contact_closure
from .errors import StepRejected
from .forcing import ForcingSpec

MONITOR_COLUMNS = (
    "t",
    "dt",
    "u_min",
    "u_max",
    "ut_max",
    "ut_decay",
    "omega_max",
    "U_t",
    "eta_omega_max",
    "eta_argmax_on_boundary",
    "energy_lhs",
    "energy_rhs",
)


class Evaluator:
    """Fast pointwise evaluation of the flow speed on a fixed mesh.

    The ghost closure is folded into the derivative operators: ghost values
    are ghost_base @ u + ghost_scale * p_s, so every partial equals
    D_eff @ u + G @ p_s with p_s the closure's normal slope per boundary node.
    """

    def __init__(self, mesh, forcing: ForcingSpec):
        self.mesh = mesh
        self.forcing = forcing
        n = mesh.dim
        nn = mesh.n_nodes
        self.pairs = [(i, j) for i in range(n) for j in range(i, n)]
        D = sp.vstack(list(mesh.D1) + [mesh.D2[ij] for ij in self.pairs]).tocsr()
        D_nodes, D_ghost = D[:, :nn], D[:, nn:]
        self.D_eff = (D_nodes + D_ghost @ mesh.ghost_base).tocsr()
        sel = sp.csr_matrix(
            (mesh.ghost_scale, (np.arange(mesh.n_ghost), mesh.ghost_boundary)),
            shape=(mesh.n_ghost, mesh.boundary.idx.size),
        )
        self.G = (D_ghost @ sel).tocsr()
        b = mesh.boundary
        if mesh.tangential is None:
            self.const = self.G @ (contact_closure(0.0, b.phi) / b.normal[:, 0])
        else:
            self.const = None
            self.tang = mesh.tangential
            self.T = b.tangent[:, 1]
            self.phi_scale = b.phi / np.sqrt(1.0 - b.phi**2)
            self.inv_gs = 1.0 / b.normal[:, 0]
            self.g_t = b.normal[:, 1]
        self.si = {ij: mesh.sigma_inv[:, ij[0], ij[1]].copy() for ij in self.pairs}
        self.gam = {ij: [mesh.gamma[:, k, ij[0], ij[1]].copy() for k in range(n)] for ij in self.pairs}
        self.curved = bool(np.any(mesh.gamma != 0))
        self.x = mesh.positions
        self.offset = forcing.offset(self.x) if forcing.kind == "capillary" else 0.0
        self.last_p = None

    def derivatives(self, u):
        flat = self.D_eff @ u
        if self.const is not None:
            flat += self.const
        else:
            p_t = self.tang @ u
            u_T = self.T * p_t
            p_s = (self.phi_scale * np.sqrt(1.0 + u_T * u_T) - self.g_t * p_t) * self.inv_gs
            flat += self.G @ p_s
        nn, dim = self.mesh.n_nodes, self.mesh.dim
        flat = flat.reshape(-1, nn)
        return flat[:dim], {ij: flat[dim + a] for a, ij in enumerate(self.pairs)}

    def speed(self, u):
        """Return ``(u_t, omega, psi_u)`` at every node."""
        p, pp = self.derivatives(u)
        self.last_p = p
        dim = self.mesh.dim
        if dim == 1:
            s = self.si[(0, 0)]
            hess = pp[(0, 0)]
            if self.curved:
                hess = hess - self.gam[(0, 0)][0] * p[0]
            w2 = 1.0 + s * p[0] ** 2
            spd = s * hess / w2
        else:
            s00, s01, s11 = self.si[(0, 0)], self.si[(0, 1)], self.si[(1, 1)]
            g0 = s00 * p[0] + s01 * p[1]
            g1 = s01 * p[0] + s11 * p[1]
            w2 = 1.0 + g0 * p[0] + g1 * p[1]
            hs = {}
            for ij in self.pairs:
                hv = pp[ij]
                if self.curved:
                    G = self.gam[ij]
                    hv = hv - G[0] * p[0] - G[1] * p[1]
                hs[ij] = hv
            lap = s00 * hs[(0, 0)] + 2.0 * s01 * hs[(0, 1)] + s11 * hs[(1, 1)]
            quad = g0 * g0 * hs[(0, 0)] + 2.0 * g0 * g1 * hs[(0, 1)] + g1 * g1 * hs[(1, 1)]
            spd = lap - quad / w2
        omega = np.sqrt(w2)
        kind = self.forcing.kind
        if kind == "zero":
            return spd, omega, 0.0
        if kind == "capillary":
            k = self.forcing.kappa
            return spd - k * (u - self.offset) * omega, omega, k * omega
        if kind == "linear":
            e = self.forcing.eps
            return spd - e * u, omega, e
        return spd - self.forcing.c, omega, 0.0


@dataclass
class GraphState:
    t: float
    u: np.ndarray
    _cache: Optional[object] = field(default=None, repr=False)

    def quantities(self, mesh):
        if self._cache is None:
            self._cache = mesh.graph(self.u)[0]
        return self._cache


@dataclass
class FlowConfig:
    cfl: float = 0.4
    t_end: float = 10.0
    dt: Optional[float] = None
    tol_steady: float = 1e-10
    tol_trans: float = 1e-8
    record_every: Optional[int] = None  # 1 for n = 1, 10 for n = 2
    window: int = 50
    N: float = 1.0
    K: float = 1.0
    chi0: Optional[float] = None  # None: running max(0, -min psi_u)
    blowup: float = 1e6
    snapshot_times: tuple = ()
    stop_on_converge: bool = True

    def cadence(self, dim):
        if self.record_every is not None:
            return int(self.record_every)
        return 1 if dim == 1 else 10


class MonitorSeries:
    """Per-record diagnostics; columns follow :data:`MONITOR_COLUMNS`."""

    columns = MONITOR_COLUMNS

    def __init__(self):
        self.rows = []

    def append(self, **values):
        self.rows.append(tuple(float(values[c]) for c in self.columns))

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, name):
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([repr(v) for v in r])

    @classmethod
    def from_csv(cls, path):
        out = cls()
        with open(path) as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if tuple(header) != cls.columns:
                raise ValueError("unexpected monitor columns")
            out.rows = [tuple(float(v) for v in row) for row in rd]
        return out


class _Energy:
    """E(u) = int omega + int_boundary u phi + int g(x, u)."""

    def __init__(self, mesh, forcing):
        self.mesh = mesh
        self.forcing = forcing
        self.phi_b = mesh.boundary.phi

    def __call__(self, u, omega):
        g = self.forcing.primitive(u, self.mesh.positions)
        if g is None:
            return np.nan
        m = self.mesh
        return m.integrate(omega) + m.boundary_integrate(u[m.boundary.idx] * self.phi_b) + m.integrate(g)


def rhs(state, mesh, forcing, evaluator=None):
    ev = evaluator or Evaluator(mesh, forcing)
    return ev.speed(state.u)[0]


def step(state, mesh, forcing, dt, evaluator=None, blowup=1e6):
    """One explicit Euler step; raises :class:`StepRejected` on blow-up."""
    ev = evaluator or Evaluator(mesh, forcing)
    ut, omega, _ = ev.speed(state.u)
    return _advance(state, ut, omega, dt, blowup)


def _advance(state, ut, omega, dt, blowup):
    u_new = state.u + dt * ut
    t_new = state.t + dt
    if not np.all(np.isfinite(u_new)) or np.max(np.abs(u_new)) > blowup:
        raise StepRejected(f"|u| exceeded {blowup:g} or became non-finite", t_new)
    if np.max(omega) > blowup:
        raise StepRejected(f"omega exceeded {blowup:g}", state.t)
    return GraphState(t_new, u_new)


def eta_field(mesh, u, p, omega, N=1.0, K=1.0):
    """eta = exp(K u) (N d + 1 - phi <v, Dd>) for partials ``p`` of shape (dim, nodes)."""
    grad = np.einsum("nij,jn->in", mesh.sigma_inv, p)
    vdd = np.einsum("in,ni->n", grad, mesh.dist_grad) / omega
    return np.exp(K * u) * (N * mesh.dist + 1.0 - mesh.phi_field * vdd)


@dataclass
class RunResult:
    state: GraphState
    series: MonitorSeries
    verdict: str
    value: Optional[float] = None  # constant value or translator speed
    ut: Optional[np.ndarray] = None
    steps: int = 0
    reject_time: Optional[float] = None
    snapshots: list = field(default_factory=list)
    dt: float = 0.0


class _Recorder:
    """Buffers raw records and turns them into monitor rows in vectorized batches."""

    def __init__(self, mesh, forcing, config, series, batch=256):
        self.mesh = mesh
        self.config = config
        self.series = series
        self.energy = _Energy(mesh, forcing)
        self.batch = batch
        self.raw = []
        self.U_t = 0.0
        self.E0 = None
        b = mesh.boundary
        self.bidx, self.lw = b.idx, b.line_weights * b.phi
        self.interior = mesh.interior
        self.forcing = forcing

    def add(self, t, dt, u, p, omega, ut_max, chi0, lhs):
        if self.E0 is None:
            self.E0 = self.energy(u, omega)
        self.raw.append((t, dt, u.copy(), p.copy(), omega.copy(), ut_max, chi0, lhs))
        if len(self.raw) >= self.batch:
            self.flush()

    def flush(self):
        if not self.raw:
            return
        mesh, cfg = self.mesh, self.config
        t, dt, u, p, om, utm, chi0, lhs = (np.array(c) for c in zip(*self.raw))
        self.raw = []
        w = mesh.weights
        g = self.forcing.primitive(u, mesh.positions)
        if g is None:
            E = np.full(len(t), np.nan)
        else:
            E = om @ w + u[:, self.bidx] @ self.lw + g @ w
        grad = np.einsum("nij,rjn->rin", mesh.sigma_inv, p)
        vdd = np.einsum("rin,ni->rn", grad, mesh.dist_grad) / om
        with np.errstate(over="ignore"):  # diverging runs may overflow; inf is the honest record
            eta_w = np.exp(cfg.K * u) * (cfg.N * mesh.dist + 1.0 - mesh.phi_field * vdd) * om
        arg = np.argmax(eta_w, axis=1)
        U_t = np.maximum.accumulate(np.maximum(np.max(np.abs(u), axis=1), self.U_t))
        self.U_t = float(U_t[-1])
        cols = np.column_stack(
            [
                t,
                dt,
                u.min(axis=1),
                u.max(axis=1),
                utm,
                np.exp(-chi0 * t) * utm,
                om.max(axis=1),
                U_t,
                eta_w[np.arange(len(t)), arg],
                (~self.interior[arg]).astype(float),
                lhs,
                self.E0 - E,
            ]
        )
        self.series.rows.extend(map(tuple, cols.tolist()))


def monitors_update(series, mesh, state, forcing, config=None, energy_lhs=0.0, E0=None, chi0=0.0, U_t=0.0):
    """Append one monitor record for ``state``; returns the series.

    Stand-alone form of the recorder used inside :func:`run`.
    """
    config = config or FlowConfig()
    ev = Evaluator(mesh, forcing)
    ut, omega, _ = ev.speed(state.u)
    rec = _Recorder(mesh, forcing, config, series)
    rec.U_t = U_t
    rec.E0 = E0
    rec.add(state.t, 0.0, state.u, ev.last_p, omega, float(np.max(np.abs(ut))), chi0, energy_lhs)
    rec.flush()
    return series


def run(mesh, forcing, u0, config: FlowConfig = None):
    """Integrate until ``t_end`` or until a convergence criterion fires."""
    config = config or FlowConfig()
    ev = Evaluator(mesh, forcing)
    dt = config.dt if config.dt is not None else mesh.stable_dt(config.cfl)
    cadence = config.cadence(mesh.dim)
    state = GraphState(0.0, np.array(u0, dtype=float))
    series = MonitorSeries()
    rec = _Recorder(mesh, forcing, config, series)
    ut, omega, psi_u = ev.speed(state.u)
    chi0 = max(0.0, -float(np.min(psi_u)))
    lhs = 0.0
    w = mesh.weights
    I_prev = float(np.dot(w, ut * ut / omega))
    ut_hist = deque(maxlen=config.window)
    osc_hist = deque(maxlen=config.window)
    snaps = sorted(config.snapshot_times)
    snapshots = []
    n_steps = 0
    verdict, value, reject_t = "timeout", None, None
    last_recorded = -1
    blowup = config.blowup
    t_stop = config.t_end - 1e-12 * max(1.0, config.t_end)
    while True:
        if snaps and state.t >= snaps[0] - 0.5 * dt:
            snapshots.append((state.t, state.u.copy()))
            snaps.pop(0)
        if n_steps % cadence == 0:
            ut_max = float(max(ut.max(), -ut.min()))
            rec.add(state.t, dt, state.u, ev.last_p, omega, ut_max, chi0 if config.chi0 is None else config.chi0, lhs)
            last_recorded = n_steps
            ut_hist.append(ut_max)
            osc_hist.append(float(ut.max() - ut.min()))
            if config.stop_on_converge and len(ut_hist) == config.window:
                if max(ut_hist) < config.tol_steady:
                    if forcing.kind == "zero":
                        verdict, value = "constant", mesh.mean(state.u)
                    else:
                        verdict = "steady"
                    break
                # gravity keeps solutions bounded, so only unforced or constant forcing can translate
                if (
                    forcing.gravity_floor == 0
                    and max(osc_hist) < config.tol_trans
                    and max(ut_hist) - min(ut_hist) < config.tol_trans
                    and min(ut_hist) > 100 * config.tol_trans
                ):
                    verdict, value = "translator", mesh.mean(ut)
                    break
        if state.t >= t_stop:
            break
        h = min(dt, config.t_end - state.t)
        u_new = state.u + h * ut
        if not np.isfinite(u_new).all() or np.abs(u_new).max() > blowup or omega.max() > blowup:
            verdict, reject_t = "rejected", state.t + h
            break
        state = GraphState(state.t + h, u_new)
        n_steps += 1
        ut, omega, psi_u = ev.speed(state.u)
        if np.ndim(psi_u):
            chi0 = max(chi0, -float(psi_u.min()))
        I_now = float(np.dot(w, ut * ut / omega))
        lhs += 0.5 * h * (I_prev + I_now)
        I_prev = I_now
    if last_recorded != n_steps and verdict != "rejected":
        rec.add(state.t, dt, state.u, ev.last_p, omega, float(np.abs(ut).max()), chi0, lhs)
    rec.flush()
    return RunResult(state, series, verdict, value, ut, n_steps, reject_t, snapshots, dt)


def write_snapshot(path, mesh, u):
    """CSV with node_id, coordinates, u, omega, H, |A|^2."""
    q, _ = mesh.graph(u)
    names = ["x", "y", "z"][: mesh.positions.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", *names, "u", "omega", "H", "A2"])
        for i in range(mesh.n_nodes):
            w.writerow([i, *(repr(float(c)) for c in mesh.positions[i]), repr(float(u[i])),
                        repr(float(q.omega[i])), repr(float(q.H[i])), repr(float(q.A2[i]))])
