"""Discrete domains with contact-angle boundary closure.

Two mesh families are provided:

* interval meshes (n = 1): uniform nodes on [a, b] with one ghost node per end;
* ring meshes (n = 2): boundary-fitted polar meshes for disks, annuli, geodesic
  caps on a sphere and star-shaped plane domains.  Rings sit at uniform radial
  spacing and every ring carries its own angular count, doubled outward so
  that arc spacing stays within [h, 2h] (a single 8-node ring surrounds the
  pole).  Without the doubling the cells next to the pole would dictate an
  explicit time step thousands of times smaller.

Every node carries local coordinates: ring nodes use the chart's polar
coordinates (s, t), the pole node uses Cartesian normal coordinates where the
metric is the identity and the connection vanishes.  Derivatives are sparse
matrices acting on the extended vector [nodes, ghosts].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import ContactAngleTooSteep, DegenerateShape, MissingGhost, WrongDimension
from .geometry import FlatChart, PolarChart, SphereChart, StarshapedChart
from .graph import graph_quantities

SPECTRAL_MAX = 32  # rings up to this many nodes always use trigonometric differentiation
PHI_LIMIT = 1.0 - 1e-6


def contact_closure(u_T, phi):
    """Interior-normal derivative solving u_gamma = phi sqrt(1 + u_T^2 + u_gamma^2).

    Closed form u_gamma = phi sqrt((1 + u_T^2) / (1 - phi^2)); odd in phi.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(np.abs(phi) >= 1.0):
        raise ContactAngleTooSteep("contact closure needs |phi| < 1")
    return phi * np.sqrt((1.0 + np.square(u_T)) / (1.0 - phi**2))


def contact_closure_derivative(u_T, phi):
    """d u_gamma / d u_T."""
    u_T = np.asarray(u_T, dtype=float)
    return phi * u_T / np.sqrt((1.0 + u_T**2) * (1.0 - phi**2))


@dataclass(frozen=True)
class ContactAngle:
    """phi(t) = a + b cos(m t) along the boundary, t the polar angle.

    On an interval the left end reads phi(pi) and the right end phi(0).
    """

    a: float = 0.0
    b: float = 0.0
    m: int = 0

    def __call__(self, t):
        return self.a + self.b * np.cos(self.m * np.asarray(t, dtype=float))

    def derivative(self, t):
        return -self.b * self.m * np.sin(self.m * np.asarray(t, dtype=float))

    @property
    def bound(self):
        return abs(self.a) + abs(self.b) if self.m else abs(self.a + self.b)

    def to_dict(self):
        if self.b == 0.0:
            return {"family": "constant", "value": self.a}
        return {"family": "cosine", "a": self.a, "b": self.b, "m": self.m}


@dataclass(frozen=True)
class Shape:
    kind: str
    params: tuple = ()

    @classmethod
    def interval(cls, a=0.0, b=1.0):
        return cls("interval", (float(a), float(b)))

    @classmethod
    def disk(cls, R=1.0):
        return cls("disk", (float(R),))

    @classmethod
    def annulus(cls, r0, r1):
        return cls("annulus", (float(r0), float(r1)))

    @classmethod
    def polar_starshaped(cls, r0=1.0, amp=0.2, mode=3):
        """Boundary r(t) = r0 + amp cos(mode t)."""
        return cls("polar_starshaped", (float(r0), float(amp), int(mode)))


@dataclass
class BoundaryData:
    idx: np.ndarray
    normal: np.ndarray  # interior normal gamma, chart components
    tangent: np.ndarray
    curvature: np.ndarray
    phi: np.ndarray
    phi_T: np.ndarray
    line_weights: np.ndarray
    angle: np.ndarray


@dataclass
class DomainMesh:
    shape: Shape
    chart: object
    dim: int
    h: float
    coords: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray
    gamma: np.ndarray
    positions: np.ndarray
    ext_positions: np.ndarray
    D1: list
    D2: dict
    weights: np.ndarray
    boundary: BoundaryData
    ghost_base: sp.csr_matrix
    ghost_scale: np.ndarray
    ghost_boundary: np.ndarray
    tangential: Optional[sp.csr_matrix]
    dist: np.ndarray = None
    dist_grad: np.ndarray = None
    phi_field: np.ndarray = None
    phi_bound: float = 0.0
    inradius: float = 0.0
    ring: np.ndarray = None
    angle: np.ndarray = None
    info: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def n_ghost(self):
        return self.ghost_base.shape[0]

    @property
    def interior(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary.idx] = False
        return mask

    def integrate(self, f):
        return float(np.sum(self.weights * f))

    def boundary_integrate(self, fb):
        return float(np.sum(self.boundary.line_weights * fb))

    def mean(self, f):
        return self.integrate(f) / float(np.sum(self.weights))

    def partials(self, U):
        """First and second partials at every node from an extended vector."""
        if U.shape[0] != self.n_nodes + self.n_ghost:
            raise MissingGhost("derivatives need the ghost layer; call apply_bc first")
        n = self.dim
        p = np.empty((self.n_nodes, n))
        pp = np.empty((self.n_nodes, n, n))
        for k in range(n):
            p[:, k] = self.D1[k] @ U
        for (i, j), D in self.D2.items():
            pp[:, i, j] = pp[:, j, i] = D @ U
        return p, pp

    def graph(self, u):
        """Graph quantities of ``u`` with the contact-angle ghost layer filled."""
        U = apply_bc(self, u)
        p, pp = self.partials(U)
        return graph_quantities(p, pp, self.sigma_inv, self.gamma), p

    def laplacian_bound(self):
        """Gershgorin bound on the spectrum of the discrete Laplace-Beltrami operator."""
        n = self.dim
        L = sp.csr_matrix((self.n_nodes, self.n_nodes + self.n_ghost))
        for (i, j), D in self.D2.items():
            c = self.sigma_inv[:, i, j] * (1.0 if i == j else 2.0)
            L = L + sp.diags(c) @ D
        for k in range(n):
            c = -np.einsum("nij,nij->n", self.sigma_inv, self.gamma[:, k])
            L = L + sp.diags(c) @ self.D1[k]
        ext = sp.vstack([sp.identity(self.n_nodes, format="csr"), self.ghost_base]).tocsr()
        L = (L @ ext).tocsr()
        return float(np.max(np.asarray(abs(L).sum(axis=1)).ravel()))

    def stable_dt(self, cfl=0.4):
        """Explicit Euler step cfl * 2 / lambda_max.

        On a uniform n-dimensional Cartesian grid this equals cfl h^2 / (2 n),
        and the eigenvalues of g^ij never exceed those of sigma^ij.
        """
        return cfl * 2.0 / self.laplacian_bound()


def apply_bc(mesh, u):
    """Extended vector [u, ghosts] with the contact-angle condition built in.

    The tangential derivative comes from the boundary ring, the normal
    derivative from :func:`contact_closure`, and each ghost is placed so that
    the centered normal difference reproduces it.
    """
    u = np.asarray(u, dtype=float)
    p_s, _ = _ghost_normal_slope(mesh, u)
    ghosts = mesh.ghost_base @ u + mesh.ghost_scale * p_s[mesh.ghost_boundary]
    return np.concatenate([u, ghosts])


def _ghost_normal_slope(mesh, u):
    b = mesh.boundary
    if mesh.tangential is None:
        p_t = np.zeros(b.idx.size)
    else:
        p_t = mesh.tangential @ u
    nrm = b.normal
    u_T = b.tangent[:, -1] * p_t if mesh.dim > 1 else np.zeros_like(p_t)
    u_g = contact_closure(u_T, b.phi)
    if mesh.dim == 1:
        return u_g / nrm[:, 0], p_t
    return (u_g - nrm[:, 1] * p_t) / nrm[:, 0], p_t


def apply_bc_jacobian(mesh, u):
    """Sparse derivative of :func:`apply_bc` with respect to the node values."""
    n = mesh.n_nodes
    rows = [sp.identity(n, format="csr")]
    base = mesh.ghost_base
    if mesh.tangential is not None:
        b = mesh.boundary
        p_t = mesh.tangential @ u
        T = b.tangent[:, -1]
        du_g = contact_closure_derivative(T * p_t, b.phi) * T
        dps = (du_g - b.normal[:, 1]) / b.normal[:, 0]
        coef = mesh.ghost_scale * dps[mesh.ghost_boundary]
        base = base + sp.diags(coef) @ mesh.tangential[mesh.ghost_boundary]
    rows.append(base)
    return sp.vstack(rows).tocsr()


def boundary_residual(mesh, U):
    """max |u_gamma - phi omega| at boundary nodes from the discrete derivatives."""
    p, _ = mesh.partials(U)
    b = mesh.boundary
    pb = p[b.idx]
    u_g = np.einsum("bi,bi->b", b.normal, pb)
    omega = np.sqrt(1.0 + np.einsum("bi,bij,bj->b", pb, mesh.sigma_inv[b.idx], pb))
    return float(np.max(np.abs(u_g - b.phi * omega)))


# ----------------------------------------------------------------------------
# construction


def _smooth_cap(d, d_cap):
    """d below d_cap, then blended to the constant 1.5 d_cap with slope 1 - smoothstep."""
    d = np.asarray(d, dtype=float)
    t = np.clip((d - d_cap) / d_cap, 0.0, 1.0)
    blended = d_cap + d_cap * (t - t**3 + 0.5 * t**4)
    return np.where(d <= d_cap, d, blended)


def build_mesh(shape, h, phi=None, chart=None):
    """Build a :class:`DomainMesh`.

    ``shape`` is a :class:`Shape`; ``phi`` a :class:`ContactAngle` or a
    number; ``chart`` is ``None``/:class:`FlatChart` for the Euclidean
    setting or a :class:`SphereChart` for geodesic disks around its pole.
    """
    if phi is None:
        phi = ContactAngle()
    elif not isinstance(phi, ContactAngle):
        phi = ContactAngle(float(phi))
    if phi.bound >= PHI_LIMIT:
        raise ContactAngleTooSteep(f"max|phi| = {phi.bound} must stay below 1")
    if not h > 0:
        raise DegenerateShape("grid spacing must be positive")
    if shape.kind == "interval":
        return _build_interval(shape, h, phi)
    if shape.kind in ("disk", "annulus", "polar_starshaped"):
        return _build_rings(shape, h, phi, chart)
    raise DegenerateShape(f"unknown shape {shape.kind!r}")


def _build_interval(shape, h, phi):
    a, b = shape.params
    if not b > a:
        raise DegenerateShape("interval needs a < b")
    N = max(2, int(round((b - a) / h)))
    dx = (b - a) / N
    x = a + dx * np.arange(N + 1)
    n = N + 1
    # extended index: 0..N nodes, n = left ghost, n+1 = right ghost
    left = lambda i: n if i == 0 else i - 1
    right = lambda i: n + 1 if i == N else i + 1
    r1, c1, v1, r2, c2, v2 = [], [], [], [], [], []
    for i in range(n):
        r1 += [i, i]
        c1 += [right(i), left(i)]
        v1 += [0.5 / dx, -0.5 / dx]
        r2 += [i, i, i]
        c2 += [right(i), i, left(i)]
        v2 += [1 / dx**2, -2 / dx**2, 1 / dx**2]
    D1 = sp.csr_matrix((v1, (r1, c1)), shape=(n, n + 2))
    D2 = sp.csr_matrix((v2, (r2, c2)), shape=(n, n + 2))
    base = sp.csr_matrix(([1.0, 1.0], ([0, 1], [1, N - 1])), shape=(2, n))
    w = np.full(n, dx)
    w[[0, -1]] *= 0.5
    chart = FlatChart(1)
    phi_b = np.array([phi(np.pi), phi(0.0)])
    bnd = BoundaryData(
        idx=np.array([0, N]),
        normal=np.array([[1.0], [-1.0]]),
        tangent=np.zeros((2, 1)),
        curvature=np.zeros(2),
        phi=phi_b,
        phi_T=np.zeros(2),
        line_weights=np.ones(2),
        angle=np.array([np.pi, 0.0]),
    )
    ext = np.concatenate([x, [a - dx, b + dx]])[:, None]
    mesh = DomainMesh(
        shape=shape,
        chart=chart,
        dim=1,
        h=dx,
        coords=x[:, None],
        sigma=np.ones((n, 1, 1)),
        sigma_inv=np.ones((n, 1, 1)),
        gamma=np.zeros((n, 1, 1, 1)),
        positions=x[:, None],
        ext_positions=ext,
        D1=[D1],
        D2={(0, 0): D2},
        weights=w,
        boundary=bnd,
        ghost_base=base,
        ghost_scale=np.array([-2 * dx, 2 * dx]),
        ghost_boundary=np.array([0, 1]),
        tangential=None,
    )
    mesh.inradius = 0.5 * (b - a)
    d_true = np.minimum(ext[:, 0] - a, b - ext[:, 0])
    _attach_distance(mesh, d_true)
    mesh.phi_field = np.where(x < 0.5 * (a + b), phi(np.pi), phi(0.0))
    mesh.phi_bound = float(np.max(np.abs(phi_b)))
    return mesh


def spectral_limit(h):
    """Largest ring count differentiated spectrally at grid spacing h.

    Ring counts near the center do not grow under refinement, so a fixed
    cutoff would freeze the angular error of the first finite-difference
    ring.  Growing the cutoff like h^(-1/2) makes that error O(h^2) for the
    4th-order stencil while the dense blocks stay small.
    """
    m = SPECTRAL_MAX
    while m < 2 * np.pi / np.sqrt(h):
        m *= 2
    return m


def _angular_ops(m, spectral_max=SPECTRAL_MAX):
    """Periodic first and second derivative matrices on m equispaced angles."""
    dt = 2 * np.pi / m
    if m <= spectral_max:
        k = np.arange(m)
        diff = (k[:, None] - k[None, :]) % m
        with np.errstate(divide="ignore", invalid="ignore"):
            sgn = (-1.0) ** diff
            d1 = 0.5 * sgn / np.tan(diff * dt / 2)
            d2 = -0.5 * sgn / np.sin(diff * dt / 2) ** 2
        d1[diff == 0] = 0.0
        d2[diff == 0] = -(m**2) / 12.0 - 1.0 / 6.0
        return sp.csr_matrix(d1), sp.csr_matrix(d2)
    e = np.ones(m)
    offs1 = {-2: 1 / 12, -1: -8 / 12, 1: 8 / 12, 2: -1 / 12}
    offs2 = {-2: -1 / 12, -1: 16 / 12, 0: -30 / 12, 1: 16 / 12, 2: -1 / 12}

    def circ(offs, scale):
        rows, cols, vals = [], [], []
        for o, c in offs.items():
            rows.append(np.arange(m))
            cols.append((np.arange(m) + o) % m)
            vals.append(c * e / scale)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))

    return circ(offs1, dt), circ(offs2, dt**2)


def _ring_sampler(m_src, m_dst):
    """Matrix (m_dst x m_src) sampling a ring of m_src angles at m_dst angles."""
    if m_src == m_dst:
        return sp.identity(m_dst, format="csr")
    if m_src > m_dst:
        step = m_src // m_dst
        return sp.csr_matrix((np.ones(m_dst), (np.arange(m_dst), step * np.arange(m_dst))), shape=(m_dst, m_src))
    # trigonometric interpolation; only the few rings where counts double use it
    t = 2 * np.pi * np.arange(m_dst) / m_dst
    x = t[:, None] - (2 * np.pi / m_src) * np.arange(m_src)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.sin(m_src * x / 2) / (m_src * np.tan(x / 2))
    w[np.isclose(np.mod(x + np.pi, 2 * np.pi) - np.pi, 0.0, atol=1e-12)] = 1.0
    w[np.abs(w) < 1e-15] = 0.0
    return sp.csr_matrix(w)


def _starshaped_radius(r0, amp, mode):
    def radius(t):
        t = np.asarray(t, dtype=float)
        return (
            r0 + amp * np.cos(mode * t),
            -amp * mode * np.sin(mode * t),
            -amp * mode**2 * np.cos(mode * t),
        )

    return radius


def _build_rings(shape, h, phi, chart):
    if chart is None or isinstance(chart, FlatChart):
        base_chart = None
    elif isinstance(chart, SphereChart):
        base_chart = chart
    else:
        raise DegenerateShape("ring meshes need a flat or round-sphere chart")

    has_center = shape.kind != "annulus"
    if shape.kind == "disk":
        (R,) = shape.params
        if not R > 0:
            raise DegenerateShape("disk radius must be positive")
        if base_chart is None:
            comp = PolarChart()
            s_max, s_scale = R, 1.0
        else:
            if not R < np.pi * base_chart.radius:
                raise DegenerateShape("geodesic disk must stay inside the chart")
            comp = base_chart
            s_max, s_scale = R / base_chart.radius, base_chart.radius
        s0 = 0.0
    elif shape.kind == "annulus":
        r0, r1 = shape.params
        if not 0 < r0 < r1:
            raise DegenerateShape("annulus needs 0 < r0 < r1")
        if base_chart is not None:
            raise DegenerateShape("annulus is only provided on the flat chart")
        comp, s0, s_max, s_scale = PolarChart(), r0, r1, 1.0
    else:
        r0, amp, mode = shape.params
        if not (r0 > 0 and abs(amp) < r0 and mode >= 0):
            raise DegenerateShape("star-shaped radius must stay positive")
        if base_chart is not None:
            raise DegenerateShape("star-shaped domains are only provided on the flat chart")
        comp = StarshapedChart(_starshaped_radius(r0, amp, mode))
        s0, s_max, s_scale = 0.0, 1.0, r0 + abs(amp)

    N = max(2, int(round((s_max - s0) * s_scale / h)))
    ds = (s_max - s0) / N
    dphys = ds * s_scale
    s_levels = s0 + ds * np.arange(N + 1)

    def circumference(s):
        t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        q = np.stack([np.full_like(t, s), t], axis=-1)
        return 2 * np.pi * float(np.max(np.sqrt(comp.metric(q)[:, 1, 1])))

    counts = []
    first = 1 if has_center else 0
    for j in range(first, N + 1):
        need = circumference(s_levels[j]) / (2.0 * dphys)
        m = 8
        while m < need:
            m *= 2
        counts.append(m)
    if shape.kind == "annulus":
        counts = [max(counts)] * len(counts)
    counts = list(np.maximum.accumulate(counts))

    # node layout
    ring_start, ring_m, ring_s = [], [], []
    n = 1 if has_center else 0
    for j, m in zip(range(first, N + 1), counts):
        ring_start.append(n)
        ring_m.append(m)
        ring_s.append(s_levels[j])
        n += m
    n_nodes = n
    ghost_levels = []  # (start, m, s)
    outer_ghost = (n, ring_m[-1], s_levels[-1] + ds)
    n += ring_m[-1]
    ghost_levels.append(outer_ghost)
    inner_ghost = None
    if not has_center:
        inner_ghost = (n, ring_m[0], s0 - ds)
        n += ring_m[0]
        ghost_levels.append(inner_ghost)
    n_ext = n

    # levels list for radial stencils: index -> (start, m, s, kind)
    levels = []
    if has_center:
        levels.append((0, 1, 0.0, "center"))
    elif inner_ghost is not None:
        levels.append(inner_ghost + ("ghost",))
    for st, m, s in zip(ring_start, ring_m, ring_s):
        levels.append((st, m, s, "ring"))
    levels.append(outer_ghost + ("ghost",))

    coords = np.zeros((n_nodes, 2))
    ext_q = np.zeros((n_ext, 2))
    ring_id = np.full(n_nodes, -1)
    angle = np.zeros(n_nodes)
    for r, (st, m, s, kind) in enumerate(levels):
        t = 2 * np.pi * np.arange(m) / m
        if kind == "center":
            continue
        ext_q[st : st + m, 0] = s
        ext_q[st : st + m, 1] = t
        if kind == "ring":
            coords[st : st + m, 0] = s
            coords[st : st + m, 1] = t
            ring_id[st : st + m] = r
            angle[st : st + m] = t

    ang_ops = {}
    m_spec = spectral_limit(h)

    def ops(m):
        if m not in ang_ops:
            ang_ops[m] = _angular_ops(m, m_spec)
        return ang_ops[m]

    def place(block, row0, col0, shape_=None):
        block = sp.coo_matrix(block)
        return block.row + row0, block.col + col0, block.data

    buckets = {name: ([], [], []) for name in ("s", "ss", "t", "tt", "st", "x", "y", "xx", "xy", "yy")}

    def add(name, r, c, v):
        buckets[name][0].append(np.asarray(r))
        buckets[name][1].append(np.asarray(c))
        buckets[name][2].append(np.asarray(v, dtype=float))

    def sampler(level, m_dst):
        st, m, s, kind = level
        if kind == "center":
            return sp.csr_matrix(np.ones((m_dst, 1))), st
        return _ring_sampler(m, m_dst), st

    def dtheta_at(level, m_dst):
        """Angular derivative of a level sampled at m_dst angles; zero at the pole."""
        st, m, s, kind = level
        if kind == "center":
            return sp.csr_matrix((m_dst, 1)), st
        return (_ring_sampler(m, m_dst) @ ops(m)[0]).tocsr(), st

    for r, (st, m, s, kind) in enumerate(levels):
        if kind != "ring":
            continue
        lo, hi = levels[r - 1], levels[r + 1]
        S_lo, c_lo = sampler(lo, m)
        S_hi, c_hi = sampler(hi, m)
        for blk, col, cs, css in ((S_hi, c_hi, 0.5 / ds, 1 / ds**2), (S_lo, c_lo, -0.5 / ds, 1 / ds**2)):
            rr, cc, vv = place(blk, st, col)
            add("s", rr, cc, cs * vv)
            add("ss", rr, cc, css * vv)
        add("ss", np.arange(st, st + m), np.arange(st, st + m), np.full(m, -2 / ds**2))
        d1, d2 = ops(m)
        rr, cc, vv = place(d1, st, st)
        add("t", rr, cc, vv)
        rr, cc, vv = place(d2, st, st)
        add("tt", rr, cc, vv)
        for lvl, sign in ((hi, 1.0), (lo, -1.0)):
            blk, col = dtheta_at(lvl, m)
            rr, cc, vv = place(blk, st, col)
            add("st", rr, cc, sign * 0.5 / ds * vv)

    if has_center:
        st1, m1, s1, _ = levels[1]
        t1 = 2 * np.pi * np.arange(m1) / m1
        xy = comp.pole_coords(np.full(m1, s1), t1)
        x, y = xy[:, 0], xy[:, 1]
        A = np.stack([x, y, x * x, x * y, y * y], axis=1)
        P = np.linalg.pinv(A)
        cols = np.concatenate([[0], np.arange(st1, st1 + m1)])
        for name, row, fac in (("x", 0, 1.0), ("y", 1, 1.0), ("xx", 2, 2.0), ("xy", 3, 1.0), ("yy", 4, 2.0)):
            vals = np.concatenate([[-P[row].sum()], P[row]]) * fac
            add(name, np.zeros(m1 + 1, dtype=int), cols, vals)

    def assemble(*names):
        rows, cols, vals = [], [], []
        for nm in names:
            rows += buckets[nm][0]
            cols += buckets[nm][1]
            vals += buckets[nm][2]
        if not rows:
            return sp.csr_matrix((n_nodes, n_ext))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_nodes, n_ext)
        )

    D1 = [assemble("s", "x"), assemble("t", "y")]
    D2 = {(0, 0): assemble("ss", "xx"), (0, 1): assemble("st", "xy"), (1, 1): assemble("tt", "yy")}

    sigma = comp.metric(coords)
    gamma = np.zeros((n_nodes, 2, 2, 2))
    ring_mask = ring_id >= 0
    gamma[ring_mask] = comp.christoffel(coords[ring_mask])
    if has_center:
        sigma[0] = np.eye(2)
    sigma_inv = np.linalg.inv(sigma)

    # quadrature over dual cells [s - ds/2, s + ds/2] clipped to the domain; the
    # pole owns the disk of radius ds/2.  These volumes match the flux form of
    # the radial stencil, so discrete integration by parts holds to O(h^2).
    gl_x, gl_w = np.polynomial.legendre.leggauss(4)

    def cell_volume(lo, hi, t):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        total = np.zeros_like(t)
        for x, wq in zip(gl_x, gl_w):
            q = np.stack([np.full_like(t, mid + half * x), t], axis=-1)
            total += wq * half * comp.volume_element(q)
        return total

    weights = np.zeros(n_nodes)
    for r, (st, m, s, kind) in enumerate(levels):
        if kind != "ring":
            continue
        lo, hi = max(s - 0.5 * ds, s0), min(s + 0.5 * ds, s_max)
        weights[st : st + m] = cell_volume(lo, hi, coords[st : st + m, 1]) * (2 * np.pi / m)
    if has_center:
        m1 = levels[1][1]
        weights[0] = np.sum(cell_volume(0.0, 0.5 * ds, 2 * np.pi * np.arange(m1) / m1)) * (2 * np.pi / m1)

    # boundary data
    b_levels = [levels[-2]]
    if not has_center:
        b_levels.insert(0, levels[1])
    b_idx, b_normal, b_tan, b_k, b_phi, b_phiT, b_lw, b_ang = [], [], [], [], [], [], [], []
    tangential_rows = []
    for st, m, s, _ in b_levels:
        idx = np.arange(st, st + m)
        t = coords[idx, 1]
        si = sigma_inv[idx]
        outer = s == s_levels[-1]
        sgn = -1.0 if outer else 1.0
        nrm = sgn * si[:, 0, :] / np.sqrt(si[:, 0, 0])[:, None]
        g_tt = sigma[idx, 1, 1]
        tan = np.zeros((m, 2))
        tan[:, 1] = 1.0 / np.sqrt(g_tt)
        if shape.kind == "disk":
            k = np.full(m, 1.0 / R) if base_chart is None else np.full(m, 1.0 / (base_chart.radius * np.tan(s_max)))
        elif shape.kind == "annulus":
            k = np.full(m, 1.0 / s if outer else -1.0 / s)
        else:
            k = _discrete_curvature(comp.embed(coords[idx]))
        b_idx.append(idx)
        b_normal.append(nrm)
        b_tan.append(tan)
        b_k.append(k)
        b_phi.append(phi(t))
        b_phiT.append(phi.derivative(t) / np.sqrt(g_tt))
        b_lw.append(np.sqrt(g_tt) * 2 * np.pi / m)
        b_ang.append(t)
        tangential_rows.append((idx, ops(m)[0], st))
    bnd = BoundaryData(
        idx=np.concatenate(b_idx),
        normal=np.concatenate(b_normal),
        tangent=np.concatenate(b_tan),
        curvature=np.concatenate(b_k),
        phi=np.concatenate(b_phi),
        phi_T=np.concatenate(b_phiT),
        line_weights=np.concatenate(b_lw),
        angle=np.concatenate(b_ang),
    )
    tr, tc, tv = [], [], []
    offset = 0
    for idx, d1, st in tangential_rows:
        c = sp.coo_matrix(d1)
        tr.append(c.row + offset)
        tc.append(c.col + st)
        tv.append(c.data)
        offset += idx.size
    tangential = sp.csr_matrix((np.concatenate(tv), (np.concatenate(tr), np.concatenate(tc))), shape=(offset, n_nodes))

    # ghosts: outer ring sits at s_N + ds, inner ring (annulus) at s0 - ds
    gb_r, gb_c, gb_v, g_scale, g_bnd = [], [], [], [], []
    n_b_outer_start = 0 if has_center else b_levels[0][1]
    st_o, m_o, _ = outer_ghost
    prev = levels[-3]
    S, col = sampler(prev, m_o)
    c = sp.coo_matrix(S)
    gb_r.append(c.row)
    gb_c.append(c.col + col)
    gb_v.append(c.data)
    g_scale.append(np.full(m_o, 2 * ds))
    g_bnd.append(n_b_outer_start + np.arange(m_o))
    if inner_ghost is not None:
        st_i, m_i, _ = inner_ghost
        nxt = levels[2]
        S, col = sampler(nxt, m_i)
        c = sp.coo_matrix(S)
        gb_r.append(c.row + m_o)
        gb_c.append(c.col + col)
        gb_v.append(c.data)
        g_scale.append(np.full(m_i, -2 * ds))
        g_bnd.append(np.arange(m_i))
    n_ghost = n_ext - n_nodes
    ghost_base = sp.csr_matrix(
        (np.concatenate(gb_v), (np.concatenate(gb_r), np.concatenate(gb_c))), shape=(n_ghost, n_nodes)
    )

    positions = coords.copy()
    if base_chart is None:
        positions = comp.embed(coords)
        ext_pos = comp.embed(ext_q)
    else:
        ext_pos = ext_q.copy()
    if has_center:
        positions[0] = 0.0
        ext_pos[0] = 0.0

    mesh = DomainMesh(
        shape=shape,
        chart=comp,
        dim=2,
        h=dphys,
        coords=coords,
        sigma=sigma,
        sigma_inv=sigma_inv,
        gamma=gamma,
        positions=positions,
        ext_positions=ext_pos,
        D1=D1,
        D2=D2,
        weights=weights,
        boundary=bnd,
        ghost_base=ghost_base,
        ghost_scale=np.concatenate(g_scale),
        ghost_boundary=np.concatenate(g_bnd),
        tangential=tangential,
        ring=ring_id,
        angle=angle,
        info={
            "rings": len(ring_m),
            "counts": ring_m,
            "ds": ds,
            "s_levels": s_levels,
            "has_center": has_center,
            "spectral_max": m_spec,
        },
    )

    # distance to the boundary, signed negative on ghosts outside the domain
    if shape.kind == "disk":
        d_true = (s_max - ext_q[:, 0]) * s_scale
        if has_center:
            d_true[0] = s_max * s_scale
        mesh.inradius = s_max * s_scale
    elif shape.kind == "annulus":
        d_true = np.minimum(ext_q[:, 0] - s0, s_max - ext_q[:, 0])
        mesh.inradius = 0.5 * (s_max - s0)
    else:
        tt = np.linspace(0, 2 * np.pi, 8192, endpoint=False)
        curve = comp.embed(np.stack([np.ones_like(tt), tt], axis=-1))
        dist, _ = cKDTree(curve).query(ext_pos)
        sgn = np.where(ext_q[:, 0] > 1.0 + 1e-12, -1.0, 1.0)
        if has_center:
            sgn[0] = 1.0
        d_true = sgn * dist
        mesh.inradius = float(np.max(d_true[:n_nodes]))
    _attach_distance(mesh, d_true)
    mesh.phi_field = phi(angle)
    mesh.phi_bound = float(np.max(np.abs(bnd.phi)))
    return mesh


def _discrete_curvature(xy):
    """Signed curvature of a closed counterclockwise curve sampled at equispaced parameters."""
    m = xy.shape[0]
    k = np.fft.fftfreq(m, d=1.0 / m)

    def deriv(f, order):
        kk = k.copy()
        if m % 2 == 0 and order == 1:
            kk[m // 2] = 0
        return np.real(np.fft.ifft((1j * kk) ** order * np.fft.fft(f)))

    x1, y1 = deriv(xy[:, 0], 1), deriv(xy[:, 1], 1)
    x2, y2 = deriv(xy[:, 0], 2), deriv(xy[:, 1], 2)
    return (x1 * y2 - y1 * x2) / (x1**2 + y1**2) ** 1.5


def _attach_distance(mesh, d_true):
    d_cap = mesh.inradius / 3.0
    d_ext = _smooth_cap(d_true, d_cap)
    n = mesh.n_nodes
    mesh.dist = d_ext[:n]
    mesh.dist_grad = np.stack([D @ d_ext for D in mesh.D1], axis=-1)
    mesh.info["d_cap"] = d_cap


# ----------------------------------------------------------------------------
# boundary diagnostics


@dataclass
class ConvexityReport:
    holds: bool
    margin: float
    argmin: int
    angle: float


def convexity_condition(mesh, delta0):
    """min over the boundary of k - |phi_T| / sqrt(1 - phi^2) - delta0."""
    if mesh.dim != 2:
        raise WrongDimension("the convexity condition is stated for surfaces (n = 2)")
    b = mesh.boundary
    margin = b.curvature - np.abs(b.phi_T) / np.sqrt(1.0 - b.phi**2) - delta0
    i = int(np.argmin(margin))
    return ConvexityReport(holds=bool(margin[i] > 0), margin=float(margin[i]), argmin=int(b.idx[i]), angle=float(b.angle[i]))


def frame_transport_residual(mesh):
    """max over boundary nodes of |nabla_T T - k gamma| in the metric.

    Differentiates the tangent field along each boundary ring with the
    ring's angular operator.
    """
    if mesh.dim != 2:
        raise WrongDimension("boundary frames need n = 2")
    b = mesh.boundary
    idx = b.idx
    T = b.tangent
    dT = np.zeros_like(T)
    start = 0
    for _ in range(len(np.unique(mesh.ring[idx]))):
        ring = mesh.ring[idx[start]]
        m = int(np.sum(mesh.ring[idx] == ring))
        d1 = _angular_ops(m, mesh.info["spectral_max"])[0]
        sl = slice(start, start + m)
        dT[sl] = (d1 @ T[sl]) * T[sl, 1:2]
        start += m
    gam = mesh.gamma[idx]
    nabla = dT + np.einsum("bkij,bi,bj->bk", gam, T, T)
    diff = nabla - b.curvature[:, None] * b.normal
    return float(np.max(np.sqrt(np.einsum("bi,bij,bj->b", diff, mesh.sigma[idx], diff))))
