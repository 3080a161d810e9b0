"""Riemannian tensor calculus on a single coordinate chart.

Index layout used throughout the package (leading axes are nodes):

    sigma[..., i, j]          metric components
    dsigma[..., k, i, j]      partial_k sigma_ij
    gamma[..., k, i, j]       Christoffel symbol Gamma^k_ij
    riemann[..., a, b, c, d]  R(d_a, d_b, d_c, d_d) = <R(d_a, d_b) d_c, d_d>

The curvature operator follows R(X,Y)Z = nabla_Y nabla_X Z - nabla_X nabla_Y Z
+ nabla_[X,Y] Z, which is minus the more common convention.  With that
choice the covector commutation rule reads

    w_ijk = w_ikj + riemann[k, j, i, p] w^p

and the Ricci form is ricci[a, b] = sigma^{ij} riemann[i, a, j, b], positive
on the round sphere.  Both facts are pinned by tests rather than by symbol
matching.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingGhost, NonpositiveProfile, SingularMetric, StencilTooNarrow


class MetricChart:
    """A coordinate chart carrying a Riemannian metric.

    Subclasses implement ``metric`` and ``metric_derivative`` for arrays of
    points ``q`` with shape ``(..., dim)``.
    """

    kind = "abstract"
    dim = 0

    def metric(self, q):
        raise NotImplementedError

    def metric_derivative(self, q):
        raise NotImplementedError

    def metric_inverse(self, q):
        return np.linalg.inv(_checked_metric(self.metric(q)))

    def volume_element(self, q):
        return np.sqrt(np.linalg.det(_checked_metric(self.metric(q))))

    def christoffel(self, q):
        return christoffel_from_metric(self.metric(q), self.metric_derivative(q))


def _checked_metric(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if not np.all(np.isfinite(sigma)):
        raise SingularMetric("metric has non-finite entries")
    eig = np.linalg.eigvalsh(0.5 * (sigma + np.swapaxes(sigma, -1, -2)))
    if np.any(eig[..., 0] <= 0.0):
        raise SingularMetric("metric is not positive definite")
    return sigma


def christoffel_from_metric(sigma, dsigma):
    """Levi-Civita connection Gamma^k_ij = 1/2 sigma^kl (d_i s_jl + d_j s_il - d_l s_ij)."""
    sigma_inv = np.linalg.inv(_checked_metric(sigma))
    lowered = (
        np.einsum("...ijl->...lij", dsigma)
        + np.einsum("...jil->...lij", dsigma)
        - dsigma
    )
    return 0.5 * np.einsum("...kl,...lij->...kij", sigma_inv, lowered)


class FlatChart(MetricChart):
    """Cartesian coordinates on R^n."""

    kind = "flat"

    def __init__(self, dim=2):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)

    def metric(self, q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.eye(self.dim), q.shape[:-1] + (self.dim, self.dim)).copy()

    def metric_derivative(self, q):
        q = np.asarray(q, dtype=float)
        return np.zeros(q.shape[:-1] + (self.dim,) * 3)

    def embed(self, q):
        return np.asarray(q, dtype=float)


class PolarChart(MetricChart):
    """Geodesic polar coordinates (s, t) with metric ds^2 + rho(s)^2 dt^2.

    ``profile`` returns ``(rho, rho')``; the default rho(s) = s is the flat
    plane.  rho(s) = sin(s) is the unit sphere around a pole.
    """

    kind = "warped"
    dim = 2

    def __init__(self, profile=None):
        self.profile = profile

    def _rho(self, s):
        if self.profile is None:
            return s, np.ones_like(s)
        rho, drho = self.profile(s)
        return np.asarray(rho, dtype=float), np.asarray(drho, dtype=float)

    def metric(self, q):
        q = np.asarray(q, dtype=float)
        rho, _ = self._rho(q[..., 0])
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = rho**2
        return out

    def metric_derivative(self, q):
        q = np.asarray(q, dtype=float)
        rho, drho = self._rho(q[..., 0])
        out = np.zeros(q.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = 2.0 * rho * drho
        return out

    def pole_coords(self, s, t):
        return np.stack([s * np.cos(t), s * np.sin(t)], axis=-1)

    def embed(self, q):
        if self.profile is not None:
            raise NotImplementedError("embedding only defined for the flat profile")
        q = np.asarray(q, dtype=float)
        return self.pole_coords(q[..., 0], q[..., 1])


class SphereChart(MetricChart):
    """Spherical coordinates (theta, phi) on the round sphere of given radius."""

    kind = "round_sphere"
    dim = 2

    def __init__(self, radius=1.0):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)

    def metric(self, q):
        q = np.asarray(q, dtype=float)
        a2 = self.radius**2
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = a2
        out[..., 1, 1] = a2 * np.sin(q[..., 0]) ** 2
        return out

    def metric_derivative(self, q):
        q = np.asarray(q, dtype=float)
        th = q[..., 0]
        out = np.zeros(q.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = self.radius**2 * 2.0 * np.sin(th) * np.cos(th)
        return out

    def pole_coords(self, s, t):
        return np.stack([self.radius * s * np.cos(t), self.radius * s * np.sin(t)], axis=-1)


class StarshapedChart(MetricChart):
    """Flat plane in stretched polar coordinates x = s R(t) (cos t, sin t).

    The unit level s = 1 traces the star-shaped curve r = R(t).
    ``radius`` returns ``(R, R', R'')`` for an array of angles.
    """

    kind = "mapped"
    dim = 2

    def __init__(self, radius):
        self.radius = radius

    def metric(self, q):
        q = np.asarray(q, dtype=float)
        s = q[..., 0]
        R, dR, _ = self.radius(q[..., 1])
        out = np.empty(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = R**2
        out[..., 0, 1] = out[..., 1, 0] = s * R * dR
        out[..., 1, 1] = s**2 * (R**2 + dR**2)
        return out

    def metric_derivative(self, q):
        q = np.asarray(q, dtype=float)
        s = q[..., 0]
        R, dR, ddR = self.radius(q[..., 1])
        out = np.zeros(q.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 1] = out[..., 0, 1, 0] = R * dR
        out[..., 0, 1, 1] = 2.0 * s * (R**2 + dR**2)
        out[..., 1, 0, 0] = 2.0 * R * dR
        out[..., 1, 0, 1] = out[..., 1, 1, 0] = s * (dR**2 + R * ddR)
        out[..., 1, 1, 1] = 2.0 * s**2 * (R * dR + dR * ddR)
        return out

    def pole_coords(self, s, t):
        R = self.radius(t)[0]
        return np.stack([s * R * np.cos(t), s * R * np.sin(t)], axis=-1)

    def embed(self, q):
        q = np.asarray(q, dtype=float)
        return self.pole_coords(q[..., 0], q[..., 1])


class TabulatedChart(MetricChart):
    """Metric sampled on a uniform tensor grid; derivatives by 4th-order differences.

    Evaluation is only defined at table nodes at least two cells from the
    table edge.
    """

    kind = "tabulated"

    def __init__(self, lower, spacing, sigma_table):
        self.sigma_table = np.asarray(sigma_table, dtype=float)
        self.dim = self.sigma_table.shape[-1]
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.dim,)).copy()
        self.spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (self.dim,)).copy()
        _checked_metric(self.sigma_table)
        self._dsigma = np.full(self.sigma_table.shape[: self.dim] + (self.dim,) * 3, np.nan)
        n = self.dim
        for k in range(n):
            tab = np.moveaxis(self.sigma_table, k, 0)
            d = np.full_like(tab, np.nan)
            d[2:-2] = (-tab[4:] + 8 * tab[3:-1] - 8 * tab[1:-3] + tab[:-4]) / (12 * self.spacing[k])
            self._dsigma[..., k, :, :] = np.moveaxis(d, 0, k)

    @classmethod
    def sample(cls, chart, lower, spacing, shape):
        """Tabulate ``chart`` on a grid with ``shape`` nodes per axis."""
        lower = np.asarray(lower, dtype=float)
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), lower.shape)
        axes = [lower[k] + spacing[k] * np.arange(shape[k]) for k in range(len(shape))]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(lower, spacing, chart.metric(pts))

    def _index(self, q):
        q = np.asarray(q, dtype=float)
        idx = np.rint((q - self.lower) / self.spacing).astype(int)
        if np.any(np.abs(self.lower + idx * self.spacing - q) > 1e-9 * (1 + np.abs(q))):
            raise MissingGhost("tabulated chart evaluated off its grid")
        shape = np.array(self.sigma_table.shape[: self.dim])
        if np.any(idx < 0) or np.any(idx >= shape):
            raise MissingGhost("tabulated chart evaluated outside its table")
        return tuple(np.moveaxis(idx, -1, 0))

    def metric(self, q):
        return self.sigma_table[self._index(q)]

    def metric_derivative(self, q):
        out = self._dsigma[self._index(q)]
        if np.any(np.isnan(out)):
            raise MissingGhost("metric derivative needs two table nodes on each side")
        return out


@dataclass
class CurvatureData:
    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray


def christoffel(chart, node):
    """Christoffel symbols Gamma^k_ij at ``node`` (layout [k, i, j])."""
    return chart.christoffel(np.asarray(node, dtype=float))


def curvature(chart, q, step=1e-4):
    """Christoffel, Riemann and Ricci tensors at points ``q``.

    Derivatives of the connection are five-point centered differences with
    ``step`` (scalar or one value per axis), so the result carries an
    O(step^4) error.
    """
    q = np.asarray(q, dtype=float)
    n = chart.dim
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    gam = chart.christoffel(q)
    dgam = np.empty(q.shape[:-1] + (n,) * 4)
    for m in range(n):
        e = np.zeros(n)
        e[m] = step[m]
        dgam[..., m, :, :, :] = (
            8 * (chart.christoffel(q + e) - chart.christoffel(q - e))
            - (chart.christoffel(q + 2 * e) - chart.christoffel(q - 2 * e))
        ) / (12 * step[m])
    # standard R^l_ijk with R(d_j, d_k) d_i = R^l_ijk d_l
    r_up = (
        np.einsum("...jlki->...lijk", dgam)
        - np.einsum("...klji->...lijk", dgam)
        + np.einsum("...ljm,...mki->...lijk", gam, gam)
        - np.einsum("...lkm,...mji->...lijk", gam, gam)
    )
    sigma = chart.metric(q)
    riemann = -np.einsum("...dl,...lcab->...abcd", sigma, r_up)
    ricci = np.einsum("...jbja->...ab", r_up)
    return CurvatureData(gam, riemann, 0.5 * (ricci + np.swapaxes(ricci, -1, -2)))


def ricci(chart, node, X, Y, step=1e-4):
    """Ric(X, Y) at ``node``; positive on the round sphere."""
    ric = curvature(chart, np.asarray(node, dtype=float), step).ricci
    return np.einsum("...i,...ij,...j->...", np.asarray(X, float), ric, np.asarray(Y, float))


class BoxGrid:
    """Uniform tensor-product grid on a chart box.

    ``centered=False`` puts nodes on cell vertices (trapezoid weights),
    ``centered=True`` on cell midpoints (midpoint weights).
    """

    def __init__(self, lower, upper, cells, centered=False):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        self.dim = self.lower.size
        self.cells = np.broadcast_to(np.atleast_1d(np.asarray(cells, dtype=int)), (self.dim,)).copy()
        self.centered = centered
        self.h = (self.upper - self.lower) / self.cells
        self.shape = tuple(int(c) if centered else int(c) + 1 for c in self.cells)

    def axes(self, halo=0):
        out = []
        for k in range(self.dim):
            idx = np.arange(-halo, self.shape[k] + halo)
            off = 0.5 if self.centered else 0.0
            out.append(self.lower[k] + (idx + off) * self.h[k])
        return out

    def points(self, halo=0):
        return np.stack(np.meshgrid(*self.axes(halo), indexing="ij"), axis=-1)

    def sample(self, f, halo=0):
        return f(self.points(halo))

    def weights(self, chart=None):
        w = np.ones(self.shape)
        for k in range(self.dim):
            wk = np.full(self.shape[k], self.h[k])
            if not self.centered:
                wk[0] *= 0.5
                wk[-1] *= 0.5
            w = w * wk.reshape([-1 if a == k else 1 for a in range(self.dim)])
        if chart is not None:
            w = w * chart.volume_element(self.points())
        return w


def _window(a, ndim, offsets, shrink=1):
    sl = []
    for ax in range(ndim):
        n = a.shape[ax]
        o = offsets[ax]
        sl.append(slice(shrink + o, n - shrink + o))
    return a[tuple(sl)]


def _unit(n, k, s=1):
    e = [0] * n
    e[k] = s
    return e


def box_partials(u_ext, h, ndim):
    """First and second centered partials of a field sampled with one halo layer.

    Returns ``(p, pp)`` with ``p[..., k]`` and ``pp[..., i, j]`` on the grid
    shrunk by one layer; trailing component axes of ``u_ext`` are kept in
    front of the derivative axes.
    """
    h = np.broadcast_to(np.asarray(h, dtype=float), (ndim,))
    center = _window(u_ext, ndim, [0] * ndim)
    p = []
    for k in range(ndim):
        p.append((_window(u_ext, ndim, _unit(ndim, k)) - _window(u_ext, ndim, _unit(ndim, k, -1))) / (2 * h[k]))
    pp = [[None] * ndim for _ in range(ndim)]
    for i in range(ndim):
        pp[i][i] = (
            _window(u_ext, ndim, _unit(ndim, i)) - 2 * center + _window(u_ext, ndim, _unit(ndim, i, -1))
        ) / h[i] ** 2
        for j in range(i + 1, ndim):
            off = lambda si, sj: [si if a == i else sj if a == j else 0 for a in range(ndim)]
            val = (
                _window(u_ext, ndim, off(1, 1))
                - _window(u_ext, ndim, off(1, -1))
                - _window(u_ext, ndim, off(-1, 1))
                + _window(u_ext, ndim, off(-1, -1))
            ) / (4 * h[i] * h[j])
            pp[i][j] = pp[j][i] = val
    p = np.stack(p, axis=-1)
    pp = np.stack([np.stack(row, axis=-1) for row in pp], axis=-2)
    return p, pp


def _require_halo(grid, arr, halo, trailing=0):
    want = tuple(s + 2 * halo for s in grid.shape)
    got = arr.shape[: grid.dim]
    if got != want:
        raise MissingGhost(f"field needs {halo} halo layer(s): expected spatial shape {want}, got {got}")


def covariant_hessian(chart, grid, u_ext):
    """u_ij = d_i d_j u - Gamma^k_ij u_k on every grid node.

    ``u_ext`` is the field sampled on ``grid.points(halo=1)``.
    """
    u_ext = np.asarray(u_ext, dtype=float)
    _require_halo(grid, u_ext, 1)
    p, pp = box_partials(u_ext, grid.h, grid.dim)
    gam = chart.christoffel(grid.points())
    return pp - np.einsum("...kij,...k->...ij", gam, p)


def commutation_residual(chart, grid, w_ext, step=None):
    """Pointwise max over (i,j,k) of |w_ijk - w_ikj - R_kjip w^p|.

    ``w_ext`` is a covector field with shape ``grid.shape + 4`` (two halo
    layers) followed by the component axis.  Returns the per-node field.
    """
    w_ext = np.asarray(w_ext, dtype=float)
    n = grid.dim
    if min(grid.shape) < 5:
        raise StencilTooNarrow("commutation residual needs at least 5 nodes per axis")
    _require_halo(grid, w_ext, 2)
    # first covariant derivative on the grid with one halo layer
    dw, _ = box_partials(w_ext, grid.h, n)  # dw[..., i, j] = d_j w_i
    gam1 = chart.christoffel(grid.points(1))
    w1 = _window(w_ext, n, [0] * n)
    w_ij = dw - np.einsum("...pji,...p->...ij", gam1, w1)
    dwij, _ = box_partials(w_ij, grid.h, n)  # [..., i, j, k] = d_k w_ij
    pts = grid.points()
    gam = chart.christoffel(pts)
    w_ij0 = _window(w_ij, n, [0] * n)
    w_ijk = (
        dwij
        - np.einsum("...pki,...pj->...ijk", gam, w_ij0)
        - np.einsum("...pkj,...ip->...ijk", gam, w_ij0)
    )
    curv = curvature(chart, pts, grid.h if step is None else step)
    w0 = _window(w1, n, [0] * n)
    w_up = np.einsum("...pq,...q->...p", chart.metric_inverse(pts), w0)
    rterm = np.einsum("...kjip,...p->...ijk", curv.riemann, w_up)
    resid = w_ijk - np.swapaxes(w_ijk, -1, -2) - rterm
    return np.max(np.abs(resid).reshape(resid.shape[:n] + (-1,)), axis=-1)


def warped_area(profile, chart, grid, u):
    """Area of the graph of ``u`` in the warped product dr^2 + rho(r)^2 sigma.

    ``u`` is sampled on the grid nodes (gradient by second-order
    differences) or with one halo layer (centered differences).
    """
    u = np.asarray(u, dtype=float)
    n = grid.dim
    if u.shape == tuple(s + 2 for s in grid.shape):
        p, _ = box_partials(u, grid.h, n)
        u = _window(u, n, [0] * n)
    else:
        p = np.stack(np.gradient(u, *grid.h, edge_order=2), axis=-1) if n > 1 else np.gradient(u, grid.h[0], edge_order=2)[..., None]
    rho = np.asarray(profile(u), dtype=float)
    if np.any(rho <= 0):
        raise NonpositiveProfile("warping profile must be positive on the range of u")
    grad2 = np.einsum("...i,...ij,...j->...", p, chart.metric_inverse(grid.points()), p)
    integrand = np.sqrt(1.0 + grad2 / rho**2) * rho**n
    return float(np.sum(integrand * grid.weights(chart)))
