"""Pointwise quantities of the graph of u in M x R.

Every kernel takes chart-coordinate data per node: the partials ``p[..., k]``
(which equal the covariant first derivatives u_k), the second partials
``pp[..., i, j]``, the inverse metric and the Christoffel symbols.  Nodes may
use different local coordinates; only contracted scalars are compared across
nodes.

Sign convention: the downward normal is (Du - d_r)/omega, the mean curvature
vector is -H times that normal, and H omega = g^ij u_ij.  A graph that is
concave (a cap) therefore has negative H.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import _window, box_partials


@dataclass
class GraphQuantities:
    omega: np.ndarray
    grad: np.ndarray  # u^i
    v: np.ndarray  # u^i / omega, horizontal part of the downward normal (v_M)
    g_inv: np.ndarray
    hess: np.ndarray  # covariant Hessian u_ij
    h: np.ndarray
    H: np.ndarray
    A2: np.ndarray
    speed: np.ndarray  # g^ij u_ij

    @property
    def v_M(self):
        return self.v


def slope_and_normal(p, sigma_inv):
    """Return ``(omega, v_M, grad)`` for covariant gradient components ``p``."""
    grad = np.einsum("...ij,...j->...i", sigma_inv, p)
    omega = np.sqrt(1.0 + np.einsum("...i,...i->...", grad, p))
    return omega, grad / omega[..., None], grad


def inverse_graph_metric(grad, omega, sigma_inv):
    """g^ij = sigma^ij - u^i u^j / omega^2."""
    return sigma_inv - np.einsum("...i,...j->...ij", grad, grad) / (omega**2)[..., None, None]


def graph_metric(p, sigma):
    """g_ij = sigma_ij + u_i u_j."""
    return sigma + np.einsum("...i,...j->...ij", p, p)


def dginv_dp(grad, omega, g_inv):
    """Derivative of g^ij with respect to u_k, laid out as [..., k, i, j].

    -(g^ik u^j + g^jk u^i) / omega^2.
    """
    t = np.einsum("...ik,...j->...kij", g_inv, grad)
    return -(t + np.swapaxes(t, -1, -2)) / (omega**2)[..., None, None, None]


def graph_quantities(p, pp, sigma_inv, gamma):
    omega, v, grad = slope_and_normal(p, sigma_inv)
    g_inv = inverse_graph_metric(grad, omega, sigma_inv)
    hess = pp - np.einsum("...kij,...k->...ij", gamma, p)
    speed = np.einsum("...ij,...ij->...", g_inv, hess)
    h = hess / omega[..., None, None]
    A2 = np.einsum("...il,...kj,...kl,...ij->...", g_inv, g_inv, hess, hess) / omega**2
    return GraphQuantities(
        omega=omega, grad=grad, v=v, g_inv=g_inv, hess=hess, h=h, H=speed / omega, A2=A2, speed=speed
    )


def mean_curvature_speed(p, pp, sigma_inv, gamma):
    """g^ij(Du) u_ij."""
    return graph_quantities(p, pp, sigma_inv, gamma).speed


def second_fundamental(p, pp, sigma_inv, gamma):
    """Return ``(h_ij, H, |A|^2)``."""
    q = graph_quantities(p, pp, sigma_inv, gamma)
    return q.h, q.H, q.A2


def box_graph_quantities(chart, grid, u_ext):
    """Graph quantities on a :class:`BoxGrid` from a field with one halo layer."""
    p, pp = box_partials(np.asarray(u_ext, dtype=float), grid.h, grid.dim)
    pts = grid.points()
    return graph_quantities(p, pp, chart.metric_inverse(pts), chart.christoffel(pts))


def divergence_form_speed(chart, grid, u_ext):
    """omega * div(Du / omega), computed as (omega / sqrt|s|) d_i(sqrt|s| u^i / omega).

    Independent of the Hessian path; it consumes two halo layers, so the
    result lives on the grid shrunk by one layer on each side.
    """
    n = grid.dim
    u_ext = np.asarray(u_ext, dtype=float)
    pts1 = grid.points(1)
    p1, _ = box_partials(u_ext, grid.h, n)
    omega1, v1, _ = slope_and_normal(p1, chart.metric_inverse(pts1))
    flux = chart.volume_element(pts1)[..., None] * v1
    div = np.zeros(grid.shape)
    for k in range(n):
        e = [1 if a == k else 0 for a in range(n)]
        m = [-1 if a == k else 0 for a in range(n)]
        div += (_window(flux[..., k], n, e) - _window(flux[..., k], n, m)) / (2 * grid.h[k])
    omega0 = _window(omega1, n, [0] * n)
    return omega0 * div / chart.volume_element(grid.points())


def covector_norm(S, sigma_inv):
    return np.sqrt(np.einsum("...ij,...i,...j->...", sigma_inv, S, S))


def bilinear_norm(T, sigma_inv):
    """|T|^2 = sigma^ia sigma^jb T_ij T_ab."""
    return np.sqrt(np.einsum("...ia,...jb,...ij,...ab->...", sigma_inv, sigma_inv, T, T))


def cauchy_margins(p, sigma_inv, T, S, U):
    """Slack in |g^ij T_ij| <= (n+1)|T| and |g^ij S_i U_j| <= 2|S||U|.

    Both returned arrays are nonnegative when the estimates hold.
    """
    n = sigma_inv.shape[-1]
    omega, _, grad = slope_and_normal(p, sigma_inv)
    g_inv = inverse_graph_metric(grad, omega, sigma_inv)
    lhs_t = np.abs(np.einsum("...ij,...ij->...", g_inv, T))
    lhs_su = np.abs(np.einsum("...ij,...i,...j->...", g_inv, S, U))
    return (
        (n + 1) * bilinear_norm(T, sigma_inv) - lhs_t,
        2 * covector_norm(S, sigma_inv) * covector_norm(U, sigma_inv) - lhs_su,
    )
