"""Executable geometry and graph identities, runnable without time stepping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .forcing import ForcingSpec, admissibility_margin
from .geometry import BoxGrid, FlatChart, SphereChart, box_partials, commutation_residual, curvature, warped_area
from .graph import (
    box_graph_quantities,
    cauchy_margins,
    dginv_dp,
    divergence_form_speed,
    inverse_graph_metric,
    slope_and_normal,
)


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"passed": bool(self.passed), "value": float(self.value), "threshold": float(self.threshold), **self.detail}


def _sphere_covector(q):
    """w = du for u = cos(theta) + 0.3 sin(theta) cos(phi)."""
    th, ph = q[..., 0], q[..., 1]
    return np.stack(
        [-np.sin(th) + 0.3 * np.cos(th) * np.cos(ph), -0.3 * np.sin(th) * np.sin(ph)],
        axis=-1,
    )


def commutation_order(cells=(12, 24, 48)):
    """Observed order of the commutation residual on a patch of the unit sphere."""
    chart = SphereChart(1.0)
    res = []
    for c in cells:
        grid = BoxGrid([np.pi / 4, 0.0], [3 * np.pi / 4, np.pi / 2], c)
        r = commutation_residual(chart, grid, _sphere_covector(grid.points(2)))
        res.append(float(np.max(r)))
    orders = [np.log2(res[k] / res[k + 1]) for k in range(len(res) - 1)]
    return res, orders


def sphere_ricci_error(h=np.pi / 200):
    """max |Ric - sigma| on the unit sphere away from the poles."""
    chart = SphereChart(1.0)
    th = np.linspace(np.pi / 6, 5 * np.pi / 6, 11)
    ph = np.linspace(0.0, 2 * np.pi, 7)
    q = np.stack(np.meshgrid(th, ph, indexing="ij"), axis=-1)
    curv = curvature(chart, q, step=h)
    return float(np.max(np.abs(curv.ricci - chart.metric(q))))


def _bump(q):
    x, y = q[..., 0], q[..., 1]
    return np.sin(x) * np.cos(0.7 * y) + 0.3 * x * y


def divergence_form_order(cells=(16, 32, 64)):
    """Max gap between the Hessian and divergence forms of the mean curvature speed."""
    chart = FlatChart(2)
    gaps = []
    for c in cells:
        grid = BoxGrid([-0.5, -0.5], [0.5, 0.5], c)
        u2 = grid.sample(_bump, halo=2)
        spd = box_graph_quantities(chart, grid, u2[1:-1, 1:-1]).speed
        div = divergence_form_speed(chart, grid, u2)
        gaps.append(float(np.max(np.abs(spd - div))))
    return gaps, [np.log2(gaps[k] / gaps[k + 1]) for k in range(len(gaps) - 1)]


def _random_spd(rng, m, n):
    A = rng.standard_normal((m, n, n))
    return A @ np.swapaxes(A, -1, -2) + 0.1 * np.eye(n)


def cauchy_check(samples=10_000, seed=0):
    """Smallest slack of the two Cauchy estimates over random states and tensors."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for n in (1, 2, 3):
        sigma = _random_spd(rng, samples, n)
        si = np.linalg.inv(sigma)
        p = rng.standard_normal((samples, n)) * rng.exponential(3.0, (samples, 1))
        T = rng.standard_normal((samples, n, n))
        T = T + np.swapaxes(T, -1, -2)
        S = rng.standard_normal((samples, n))
        U = rng.standard_normal((samples, n))
        a, b = cauchy_margins(p, si, T, S, U)
        worst = min(worst, float(np.min(a)), float(np.min(b)))
    return worst


def dginv_check(samples=1000, seed=1, delta=1e-6):
    """Relative error of the closed-form derivative of g^ij against central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (1, 2, 3):
        sigma = _random_spd(rng, samples, n)
        si = np.linalg.inv(sigma)
        p = rng.standard_normal((samples, n))

        def ginv(pp):
            om, _, grad = slope_and_normal(pp, si)
            return inverse_graph_metric(grad, om, si)

        om, _, grad = slope_and_normal(p, si)
        exact = dginv_dp(grad, om, ginv(p))
        for k in range(n):
            e = np.zeros(n)
            e[k] = delta
            fd = (ginv(p + e) - ginv(p - e)) / (2 * delta)
            scale = 1.0 + np.max(np.abs(exact[:, k]), axis=(-1, -2))
            err = np.max(np.abs(fd - exact[:, k]), axis=(-1, -2)) / scale
            worst = max(worst, float(np.max(err)))
    return worst


def warped_area_cases(cells=(200, 400)):
    """The three area examples: (computed, reference) pairs."""
    chart = SphereChart(1.0)
    grid = BoxGrid([0.0, 0.0], [np.pi, 2 * np.pi], cells, centered=True)
    pts = grid.points()
    th = pts[..., 0]
    out = {}
    # product case rho = 1: standard graph area of u = 0.4 cos(theta)
    u = 0.4 * np.cos(th)
    ref = 2 * np.pi * quad(lambda t: np.sqrt(1 + 0.16 * np.sin(t) ** 2) * np.sin(t), 0, np.pi, epsabs=1e-13)[0]
    out["product"] = (warped_area(lambda r: np.ones_like(r), chart, grid, u), ref)
    # constant graph at height 2 in the cone metric
    out["constant"] = (warped_area(lambda r: r, chart, grid, np.full(grid.shape, 2.0)), 16 * np.pi)
    # u = 10 + 0.1 cos(theta)
    k, eps = 10.0, 0.1
    u = k + eps * np.cos(th)

    def integrand(t):
        r = k + eps * np.cos(t)
        return np.sqrt(1 + (eps * np.sin(t)) ** 2 / r**2) * r**2 * np.sin(t)

    ref = 2 * np.pi * quad(integrand, 0, np.pi, epsabs=1e-12)[0]
    out["perturbed"] = (warped_area(lambda r: r, chart, grid, u), ref)
    return out


def admissibility_stability(cells=(64, 128)):
    """C_min for capillary h = u on the state u = 5 sin(x) cos(y), |u| <= 5, on two grids."""
    spec = ForcingSpec.capillary(1.0, 0.0)
    chart = FlatChart(2)
    vals = []
    for c in cells:
        grid = BoxGrid([0.0, 0.0], [np.pi, np.pi], c)
        u1 = grid.sample(lambda q: 5 * np.sin(q[..., 0]) * np.cos(q[..., 1]), halo=1)
        p, _ = box_partials(u1, grid.h, 2)
        pts = grid.points()
        rep = admissibility_margin(spec, u1[1:-1, 1:-1], p, chart.metric(pts), chart.metric_inverse(pts))
        vals.append(rep.C_min)
    return vals


def zero_forcing_cmin():
    rng = np.random.default_rng(3)
    p = rng.standard_normal((500, 2))
    u = rng.standard_normal(500)
    eye = np.broadcast_to(np.eye(2), (500, 2, 2))
    return admissibility_margin(ForcingSpec.zero(), u, p, eye, eye).C_min


def identity_suite():
    """Run every identity check; returns a list of :class:`Check`."""
    checks = []
    res, orders = commutation_order()
    checks.append(Check("commutation_order", min(orders) >= 0.9, min(orders), 0.9, {"residuals": res}))
    err = sphere_ricci_error()
    checks.append(Check("sphere_ricci", err < 1e-4, err, 1e-4))
    gaps, orders = divergence_form_order()
    checks.append(Check("divergence_form_order", min(orders) >= 0.9, min(orders), 0.9, {"gaps": gaps}))
    slack = cauchy_check()
    checks.append(Check("cauchy_estimates", slack >= -1e-10, slack, -1e-10))
    derr = dginv_check()
    checks.append(Check("dginv_fd", derr < 1e-6, derr, 1e-6))
    for name, (got, ref) in warped_area_cases().items():
        rel = abs(got - ref) / abs(ref)
        checks.append(Check(f"warped_area_{name}", rel < 1e-3, rel, 1e-3, {"area": got, "reference": ref}))
    cz = zero_forcing_cmin()
    checks.append(Check("admissibility_zero", cz == 0.0, cz, 0.0))
    c1, c2 = admissibility_stability()
    rel = abs(c1 - c2) / max(abs(c2), 1e-300)
    ok = np.isfinite(c1) and np.isfinite(c2) and rel < 0.05
    checks.append(Check("admissibility_capillary", ok, rel, 0.05, {"C_min_coarse": c1, "C_min_fine": c2}))
    return checks
