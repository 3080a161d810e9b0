import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from graphflow.domain import (
    ContactAngle,
    Shape,
    apply_bc,
    boundary_residual,
    build_mesh,
    contact_closure,
    convexity_condition,
    frame_transport_residual,
)
from graphflow.errors import ContactAngleTooSteep, DegenerateShape, MissingGhost, WrongDimension


def _polar_curvature(r0, amp, mode, t):
    r = r0 + amp * np.cos(mode * t)
    r1 = -amp * mode * np.sin(mode * t)
    r2 = -amp * mode**2 * np.cos(mode * t)
    return (r**2 + 2 * r1**2 - r * r2) / (r**2 + r1**2) ** 1.5


class TestClosure:
    def test_vertical(self):
        assert np.all(contact_closure(np.array([0.0, 3.0, -7.0]), 0.0) == 0)

    def test_value_and_fixed_point(self):
        assert contact_closure(0.0, 0.6) == pytest.approx(0.75)
        root = brentq(lambda g: g - 0.6 * np.sqrt(1 + g * g), 0, 10, xtol=1e-14)
        assert contact_closure(0.0, 0.6) == pytest.approx(root, abs=1e-12)

    def test_odd_in_phi(self):
        assert contact_closure(0.0, -0.6) == pytest.approx(-0.75)

    @given(st.floats(-0.99, 0.99), st.floats(-1e3, 1e3))
    @settings(max_examples=500)
    def test_closure_consistency(self, phi, u_T):
        ug = contact_closure(u_T, phi)
        omega = np.sqrt(1 + u_T**2 + ug**2)
        assert abs(ug - phi * omega) < 1e-12 * max(1.0, omega)

    def test_steep_rejected(self):
        with pytest.raises(ContactAngleTooSteep):
            contact_closure(0.0, 1.0)


class TestInterval:
    def test_geometry(self, unit_interval):
        m = unit_interval
        b = m.boundary
        assert np.array_equal(b.normal[:, 0], [1.0, -1.0])
        x = m.coords[:, 0]
        near = np.minimum(x, 1 - x) <= m.info["d_cap"]
        assert np.allclose(m.dist[near], np.minimum(x, 1 - x)[near])
        assert np.all(np.diff(m.dist[: m.n_nodes // 2]) >= 0)

    def test_ghost_slope(self):
        m = build_mesh(Shape.interval(0, 1), 0.02, ContactAngle(0.6))
        p, _ = m.partials(apply_bc(m, np.zeros(m.n_nodes)))
        # interior normal +x at the left end, -x at the right end
        assert p[m.boundary.idx, 0] == pytest.approx([0.75, -0.75])

    def test_constant_flat_extension(self, unit_interval):
        U = apply_bc(unit_interval, np.full(unit_interval.n_nodes, 2.5))
        assert np.all(U == 2.5)

    def test_convexity_rejected(self, unit_interval):
        with pytest.raises(WrongDimension):
            convexity_condition(unit_interval, 0.1)

    def test_errors(self):
        with pytest.raises(DegenerateShape):
            build_mesh(Shape.interval(1, 0), 0.1)
        with pytest.raises(ContactAngleTooSteep):
            build_mesh(Shape.interval(0, 1), 0.1, ContactAngle(1.0))

    def test_partials_need_ghosts(self, unit_interval):
        with pytest.raises(MissingGhost):
            unit_interval.partials(np.zeros(unit_interval.n_nodes))


class TestDisk:
    def test_frame(self, disk_coarse):
        b = disk_coarse.boundary
        assert np.allclose(b.curvature, 1.0)
        # interior normal is minus the radial direction in the (s, t) chart
        assert np.allclose(b.normal, [-1.0, 0.0])
        x = disk_coarse.positions[b.idx]
        assert np.allclose(np.hypot(x[:, 0], x[:, 1]), 1.0)

    def test_orthonormal_frame(self, disk_coarse):
        m, b = disk_coarse, disk_coarse.boundary
        S = m.sigma[b.idx]
        ip = lambda a, c: np.einsum("bi,bij,bj->b", a, S, c)
        assert np.allclose(ip(b.normal, b.normal), 1, atol=1e-10)
        assert np.allclose(ip(b.tangent, b.tangent), 1, atol=1e-10)
        assert np.allclose(ip(b.normal, b.tangent), 0, atol=1e-10)

    def test_radial_ghosts_symmetric(self, disk_coarse):
        m = disk_coarse
        u = np.cos(np.pi * m.coords[:, 0])
        ghosts = apply_bc(m, u)[m.n_nodes:]
        assert np.ptp(ghosts) < 1e-12

    def test_boundary_residual_exact(self, disk_coarse):
        m = disk_coarse
        u = np.sin(m.positions[:, 0]) + m.positions[:, 1] ** 2
        assert boundary_residual(m, apply_bc(m, u)) < 1e-12

    def test_quadrature_area(self, disk_coarse):
        assert disk_coarse.integrate(1.0) == pytest.approx(np.pi, rel=1e-12)
        assert disk_coarse.boundary_integrate(np.ones(disk_coarse.boundary.idx.size)) == pytest.approx(2 * np.pi, rel=1e-12)

    def test_convexity_examples(self):
        m1 = build_mesh(Shape.disk(1.0), 0.1, ContactAngle(0.3))
        rep = convexity_condition(m1, 0.5)
        assert rep.holds and rep.margin == pytest.approx(0.5, abs=1e-12)
        m2 = build_mesh(Shape.disk(2.0), 0.2, ContactAngle(0.3))
        rep = convexity_condition(m2, 0.6)
        assert not rep.holds and rep.margin == pytest.approx(-0.1, abs=1e-12)

    def test_distance(self, disk_baseline):
        m = disk_baseline
        g = np.einsum("ni,nij,nj->n", m.dist_grad, m.sigma_inv, m.dist_grad)
        assert g.max() <= 1 + 1e-12
        collar = (m.dist > 0) & (m.dist < m.info["d_cap"])
        assert np.max(np.abs(g[collar] - 1)) < 1e-2
        assert np.all(m.dist[m.boundary.idx] == 0)

    def test_frame_transport(self, disk_coarse):
        assert frame_transport_residual(disk_coarse) < 1e-10

    def test_laplacian_of_quadratic_converges(self, disk_baseline):
        errs = []
        for m in (disk_baseline, build_mesh(Shape.disk(1.0), 0.025, ContactAngle(0.3))):
            x, y = m.positions.T
            p, pp = m.partials(apply_bc(m, x**2 + 3 * y**2 - x * y))
            lap = np.einsum("nij,nij->n", m.sigma_inv, pp - np.einsum("nkij,nk->nij", m.gamma, p))
            errs.append(np.max(np.abs(lap[m.interior] - 8.0)))
        assert errs[1] < 1e-5 and errs[1] < errs[0] / 4


class TestStarshaped:
    def test_curvature_matches_closed_form(self):
        m = build_mesh(Shape.polar_starshaped(1.0, 0.2, 3), 0.05)
        b = m.boundary
        want = _polar_curvature(1.0, 0.2, 3, b.angle)
        assert np.allclose(b.curvature, want, rtol=1e-2)

    def test_distance_and_frame_converge(self):
        excess, transport = [], []
        for h in (0.1, 0.05):
            m = build_mesh(Shape.polar_starshaped(1.0, 0.2, 3), h, ContactAngle(0.3))
            g = np.einsum("ni,nij,nj->n", m.dist_grad, m.sigma_inv, m.dist_grad)
            excess.append(max(g.max() - 1, 0))
            transport.append(frame_transport_residual(m))
        assert excess[1] < excess[0] / 4 and excess[1] < 1e-3
        assert transport[1] < transport[0] / 4

    def test_convexity_margin_against_dense_sampling(self):
        phi = ContactAngle(0.0, 0.3, 1)
        m = build_mesh(Shape.polar_starshaped(1.0, 0.05, 3), 0.05, phi)
        delta0 = 0.1
        t = np.linspace(0, 2 * np.pi, 200_001)
        r = 1.0 + 0.05 * np.cos(3 * t)
        r1 = -0.15 * np.sin(3 * t)
        speed = np.hypot(r, r1)
        # phi_T is the derivative along unit-speed arc length
        phi_T = phi.derivative(t) / speed
        oracle = np.min(_polar_curvature(1.0, 0.05, 3, t) - np.abs(phi_T) / np.sqrt(1 - phi(t) ** 2) - delta0)
        rep = convexity_condition(m, delta0)
        assert rep.margin == pytest.approx(oracle, rel=1e-2)


def test_annulus_curvature_signs():
    m = build_mesh(Shape.annulus(0.5, 1.0), 0.05)
    b = m.boundary
    r = np.hypot(*m.positions[b.idx].T)
    outer = r > 0.75
    assert np.allclose(b.curvature[outer], 1.0)
    assert np.allclose(b.curvature[~outer], -2.0)
    assert m.integrate(1.0) == pytest.approx(np.pi * 0.75, rel=1e-12)
