import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphflow.geometry import BoxGrid, FlatChart, SphereChart
from graphflow.graph import (
    box_graph_quantities,
    cauchy_margins,
    divergence_form_speed,
    graph_metric,
    graph_quantities,
    inverse_graph_metric,
    mean_curvature_speed,
    second_fundamental,
    slope_and_normal,
)
from graphflow.identities import cauchy_check, dginv_check, divergence_form_order

finite = st.floats(-20, 20, allow_nan=False)


def _flat1(p, pp):
    p = np.array([[p]], dtype=float)
    pp = np.array([[[pp]]], dtype=float)
    return p, pp, np.ones((1, 1, 1)), np.zeros((1, 1, 1, 1))


class TestSlope:
    def test_constant(self):
        om, v, grad = slope_and_normal(np.zeros((4, 2)), np.broadcast_to(np.eye(2), (4, 2, 2)))
        assert np.all(om == 1) and np.all(v == 0)

    def test_1d_slope_three(self):
        om, v, _ = slope_and_normal(np.array([[3.0]]), np.ones((1, 1, 1)))
        assert om[0] == pytest.approx(np.sqrt(10))
        assert v[0, 0] == pytest.approx(3 / np.sqrt(10))

    def test_sphere_equator(self):
        # u = cos(theta): du = (-sin theta, 0) -> |Du| = 1 at the equator
        q = np.array([np.pi / 2, 0.3])
        om, _, _ = slope_and_normal(np.array([-1.0, 0.0]), SphereChart(1.0).metric_inverse(q))
        assert om == pytest.approx(np.sqrt(2))

    @given(arrays(float, (2,), elements=finite))
    def test_omega_at_least_one(self, p):
        om, _, _ = slope_and_normal(p, np.eye(2))
        assert om >= 1.0
        if not np.any(p):
            assert om == 1.0


class TestGraphMetric:
    @given(arrays(float, (3,), elements=finite), st.floats(0.2, 3.0), st.floats(0.1, 2.0))
    @settings(max_examples=100)
    def test_inverse_pair(self, p, a, b):
        sigma = np.diag([a, b, a * b]) + 0.05
        si = np.linalg.inv(sigma)
        om, _, grad = slope_and_normal(p, si)
        gi = inverse_graph_metric(grad, om, si)
        assert np.allclose(gi @ graph_metric(p, sigma), np.eye(3), atol=1e-9)

    @given(arrays(float, (2,), elements=finite), st.floats(0.2, 3.0))
    @settings(max_examples=100)
    def test_eigenvalue_envelope(self, p, a):
        sigma = np.array([[a, 0.1], [0.1, 1.0]])
        si = np.linalg.inv(sigma)
        om, _, grad = slope_and_normal(p, si)
        gi = inverse_graph_metric(grad, om, si)
        lam = sla.eigh(gi, si, eigvals_only=True)
        assert lam.min() >= 1 / om**2 - 1e-10
        assert lam.max() <= 1 + 1e-10

    def test_dginv_matches_differences(self):
        assert dginv_check(samples=200) < 1e-6

    def test_cauchy_estimates(self):
        assert cauchy_check(samples=2000) >= -1e-10

    @given(arrays(float, (2,), elements=finite), arrays(float, (2, 2), elements=finite),
           arrays(float, (2,), elements=finite), arrays(float, (2,), elements=finite))
    @settings(max_examples=200)
    def test_cauchy_property(self, p, T, S, U):
        T = T + T.T
        a, b = cauchy_margins(p[None], np.eye(2)[None], T[None], S[None], U[None])
        assert a[0] >= -1e-9 * (1 + np.abs(T).max()) and b[0] >= -1e-9 * (1 + np.abs(S).max() * np.abs(U).max())


class TestMeanCurvature:
    def test_linear_is_minimal(self):
        grid = BoxGrid([0, 0], [1, 1], 10)
        u = grid.sample(lambda q: 0.7 * q[..., 0] - 1.3 * q[..., 1], halo=1)
        assert np.max(np.abs(box_graph_quantities(FlatChart(2), grid, u).speed)) < 1e-12

    def test_parabola_1d(self):
        assert mean_curvature_speed(*_flat1(0.0, 2.0))[0] == pytest.approx(2.0)
        assert mean_curvature_speed(*_flat1(2.0, 2.0))[0] == pytest.approx(0.4)

    def test_second_fundamental_parabola(self):
        h, H, A2 = second_fundamental(*_flat1(0.0, 2.0))
        assert h[0, 0, 0] == pytest.approx(2) and H[0] == pytest.approx(2) and A2[0] == pytest.approx(4)

    def test_constant_totally_geodesic(self):
        h, H, A2 = second_fundamental(np.zeros((3, 2)), np.zeros((3, 2, 2)), np.broadcast_to(np.eye(2), (3, 2, 2)),
                                      np.zeros((3, 2, 2, 2)))
        assert np.all(h == 0) and np.all(H == 0) and np.all(A2 == 0)

    def test_hemisphere(self):
        R = 2.0
        grid = BoxGrid([-0.5, -0.5], [0.5, 0.5], 40)
        f = lambda q: np.sqrt(R**2 - q[..., 0] ** 2 - q[..., 1] ** 2)
        q = box_graph_quantities(FlatChart(2), grid, grid.sample(f, halo=1))
        div = divergence_form_speed(FlatChart(2), grid, grid.sample(f, halo=2))
        inner = (slice(1, -1), slice(1, -1))
        assert np.allclose(np.abs(q.speed), 2 * q.omega / R, rtol=1e-2)
        assert np.allclose(q.speed[inner], div[inner], rtol=1e-2)
        assert np.allclose(q.A2, q.H**2 / 2, rtol=1e-2)

    def test_h_omega_identity(self):
        rng = np.random.default_rng(4)
        p = rng.standard_normal((50, 2))
        pp = rng.standard_normal((50, 2, 2))
        pp = pp + np.swapaxes(pp, 1, 2)
        q = graph_quantities(p, pp, np.broadcast_to(np.eye(2), (50, 2, 2)), np.zeros((50, 2, 2, 2)))
        assert np.allclose(q.H * q.omega, q.speed, rtol=1e-13)
        assert np.all(q.A2 >= 0)

    def test_divergence_form_converges(self):
        gaps, orders = divergence_form_order()
        assert gaps[-1] < gaps[0] and min(orders) >= 1.0
