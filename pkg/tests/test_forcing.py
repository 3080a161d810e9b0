import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphflow.forcing import ForcingSpec, admissibility_margin, evaluate
from graphflow.graph import slope_and_normal
from graphflow.identities import admissibility_stability


def _eval(spec, u, p, x=None, da=None, sigma_inv=None):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    si = np.broadcast_to(np.eye(p.shape[-1]), p.shape + (p.shape[-1],)) if sigma_inv is None else sigma_inv
    om, _, grad = slope_and_normal(p, si)
    return evaluate(spec, u, p, om, grad, x=x, da=da)


def test_zero_all_entries_vanish():
    ev = _eval(ForcingSpec.zero(), [1.0, -2.0], [[0.3, 0.4], [1.0, 2.0]])
    for arr in (ev.psi, ev.psi_u, ev.psi_grad, ev.psi_du):
        assert np.all(arr == 0)


def test_capillary_values():
    # u = 2 with |Du|^2 = 4 so omega = sqrt(5)
    ev = _eval(ForcingSpec.capillary(1.0), 2.0, [[2.0]])
    assert ev.psi[0] == pytest.approx(2 * np.sqrt(5))
    assert ev.psi_u[0] == pytest.approx(np.sqrt(5))


def test_capillary_du_derivative():
    ev = _eval(ForcingSpec.capillary(1.0), 2.0, [[1.0]])
    assert ev.psi_du[0, 0] == pytest.approx(np.sqrt(2))


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ForcingSpec.capillary(0.0)
    with pytest.raises(ValueError):
        ForcingSpec.linear(-1.0)
    with pytest.raises(ValueError):
        ForcingSpec("cubic")


@given(st.floats(-5, 5), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.5, 3.0), st.floats(-1, 1))
@settings(max_examples=100)
def test_derivatives_match_differences(u, p0, p1, kappa, x0):
    """psi_u, psi_{u_k} and psi_k against central differences."""
    a = lambda x: 0.3 * np.sin(np.asarray(x)[..., 0])
    da = lambda x: np.stack([0.3 * np.cos(np.asarray(x)[..., 0]), np.zeros(np.shape(x)[:-1])], -1)
    spec = ForcingSpec.capillary(kappa, a)
    x = np.array([[x0, 0.2]])
    p = np.array([[p0, p1]])
    ev = _eval(spec, u, p, x=x, da=da(x))
    d = 1e-5
    f = lambda uu, pp, xx: _eval(spec, uu, pp, x=xx).psi[0]
    assert ev.psi_u[0] == pytest.approx((f(u + d, p, x) - f(u - d, p, x)) / (2 * d), rel=1e-7, abs=1e-7)
    for k in range(2):
        e = np.zeros((1, 2))
        e[0, k] = d
        assert ev.psi_du[0, k] == pytest.approx((f(u, p + e, x) - f(u, p - e, x)) / (2 * d), rel=1e-6, abs=1e-7)
        assert ev.psi_grad[0, k] == pytest.approx((f(u, p, x + e) - f(u, p, x - e)) / (2 * d), rel=1e-6, abs=1e-7)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 4.0))
def test_monotone_gravity(u, p, kappa):
    ev = _eval(ForcingSpec.capillary(kappa), u, [[p]])
    assert ev.psi_u[0] >= kappa


def test_primitive_is_antiderivative():
    spec = ForcingSpec.capillary(2.0, 0.5)
    u = np.linspace(-3, 3, 11)
    d = 1e-6
    g = (spec.primitive(u + d) - spec.primitive(u - d)) / (2 * d)
    assert np.allclose(g, 2.0 * (u - 0.5), atol=1e-8)
    assert ForcingSpec.linear(1.0).primitive(u) is None


class TestAdmissibility:
    def _state(self, n=200, amp=5.0):
        rng = np.random.default_rng(9)
        u = rng.uniform(-amp, amp, n)
        p = rng.standard_normal((n, 2)) * 2
        eye = np.broadcast_to(np.eye(2), (n, 2, 2))
        return u, p, eye

    def test_zero_forcing(self):
        u, p, eye = self._state()
        assert admissibility_margin(ForcingSpec.zero(), u, p, eye, eye).C_min == 0.0

    def test_constant_forcing(self):
        u, p, eye = self._state()
        rep = admissibility_margin(ForcingSpec.constant(5.0), u, p, eye, eye)
        assert rep.C_min == 0.0 and all(v == 0 for v in rep.margins.values())

    def test_capillary_finite(self):
        u, p, eye = self._state()
        rep = admissibility_margin(ForcingSpec.capillary(1.0), u, p, eye, eye)
        assert np.isfinite(rep.C_min) and not rep.infeasible
        assert rep.C_min == max(rep.margins.values())
        assert rep.margins["psi_u"] == 0.0

    def test_capillary_refinement_stable(self):
        c1, c2 = admissibility_stability()
        assert np.isfinite(c1) and abs(c1 - c2) < 0.05 * abs(c2)
