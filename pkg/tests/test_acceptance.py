"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a PASS/FAIL line that is printed in the terminal summary.
"""
import time

import numpy as np
import pytest

from graphflow.config import loads_config, preset
from graphflow.experiments import run_experiment
from graphflow.flow import MonitorSeries
from graphflow.identities import (
    cauchy_check,
    commutation_order,
    dginv_check,
    divergence_form_order,
    identity_suite,
    sphere_ricci_error,
    warped_area_cases,
)

DISK_MT1 = """
experiment: mt1_constant
domain: {shape: disk, params: {R: 1.0}, h: 0.02, phi: {family: constant, value: 0.0}}
u0: {family: cos_mode, amplitude: 1.0, mode: 1, offset: 0.0}
stepping: {t_end: 20.0, tol_steady: 1.0e-8}
output: {directory: mt1_disk}
options: {oscillation_tol: 1.0e-6, omega_tol: 1.0e-6}
"""

ENERGY = """
experiment: custom
domain: {{shape: disk, params: {{R: 1.0}}, h: {h}, phi: {{family: constant, value: 0.3}}}}
forcing: {{kind: capillary, kappa: 1.0, a: 0.0}}
u0: {{family: compatible_bump, amplitude: 0.3, tilt: 0.2}}
stepping: {{t_end: 1.0}}
output: {{directory: energy_h{h}}}
"""


def _timed(cfg, root):
    t0 = time.perf_counter()
    code, summary = run_experiment(cfg, root)
    return code, summary, time.perf_counter() - t0


@pytest.fixture(scope="module")
def root(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance"))


@pytest.fixture(scope="module")
def mt1(root):
    return _timed(preset("mt1_constant"), root)


@pytest.fixture(scope="module")
def mt1_disk(root):
    return _timed(loads_config(DISK_MT1), root)


@pytest.fixture(scope="module")
def mt2(root):
    return _timed(preset("mt2_capillary"), root)


@pytest.fixture(scope="module")
def mt3(root):
    return _timed(preset("mt3_translator"), root)


def _ok(summary, *names):
    return all(summary["assertions"][n]["passed"] for n in names)


def _val(summary, name):
    return summary["assertions"][name]["value"]


def test_criterion_1_constant_convergence(mt1, mt1_disk, criterion):
    code, s, secs = mt1
    dcode, d, dsecs = mt1_disk
    names = ("verdict_constant", "final_oscillation", "omega_final")
    ok = (
        _ok(s, *names) and secs < 30 and s["n_nodes"] == 201
        and _ok(d, *names) and dsecs < 300 and 4000 <= d["n_nodes"] <= 7000
    )
    criterion(1, "MT1 constant convergence", ok,
              f"interval osc={_val(s, 'final_oscillation'):.2e} omega-1={_val(s, 'omega_final'):.1e} {secs:.0f}s; "
              f"disk({d['n_nodes']} nodes) osc={_val(d, 'final_oscillation'):.2e} {dsecs:.0f}s; "
              f"limits {s['value']:.6g}, {d['value']:.6g}")
    assert ok


def test_criterion_2_extremum_bounds(mt1, criterion):
    _, s, _ = mt1
    ok = _ok(s, "u_max_non_increasing", "u_min_non_decreasing")
    criterion(2, "extremum bounds", ok,
              f"worst u_max rise {_val(s, 'u_max_non_increasing'):.1e}, "
              f"worst u_min drop {_val(s, 'u_min_non_decreasing'):.1e} (slack 1e-12)")
    assert ok


def test_criterion_3_ut_maximum_principle(mt1, mt2, criterion):
    _, s1, _ = mt1
    _, s2, _ = mt2
    ok = _ok(s1, "ut_decay_non_increasing") and _ok(s2, "ut_envelope", "ut_final")
    criterion(3, "u_t maximum principle", ok,
              f"zero forcing worst rel rise {_val(s1, 'ut_decay_non_increasing'):.1e}; "
              f"capillary envelope ratio {_val(s2, 'ut_envelope'):.4f}, final ut {_val(s2, 'ut_final'):.1e}")
    assert ok


def test_criterion_4_energy_identity(mt2, root, criterion):
    _, s2, _ = mt2
    t0 = time.perf_counter()
    gaps = []
    for h in (0.05, 0.025):
        code, summary = run_experiment(loads_config(ENERGY.format(h=h)), root)
        assert code == 0
        series = MonitorSeries.from_csv(f"{summary['output_directory']}/monitors.csv")
        lhs, rhs = series["energy_lhs"][-1], series["energy_rhs"][-1]
        gaps.append(abs(lhs - rhs) / (1 + abs(lhs)))
    secs = time.perf_counter() - t0
    ok = _ok(s2, "energy_identity") and gaps[0] / gaps[1] >= 2 and secs < 600
    criterion(4, "energy identity", ok,
              f"MT2 gap {_val(s2, 'energy_identity'):.2e}; t=1 gaps {gaps[0]:.2e} -> {gaps[1]:.2e} "
              f"(ratio {gaps[0] / gaps[1]:.2f}) {secs:.0f}s")
    assert ok


def test_criterion_5_capillary_convergence(mt2, criterion):
    code, s, _ = mt2
    ok = code == 0 and _ok(s, "flow_newton_agreement", "uniqueness", "residual_pde", "residual_bc")
    criterion(5, "MT2 convergence and uniqueness", ok,
              f"flow-Newton {s['flow_newton_gap']:.1e}, seeds {s['uniqueness_gap']:.1e}, "
              f"residuals {s['residual_pde']:.1e}/{s['residual_bc']:.1e}")
    assert ok


def test_criterion_6_translator(mt3, criterion):
    _, s, secs = mt3
    ok = _ok(s, "convexity", "verdict_translator", "speed_agreement", "omega_bounded") and secs < 900
    criterion(6, "MT3 translator", ok,
              f"C eps={s['C_eps_limit']:.6f} formula={s['C_formula']:.6f} flow={s['C_measured']:.6f}, "
              f"worst gap {_val(s, 'speed_agreement'):.1e}, omega growth {_val(s, 'omega_bounded'):.3f}, "
              f"margin {s['convexity_margin']:.2f}, {secs:.0f}s")
    assert ok


def test_criterion_7_uniform_eps_bound(mt3, criterion):
    _, s, _ = mt3
    vals = np.array(s["eps_u_max"])
    variation = (vals.max() - vals.min()) / vals.min()
    ok = variation < 0.10
    criterion(7, "uniform bound on eps u_eps", ok,
              f"max|eps u| from {vals[0]:.4f} (eps=1) to {vals[-1]:.4f} (eps=2^-8), variation {variation:.1%} "
              f"(threshold 10%)")
    assert ok


def test_criterion_8_identity_suite(criterion):
    t0 = time.perf_counter()
    _, orders = commutation_order()
    ricci = sphere_ricci_error(np.pi / 200)
    _, div_orders = divergence_form_order()
    slack = cauchy_check(10_000)
    dg = dginv_check(1000)
    secs = time.perf_counter() - t0
    ok = min(orders) >= 1 and ricci < 1e-4 and min(div_orders) >= 1 and slack >= 0 and dg < 1e-6 and secs < 60
    criterion(8, "geometry identities", ok,
              f"commutation order {min(orders):.2f}, Ricci err {ricci:.1e}, divergence order {min(div_orders):.2f}, "
              f"Cauchy slack {slack:.1e}, dg FD err {dg:.1e}, {secs:.1f}s")
    assert ok


def test_criterion_9_warped_area(criterion):
    t0 = time.perf_counter()
    cases = warped_area_cases()
    secs = time.perf_counter() - t0
    rel = {k: abs(a - b) / abs(b) for k, (a, b) in cases.items()}
    ok = all(r < 1e-3 for r in rel.values()) and secs < 10
    criterion(9, "warped area", ok, ", ".join(f"{k} {r:.1e}" for k, r in rel.items()) + f", {secs:.1f}s")
    assert ok


def test_criterion_10_admissibility(criterion):
    checks = {c.name: c for c in identity_suite() if c.name.startswith("admissibility")}
    zero, cap = checks["admissibility_zero"], checks["admissibility_capillary"]
    ok = zero.passed and zero.value == 0.0 and cap.passed
    criterion(10, "admissibility", ok,
              f"zero forcing C_min={zero.value:g}; capillary C_min {cap.detail['C_min_coarse']:.4f} -> "
              f"{cap.detail['C_min_fine']:.4f} (rel {cap.value:.1e})")
    assert ok
