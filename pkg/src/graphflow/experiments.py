"""Preset runners: drive the solvers, write artifacts, evaluate assertions."""
from __future__ import annotations

import json
import os
import time
from dataclasses import replace

import numpy as np

from .config import emit_config, initial_data, validate_config
from .domain import apply_bc, boundary_residual, build_mesh, convexity_condition
from .elliptic import epsilon_path, newton, residual, solve_capillary, solve_translator, translating_speed
from .errors import GraphFlowError, NoConvergence, SingularMetric, StepRejected
from .flow import FlowConfig, run, write_snapshot
from .forcing import admissibility_margin
from .identities import identity_suite

OUTPUT_ROOT_ENV = "GRAPHFLOW_OUTPUT_ROOT"

EXIT_PASS, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def output_directory(cfg, root=None):
    root = root or os.environ.get(OUTPUT_ROOT_ENV) or "runs"
    return os.path.join(root, cfg.output.directory or cfg.experiment)


def flow_config(cfg):
    s, m = cfg.stepping, cfg.monitors
    return FlowConfig(
        cfl=s.cfl,
        t_end=s.t_end,
        dt=s.dt,
        tol_steady=s.tol_steady,
        tol_trans=s.tol_trans,
        record_every=s.record_every,
        window=s.window,
        N=m.N,
        K=m.K,
        chi0=None if m.chi0 == "auto" else float(m.chi0),
        snapshot_times=tuple(cfg.output.snapshot_times),
    )


def build(cfg):
    chart = cfg.build_chart()
    mesh = build_mesh(cfg.build_shape(), cfg.domain.h, cfg.build_phi(), chart if cfg.chart.kind != "flat" else None)
    return mesh, cfg.build_forcing()


def admissibility(mesh, forcing, states):
    """Largest C_min over the given states, with the per-condition margins."""
    best = None
    for u in states:
        _, p = mesh.graph(u)
        rep = admissibility_margin(forcing, u, p, mesh.sigma, mesh.sigma_inv, x=mesh.positions)
        if best is None or rep.C_min > best.C_min:
            best = rep
    return {"C_min": best.C_min, "margins": best.margins, "infeasible": best.infeasible}


def _check(value, threshold, passed):
    return {"passed": bool(passed), "value": float(value), "threshold": float(threshold)}


def _worst_increase(seq, floor=1e-300):
    """Largest relative increase between consecutive entries (negative if strictly decreasing)."""
    seq = np.asarray(seq, dtype=float)
    if seq.size < 2:
        return 0.0
    return float(np.max(np.diff(seq) / np.maximum(np.abs(seq[:-1]), floor)))


def _write_flow_artifacts(outdir, mesh, res):
    res.series.to_csv(os.path.join(outdir, "monitors.csv"))
    for t, u in res.snapshots:
        write_snapshot(os.path.join(outdir, f"snapshot_t{t:.6g}.csv"), mesh, u)
    write_snapshot(os.path.join(outdir, "snapshot_final.csv"), mesh, res.state.u)


def _flow_summary(res):
    return {
        "verdict": res.verdict,
        "value": res.value,
        "t_final": res.state.t,
        "steps": res.steps,
        "dt": res.dt,
        "reject_time": res.reject_time,
    }


def _run_mt1(cfg, mesh, forcing, outdir):
    opts = cfg.options
    res = run(mesh, forcing, initial_data(cfg, mesh), flow_config(cfg))
    _write_flow_artifacts(outdir, mesh, res)
    s = res.series
    out = _flow_summary(res)
    out["limit_constant"] = res.value
    osc = float(np.ptp(res.state.u))
    umax_inc = _worst_increase(s["u_max"], floor=1.0)
    umin_dec = _worst_increase(-s["u_min"], floor=1.0)
    ut_inc = _worst_increase(s["ut_decay"])
    checks = {
        "verdict_constant": _check(res.verdict == "constant", 1, res.verdict == "constant"),
        "final_oscillation": _check(osc, opts["oscillation_tol"], osc < opts["oscillation_tol"]),
        "omega_final": _check(s["omega_max"][-1] - 1, opts["omega_tol"], s["omega_max"][-1] <= 1 + opts["omega_tol"]),
        "u_max_non_increasing": _check(umax_inc, opts["extremum_slack"], umax_inc <= opts["extremum_slack"]),
        "u_min_non_decreasing": _check(umin_dec, opts["extremum_slack"], umin_dec <= opts["extremum_slack"]),
        "ut_decay_non_increasing": _check(ut_inc, opts["ut_slack"], ut_inc <= opts["ut_slack"]),
    }
    return res, out, checks


def _run_mt2(cfg, mesh, forcing, outdir):
    opts = cfg.options
    u0 = initial_data(cfg, mesh)
    res = run(mesh, forcing, u0, flow_config(cfg))
    _write_flow_artifacts(outdir, mesh, res)
    s = res.series
    out = _flow_summary(res)
    u_newton, _, its = newton(mesh, forcing, u0, tol=opts["residual_tol"] * 1e-2)
    cfg2 = validate_config(replace(cfg, u0=dict(opts["second_seed"])))
    sol2 = solve_capillary(mesh, forcing, initial_data(cfg2, mesh), method="flow+newton", tol=opts["residual_tol"] * 1e-2)
    gap_fn = float(np.max(np.abs(res.state.u - u_newton)))
    gap_unique = float(np.max(np.abs(sol2.u_inf - u_newton)))
    r_pde = float(np.max(np.abs(residual(mesh, forcing, u_newton))))
    r_bc = boundary_residual(mesh, apply_bc(mesh, u_newton))
    lhs, rhs = s["energy_lhs"][-1], s["energy_rhs"][-1]
    e_gap = abs(lhs - rhs) / (1 + abs(lhs))
    ut, t = s["ut_max"], s["t"]
    h0 = forcing.gravity_floor
    env = float(np.max(ut / (ut[0] * np.exp(-h0 * t)))) if ut[0] > 0 else 0.0
    out.update(
        newton_iterations=its,
        residual_pde=r_pde,
        residual_bc=r_bc,
        flow_newton_gap=gap_fn,
        uniqueness_gap=gap_unique,
        energy_lhs=lhs,
        energy_rhs=rhs,
        energy_gap=e_gap,
        u_inf_min=float(u_newton.min()),
        u_inf_max=float(u_newton.max()),
    )
    checks = {
        "verdict_steady": _check(res.verdict == "steady", 1, res.verdict == "steady"),
        "flow_newton_agreement": _check(gap_fn, opts["flow_newton_tol"], gap_fn < opts["flow_newton_tol"]),
        "uniqueness": _check(gap_unique, opts["uniqueness_tol"], gap_unique < opts["uniqueness_tol"]),
        "residual_pde": _check(r_pde, opts["residual_tol"], r_pde < opts["residual_tol"]),
        "residual_bc": _check(r_bc, opts["residual_tol"], r_bc < opts["residual_tol"]),
        "energy_identity": _check(e_gap, opts["energy_tol"], e_gap < opts["energy_tol"]),
        "ut_envelope": _check(env, 1 + opts["envelope_slack"], env <= 1 + opts["envelope_slack"]),
        "ut_final": _check(ut[-1], opts["final_ut_tol"], ut[-1] < opts["final_ut_tol"]),
    }
    write_snapshot(os.path.join(outdir, "snapshot_newton.csv"), mesh, u_newton)
    return res, out, checks


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b))


def _run_mt3(cfg, mesh, forcing, outdir):
    opts = cfg.options
    conv = convexity_condition(mesh, opts["delta0"])
    res = run(mesh, forcing, initial_data(cfg, mesh), flow_config(cfg))
    _write_flow_artifacts(outdir, mesh, res)
    s = res.series
    out = _flow_summary(res)
    path = epsilon_path(mesh, opts["eps_sequence"])
    C_formula = translating_speed(mesh, path.u_inf)
    C_eps = path.C_estimate
    C_flow = res.value if res.verdict == "translator" else float("nan")
    bordered = solve_translator(mesh, u0=path.u_inf, C0=C_eps)
    om, t = s["omega_max"], s["t"]
    after = om[t >= opts["transient_time"]]
    base = after[0] if after.size else om[-1]
    growth = float(np.max(om) / base)
    var = float((path.eps_u_max.max() - path.eps_u_max.min()) / path.eps_u_max.min())
    out.update(
        convexity_margin=conv.margin,
        C_formula=C_formula,
        C_measured=C_flow,
        C_eps_limit=C_eps,
        C_bordered=bordered.C,
        gap_formula_measured=_rel(C_formula, C_flow),
        gap_formula_eps=_rel(C_formula, C_eps),
        gap_measured_eps=_rel(C_flow, C_eps),
        eps=list(map(float, path.eps)),
        eps_u_max=list(map(float, path.eps_u_max)),
        eps_u_osc=list(map(float, path.eps_u_osc)),
        eps_u_mean=list(map(float, path.eps_u_mean)),
        eps_profile_change=[None if np.isnan(v) else float(v) for v in path.profile_change],
        eps_residuals=list(map(float, path.residuals)),
        eps_u_max_variation=var,
        translator_residual=bordered.residual_pde,
    )
    tol = opts["agreement_tol"]
    worst = max(out["gap_formula_measured"], out["gap_formula_eps"], out["gap_measured_eps"])
    checks = {
        "convexity": _check(conv.margin, 0.0, conv.holds),
        "verdict_translator": _check(res.verdict == "translator", 1, res.verdict == "translator"),
        "speed_agreement": _check(worst, tol, worst < tol),
        "omega_bounded": _check(growth, opts["omega_growth"], growth <= opts["omega_growth"]),
        "eps_u_uniform_bound": _check(var, opts["eps_bound_variation"], var < opts["eps_bound_variation"]),
    }
    np.savetxt(os.path.join(outdir, "eps_path.csv"),
               np.column_stack([path.eps, path.eps_u_max, path.eps_u_osc, path.eps_u_mean]),
               delimiter=",", header="eps,eps_u_max,eps_u_osc,eps_u_mean", comments="")
    return res, out, checks


def _run_flow_only(cfg, mesh, forcing, outdir):
    res = run(mesh, forcing, initial_data(cfg, mesh), flow_config(cfg))
    _write_flow_artifacts(outdir, mesh, res)
    out = _flow_summary(res)
    om = float(np.max(res.series["omega_max"])) if len(res.series) else float("nan")
    out["omega_sup"] = om
    ok = res.verdict != "rejected"
    checks = {"no_blowup": _check(ok, 1, ok), "omega_finite": _check(om, 1e6, np.isfinite(om) and om < 1e6)}
    return res, out, checks


RUNNERS = {
    "mt1_constant": _run_mt1,
    "mt2_capillary": _run_mt2,
    "mt3_translator": _run_mt3,
    "glt_longtime": _run_flow_only,
    "custom": _run_flow_only,
}


def run_experiment(cfg, output_root=None):
    """Run a validated config; returns ``(exit_code, summary)`` and writes artifacts."""
    outdir = output_directory(cfg, output_root)
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "resolved_config.yaml"), "w") as fh:
        fh.write(emit_config(cfg))
    t0 = time.perf_counter()
    summary = {"experiment": cfg.experiment, "output_directory": outdir}
    try:
        if cfg.experiment == "identity_suite":
            checks = {c.name: c.to_dict() for c in identity_suite()}
            summary["assertions"] = checks
            code = EXIT_PASS if all(c["passed"] for c in checks.values()) else EXIT_ASSERT
        else:
            mesh, forcing = build(cfg)
            summary["n_nodes"] = mesh.n_nodes
            res, out, checks = RUNNERS[cfg.experiment](cfg, mesh, forcing, outdir)
            summary.update(out)
            summary["admissibility"] = admissibility(mesh, forcing, [initial_data(cfg, mesh), res.state.u])
            summary["assertions"] = checks
            allowed_timeout = cfg.experiment in ("glt_longtime", "custom")
            if res.verdict == "rejected" or (res.verdict == "timeout" and not allowed_timeout):
                code = EXIT_NUMERIC
            else:
                code = EXIT_PASS if all(c["passed"] for c in checks.values()) else EXIT_ASSERT
    except NoConvergence as exc:
        code = EXIT_NUMERIC
        summary["failure"] = {"type": "NoConvergence", "message": str(exc),
                              "residual_pde": exc.residual_pde, "residual_bc": exc.residual_bc}
    except (SingularMetric, StepRejected) as exc:
        code = EXIT_NUMERIC
        summary["failure"] = {"type": type(exc).__name__, "message": str(exc)}
    except GraphFlowError as exc:
        code = EXIT_CONFIG
        summary["failure"] = {"type": type(exc).__name__, "message": str(exc)}
    summary["status"] = {EXIT_PASS: "pass", EXIT_ASSERT: "assertion_failure", EXIT_CONFIG: "config_error",
                         EXIT_NUMERIC: "numerical_failure"}[code]
    summary["exit_code"] = code
    summary["runtime_s"] = time.perf_counter() - t0
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2)
    return code, summary


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
