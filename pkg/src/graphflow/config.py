"""Experiment configuration: YAML schema, presets and validation.

A config file is a YAML mapping.  Every key is optional except
``experiment``; missing keys take the preset's values.  Schema::

    experiment: mt1_constant | mt2_capillary | mt3_translator | glt_longtime
                | identity_suite | custom
    chart:    {kind: flat | round_sphere, radius: 1.0}
    domain:
      shape:  interval | disk | annulus | polar_starshaped
      params: {a, b} | {R} | {r0, r1} | {r0, amp, mode}
      h:      grid spacing
      phi:    {family: constant, value} | {family: cosine, a, b, m}
    forcing:  {kind: zero} | {kind: capillary, kappa, a} | {kind: linear, eps}
              | {kind: constant, c}
    u0:       {family: constant, value}
              | {family: cos_mode, amplitude, mode, offset}
              | {family: random_smooth, seed, amplitude, modes}
              | {family: compatible_bump, amplitude, tilt}
    stepping: {cfl, t_end, dt, tol_steady, tol_trans, record_every, window}
    monitors: {N, K, chi0: auto | number}
    output:   {directory, snapshot_times: [..]}
    options:  preset-specific thresholds (see ``PRESETS``)
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import yaml

from .domain import PHI_LIMIT, ContactAngle, Shape
from .errors import ParseError, ValidationError
from .forcing import KINDS, ForcingSpec
from .geometry import FlatChart, SphereChart

EXPERIMENTS = ("mt1_constant", "mt2_capillary", "mt3_translator", "glt_longtime", "identity_suite", "custom")
SHAPE_PARAMS = {
    "interval": ("a", "b"),
    "disk": ("R",),
    "annulus": ("r0", "r1"),
    "polar_starshaped": ("r0", "amp", "mode"),
}
U0_FAMILIES = {
    "constant": {"value": 0.0},
    "cos_mode": {"amplitude": 1.0, "mode": 1, "offset": 0.0},
    "random_smooth": {"seed": None, "amplitude": 1.0, "modes": 3},
    "compatible_bump": {"amplitude": 0.3, "tilt": 0.2},
}


@dataclass
class ChartConfig:
    kind: str = "flat"
    radius: float = 1.0


@dataclass
class DomainConfig:
    shape: str = "interval"
    params: dict = field(default_factory=lambda: {"a": 0.0, "b": 1.0})
    h: float = 0.005
    phi: dict = field(default_factory=lambda: {"family": "constant", "value": 0.0})


@dataclass
class SteppingConfig:
    cfl: float = 0.4
    t_end: float = 10.0
    dt: Optional[float] = None
    tol_steady: float = 1e-10
    tol_trans: float = 1e-8
    record_every: Optional[int] = None
    window: int = 50


@dataclass
class MonitorConfig:
    N: float = 1.0
    K: float = 1.0
    chi0: object = "auto"


@dataclass
class OutputConfig:
    directory: Optional[str] = None
    snapshot_times: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    chart: ChartConfig = field(default_factory=ChartConfig)
    domain: DomainConfig = field(default_factory=DomainConfig)
    forcing: dict = field(default_factory=lambda: {"kind": "zero"})
    u0: dict = field(default_factory=lambda: {"family": "cos_mode", "amplitude": 1.0, "mode": 1, "offset": 0.0})
    stepping: SteppingConfig = field(default_factory=SteppingConfig)
    monitors: MonitorConfig = field(default_factory=MonitorConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    options: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    # builders used by the runners
    def build_chart(self):
        if self.chart.kind == "flat":
            return FlatChart(1 if self.domain.shape == "interval" else 2)
        return SphereChart(self.chart.radius)

    def build_shape(self):
        p = self.domain.params
        names = SHAPE_PARAMS[self.domain.shape]
        return Shape(self.domain.shape, tuple(int(p[k]) if k == "mode" else float(p[k]) for k in names))

    def build_phi(self):
        return phi_from_dict(self.domain.phi)

    def build_forcing(self):
        f = dict(self.forcing)
        kind = f.pop("kind")
        return ForcingSpec(kind, **f)


def phi_from_dict(d):
    if d["family"] == "constant":
        return ContactAngle(float(d.get("value", 0.0)))
    return ContactAngle(float(d.get("a", 0.0)), float(d.get("b", 0.0)), int(d.get("m", 0)))


_DISK = {"shape": "disk", "params": {"R": 1.0}, "h": 0.05, "phi": {"family": "constant", "value": 0.3}}

PRESETS = {
    "mt1_constant": {
        "domain": {"shape": "interval", "params": {"a": 0.0, "b": 1.0}, "h": 0.005,
                   "phi": {"family": "constant", "value": 0.0}},
        "forcing": {"kind": "zero"},
        "u0": {"family": "cos_mode", "amplitude": 1.0, "mode": 1, "offset": 0.0},
        "stepping": {"t_end": 10.0, "tol_steady": 1e-10},
        "options": {"oscillation_tol": 1e-8, "omega_tol": 1e-6, "extremum_slack": 1e-12, "ut_slack": 1e-8},
    },
    "mt2_capillary": {
        "domain": _DISK,
        "forcing": {"kind": "capillary", "kappa": 1.0, "a": 0.0},
        "u0": {"family": "compatible_bump", "amplitude": 0.3, "tilt": 0.2},
        "stepping": {"t_end": 60.0, "tol_steady": 1e-10},
        "options": {
            "second_seed": {"family": "constant", "value": 2.0},
            "flow_newton_tol": 1e-6,
            "uniqueness_tol": 1e-7,
            "residual_tol": 1e-7,
            "energy_tol": 0.01,
            "envelope_slack": 0.01,
            "final_ut_tol": 1e-9,
        },
    },
    "mt3_translator": {
        "domain": _DISK,
        "forcing": {"kind": "zero"},
        "u0": {"family": "constant", "value": 0.0},
        "stepping": {"t_end": 30.0, "tol_trans": 1e-8},
        "options": {
            "delta0": 0.5,
            "eps_sequence": [float(2.0**-k) for k in range(9)],
            "agreement_tol": 0.01,
            "omega_growth": 1.2,
            "transient_time": 0.1,
            "eps_bound_variation": 0.10,
        },
    },
    "glt_longtime": {
        "chart": {"kind": "round_sphere", "radius": 1.0},
        "domain": {"shape": "disk", "params": {"R": 1.0}, "h": 0.05,
                   "phi": {"family": "cosine", "a": 0.1, "b": 0.2, "m": 2}},
        "forcing": {"kind": "capillary", "kappa": 1.0, "a": 0.0},
        "u0": {"family": "random_smooth", "seed": 7, "amplitude": 0.5, "modes": 3},
        "stepping": {"t_end": 5.0},
        "options": {},
    },
    "identity_suite": {"options": {}},
    "custom": {"options": {}},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("params", "phi", "forcing", "u0"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset(name):
    if name not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {name!r}", key="experiment", reason="UnknownExperiment")
    base = ExperimentConfig(experiment=name).to_dict()
    return from_dict(_merge(base, PRESETS[name]), validate=True)


def _section(cls, data, key):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValidationError(f"{key} must be a mapping", key=key, reason="NotAMapping")
    allowed = set(cls.__dataclass_fields__)
    for k in data:
        if k not in allowed:
            raise ValidationError(f"unknown key {key}.{k}", key=f"{key}.{k}", reason="UnknownKey")
    return cls(**data)


def from_dict(data, validate=True):
    if not isinstance(data, dict):
        raise ValidationError("config must be a mapping", key="", reason="NotAMapping")
    top = set(ExperimentConfig.__dataclass_fields__)
    for k in data:
        if k not in top:
            raise ValidationError(f"unknown key {k}", key=k, reason="UnknownKey")
    cfg = ExperimentConfig(
        experiment=data.get("experiment", "custom"),
        chart=_section(ChartConfig, data.get("chart"), "chart"),
        domain=_section(DomainConfig, data.get("domain"), "domain"),
        forcing=dict(data.get("forcing") or {"kind": "zero"}),
        u0=dict(data.get("u0") or {"family": "constant", "value": 0.0}),
        stepping=_section(SteppingConfig, data.get("stepping"), "stepping"),
        monitors=_section(MonitorConfig, data.get("monitors"), "monitors"),
        output=_section(OutputConfig, data.get("output"), "output"),
        options=dict(data.get("options") or {}),
    )
    if validate:
        validate_config(cfg)
    return cfg


def _fail(msg, key, reason):
    raise ValidationError(msg, key=key, reason=reason)


def validate_config(cfg):
    """Check references and ranges; fill family defaults in place."""
    if cfg.experiment not in EXPERIMENTS:
        _fail(f"unknown experiment {cfg.experiment!r}", "experiment", "UnknownExperiment")
    if cfg.chart.kind not in ("flat", "round_sphere"):
        _fail(f"unknown chart kind {cfg.chart.kind!r}", "chart.kind", "UnknownChart")
    if not cfg.chart.radius > 0:
        _fail("chart radius must be positive", "chart.radius", "DegenerateShape")
    d = cfg.domain
    if d.shape not in SHAPE_PARAMS:
        _fail(f"unknown shape {d.shape!r}", "domain.shape", "UnknownShape")
    for k in SHAPE_PARAMS[d.shape]:
        if k not in d.params:
            _fail(f"missing domain parameter {k}", f"domain.params.{k}", "MissingParameter")
    for k in d.params:
        if k not in SHAPE_PARAMS[d.shape]:
            _fail(f"unexpected domain parameter {k}", f"domain.params.{k}", "UnknownKey")
    if not (isinstance(d.h, (int, float)) and d.h > 0):
        _fail("grid spacing must be positive", "domain.h", "DegenerateShape")
    if d.shape == "interval" and cfg.chart.kind != "flat":
        _fail("intervals live on the flat chart", "chart.kind", "WrongDimension")
    fam = d.phi.get("family")
    if fam == "constant":
        allowed = {"family", "value"}
    elif fam == "cosine":
        allowed = {"family", "a", "b", "m"}
    else:
        _fail(f"unknown phi family {fam!r}", "domain.phi.family", "UnknownFamily")
    for k in d.phi:
        if k not in allowed:
            _fail(f"unexpected phi parameter {k}", f"domain.phi.{k}", "UnknownKey")
    if phi_from_dict(d.phi).bound >= PHI_LIMIT:
        _fail("max|phi| must stay below 1", "domain.phi", "ContactAngleTooSteep")
    kind = cfg.forcing.get("kind")
    if kind not in KINDS:
        _fail(f"unknown forcing kind {kind!r}", "forcing.kind", "UnknownForcing")
    try:
        cfg.build_forcing()
    except (TypeError, ValueError) as exc:
        _fail(str(exc), "forcing", "InvalidForcing")
    fam = cfg.u0.get("family")
    if fam not in U0_FAMILIES:
        _fail(f"unknown u0 family {fam!r}", "u0.family", "UnknownFamily")
    for k in cfg.u0:
        if k != "family" and k not in U0_FAMILIES[fam]:
            _fail(f"unexpected u0 parameter {k}", f"u0.{k}", "UnknownKey")
    for k, v in U0_FAMILIES[fam].items():
        cfg.u0.setdefault(k, v)
    if fam == "random_smooth" and cfg.u0.get("seed") is None:
        _fail("random_smooth initial data needs a seed", "u0.seed", "MissingSeed")
    if fam == "compatible_bump" and (d.shape != "disk" or d.phi.get("family") != "constant"):
        _fail("compatible_bump needs a disk with constant phi", "u0.family", "IncompatibleFamily")
    s = cfg.stepping
    if not 0 < s.cfl <= 1:
        _fail("cfl must lie in (0, 1]", "stepping.cfl", "OutOfRange")
    if not s.t_end > 0:
        _fail("t_end must be positive", "stepping.t_end", "OutOfRange")
    if s.dt is not None and not s.dt > 0:
        _fail("dt must be positive", "stepping.dt", "OutOfRange")
    if s.record_every is not None and int(s.record_every) < 1:
        _fail("record_every must be >= 1", "stepping.record_every", "OutOfRange")
    if s.window < 1:
        _fail("window must be >= 1", "stepping.window", "OutOfRange")
    if not (cfg.monitors.chi0 == "auto" or isinstance(cfg.monitors.chi0, (int, float))):
        _fail("chi0 must be 'auto' or a number", "monitors.chi0", "OutOfRange")
    return cfg


def load_config(path):
    """Read a YAML config, merge it over its preset and validate."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}", line=None, key=None) from exc
    return loads_config(text)


def loads_config(text):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"malformed YAML: {exc}", line=None if mark is None else mark.line + 1, key=None) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError("top level must be a mapping", line=1, key=None)
    name = data.get("experiment")
    if name is None:
        raise ValidationError("config must name an experiment", key="experiment", reason="MissingParameter")
    if name not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {name!r}", key="experiment", reason="UnknownExperiment")
    base = ExperimentConfig(experiment=name).to_dict()
    merged = _merge(_merge(base, PRESETS[name]), data)
    return from_dict(merged, validate=True)


def emit_config(cfg):
    """YAML text that loads back to an equal config."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=False)


def initial_data(cfg, mesh):
    """Evaluate the configured initial-datum family on the mesh nodes."""
    u0 = cfg.u0
    fam = u0["family"]
    n = mesh.n_nodes
    if fam == "constant":
        return np.full(n, float(u0["value"]))
    xi = _normalized_radius(cfg, mesh)
    if fam == "cos_mode":
        return float(u0["amplitude"]) * np.cos(int(u0["mode"]) * np.pi * xi) + float(u0["offset"])
    if fam == "random_smooth":
        rng = np.random.default_rng(int(u0["seed"]))
        x = mesh.positions
        scale = 2 * np.pi / max(np.ptp(x, axis=0).max(), 1e-12)
        out = np.zeros(n)
        for _ in range(int(u0["modes"])):
            k = rng.normal(size=x.shape[1]) * scale / 2
            out += rng.normal() * np.cos(x @ k + rng.uniform(0, 2 * np.pi))
        return float(u0["amplitude"]) * out / max(np.max(np.abs(out)), 1e-300)
    # compatible_bump on a flat or spherical disk with constant phi
    R = float(cfg.domain.params["R"])
    phi = float(cfg.domain.phi["value"])
    r = xi * R
    x = mesh.positions[:, 0] if cfg.chart.kind == "flat" else r * np.cos(mesh.angle)
    return (
        -phi * r**2 / (2 * R * np.sqrt(1 - phi**2))
        + float(u0["amplitude"]) * np.cos(np.pi * r / R)
        + float(u0["tilt"]) * x * (1 - r**2 / (3 * R**2))
    )


def _normalized_radius(cfg, mesh):
    """Coordinate in [0, 1]: (x - a)/(b - a) on intervals, s / s_max or (s - r0)/(r1 - r0) on rings."""
    if mesh.dim == 1:
        a, b = cfg.domain.params["a"], cfg.domain.params["b"]
        return (mesh.coords[:, 0] - a) / (b - a)
    lv = mesh.info["s_levels"]
    return (mesh.coords[:, 0] - lv[0]) / (lv[-1] - lv[0])
