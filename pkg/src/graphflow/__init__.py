"""Graph flows with a prescribed contact angle on Riemannian domains."""
from .config import ExperimentConfig, load_config, loads_config, preset
from .domain import ContactAngle, Shape, build_mesh
from .elliptic import epsilon_path, newton, solve_capillary, solve_translator, translating_speed
from .errors import GraphFlowError
from .experiments import run_experiment
from .flow import FlowConfig, GraphState, run, step
from .forcing import ForcingSpec, admissibility_margin
from .geometry import FlatChart, PolarChart, SphereChart, StarshapedChart, TabulatedChart

__version__ = "0.1.0"

__all__ = [
    "ContactAngle",
    "ExperimentConfig",
    "FlatChart",
    "FlowConfig",
    "ForcingSpec",
    "GraphFlowError",
    "GraphState",
    "PolarChart",
    "Shape",
    "SphereChart",
    "StarshapedChart",
    "TabulatedChart",
    "admissibility_margin",
    "build_mesh",
    "epsilon_path",
    "load_config",
    "loads_config",
    "newton",
    "preset",
    "run",
    "run_experiment",
    "solve_capillary",
    "solve_translator",
    "step",
    "translating_speed",
]
