"""Continuous-in-depth neural network blocks.

A small numpy-based library for building network blocks whose forward pass
is the numerical integration of a learned vector field.  The same trained
weights can be run through different discrete computational graphs (Euler,
midpoint, both classic RK4 variants, any step count), split-refined during
training, and coarsened after training without touching data.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Var, backward, finite_diff_check
from .basis import ParamGroupSpec, WeightFunction, refine_split, project_coarsen
from .blocks import Manifestation, OdeBlockSpec, ResidualModuleSpec, manifest, odeblock_forward
from .integrators import ButcherTableau, TimeGrid, Trajectory, tableau, step, solve
from .pendulum import PendulumConfig, pendulum_exact, true_rhs

__all__ = [
    "Tape",
    "Var",
    "backward",
    "finite_diff_check",
    "ParamGroupSpec",
    "WeightFunction",
    "refine_split",
    "project_coarsen",
    "Manifestation",
    "OdeBlockSpec",
    "ResidualModuleSpec",
    "manifest",
    "odeblock_forward",
    "ButcherTableau",
    "TimeGrid",
    "Trajectory",
    "tableau",
    "step",
    "solve",
    "PendulumConfig",
    "pendulum_exact",
    "true_rhs",
]
