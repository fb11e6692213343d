"""Shape optimization on 2D triangle meshes with nonlinear conjugate gradients."""

from ncgshape.mesh import Mesh, deform, generate_unit_disc, generate_unit_square
from ncgshape.optimizers import VARIANTS, OptConfig, OptHistory, run
from ncgshape.problems import geometric_problem, poisson_problem

__all__ = [
    "Mesh",
    "OptConfig",
    "OptHistory",
    "VARIANTS",
    "deform",
    "generate_unit_disc",
    "generate_unit_square",
    "geometric_problem",
    "poisson_problem",
    "run",
]

__version__ = "0.1.0"
