"""Benchmark shape optimization problems behind one small interface.

A problem handle exposes ``evaluate(mesh) -> cost`` and
``derivative(mesh) -> (cost, ShapeFunctional)``. Both may solve PDEs.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ncgshape import fem
from ncgshape.mesh import Mesh
from ncgshape.shape_calculus import (
    ShapeFunctional,
    shape_derivative_geometric,
    shape_derivative_poisson,
    volume_regularization_derivative,
)


def paper_source(x, y):
    """Source term of the Poisson benchmark."""
    s = x + 0.4 - y**2
    return 2.5 * s**2 + x**2 + y**2 - 1.0


def paper_source_grad(x, y):
    s = x + 0.4 - y**2
    return 5.0 * s + 2.0 * x, -10.0 * y * s + 2.0 * y


def _one(x, y):
    return np.ones_like(x)


def _zero_grad(x, y):
    return np.zeros_like(x), np.zeros_like(y)


SOURCES = {
    "paper": (paper_source, paper_source_grad),
    "constant": (_one, _zero_grad),
}


class ShapeProblem:
    """Base class: a cost on meshes with optional volume regularization.

    Subclasses implement ``_cost`` and ``_derivative``.
    """

    name = "abstract"

    def __init__(self, gamma: float = 0.0, vol0: float | None = None) -> None:
        if gamma < 0:
            raise ValueError("gamma must be non-negative")
        if gamma > 0 and (vol0 is None or vol0 <= 0):
            raise ValueError("vol0 must be positive when gamma > 0")
        self.gamma = float(gamma)
        self.vol0 = None if vol0 is None else float(vol0)

    def _cost(self, mesh: Mesh) -> float:
        raise NotImplementedError

    def _derivative(self, mesh: Mesh) -> tuple[float, ShapeFunctional]:
        raise NotImplementedError

    def evaluate(self, mesh: Mesh) -> float:
        cost = self._cost(mesh)
        if self.gamma > 0:
            cost += volume_regularization_derivative(mesh, self.vol0, self.gamma)[0]
        return cost

    def derivative(self, mesh: Mesh) -> tuple[float, ShapeFunctional]:
        cost, dJ = self._derivative(mesh)
        if self.gamma > 0:
            reg, dreg = volume_regularization_derivative(mesh, self.vol0, self.gamma)
            cost += reg
            dJ = dJ + dreg
        return cost, dJ


class PoissonProblem(ShapeProblem):
    """``min int_Omega u dx`` subject to ``-Laplace u = f``, ``u = 0`` on the boundary."""

    name = "poisson"

    def __init__(
        self,
        source=paper_source,
        source_grad=paper_source_grad,
        gamma: float = 0.0,
        vol0: float | None = None,
        tol: float = fem.DEFAULT_TOL,
    ) -> None:
        super().__init__(gamma, vol0)
        self.source = source
        self.source_grad = source_grad
        self.tol = tol

    def state(self, mesh: Mesh) -> np.ndarray:
        return fem.solve_poisson_state(mesh, self.source, self.tol)

    def _cost(self, mesh: Mesh) -> float:
        return fem.integrate_nodal(mesh, self.state(mesh))

    def _derivative(self, mesh: Mesh) -> tuple[float, ShapeFunctional]:
        K = fem.assemble_stiffness(mesh)
        bc = fem.DirichletBC(mesh.boundary_vertex_indices)
        u = fem.solve_dirichlet(K, fem.assemble_load(mesh, self.source), bc, self.tol)
        p = fem.solve_dirichlet(K, -fem.assemble_load(mesh, 1.0), bc, self.tol)
        dJ = shape_derivative_poisson(mesh, u, p, self.source, self.source_grad)
        return fem.integrate_nodal(mesh, u), dJ


class GeometricProblem(ShapeProblem):
    """PDE-free cost ``J = int_Omega w dx``."""

    name = "geometric"

    def __init__(self, w, grad_w, gamma: float = 0.0, vol0: float | None = None) -> None:
        super().__init__(gamma, vol0)
        self.w = w
        self.grad_w = grad_w

    def _cost(self, mesh: Mesh) -> float:
        return fem.integrate(mesh, self.w)

    def _derivative(self, mesh: Mesh) -> tuple[float, ShapeFunctional]:
        return self._cost(mesh), shape_derivative_geometric(mesh, self.w, self.grad_w)


def _radial_w(x, y):
    return x**2 + y**2 - 1.0


def _radial_grad_w(x, y):
    return 2.0 * x, 2.0 * y


def poisson_problem(
    gamma: float = 0.0, vol0: float | None = None, source: str = "paper", tol: float = fem.DEFAULT_TOL
) -> PoissonProblem:
    f, grad_f = SOURCES[source]
    return PoissonProblem(f, grad_f, gamma=gamma, vol0=vol0, tol=tol)


def geometric_problem(
    kind: str = "centered-disc", gamma: float = 0.0, vol0: float | None = None
) -> GeometricProblem:
    """``J = int (x^2 + y^2 - 1) dx``; the unit disc is the minimizer."""
    if kind != "centered-disc":
        raise ValueError(f"unknown geometric problem {kind!r}")
    return GeometricProblem(_radial_w, _radial_grad_w, gamma=gamma, vol0=vol0)


@dataclasses.dataclass(frozen=True)
class ProblemSpec:
    """Declarative problem selection, as read from a run configuration.

    ``vol0=None`` with ``gamma > 0`` means "area of the initial mesh".
    """

    kind: str = "poisson"
    source: str = "paper"
    gamma: float = 0.0
    vol0: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("poisson", "geometric"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.vol0 is not None and self.vol0 <= 0:
            raise ValueError("vol0 must be positive")

    def build(self, initial_mesh: Mesh | None = None, tol: float = fem.DEFAULT_TOL) -> ShapeProblem:
        vol0 = self.vol0
        if self.gamma > 0 and vol0 is None:
            if initial_mesh is None:
                raise ValueError("vol0 defaults to the initial area; pass the mesh")
            vol0 = initial_mesh.area()
        if self.kind == "poisson":
            return poisson_problem(self.gamma, vol0, self.source, tol)
        return geometric_problem("centered-disc", self.gamma, vol0)
