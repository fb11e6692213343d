"""Shape derivatives, gradient deformations and the finite-difference oracle.

Shape derivatives are assembled in their volume form as linear functionals on
nodal P1 deformation fields. Every assembler uses the same quadrature as the
cost it differentiates, so the functional is the exact derivative of the
discrete cost with respect to vertex motion.

The Riemannian gradient is represented by its volumetric extension ``G``, the
solution of ``a(G, V) = dJ[V]`` for all ``V``. Its normal trace on the boundary
is the shape gradient; it is never extracted separately.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from ncgshape import fem
from ncgshape.errors import AlignmentError, MeshError
from ncgshape.mesh import Mesh, as_field, deform, is_valid


@dataclasses.dataclass(frozen=True, eq=False)
class ShapeFunctional:
    """``dJ[.]`` stored as interleaved coefficients against nodal fields."""

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.size % 2 or not np.all(np.isfinite(vals)):
            raise AlignmentError("shape functional needs 2N finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def num_vertices(self) -> int:
        return self.values.size // 2

    def apply(self, field) -> float:
        vals = np.asarray(field, dtype=float).reshape(-1)
        if vals.size != self.values.size:
            raise AlignmentError(
                f"field with {vals.size} entries applied to functional with "
                f"{self.values.size}"
            )
        return float(self.values @ vals)

    def __add__(self, other: ShapeFunctional) -> ShapeFunctional:
        return ShapeFunctional(self.values + other.values)

    def __mul__(self, c: float) -> ShapeFunctional:
        return ShapeFunctional(c * self.values)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, mesh: Mesh) -> ShapeFunctional:
        return cls(np.zeros(2 * mesh.num_vertices))


def _from_cell_coefficients(mesh: Mesh, coef: np.ndarray) -> ShapeFunctional:
    """Sum per-cell coefficients ``(M, 3, 2)`` into an interleaved functional."""
    dofs = np.stack([2 * mesh.cells, 2 * mesh.cells + 1], axis=2)
    vals = np.bincount(
        dofs.ravel(), weights=coef.ravel(), minlength=2 * mesh.num_vertices
    )
    return ShapeFunctional(vals)


def _edge_share(area: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``|T|/3 * sum_q q(x_q) phi_a(x_q)`` for midpoint data ``q`` of shape ``(M, 3, ...)``."""
    return (area / 6.0).reshape((-1, 1) + (1,) * (q.ndim - 2)) * (
        q + np.roll(q, 1, axis=1)
    )


def shape_derivative_geometric(mesh: Mesh, w, grad_w) -> ShapeFunctional:
    """Derivative of ``J = int_Omega w dx``: ``dJ[V] = int grad(w).V + w div V``.

    Args:
        mesh: current domain.
        w: integrand, a vectorized ``w(x, y)`` or a constant.
        grad_w: its gradient ``grad_w(x, y) -> (wx, wy)``.

    """
    area, g = fem.cell_gradients(mesh)
    mids = fem.midpoints(mesh)
    wq = fem.eval_at(w, mids)
    gwq = fem.eval_grad_at(grad_w, mids)
    coef = _edge_share(area, gwq)
    coef += (area / 3.0 * wq.sum(axis=1))[:, None, None] * g
    return _from_cell_coefficients(mesh, coef)


def shape_derivative_poisson(mesh: Mesh, u, p, f, grad_f) -> ShapeFunctional:
    """Volume-form derivative of ``J = int u`` subject to ``-Laplace u = f``.

    ``dJ[V] = int div(V) u + ((div V) I - DV - DV^T) grad u . grad p
    - (grad f . V + f div V) p``, with ``p`` the adjoint from
    :func:`ncgshape.fem.solve_poisson_adjoint`.
    """
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    if u.shape != (mesh.num_vertices,) or p.shape != (mesh.num_vertices,):
        raise AlignmentError("state and adjoint must have one value per vertex")
    area, g = fem.cell_gradients(mesh)
    uc, pc = u[mesh.cells], p[mesh.cells]
    gu = np.einsum("ca,cak->ck", uc, g)
    gp = np.einsum("ca,cak->ck", pc, g)

    coef = (area * uc.mean(axis=1))[:, None, None] * g
    coef += area[:, None, None] * (
        np.einsum("ck,ck->c", gu, gp)[:, None, None] * g
        - gu[:, None, :] * np.einsum("cak,ck->ca", g, gp)[:, :, None]
        - gp[:, None, :] * np.einsum("cak,ck->ca", g, gu)[:, :, None]
    )

    mids = fem.midpoints(mesh)
    pq = 0.5 * (pc + np.roll(pc, -1, axis=1))
    fq = fem.eval_at(f, mids)
    gfq = fem.eval_grad_at(grad_f, mids)
    coef -= _edge_share(area, gfq * pq[:, :, None])
    coef -= (area / 3.0 * (fq * pq).sum(axis=1))[:, None, None] * g
    return _from_cell_coefficients(mesh, coef)


def _zero_grad(x, y):
    return 0.0, 0.0


def volume_regularization_derivative(
    mesh: Mesh, vol0: float, gamma: float
) -> tuple[float, ShapeFunctional]:
    """Cost ``gamma/2 (vol - vol0)^2`` and its shape derivative."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    vol = mesh.area()
    cost = 0.5 * gamma * (vol - vol0) ** 2
    if gamma == 0 or vol == vol0:
        return cost, ShapeFunctional.zeros(mesh)
    dvol = shape_derivative_geometric(mesh, 1.0, _zero_grad)
    return cost, gamma * (vol - vol0) * dvol


@dataclasses.dataclass(frozen=True, eq=False)
class MetricContext:
    """Discrete Steklov-Poincare type metric, realized by the elasticity form.

    Attributes:
        matrix: SPD matrix of the bilinear form on interleaved vector dofs.
        tol: relative residual for Riesz solves.

    """

    matrix: sp.csr_matrix
    tol: float = 1e-10

    @classmethod
    def from_mesh(
        cls, mesh: Mesh, mu: float = 1.0, damping: float = 0.2, tol: float = 1e-10
    ) -> MetricContext:
        return cls(fem.assemble_elasticity(mesh, mu, damping), tol)

    @property
    def num_vertices(self) -> int:
        return self.matrix.shape[0] // 2

    def _flat(self, field) -> np.ndarray:
        vals = np.asarray(field, dtype=float).reshape(-1)
        if vals.size != self.matrix.shape[0]:
            raise AlignmentError(
                f"field with {vals.size} entries does not match metric of "
                f"dimension {self.matrix.shape[0]}"
            )
        return vals


def gradient_deformation(metric: MetricContext, dJ: ShapeFunctional) -> np.ndarray:
    """Solve ``a(G, V) = dJ[V]`` for all ``V``; returns ``G`` as ``(N, 2)``."""
    rhs = metric._flat(dJ.values)
    return fem.solve_sparse(metric.matrix, rhs, metric.tol).reshape(-1, 2)


def metric_inner(metric: MetricContext, U, V) -> float:
    u = metric._flat(U)
    v = metric._flat(V)
    return float(u @ (metric.matrix @ v))


def metric_norm(metric: MetricContext, U) -> float:
    return float(np.sqrt(max(metric_inner(metric, U, U), 0.0)))


# --- finite-difference oracle -------------------------------------------------


def fd_directional_derivative(problem, mesh: Mesh, V, t: float = 1e-4) -> float:
    """One-sided quotient ``(J(Omega_t) - J(Omega)) / t`` with full re-solves.

    Raises:
        MeshError: if the perturbed mesh has inverted cells.

    """
    V = as_field(V, mesh)
    moved = deform(mesh, V, t)
    if not is_valid(moved):
        raise MeshError(f"perturbation with t={t} inverts cells")
    return (problem.evaluate(moved) - problem.evaluate(mesh)) / t


def random_smooth_field(mesh: Mesh, rng: np.random.Generator, amplitude: float = 1.0) -> np.ndarray:
    """Seeded smooth vector field: random quadratic plus one Fourier mode."""
    x, y = mesh.coords[:, 0], mesh.coords[:, 1]
    basis = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    coef = rng.normal(size=(6, 2))
    field = basis @ coef
    freq = rng.uniform(-2.0, 2.0, size=(2, 2))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    amp = rng.normal(size=2)
    for c in range(2):
        field[:, c] += amp[c] * np.sin(freq[c, 0] * x + freq[c, 1] * y + phase[c])
    return amplitude * field


@dataclasses.dataclass(frozen=True)
class GradientCheck:
    """Outcome of comparing ``dJ[V]`` with one-sided difference quotients."""

    derivative: float
    fd_t: float
    fd_half: float
    t: float

    @property
    def scale(self) -> float:
        return max(abs(self.derivative), 1e-8)

    @property
    def rel_error(self) -> float:
        return abs(self.fd_t - self.derivative) / self.scale

    @property
    def rel_error_half(self) -> float:
        return abs(self.fd_half - self.derivative) / self.scale

    @property
    def extrapolated_rel_error(self) -> float:
        """Error of the Richardson-extrapolated quotient ``2 q(t/2) - q(t)``."""
        return abs(2.0 * self.fd_half - self.fd_t - self.derivative) / self.scale

    @property
    def richardson_ratio(self) -> float:
        num = abs(self.fd_t - self.derivative)
        den = abs(self.fd_half - self.derivative)
        return num / den if den > 0 else float("inf")

    def passes(self, rel_tol: float = 5e-2, ratio=(1.5, 2.5)) -> bool:
        return self.rel_error <= rel_tol and ratio[0] <= self.richardson_ratio <= ratio[1]


def check_gradient(
    problem,
    mesh: Mesh,
    fields,
    t: float = 1e-4,
    derivative_scale: float = 1.0,
) -> list[GradientCheck]:
    """Compare the assembled derivative with FD quotients at ``t`` and ``t/2``.

    ``derivative_scale`` multiplies the assembled functional; it exists to let
    tests corrupt the derivative on purpose.
    """
    J0, dJ = problem.derivative(mesh)
    out = []
    for V in fields:
        V = as_field(V, mesh)
        q = []
        for s in (t, 0.5 * t):
            moved = deform(mesh, V, s)
            if not is_valid(moved):
                raise MeshError(f"perturbation with t={s} inverts cells")
            q.append((problem.evaluate(moved) - J0) / s)
        out.append(GradientCheck(derivative_scale * dJ.apply(V), q[0], q[1], t))
    return out
