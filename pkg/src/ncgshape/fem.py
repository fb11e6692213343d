"""P1 finite elements on triangles: assembly, Dirichlet conditions, PCG.

Scalar fields have one dof per vertex. Vector fields use interleaved dofs
``(vx0, vy0, vx1, vy1, ...)`` so that an ``(N, 2)`` nodal array flattens to a
dof vector with ``reshape(-1)``.

Gradients of P1 basis functions are constant per cell, so stiffness and
elasticity matrices are integrated exactly. Loads and cost integrals use the
three-point mid-edge rule (exact for quadratics) everywhere.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from ncgshape.errors import AssemblyError, SolverError
from ncgshape.mesh import Mesh

DEFAULT_TOL = 1e-10


def cell_gradients(mesh: Mesh, *, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Cell areas ``(M,)`` and P1 basis gradients ``(M, 3, 2)``.

    Raises:
        AssemblyError: if ``check`` and some cell has non-positive area.

    """
    p = mesh.coords[mesh.cells]
    x, y = p[:, :, 0], p[:, :, 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (y[:, 1] - y[:, 0]) * (
        x[:, 2] - x[:, 0]
    )
    if check and np.any(det <= 0):
        bad = int(np.argmax(det <= 0))
        raise AssemblyError(bad, 0.5 * float(det[bad]))
    nxt = [1, 2, 0]
    prv = [2, 0, 1]
    grads = np.empty(p.shape)
    grads[:, :, 0] = (y[:, nxt] - y[:, prv]) / det[:, None]
    grads[:, :, 1] = (x[:, prv] - x[:, nxt]) / det[:, None]
    return 0.5 * det, grads


def midpoints(mesh: Mesh) -> np.ndarray:
    """Edge midpoints per cell, ``(M, 3, 2)``; entry ``q`` is edge ``(q, q+1)``."""
    p = mesh.coords[mesh.cells]
    return 0.5 * (p + np.roll(p, -1, axis=1))


def eval_at(fun, pts: np.ndarray) -> np.ndarray:
    """Evaluate a scalar ``fun(x, y)`` (or a constant) on points ``(..., 2)``."""
    if np.isscalar(fun):
        return np.full(pts.shape[:-1], float(fun))
    return np.broadcast_to(
        np.asarray(fun(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:-1]
    )


def eval_grad_at(grad_fun, pts: np.ndarray) -> np.ndarray:
    """Evaluate a gradient ``grad_fun(x, y) -> (gx, gy)``; returns ``(..., 2)``."""
    gx, gy = grad_fun(pts[..., 0], pts[..., 1])
    shape = pts.shape[:-1]
    return np.stack([np.broadcast_to(gx, shape), np.broadcast_to(gy, shape)], -1)


def _scatter_matrix(cells: np.ndarray, local: np.ndarray, ndof: int) -> sp.csr_matrix:
    k = local.shape[1]
    rows = np.repeat(cells, k, axis=1).ravel()
    cols = np.tile(cells, (1, k)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Matrix of ``int grad(phi_i) . grad(phi_j) dx``."""
    area, g = cell_gradients(mesh)
    local = area[:, None, None] * np.einsum("cak,cbk->cab", g, g)
    return _scatter_matrix(mesh.cells, local, mesh.num_vertices)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    area, _ = cell_gradients(mesh)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter_matrix(mesh.cells, area[:, None, None] * ref, mesh.num_vertices)


def assemble_load(mesh: Mesh, f) -> np.ndarray:
    """Load vector ``b_i = int f phi_i dx`` by the mid-edge rule.

    ``f`` is a vectorized callable ``f(x, y)`` or a constant.
    """
    area = mesh.signed_areas()
    fq = eval_at(f, midpoints(mesh))
    # phi_a is 1/2 on the two edges touching vertex a and 0 on the opposite one
    local = (area / 6.0)[:, None] * (fq + np.roll(fq, 1, axis=1))
    return np.bincount(
        mesh.cells.ravel(), weights=local.ravel(), minlength=mesh.num_vertices
    )


def integrate(mesh: Mesh, f) -> float:
    """``int_Omega f dx`` by the mid-edge rule."""
    fq = eval_at(f, midpoints(mesh))
    return float(np.sum(mesh.signed_areas() / 3.0 * fq.sum(axis=1)))


def integrate_nodal(mesh: Mesh, values: np.ndarray) -> float:
    """Integral of a P1 field given by its vertex values."""
    return float(np.sum(mesh.signed_areas() * values[mesh.cells].mean(axis=1)))


def assemble_elasticity(mesh: Mesh, mu: float = 1.0, damping: float = 0.2) -> sp.csr_matrix:
    """Matrix of ``int 2 mu eps(U):eps(V) + damping U.V dx`` on vector P1.

    The mass term makes the form coercive without any Dirichlet condition.
    """
    if mu <= 0 or damping <= 0:
        raise ValueError("mu and damping must be positive")
    area, g = cell_gradients(mesh)
    eye = np.eye(2)
    gg = np.einsum("cak,cbk->cab", g, g)
    # 2 mu eps(phi_a e_i):eps(phi_b e_j) = mu (d_ij g_a.g_b + g_a[j] g_b[i])
    stiff = gg[:, :, None, :, None] * eye[None, None, :, None, :]
    stiff = stiff + np.einsum("caj,cbi->caibj", g, g)
    mass = ((np.ones((3, 3)) + np.eye(3)) / 12.0)[None, :, None, :, None] * eye[
        None, None, :, None, :
    ]
    local = mu * area[:, None, None, None, None] * stiff
    local = local + damping * area[:, None, None, None, None] * mass
    dofs = np.stack([2 * mesh.cells, 2 * mesh.cells + 1], axis=2).reshape(-1, 6)
    return _scatter_matrix(dofs, local.reshape(-1, 6, 6), 2 * mesh.num_vertices)


# --- linear algebra ---------------------------------------------------------


def solve_sparse(A, b, tol: float = DEFAULT_TOL, maxiter: int | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients from a zero initial guess.

    The returned ``x`` satisfies ``||A x - b|| <= tol ||b||`` for the true
    residual.

    Raises:
        SolverError: when ``maxiter`` (default ``10 * dim``) is exhausted.

    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a non-positive diagonal entry", float("nan"))
    inv_diag = 1.0 / diag
    maxiter = 10 * n if maxiter is None else maxiter
    target = tol * bnorm

    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        if np.linalg.norm(r) <= target:
            r_true = b - A @ x
            if np.linalg.norm(r_true) <= target:
                return x
            # drift between recursive and true residual: restart from x
            r = r_true
            z = inv_diag * r
            p = z.copy()
            rz = r @ z
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - A @ x) / bnorm
    if res <= tol:
        return x
    raise SolverError(f"PCG did not converge in {maxiter} iterations", res)


@dataclasses.dataclass(frozen=True)
class DirichletBC:
    """Constrained dofs and their prescribed values (homogeneous by default)."""

    dofs: np.ndarray
    values: np.ndarray | float = 0.0


def apply_dirichlet(A, b, bc: DirichletBC) -> tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric elimination: zero rows/columns, unit diagonal, lifted rhs."""
    n = A.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[bc.dofs] = True
    known = np.zeros(n)
    known[bc.dofs] = bc.values
    rhs = np.asarray(b, dtype=float) - A @ known
    rhs[mask] = known[mask]
    keep = sp.diags((~mask).astype(float))
    mat = (keep @ A @ keep + sp.diags(mask.astype(float))).tocsr()
    mat.eliminate_zeros()
    return mat, rhs


def solve_dirichlet(A, b, bc: DirichletBC, tol: float = DEFAULT_TOL) -> np.ndarray:
    mat, rhs = apply_dirichlet(A, b, bc)
    return solve_sparse(mat, rhs, tol)


def solve_poisson_state(mesh: Mesh, f, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Solve ``-Laplace u = f`` with ``u = 0`` on the boundary."""
    bc = DirichletBC(mesh.boundary_vertex_indices)
    return solve_dirichlet(assemble_stiffness(mesh), assemble_load(mesh, f), bc, tol)


def solve_poisson_adjoint(mesh: Mesh, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Adjoint of ``J = int u dx``: ``int grad p . grad v = -int v``, ``p = 0`` on the boundary."""
    bc = DirichletBC(mesh.boundary_vertex_indices)
    return solve_dirichlet(assemble_stiffness(mesh), -assemble_load(mesh, 1.0), bc, tol)
