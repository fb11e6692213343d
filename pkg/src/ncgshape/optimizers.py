"""Riemannian descent methods on meshes: NCG, gradient descent and L-BFGS.

All methods share one loop. At iterate ``k`` the shape derivative is
converted into its gradient deformation ``G_k`` through the elasticity
metric of the current mesh, a search direction is formed, an Armijo step is
taken, and the mesh is moved by perturbation of identity.

Vector transport is the identity on nodal coefficients: the retraction keeps
connectivity, so a field on the old mesh is reinterpreted on the new one and
all inner products are taken in the new mesh's metric.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time

import numpy as np

from ncgshape.errors import AlignmentError, LineSearchError, ShapeOptError
from ncgshape.mesh import Mesh, deform, is_valid, min_cell_quality
from ncgshape.shape_calculus import (
    MetricContext,
    gradient_deformation,
    metric_inner,
)

log = logging.getLogger(__name__)

NCG_VARIANTS = ("FR", "PR", "HS", "DY", "HZ")
VARIANTS = ("GD",) + NCG_VARIANTS + ("LBFGS",)
MAX_SHRINKS = 50


@dataclasses.dataclass(frozen=True)
class OptConfig:
    """Optimizer settings.

    ``abs_tol`` is an extra absolute stop on the gradient norm; the default
    of 0 only triggers for an exactly vanishing gradient.
    """

    variant: str = "DY"
    lbfgs_memory: int = 5
    rel_tol: float = 1e-3
    abs_tol: float = 0.0
    max_iter: int = 200
    armijo_c: float = 1e-4
    shrink: float = 0.5
    initial_step: float = 1.0
    step_expansion: float = 2.0
    quality_floor: float = 0.05
    clip_beta: bool = False
    mu: float = 1.0
    damping: float = 0.2
    metric_tol: float = 1e-10

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}"
            )
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.abs_tol < 0:
            raise ValueError("abs_tol must be non-negative")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be at least 1")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if self.initial_step <= 0 or self.step_expansion <= 0:
            raise ValueError("step sizes must be positive")


@dataclasses.dataclass(frozen=True)
class IterationRecord:
    k: int
    cost: float
    grad_norm: float
    rel_grad_norm: float
    step: float = math.nan
    beta: float = math.nan
    restart: bool = False
    descent: float = math.nan  # dJ[-G_k]
    slope: float = math.nan  # dJ[delta_k]
    new_cost: float = math.nan


@dataclasses.dataclass
class OptHistory:
    variant: str
    records: list[IterationRecord]
    initial_mesh: Mesh
    final_mesh: Mesh
    reason: str = ""
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    @property
    def iterations(self) -> int:
        return self.records[-1].k if self.records else 0

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]


def transport(field, from_mesh: Mesh, to_mesh: Mesh) -> np.ndarray:
    """Identity transport of nodal coefficients between meshes of equal size."""
    if from_mesh.num_vertices != to_mesh.num_vertices:
        raise AlignmentError("transport needs meshes with equal vertex counts")
    vals = np.asarray(field, dtype=float)
    if vals.reshape(-1).size != 2 * to_mesh.num_vertices:
        raise AlignmentError("field does not match the source mesh")
    return vals


def retract(mesh: Mesh, eta, quality_floor: float = 0.05) -> Mesh | None:
    """Move the mesh by ``eta``; ``None`` if cells invert or degrade too far."""
    moved = deform(mesh, eta, 1.0)
    if not is_valid(moved) or min_cell_quality(moved) < quality_floor:
        return None
    return moved


def beta(variant: str, grad, grad_prev, dir_prev, metric: MetricContext) -> float | None:
    """NCG update parameter; ``None`` signals a restart.

    ``grad_prev`` and ``dir_prev`` are the transported previous gradient and
    search direction; all inner products are taken in ``metric``.
    """

    def ip(a, b):
        return metric_inner(metric, a, b)

    def ratio(num, den):
        # also rejects den == 0 with num == 0 and NaNs
        if not abs(den) > 1e-30 * abs(num):
            return None
        return num / den

    if variant == "FR":
        return ratio(ip(grad, grad), ip(grad_prev, grad_prev))
    y = grad - grad_prev
    if variant == "PR":
        return ratio(ip(grad, y), ip(grad_prev, grad_prev))
    dy = ip(dir_prev, y)
    if variant == "HS":
        return ratio(ip(grad, y), dy)
    if variant == "DY":
        return ratio(ip(grad, grad), dy)
    if variant == "HZ":
        yy = ip(y, y)
        if ratio(yy, dy) is None:
            return None
        return ratio(ip(y - 2.0 * dir_prev * (yy / dy), grad), dy)
    raise ValueError(f"no beta formula for variant {variant!r}")


def ncg_direction(variant: str, grad, grad_prev, dir_prev, metric: MetricContext, clip: bool = False):
    """``-grad + beta * dir_prev``; falls back to ``-grad`` on a restart signal.

    Returns:
        ``(direction, beta, restarted)``.

    """
    b = beta(variant, grad, grad_prev, dir_prev, metric)
    if b is None:
        return -grad, 0.0, True
    if clip:
        b = max(b, 0.0)
    return -grad + b * dir_prev, b, False


def lbfgs_direction(grad, pairs, metric: MetricContext) -> np.ndarray:
    """Two-loop recursion ``-H grad`` with stored ``(s, y)`` pairs, oldest first."""
    q = np.array(grad, dtype=float)
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / metric_inner(metric, s, y)
        a = rho * metric_inner(metric, s, q)
        q -= a * y
        alphas.append((rho, a))
    if pairs:
        s, y = pairs[-1]
        q *= metric_inner(metric, s, y) / metric_inner(metric, y, y)
    for (s, y), (rho, a) in zip(pairs, reversed(alphas)):
        b = rho * metric_inner(metric, y, q)
        q += (a - b) * s
    return -q


def armijo_search(problem, mesh: Mesh, J0: float, slope: float, direction, t_init: float, cfg: OptConfig):
    """Backtracking from ``t_init`` until retraction and sufficient decrease pass.

    Returns:
        ``(t, new_mesh, new_cost)``.

    Raises:
        ValueError: if ``slope`` is not negative.
        LineSearchError: after ``MAX_SHRINKS`` rejected reductions.

    """
    if not slope < 0:
        raise ValueError(f"not a descent direction (slope {slope:.3e})")
    t = t_init
    for _ in range(MAX_SHRINKS + 1):
        moved = retract(mesh, t * direction, cfg.quality_floor)
        if moved is not None:
            try:
                J = problem.evaluate(moved)
            except ShapeOptError:
                J = math.nan
            if J <= J0 + cfg.armijo_c * t * slope:
                return t, moved, J
        t *= cfg.shrink
    raise LineSearchError(
        f"no acceptable step after {MAX_SHRINKS} reductions (last t={t / cfg.shrink:.3e})"
    )


def run(problem, mesh: Mesh, cfg: OptConfig, callback=None) -> OptHistory:
    """Minimize ``problem`` starting from ``mesh``.

    ``callback(record, mesh, G)`` is invoked once per iteration, if given.
    Line-search or solver failures end the run with the partial history.
    """
    start = time.perf_counter()
    hist = OptHistory(cfg.variant, [], mesh, mesh)
    is_ncg = cfg.variant in NCG_VARIANTS
    grad_prev = dir_prev = mesh_prev = None
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    step_prev = None
    g0 = None

    try:
        cost, dJ = problem.derivative(mesh)
    except ShapeOptError as exc:
        hist.reason = f"solver failure: {exc}"
        return hist

    k = 0
    while True:
        try:
            metric = MetricContext.from_mesh(mesh, cfg.mu, cfg.damping, cfg.metric_tol)
            G = gradient_deformation(metric, dJ)
        except ShapeOptError as exc:
            hist.reason = f"solver failure: {exc}"
            break
        gnorm2 = metric_inner(metric, G, G)
        gnorm = math.sqrt(max(gnorm2, 0.0))
        if g0 is None:
            g0 = gnorm
        rel = gnorm / g0 if g0 > 0 else 0.0
        base = dict(k=k, cost=cost, grad_norm=gnorm, rel_grad_norm=rel, descent=dJ.apply(-G))

        if rel <= cfg.rel_tol or gnorm <= cfg.abs_tol:
            hist.records.append(IterationRecord(**base))
            hist.reason = "converged"
            break
        if k >= cfg.max_iter:
            hist.records.append(IterationRecord(**base))
            hist.reason = "max iterations"
            break

        b = 0.0
        restart = False
        if cfg.variant == "LBFGS":
            b = math.nan
            if grad_prev is not None:
                s = transport(step_prev * dir_prev, mesh_prev, mesh)
                y = G - transport(grad_prev, mesh_prev, mesh)
                # curvature condition in the new metric; skip the pair otherwise
                if metric_inner(metric, s, y) > 0:
                    pairs = (pairs + [(s, y)])[-cfg.lbfgs_memory :]
            direction = lbfgs_direction(G, pairs, metric)
        elif is_ncg and grad_prev is not None:
            gp = transport(grad_prev, mesh_prev, mesh)
            dp = transport(dir_prev, mesh_prev, mesh)
            direction, b, restart = ncg_direction(cfg.variant, G, gp, dp, metric, cfg.clip_beta)
        else:
            direction = -G

        slope = dJ.apply(direction)
        if not slope < 0:
            restart = True
            direction = -G
            pairs = []
            b = math.nan if cfg.variant == "LBFGS" else 0.0
            slope = dJ.apply(direction)
        if not slope < 0:
            hist.records.append(IterationRecord(**base))
            hist.reason = "converged"
            break

        t_init = cfg.initial_step if step_prev is None else cfg.step_expansion * step_prev
        try:
            t, new_mesh, new_cost = armijo_search(problem, mesh, cost, slope, direction, t_init, cfg)
            new_cost_d, new_dJ = problem.derivative(new_mesh)
        except ShapeOptError as exc:
            hist.records.append(IterationRecord(**base, slope=slope, beta=b, restart=restart))
            hist.reason = f"line search failure: {exc}"
            break

        rec = IterationRecord(**base, step=t, beta=b, restart=restart, slope=slope, new_cost=new_cost)
        hist.records.append(rec)
        if callback is not None:
            callback(rec, mesh, G)
        log.debug("%s k=%d J=%.8e rel=%.3e t=%.3e beta=%.3e", cfg.variant, k, cost, rel, t, b)

        grad_prev, dir_prev, step_prev, mesh_prev = G, direction, t, mesh
        mesh, cost, dJ = new_mesh, new_cost_d, new_dJ
        k += 1

    hist.final_mesh = mesh
    hist.wall_time = time.perf_counter() - start
    return hist
