"""Gauss-Newton reconstruction of piecewise-affine conductivities from a local DtoN map."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conductivity import (PiecewiseLinearConductivity, project_admissible, random_admissible,
                           sup_norm)
from .fem import assemble
from .geometry import DomainPartition, Mesh, refine_uniform
from .maps import (LocalDtoNMap, assemble_dton, dton_derivative, fractional_metric, operator_norm,
                   transfer_map)


class DivergenceError(RuntimeError):
    pass


def _direction_cells(gamma: PiecewiseLinearConductivity, mesh: Mesh, direction) -> np.ndarray:
    if isinstance(direction, PiecewiseLinearConductivity):
        direction = direction.vector
    return np.asarray(direction, dtype=float) @ gamma.cell_jacobian(mesh)


def frechet_derivative(dton: LocalDtoNMap, gamma: PiecewiseLinearConductivity, direction) -> np.ndarray:
    """Derivative of the discrete map at ``gamma`` along a coefficient perturbation.

    ``direction`` is a coefficient vector ``[da_1, dA_1x, dA_1y, ...]`` or a
    conductivity object holding the perturbation.
    """
    return dton_derivative(dton, _direction_cells(gamma, dton.system.mesh, direction))


def jacobian(dton: LocalDtoNMap, gamma: PiecewiseLinearConductivity) -> np.ndarray:
    """All coefficient derivatives, shape (3N, m, m)."""
    U = dton.extensions
    mesh = dton.system.mesh
    G = mesh.gradients
    grads = np.einsum("tid,tik->tdk", G, U[mesh.triangles])  # per-triangle gradients of extensions
    pair = np.einsum("tdp,tdq->tpq", grads, grads) * mesh.areas[:, None, None]
    return np.einsum("ct,tpq->cpq", gamma.cell_jacobian(mesh), pair)


def forward(mesh: Mesh, gamma: PiecewiseLinearConductivity, metric: np.ndarray | None = None) -> LocalDtoNMap:
    return assemble_dton(assemble(mesh, gamma), metric=metric)


def synthetic_data(partition: DomainPartition, mesh: Mesh, gamma: PiecewiseLinearConductivity, *,
                   finer: bool = True) -> np.ndarray:
    """Noiseless map on ``mesh``'s measurement nodes.

    With ``finer`` the map is computed on the uniform refinement of ``mesh``
    and paired with the coarse measurement hat functions.
    """
    if not finer:
        return forward(mesh, gamma).matrix
    fine = refine_uniform(mesh, partition)
    return transfer_map(forward(fine, gamma), mesh)


def symmetric_noise(metric: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Symmetrized Gaussian matrix scaled to operator norm ``level``."""
    rng = np.random.default_rng(seed)
    m = metric.shape[0]
    R = rng.standard_normal((m, m))
    E = 0.5 * (R + R.T)
    if level == 0:
        return np.zeros_like(E)
    return E * (level / operator_norm(E, metric))


@dataclass
class InverseProblem:
    """Measured map plus everything needed to fit coefficients to it."""

    partition: DomainPartition
    mesh: Mesh
    measured: np.ndarray
    gamma0: PiecewiseLinearConductivity
    lambda_bound: float = math.inf
    noise_level: float = 0.0
    reg_weight: float = 0.0
    truth: PiecewiseLinearConductivity | None = None
    metric: np.ndarray = None

    def __post_init__(self):
        if self.metric is None:
            self.metric = fractional_metric(self.mesh)
        M = np.asarray(self.measured, float)
        asym = np.abs(M - M.T).max()
        if asym > max(1e-10 * np.abs(M).max(), self.noise_level):
            raise ValueError(f"measured map is not symmetric (asymmetry {asym:.3e})")


@dataclass
class IterationTrace:
    rows: list[dict] = field(default_factory=list)

    def add(self, **kw):
        self.rows.append(kw)

    @property
    def n_iter(self) -> int:
        return max(0, len(self.rows) - 1)

    def table(self) -> tuple[list[str], np.ndarray]:
        cols = ["iter", "misfit_fro", "misfit_star", "step_norm", "step_length", "coef_error"]
        data = np.array([[r[c] for c in cols] for r in self.rows], dtype=float)
        coefs = np.array([r["coefficients"] for r in self.rows])
        names = [f"c{k}" for k in range(coefs.shape[1])]
        return cols + names, np.column_stack([data, coefs])


def _positive(gamma: PiecewiseLinearConductivity, partition: DomainPartition) -> bool:
    return all(np.all(v > 0) for v in gamma.vertex_values(partition))


def coefficient_error(gamma, truth) -> float:
    return float(np.linalg.norm(gamma.vector - truth.vector) / np.linalg.norm(truth.vector))


def gauss_newton(problem: InverseProblem, max_iters: int = 25, tol: float = 1e-10, *,
                 max_failures: int = 5, ftol: float = 1e-13) -> tuple[PiecewiseLinearConductivity, IterationTrace]:
    """Damped Gauss-Newton with Armijo backtracking on the coefficient vector.

    A Levenberg-Marquardt shift grows whenever the line search has to cut
    the step hard (typically because the full step leaves the positive
    cone) and decays after full steps.

    Minimizes ``0.5 ||Lambda(c) - measured||_F^2 + 0.5 w ||c - c0||^2``.
    Stops when the full step is shorter than ``tol`` or an accepted step
    lowers the objective by less than ``ftol`` relative; the final iterate
    is clipped into the admissible set.
    """
    part, mesh = problem.partition, problem.mesh
    g0 = problem.gamma0
    x0 = g0.vector
    alpha = problem.reg_weight
    build = lambda x: PiecewiseLinearConductivity.from_vector(x, lambda_bound=g0.lambda_bound,
                                                              resistivity=g0.resistivity)

    def objective(x):
        g = build(x)
        if not _positive(g, part):
            return math.inf, None
        fwd = forward(mesh, g, problem.metric)
        r = fwd.matrix - problem.measured
        return 0.5 * float((r ** 2).sum()) + 0.5 * alpha * float((x - x0) @ (x - x0)), fwd

    x = x0.copy()
    phi, fwd = objective(x)
    if fwd is None:
        raise ValueError("initial guess is not a positive conductivity")
    trace = IterationTrace()

    def record(k, fwd, step, t):
        r = fwd.matrix - problem.measured
        err = coefficient_error(build(x), problem.truth) if problem.truth is not None else math.nan
        trace.add(iter=k, misfit_fro=float(np.linalg.norm(r)), misfit_star=operator_norm(r, problem.metric),
                  step_norm=step, step_length=t, coef_error=err, coefficients=x.copy())

    record(0, fwd, math.nan, math.nan)
    mu, failures = 0.0, 0
    n = len(x)
    for k in range(1, max_iters + 1):
        J = jacobian(fwd, build(x)).reshape(n, -1).T
        r = (fwd.matrix - problem.measured).ravel()
        grad = J.T @ r + alpha * (x - x0)
        blocks = [J]
        rhs = [-r]
        if alpha + mu > 0:
            blocks.append(math.sqrt(alpha + mu) * np.eye(n))
            rhs.append(-(alpha * (x - x0)) / math.sqrt(alpha + mu))
        dx = np.linalg.lstsq(np.vstack(blocks), np.concatenate(rhs), rcond=None)[0]
        step = float(np.linalg.norm(dx))
        if step < tol:
            trace.rows[-1]["step_norm"] = step
            break
        t, accepted = 1.0, False
        slope = float(grad @ dx)
        for _ in range(40):
            phi_new, fwd_new = objective(x + t * dx)
            if phi_new <= phi + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if abs(slope) <= 1e-12 * max(phi, 1e-300):
                break  # stationary to roundoff
            failures += 1
            if failures >= max_failures:
                raise DivergenceError(f"no decrease in {failures} consecutive iterations")
            mu = max(10.0 * mu, 1e-8 * float(np.linalg.norm(J, 2)) ** 2)
            continue
        failures = 0
        scale = float(np.linalg.norm(J, 2)) ** 2
        if t < 0.25:
            # heavily truncated step: move towards gradient descent
            mu = max(10.0 * mu, 1e-8 * scale)
        elif t == 1.0:
            mu = 0.1 * mu if mu > 1e-14 * scale else 0.0
        x = x + t * dx
        stalled = phi - phi_new <= ftol * phi
        phi, fwd = phi_new, fwd_new
        record(k, fwd, step, t)
        if t * step < tol or stalled:
            break
    gamma = build(x)
    if not math.isinf(problem.lambda_bound):
        gamma = project_admissible(gamma, part, problem.lambda_bound)
    return gamma, trace


# -- studies -----------------------------------------------------------------


def perturbed_start(truth: PiecewiseLinearConductivity, scale: float, seed: int) -> PiecewiseLinearConductivity:
    """Start model with coefficients moved by ``scale`` times the largest coefficient."""
    rng = np.random.default_rng(seed)
    x = truth.vector
    xi = rng.uniform(-1.0, 1.0, size=x.shape)
    return PiecewiseLinearConductivity.from_vector(x + scale * np.abs(x).max() * xi,
                                                   lambda_bound=truth.lambda_bound,
                                                   resistivity=truth.resistivity)


def radius_of_convergence_study(partition: DomainPartition, lam: float, scales, seed: int, *,
                                mesh: Mesh, trials: int = 4, max_iters: int = 25,
                                threshold: float = 1e-4) -> tuple[list[dict], float]:
    """Fraction of perturbed starts that recover the truth, per perturbation scale.

    Same-mesh data.  Starts leaving the admissible set are skipped.  The
    returned radius is the largest scale up to which at least half of the
    admissible trials converge.
    """
    scales = np.asarray(scales, float)
    if np.any(scales <= 0) or np.any(np.diff(scales) <= 0):
        raise ValueError("scales must be positive and increasing")
    truth = random_admissible(partition, lam, seed)
    data = synthetic_data(partition, mesh, truth, finer=False)
    metric = fractional_metric(mesh)
    rows, radius, broken = [], 0.0, False
    for s in scales:
        conv = skipped = 0
        for t in range(trials):
            g0 = perturbed_start(truth, float(s), seed * 1000 + t)
            if not g0.is_admissible(partition, lam):
                skipped += 1
                continue
            prob = InverseProblem(partition, mesh, data, g0, lam, truth=truth, metric=metric)
            try:
                g, _ = gauss_newton(prob, max_iters)
                ok = coefficient_error(g, truth) < threshold
            except (DivergenceError, ValueError):
                ok = False
            conv += ok
        tried = trials - skipped
        frac = conv / tried if tried else math.nan
        rows.append({"scale": float(s), "trials": trials, "skipped": skipped, "converged": conv, "fraction": frac})
        if not broken and tried and frac >= 0.5:
            radius = float(s)
        elif tried:
            broken = True
    return rows, radius


def noise_robustness(problem: InverseProblem, levels, seed: int, *, max_iters: int = 25,
                     reg_scale: float = 1e-3) -> tuple[list[dict], float]:
    """Reconstruction error against the operator-norm noise level.

    Returns the per-level rows and the least-squares slope of the sup-norm
    error against the level over the informative levels.  A level is
    informative when it stays below the signal, the distance of the clean
    map from the homogeneous reference map.  Noisy runs use the Tikhonov
    weight ``(reg_scale * ||measured||_F)^2``.
    """
    if problem.truth is None:
        raise ValueError("noise study needs the ground truth")
    clean = problem.measured
    ref = PiecewiseLinearConductivity.constant(np.ones(problem.partition.N))
    gap = operator_norm(forward(problem.mesh, ref, problem.metric).matrix - clean, problem.metric)
    rows = []
    for k, lvl in enumerate(levels):
        E = symmetric_noise(problem.metric, float(lvl), seed + k)
        weight = (reg_scale * np.linalg.norm(clean)) ** 2 if lvl > 0 else 0.0
        p = InverseProblem(problem.partition, problem.mesh, clean + E, problem.gamma0, problem.lambda_bound,
                           noise_level=float(lvl), reg_weight=weight, truth=problem.truth, metric=problem.metric)
        g, tr = gauss_newton(p, max_iters)
        err = sup_norm(g, problem.truth, problem.partition)
        rows.append({"level": float(lvl), "error": err, "ratio": err / lvl if lvl > 0 else math.nan,
                     "iterations": tr.n_iter, "informative": bool(lvl < gap)})
    lv = np.array([r["level"] for r in rows if r["informative"]])
    er = np.array([r["error"] for r in rows if r["informative"]])
    slope = float(np.polyfit(lv, er, 1)[0]) if len(lv) >= 2 else math.nan
    return rows, slope
