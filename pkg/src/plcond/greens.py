"""Fundamental solutions, the two-phase image kernel and discrete Green's functions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point

from .conductivity import _QUAD_BARY, _QUAD_W, PiecewiseLinearConductivity
from .fem import (FemSystem, assemble, cell_gradients, gradient_energy, point_load, solve_dirichlet,
                  solve_load, stiffness_from_cells)
from .geometry import DomainPartition, Mesh, layered_box, triangulate


class CoincidentPointsError(ValueError):
    pass


class SourceTooCloseError(ValueError):
    pass


class ProbeInsideUError(ValueError):
    pass


class FitError(ValueError):
    pass


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def _diff(x, y):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0.0):
        raise CoincidentPointsError("kernel evaluated at coincident points")
    return d, r


def gamma_kernel(x, y, dimension: int = 2):
    """Fundamental solution of the Laplacian, ``-Laplace G = delta``.

    ``-log r / (2 pi)`` in the plane and ``r^(2-n) / ((n-2) |S^(n-1)|)`` for n >= 3.
    """
    _, r = _diff(x, y)
    if dimension == 2:
        return -np.log(r) / (2.0 * math.pi)
    n = dimension
    return r ** (2 - n) / ((n - 2) * sphere_area(n))


def gamma_gradient(x, y, dimension: int = 2):
    """Gradient in ``x``."""
    d, r = _diff(x, y)
    n = dimension
    return -d / (sphere_area(n) * r[..., None] ** n)


def gamma_hessian(x, y, dimension: int = 2):
    """Second derivatives in ``x``, shape (..., n, n)."""
    d, r = _diff(x, y)
    n = dimension
    r = r[..., None, None]
    eye = np.eye(n)
    outer = d[..., :, None] * d[..., None, :]
    return -(eye / r ** n - n * outer / r ** (n + 2)) / sphere_area(n)


@dataclass(frozen=True)
class TwoPhaseKernel:
    """Point-source solution for two constant conductivities split by a plane.

    The last coordinate is normal to the interface ``x_n = level``;
    ``a_plus`` holds above it and ``a_minus`` below.  Points on the interface
    count as lying below it.
    """

    a_plus: float
    a_minus: float = 1.0
    dimension: int = 2
    level: float = 0.0

    def __post_init__(self):
        if self.a_plus <= 0 or self.a_minus <= 0:
            raise ValueError("conductivities must be positive")

    @property
    def ratio(self) -> float:
        return self.a_plus / self.a_minus

    def reflect(self, y) -> np.ndarray:
        y = np.array(y, dtype=float)
        y[..., -1] = 2.0 * self.level - y[..., -1]
        return y

    def _above(self, x, side):
        x = np.asarray(x, dtype=float)
        if side is None:
            return x[..., -1] > self.level
        return np.broadcast_to(side > 0, x.shape[:-1])

    def coefficients(self, x, y, x_side=None):
        """Weights of the direct and the image term for every (x, y) pair."""
        a = self.ratio
        xu = self._above(x, x_side)
        yu = self._above(y, None)
        xu, yu = np.broadcast_arrays(xu, yu)
        direct = np.where(xu & yu, 1.0 / a, np.where(xu != yu, 2.0 / (a + 1.0), 1.0))
        image = np.where(xu & yu, (a - 1.0) / (a * (a + 1.0)),
                         np.where(xu != yu, 0.0, (1.0 - a) / (a + 1.0)))
        return direct / self.a_minus, image / self.a_minus

    def value(self, x, y, *, x_side=None):
        """Kernel value; ``x_side = +1 / -1`` forces the branch of ``x`` (one-sided limits)."""
        cd, ci = self.coefficients(x, y, x_side)
        n = self.dimension
        out = cd * gamma_kernel(x, y, n)
        ys = self.reflect(y)
        mask = ci != 0
        if np.any(mask):
            out = out + np.where(mask, ci * _safe(gamma_kernel, x, ys, n, mask), 0.0)
        return out

    def grad_x(self, x, y, *, x_side=None):
        cd, ci = self.coefficients(x, y, x_side)
        n = self.dimension
        g = cd[..., None] * gamma_gradient(x, y, n)
        mask = ci != 0
        if np.any(mask):
            g = g + ci[..., None] * _safe(gamma_gradient, x, self.reflect(y), n, mask)
        return g

    def grad_y(self, x, y, *, x_side=None):
        cd, ci = self.coefficients(x, y, x_side)
        n = self.dimension
        flip = np.ones(n)
        flip[-1] = -1.0
        g = -cd[..., None] * gamma_gradient(x, y, n)
        mask = ci != 0
        if np.any(mask):
            g = g - ci[..., None] * _safe(gamma_gradient, x, self.reflect(y), n, mask) * flip
        return g

    def mixed(self, x, y, *, x_side=None):
        """Matrix of derivatives ``d^2 H / dx_i dy_j``."""
        cd, ci = self.coefficients(x, y, x_side)
        n = self.dimension
        flip = np.ones(n)
        flip[-1] = -1.0
        m = -cd[..., None, None] * gamma_hessian(x, y, n)
        mask = ci != 0
        if np.any(mask):
            m = m - ci[..., None, None] * _safe(gamma_hessian, x, self.reflect(y), n, mask) * flip
        return m


def _safe(fn, x, y, n, mask):
    """Evaluate ``fn`` only where ``mask`` holds (other entries are zero-filled)."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    if x.ndim == 1:
        return fn(x, y, n)
    sel = np.asarray(mask)
    vals = fn(x[sel], y[sel], n)
    out = np.zeros(x.shape[:-1] + vals.shape[1:])
    out[sel] = vals
    return out


# -- discrete Green's functions --------------------------------------------


def distance_to_boundary(mesh: Mesh, y) -> float:
    e = mesh.vertices[mesh.boundary_edges]
    a, d = e[:, 0], e[:, 1] - e[:, 0]
    w = np.asarray(y, float) - a
    t = np.clip((w * d).sum(1) / (d ** 2).sum(1), 0.0, 1.0)
    return float(np.linalg.norm(w - t[:, None] * d, axis=1).min())


def fem_green(system: FemSystem, y, *, check: bool = True) -> np.ndarray:
    """Discrete Green's function with zero boundary values and a P1 point load at ``y``.

    The source must be at least two local mesh sizes from the boundary.
    """
    mesh = system.mesh
    if check:
        tri, _ = mesh.locate(np.atleast_2d(y))
        if tri[0] < 0:
            raise SourceTooCloseError("source outside the mesh")
        h = mesh.triangle_h[tri[0]]
        if distance_to_boundary(mesh, y) < 2.0 * h:
            raise SourceTooCloseError(f"source within {2 * h:.3g} of the boundary")
    return solve_load(system, point_load(mesh, y))


def energy_outside_ball(mesh: Mesh, u: np.ndarray, center, r: float) -> float:
    """``int |grad u|^2`` over the triangles whose centroid is at distance >= r."""
    far = np.linalg.norm(mesh.centroids - np.asarray(center, float), axis=1) >= r
    return gradient_energy(mesh, u, far)


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def energy_decay(system: FemSystem, y, radii) -> tuple[np.ndarray, float]:
    """Energies outside shrinking balls around the source and their log-log slope."""
    G = fem_green(system, y)
    e = np.array([energy_outside_ball(system.mesh, G, y, r) for r in radii])
    return e, loglog_slope(radii, e)


# -- singular solutions ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SingularSolutionProbe:
    """Samples of the bilinear form of two Green's functions over a region.

    ``values[i, k]`` pairs the source ``y_points[i]`` (conductivity 1) with
    ``z_points[k]`` (conductivity 2).
    """

    gamma1: PiecewiseLinearConductivity
    gamma2: PiecewiseLinearConductivity
    region_U: tuple[int, ...]
    y_points: np.ndarray
    z_points: np.ndarray
    values: np.ndarray
    green1: np.ndarray = field(repr=False, default=None)
    green2: np.ndarray = field(repr=False, default=None)


def _check_probes(partition: DomainPartition, region, pts):
    polys = [partition.polygons[j - 1] for j in region]
    for p in np.atleast_2d(pts):
        pt = Point(p)
        if any(poly.distance(pt) <= partition.tol for poly in polys):
            raise ProbeInsideUError(f"probe {tuple(p)} lies in the closure of U")


def region_form(mesh: Mesh, gamma1: PiecewiseLinearConductivity, gamma2: PiecewiseLinearConductivity,
                region) -> np.ndarray:
    """Stiffness of ``gamma1 - gamma2`` restricted to the subdomains in ``region``."""
    diff = gamma1.cell_means(mesh) - gamma2.cell_means(mesh)
    return stiffness_from_cells(mesh, np.where(mesh.subdomain_triangles(region), diff, 0.0))


def singular_solution(partition: DomainPartition, mesh: Mesh, gamma1: PiecewiseLinearConductivity,
                      gamma2: PiecewiseLinearConductivity, region, y_points, z_points, *,
                      systems: tuple[FemSystem, FemSystem] | None = None) -> SingularSolutionProbe:
    """Integral of ``(gamma1 - gamma2) grad G_1(., y) . grad G_2(., z)`` over ``region``.

    Gradients are constant per triangle, so the triangle sum is exact for the
    discrete Green's functions.
    """
    region = tuple(int(j) for j in region)
    ys, zs = np.atleast_2d(y_points).astype(float), np.atleast_2d(z_points).astype(float)
    _check_probes(partition, region, ys)
    _check_probes(partition, region, zs)
    s1, s2 = systems if systems is not None else (assemble(mesh, gamma1), assemble(mesh, gamma2))
    G1 = np.column_stack([fem_green(s1, y) for y in ys])
    G2 = np.column_stack([fem_green(s2, z) for z in zs])
    KU = region_form(mesh, gamma1, gamma2, region)
    S = G1.T @ (KU @ G2)
    return SingularSolutionProbe(gamma1, gamma2, region, ys, zs, S, G1, G2)


def mixed_source_derivative(evaluate, y, z, dy, dz, step: float) -> float:
    """Central difference of ``evaluate(y, z)`` along ``dy`` in y and ``dz`` in z."""
    y, z = np.asarray(y, float), np.asarray(z, float)
    dy, dz = np.asarray(dy, float), np.asarray(dz, float)
    acc = 0.0
    for sy in (1, -1):
        for sz in (1, -1):
            acc += sy * sz * evaluate(y + sy * step * dy, z + sz * step * dz)
    return acc / (4.0 * step * step)


def richardson(evaluate_with_step, step: float) -> tuple[float, float]:
    """Second-order Richardson extrapolation; returns (value, truncation estimate)."""
    coarse = evaluate_with_step(step)
    fine = evaluate_with_step(0.5 * step)
    return fine + (fine - coarse) / 3.0, abs(fine - coarse) / 3.0


# -- asymptotics near an interface -----------------------------------------


def _quadrature_points(mesh: Mesh) -> np.ndarray:
    return np.einsum("qk,tkd->tqd", _QUAD_BARY, mesh.vertices[mesh.triangles])


def remainder_field(system: FemSystem, kernel: TwoPhaseKernel, y) -> np.ndarray:
    """Discrete ``G - H`` for a source at ``y``.

    Solves ``div(gamma grad R) = -div((gamma - gamma_0) grad H)`` with
    ``R = -H`` on the boundary, ``gamma_0`` being the kernel's two constants.
    """
    mesh = system.mesh
    gamma = system.gamma_ref
    y = np.asarray(y, dtype=float)
    bnd = mesh.boundary_nodes
    g = np.zeros(mesh.n_nodes)
    g[bnd] = -kernel.value(mesh.vertices[bnd], y)
    load = None
    if gamma is not None and np.any(gamma.A != 0):
        pts = _quadrature_points(mesh)
        j = mesh.triangle_subdomain - 1
        gq = gamma.a[j][:, None] + np.einsum("tqd,td->tq", pts, gamma.A[j])
        if gamma.resistivity:
            gq = 1.0 / gq
        g0 = np.where(pts[..., -1] > kernel.level, kernel.a_plus, kernel.a_minus)
        gradH = kernel.grad_x(pts, np.broadcast_to(y, pts.shape))
        flux = np.einsum("tq,tqd,q->td", gq - g0, gradH, _QUAD_W) * mesh.areas[:, None]
        local = -np.einsum("td,tkd->tk", flux, mesh.gradients)
        load = np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_nodes)
    return solve_dirichlet(system, g, enforce_support=False, load=load)


@dataclass(frozen=True)
class AsymptoticsConfig:
    """Slab experiment: two layers meeting at the centre of a square.

    ``gamma_upper`` / ``gamma_lower`` are the affine pieces ``(a, A_x, A_y)``
    written relative to the interface point ``Q``.
    """

    gamma_upper: tuple[float, float, float] = (2.0, 0.0, 0.0)
    gamma_lower: tuple[float, float, float] = (1.0, 0.0, 0.0)
    radii: tuple[float, ...] = (0.08, 0.04, 0.02, 0.01, 0.005, 0.0025)
    half_width: float = 1.0
    r0: float = 1.5
    h_far: float = 0.15
    grading: float = 0.25
    fd_fraction: float = 0.25


@dataclass(frozen=True, eq=False)
class AsymptoticsReport:
    radii: np.ndarray
    distances: np.ndarray
    gamma_values: np.ndarray
    green_direct: np.ndarray
    coef_predicted: float
    coef_fit: float
    intercept_fit: float
    remainder_at_Q: float
    value_residual: np.ndarray
    value_exponent: float
    raw_residual: np.ndarray
    raw_exponent: float
    grad_residual: np.ndarray
    grad_exponent: float
    mixed_residual: np.ndarray
    mixed_exponent: float
    n_triangles: int

    @property
    def coef_rel_error(self) -> float:
        return abs(self.coef_fit - self.coef_predicted) / abs(self.coef_predicted)

    def table(self) -> tuple[list[str], np.ndarray]:
        cols = ["radius", "distance", "Gamma", "G_direct", "value_residual", "raw_residual",
                "grad_residual", "mixed_residual"]
        data = np.column_stack([self.radii, self.distances, self.gamma_values, self.green_direct,
                                self.value_residual, self.raw_residual, self.grad_residual,
                                self.mixed_residual])
        return cols, data

    def summary(self) -> dict:
        return {
            "coef_predicted": self.coef_predicted, "coef_fit": self.coef_fit,
            "coef_rel_error": self.coef_rel_error, "intercept_fit": self.intercept_fit,
            "remainder_at_Q": self.remainder_at_Q, "value_exponent": self.value_exponent,
            "raw_exponent": self.raw_exponent, "grad_exponent": self.grad_exponent,
            "mixed_exponent": self.mixed_exponent, "n_triangles": self.n_triangles,
        }


def slab_setup(cfg: AsymptoticsConfig):
    """Partition, conductivity, mesh and interface point of the slab experiment."""
    w = cfg.half_width
    part = layered_box(2, width=2 * w, depth=2 * w, r0=cfg.r0)
    Q = np.array([w, w])
    au, Axu, Ayu = cfg.gamma_upper
    al, Axl, Ayl = cfg.gamma_lower
    Au, Al = np.array([Axu, Ayu]), np.array([Axl, Ayl])
    gamma = PiecewiseLinearConductivity([au - Au @ Q, al - Al @ Q], [Au, Al])
    radii = np.asarray(cfg.radii, float)
    pts = [Q]
    for r in radii:
        pts += [Q + [0, r], Q - [0, r]]
    h_min = radii.min() * cfg.grading

    def size(c):
        return np.maximum(h_min, cfg.grading * np.linalg.norm(c - Q, axis=1))

    mesh = triangulate(part, cfg.h_far, refine=size, extra_points=np.asarray(pts))
    return part, gamma, mesh, Q


def verify_asymptotics(cfg: AsymptoticsConfig = AsymptoticsConfig()) -> AsymptoticsReport:
    """Fit the near-interface behaviour of the Green's function.

    The leading coefficient comes from direct discrete Green's functions,
    fitted as ``G = c Gamma + d`` over the probe pairs ``Q + r e_n`` and
    ``Q - r e_n``.  Residual exponents use the split ``G = H + R`` with the
    remainder computed on the same mesh; the value residual is measured
    against the remainder at ``(Q, Q)``.
    """
    if len(cfg.radii) < 4:
        raise FitError("need at least four radii")
    part, gamma, mesh, Q = slab_setup(cfg)
    system = assemble(mesh, gamma, solver="direct")
    g_up, g_lo = cfg.gamma_upper[0], cfg.gamma_lower[0]
    kernel = TwoPhaseKernel(g_up, g_lo, 2, Q[1])
    c_pred = 2.0 / (g_up + g_lo)
    en = np.array([0.0, 1.0])

    radii = np.asarray(cfg.radii, float)
    xs = Q + radii[:, None] * en
    ys = Q - radii[:, None] * en
    dist = 2.0 * radii
    gam = gamma_kernel(xs, ys)

    direct = np.array([mesh.interpolate(fem_green(system, y), x[None])[0] for x, y in zip(xs, ys)])
    A = np.column_stack([gam, np.ones_like(gam)])
    c_fit, d_fit = np.linalg.lstsq(A, direct, rcond=None)[0]

    R_Q = remainder_field(system, kernel, Q)
    R0 = float(mesh.interpolate(R_Q, Q[None])[0])

    value_res, grad_res, mixed_res = [], [], []
    for x, y, r in zip(xs, ys, radii):
        # gradient in x taken on the triangle just above the probe
        tri_up, _ = mesh.locate((x + 1e-9 * en)[None])
        R_y = remainder_field(system, kernel, y)
        G_split = kernel.value(x, y) + mesh.interpolate(R_y, x[None])[0]
        value_res.append(abs(G_split - c_pred * gamma_kernel(x, y) - R0))
        gR = cell_gradients(mesh, R_y)[tri_up[0]]
        grad_res.append(float(np.linalg.norm(kernel.grad_x(x, y) + gR - c_pred * gamma_gradient(x, y))))
        dlt = cfg.fd_fraction * r
        Rp = remainder_field(system, kernel, y + dlt * en)
        Rm = remainder_field(system, kernel, y - dlt * en)
        dgR = (cell_gradients(mesh, Rp)[tri_up[0]] - cell_gradients(mesh, Rm)[tri_up[0]]) / (2 * dlt)
        mixed_full = kernel.mixed(x, y)[:, 1] + dgR
        mixed_pred = -c_pred * gamma_hessian(x, y)[:, 1]
        mixed_res.append(float(np.linalg.norm(mixed_full - mixed_pred)))
    value_res = np.asarray(value_res)
    raw_res = np.abs(direct - c_pred * gam)
    grad_res = np.asarray(grad_res)
    mixed_res = np.asarray(mixed_res)
    return AsymptoticsReport(
        radii, dist, gam, direct, c_pred, float(c_fit), float(d_fit), R0,
        value_res, loglog_slope(dist, value_res), raw_res, loglog_slope(dist, raw_res),
        grad_res, loglog_slope(dist, grad_res), mixed_res, loglog_slope(dist, mixed_res),
        mesh.n_triangles,
    )
