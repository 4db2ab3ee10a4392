"""P1 finite elements for ``div(gamma grad u) = 0``.

Dirichlet problems pin every boundary node, so all of them share one
factorization of the interior block of the stiffness matrix.  Neumann
problems are grounded to zero mean over the domain with a bordered system.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conductivity import PiecewiseLinearConductivity
from .geometry import Mesh

DIRECT_THRESHOLD = 2000


class DegenerateTriangleError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


class CompatibilityError(ValueError):
    pass


class SupportError(ValueError):
    pass


def stiffness_from_cells(mesh: Mesh, cell_values: np.ndarray) -> sp.csr_matrix:
    """Stiffness matrix for a coefficient that is constant on each triangle."""
    areas = mesh.areas
    if np.any(areas <= 1e-14 * mesh.h_max ** 2):
        raise DegenerateTriangleError("mesh contains a degenerate triangle")
    G = mesh.gradients
    local = np.einsum("tid,tjd->tij", G, G) * (areas * np.asarray(cell_values, float))[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    K.sum_duplicates()
    return K


def lumped_volume(mesh: Mesh) -> np.ndarray:
    """``int phi_p`` over the domain for every node (exact for P1)."""
    return np.bincount(mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3), minlength=mesh.n_nodes)


@dataclass(frozen=True, eq=False)
class FemSystem:
    """Assembled stiffness operator plus boundary index sets.

    Attributes
    ----------
    sigma_dofs : ndarray
        Measurement nodes carrying Dirichlet data (endpoints excluded).
    other_boundary_dofs : ndarray
        Boundary nodes held at zero in Dirichlet problems.
    interior_dofs : ndarray
        Unknowns of every Dirichlet solve.
    """

    mesh: Mesh
    stiffness: sp.csr_matrix
    cell_gamma: np.ndarray
    gamma_ref: PiecewiseLinearConductivity | None = None
    solver: str = "auto"
    direct_threshold: int = DIRECT_THRESHOLD
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_nodes

    @property
    def sigma_dofs(self) -> np.ndarray:
        return self.mesh.sigma_interior_nodes

    @cached_property
    def other_boundary_dofs(self) -> np.ndarray:
        b = self.mesh.boundary_nodes
        return b[~np.isin(b, self.sigma_dofs)]

    @property
    def interior_dofs(self) -> np.ndarray:
        return self.mesh.interior_nodes

    @cached_property
    def K_II(self) -> sp.csc_matrix:
        i = self.interior_dofs
        return self.stiffness[i][:, i].tocsc()

    @property
    def uses_direct(self) -> bool:
        if self.solver == "direct":
            return True
        if self.solver == "cg":
            return False
        return len(self.interior_dofs) < self.direct_threshold

    def _interior_solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.size == 0 or len(self.interior_dofs) == 0:
            return np.zeros_like(rhs)
        if self.uses_direct:
            if "lu" not in self._cache:
                self._cache["lu"] = spla.splu(self.K_II)
            return self._cache["lu"].solve(rhs)
        cols = rhs.reshape(len(rhs), -1)
        out = np.empty_like(cols)
        A = self.K_II
        M = sp.diags(1.0 / A.diagonal())
        maxiter = 10 * A.shape[0]
        for k in range(cols.shape[1]):
            b = cols[:, k]
            if not np.any(b):
                out[:, k] = 0.0
                continue
            x, info = spla.cg(A, b, rtol=1e-10, atol=0.0, maxiter=maxiter, M=M)
            if info != 0:
                raise SolverError(f"conjugate gradients did not converge (info={info})")
            out[:, k] = x
        return out.reshape(rhs.shape)


def assemble(mesh: Mesh, gamma: PiecewiseLinearConductivity, *, solver: str = "auto") -> FemSystem:
    """Stiffness matrix with the exact mean of ``gamma`` on every triangle."""
    cells = gamma.cell_means(mesh)
    return FemSystem(mesh, stiffness_from_cells(mesh, cells), cells, gamma, solver)


def assemble_cells(mesh: Mesh, cell_values: np.ndarray, *, solver: str = "auto") -> FemSystem:
    cells = np.asarray(cell_values, dtype=float)
    return FemSystem(mesh, stiffness_from_cells(mesh, cells), cells, None, solver)


def _full_boundary_vector(system: FemSystem, g: np.ndarray, enforce_support: bool) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    n, m = system.n_dofs, len(system.sigma_dofs)
    if g.shape[0] == m and m != n:
        full = np.zeros((n,) + g.shape[1:])
        full[system.sigma_dofs] = g
        return full
    if g.shape[0] != n:
        raise ValueError(f"boundary data has length {g.shape[0]}, expected {m} or {n}")
    full = np.zeros_like(g)
    full[system.mesh.boundary_nodes] = g[system.mesh.boundary_nodes]
    if enforce_support and np.any(np.abs(full[system.other_boundary_dofs]) > 0.0):
        raise SupportError("Dirichlet data must vanish outside the measurement portion")
    return full


def solve_dirichlet(system: FemSystem, g: np.ndarray, *, enforce_support: bool = True,
                    load: np.ndarray | None = None) -> np.ndarray:
    """Discrete solution with boundary values ``g``.

    ``g`` is either given on ``system.sigma_dofs`` or as a full nodal vector
    whose boundary entries are used.  Several columns may be solved at once.
    ``enforce_support=False`` allows data on the whole boundary (test mode).
    ``load`` adds a volume source ``int f phi_p``.
    """
    u = _full_boundary_vector(system, g, enforce_support)
    i = system.interior_dofs
    rhs = -(system.stiffness[i] @ u)
    if load is not None:
        rhs = rhs + np.asarray(load, dtype=float)[i]
    u[i] = system._interior_solve(rhs)
    return u


def solve_load(system: FemSystem, load: np.ndarray) -> np.ndarray:
    """Zero boundary values with a volume load vector (``int f phi_p``)."""
    load = np.asarray(load, dtype=float)
    u = np.zeros_like(load)
    i = system.interior_dofs
    u[i] = system._interior_solve(load[i])
    return u


def point_load(mesh: Mesh, y) -> np.ndarray:
    """Nodal basis values at ``y``: the P1 representation of a unit point source."""
    tri, bary = mesh.locate(np.atleast_2d(y))
    if tri[0] < 0:
        raise ValueError("source point outside the mesh")
    load = np.zeros(mesh.n_nodes)
    load[mesh.triangles[tri[0]]] = bary[0]
    return load


def boundary_mass(mesh: Mesh, edge_mask: np.ndarray | None = None) -> sp.csr_matrix:
    """P1 mass matrix along (a subset of) the boundary edges."""
    edges = mesh.boundary_edges if edge_mask is None else mesh.boundary_edges[edge_mask]
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    ell = np.linalg.norm(d, axis=1)
    loc = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    vals = (ell[:, None, None] * loc).ravel()
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def boundary_load(mesh: Mesh, density: np.ndarray) -> np.ndarray:
    """Load vector of a piecewise-linear boundary flux density given at the nodes."""
    return boundary_mass(mesh) @ np.asarray(density, dtype=float)


def _neumann_operator(system: FemSystem):
    if "neumann" not in system._cache:
        w = lumped_volume(system.mesh)
        n = system.n_dofs
        border = sp.csr_matrix(w.reshape(1, -1))
        A = sp.bmat([[system.stiffness, border.T], [border, None]], format="csc")
        system._cache["neumann"] = spla.splu(A)
    return system._cache["neumann"]


def solve_neumann(system: FemSystem, flux: np.ndarray, *, rtol: float = 1e-12) -> np.ndarray:
    """Solve with a nodal current load vector; the potential has zero mean.

    ``flux`` holds ``int_boundary f phi_p`` per node (point electrodes put
    their current directly on a node).  Its sum must vanish.
    """
    flux = np.asarray(flux, dtype=float)
    scale = max(1.0, float(np.abs(flux).sum(axis=0).max()) if flux.size else 1.0)
    total = flux.sum(axis=0)
    if np.any(np.abs(total) > rtol * scale):
        raise CompatibilityError(f"boundary flux has nonzero total {np.max(np.abs(total)):.3e}")
    lu = _neumann_operator(system)
    rhs = np.concatenate([flux, np.zeros((1,) + flux.shape[1:])])
    sol = lu.solve(rhs)
    return sol[:-1]


def energy(system: FemSystem, u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ (system.stiffness @ v))


def gradient_energy(mesh: Mesh, u: np.ndarray, mask: np.ndarray | None = None) -> float:
    """``int |grad u|^2`` over the selected triangles (all by default)."""
    g = np.einsum("tid,ti->td", mesh.gradients, u[mesh.triangles])
    e = (g ** 2).sum(axis=1) * mesh.areas
    return float(e.sum() if mask is None else e[mask].sum())


def cell_gradients(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Constant gradient of a P1 field on each triangle, shape (n_triangles, 2) or (n_triangles, 2, k)."""
    return np.einsum("tid,ti...->td...", mesh.gradients, u[mesh.triangles])


def l2_error(mesh: Mesh, u: np.ndarray, exact) -> float:
    """L2 norm of ``u - exact`` with a degree-5 rule per triangle."""
    from .conductivity import _QUAD_BARY, _QUAD_W

    p = mesh.vertices[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", _QUAD_BARY, p)
    uh = np.einsum("qk,tk->tq", _QUAD_BARY, u[mesh.triangles])
    ex = exact(pts[..., 0], pts[..., 1])
    return float(np.sqrt((((uh - ex) ** 2) @ _QUAD_W * mesh.areas).sum()))
