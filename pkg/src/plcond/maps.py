"""Local Dirichlet-to-Neumann and Neumann-to-Dirichlet maps on the measurement portion."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import FemSystem, solve_dirichlet, stiffness_from_cells
from .geometry import Mesh


class SingularMapError(ArithmeticError):
    pass


class MetricError(ArithmeticError):
    pass


def sigma_path_matrices(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """1D stiffness and mass on the measurement polyline, restricted to its data nodes.

    Returns ``(nodes, S, M)``. Open portions get Dirichlet conditions at their
    endpoints; a closed boundary is periodic.
    """
    path = mesh.sigma_nodes
    closed = mesh.sigma_closed
    pairs = list(zip(path[:-1], path[1:]))
    if closed:
        pairs.append((path[-1], path[0]))
    idx = {int(v): k for k, v in enumerate(path)}
    m = len(path)
    S = np.zeros((m, m))
    M = np.zeros((m, m))
    for a, b in pairs:
        ia, ib = idx[int(a)], idx[int(b)]
        ell = float(np.linalg.norm(mesh.vertices[b] - mesh.vertices[a]))
        S[np.ix_([ia, ib], [ia, ib])] += np.array([[1.0, -1.0], [-1.0, 1.0]]) / ell
        M[np.ix_([ia, ib], [ia, ib])] += ell * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    keep = np.array([idx[int(v)] for v in mesh.sigma_interior_nodes], dtype=int)
    return mesh.sigma_interior_nodes, S[np.ix_(keep, keep)], M[np.ix_(keep, keep)]


def fractional_metric(mesh: Mesh, *, order: float = 0.5) -> np.ndarray:
    """Gram matrix of the discrete ``H^order`` norm on the measurement nodes.

    With the generalized eigenpairs ``S v = mu M v`` (``V^T M V = I``), the
    metric is ``M V diag((1 + mu)^order) V^T M``.
    """
    _, S, M = sigma_path_matrices(mesh)
    mu, V = sla.eigh(S, M)
    MV = M @ V
    theta = (MV * (1.0 + np.maximum(mu, 0.0)) ** order) @ MV.T
    return 0.5 * (theta + theta.T)


@dataclass(frozen=True, eq=False)
class LocalDtoNMap:
    """Dense local DtoN matrix over the measurement nodes.

    Entry ``(p, q)`` is the energy pairing of the discrete solution with
    boundary datum ``phi_q`` against ``phi_p``.
    """

    matrix: np.ndarray
    sigma_nodes: np.ndarray
    fractional_metric: np.ndarray
    system: FemSystem | None = None

    @property
    def coords(self) -> np.ndarray:
        return self.system.mesh.vertices[self.sigma_nodes]

    @cached_property
    def extensions(self) -> np.ndarray:
        """Discrete harmonic extensions of the measurement hat functions (n_nodes x m)."""
        return solve_dirichlet(self.system, np.eye(len(self.sigma_nodes)))

    def __sub__(self, other: LocalDtoNMap) -> np.ndarray:
        return self.matrix - other.matrix


def _schur(system: FemSystem, nodes: np.ndarray) -> np.ndarray:
    K = system.stiffness
    i = system.interior_dofs
    K_BB = K[nodes][:, nodes].toarray()
    K_BI = K[nodes][:, i].toarray()
    K_II = K[i][:, i].toarray()
    if len(i) == 0:
        return K_BB
    return K_BB - K_BI @ sla.solve(K_II, K_BI.T, assume_a="pos")


def _columns(system: FemSystem, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    U = solve_dirichlet(system, np.eye(len(nodes)))
    return U.T @ (system.stiffness @ U), U


def assemble_dton(system: FemSystem, *, method: str = "auto", metric: np.ndarray | None = None) -> LocalDtoNMap:
    """Local DtoN map of ``system`` on its measurement nodes.

    ``method`` is ``"schur"`` (dense Schur complement), ``"columns"`` (one
    solve per measurement node) or ``"auto"`` (Schur below 2000 unknowns).
    """
    nodes = system.sigma_dofs
    if len(nodes) == 0:
        raise ValueError("no measurement nodes carry Dirichlet data")
    if method == "auto":
        method = "schur" if system.n_dofs < 2000 else "columns"
    if method == "schur":
        L = _schur(system, nodes)
        U = None
    elif method == "columns":
        L, U = _columns(system, nodes)
    else:
        raise ValueError(f"unknown method {method!r}")
    theta = fractional_metric(system.mesh) if metric is None else metric
    out = LocalDtoNMap(L, nodes, theta, system)
    if U is not None:
        out.__dict__["extensions"] = U
    return out


def dton_derivative(dton: LocalDtoNMap, cell_direction: np.ndarray) -> np.ndarray:
    """Derivative of the map along a per-triangle conductivity perturbation.

    Entry ``(p, q)`` is ``int delta_gamma grad u_q . grad u_p`` with ``u`` the
    cached discrete extensions, which is exact for the discrete map.
    """
    U = dton.extensions
    Kd = stiffness_from_cells(dton.system.mesh, cell_direction)
    return U.T @ (Kd @ U)


def zero_mean_basis(m: int) -> np.ndarray:
    """Orthonormal basis of the vectors with zero sum, shape (m, m - 1)."""
    Q, _ = np.linalg.qr(np.column_stack([np.ones(m), np.eye(m)[:, : m - 1]]))
    return Q[:, 1:]


def assemble_ntod(dton: LocalDtoNMap | np.ndarray, *, cond_limit: float = 1e12) -> np.ndarray:
    """Inverse of the DtoN map on zero-mean measurement vectors (zero-mean output)."""
    L = dton.matrix if isinstance(dton, LocalDtoNMap) else np.asarray(dton, dtype=float)
    Z = zero_mean_basis(L.shape[0])
    R = Z.T @ L @ Z
    ev = np.linalg.eigvalsh(0.5 * (R + R.T))
    if ev.size and (ev.min() <= 0 or ev.max() / ev.min() > cond_limit):
        raise SingularMapError("DtoN map is singular on zero-mean data")
    return Z @ np.linalg.solve(R, Z.T)


def inv_sqrt_metric(theta: np.ndarray) -> np.ndarray:
    t, Q = np.linalg.eigh(0.5 * (theta + theta.T))
    if t.size and t.min() <= 1e-14 * max(1.0, t.max()):
        raise MetricError("fractional metric is not positive definite")
    return (Q / np.sqrt(t)) @ Q.T


def operator_norm(delta: np.ndarray, metric: np.ndarray) -> float:
    """Norm of ``delta`` as a map from the metric space to its dual.

    Equals ``max ||delta g||_{metric^-1} / ||g||_metric``.
    """
    delta = np.asarray(delta, dtype=float)
    if not np.any(delta):
        return 0.0
    T = inv_sqrt_metric(metric)
    return float(np.linalg.norm(T @ delta @ T, 2))


def interpolation_matrix(coarse: Mesh, fine: Mesh) -> sp.csr_matrix:
    """Fine measurement-node values of the coarse measurement hat functions."""
    cn, fn = coarse.sigma_interior_nodes, fine.sigma_interior_nodes
    vals = np.zeros((len(fn), len(cn)))
    path = coarse.vertices[coarse.sigma_nodes]
    col = {int(v): k for k, v in enumerate(cn)}
    closed = coarse.sigma_closed
    nseg = len(path) if closed else len(path) - 1
    for r, v in enumerate(fine.vertices[fn]):
        for s in range(nseg):
            a, b = path[s], path[(s + 1) % len(path)]
            d = b - a
            t = float((v - a) @ d / (d @ d))
            if -1e-12 <= t <= 1 + 1e-12 and np.linalg.norm(a + t * d - v) <= 1e-9 * np.linalg.norm(d):
                na, nb = int(coarse.sigma_nodes[s]), int(coarse.sigma_nodes[(s + 1) % len(path)])
                if na in col:
                    vals[r, col[na]] += 1.0 - t
                if nb in col:
                    vals[r, col[nb]] += t
                break
    return sp.csr_matrix(vals)


def transfer_map(fine_map: LocalDtoNMap, coarse: Mesh) -> np.ndarray:
    """Pairing of the fine DtoN map with coarse measurement hat functions."""
    P = interpolation_matrix(coarse, fine_map.system.mesh).toarray()
    return P.T @ fine_map.matrix @ P


def save_map(path: str | Path, matrix: np.ndarray, coords: np.ndarray) -> None:
    """Dense matrix as TSV; the header lists node coordinates."""
    header = "\t".join(f"({x:.10g},{y:.10g})" for x, y in coords)
    np.savetxt(path, matrix, delimiter="\t", fmt="%.17g", header=header, comments="# ")


def load_map(path: str | Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter="\t", comments="#"))
