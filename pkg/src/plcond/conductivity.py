"""Piecewise-affine conductivities on a fixed partition.

Each subdomain ``D_j`` carries ``gamma_j(x) = a_j + A_j . x``. The coefficient
vector layout used throughout the package is ``[a_1, A_1x, A_1y, a_2, ...]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .geometry import DomainPartition, Mesh


class OutsideDomainError(ValueError):
    pass


class EllipticityError(ValueError):
    pass


class SamplerError(RuntimeError):
    pass


# degree-5 Dunavant rule (barycentric coordinates, weights summing to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
_QUAD_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


@dataclass(frozen=True, eq=False)
class PiecewiseLinearConductivity:
    """Coefficients ``(a_j, A_j)`` per subdomain.

    With ``resistivity=True`` the affine pieces describe the resistivity
    ``rho = 1 / gamma`` and evaluation returns ``1 / rho``.
    """

    a: np.ndarray
    A: np.ndarray
    lambda_bound: float = math.inf
    resistivity: bool = False

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        A = np.asarray(self.A, dtype=float)
        A = A.reshape(len(a), -1) if len(a) else A.reshape(0, 2)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "A", A)

    @property
    def N(self) -> int:
        return len(self.a)

    @classmethod
    def constant(cls, values, *, lambda_bound: float = math.inf, resistivity: bool = False):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(values, np.zeros((len(values), 2)), lambda_bound, resistivity)

    @classmethod
    def from_vector(cls, vec, *, lambda_bound: float = math.inf, resistivity: bool = False):
        v = np.asarray(vec, dtype=float).reshape(-1, 3)
        return cls(v[:, 0], v[:, 1:], lambda_bound, resistivity)

    @property
    def vector(self) -> np.ndarray:
        return np.column_stack([self.a, self.A]).ravel()

    def replace(self, **kw) -> PiecewiseLinearConductivity:
        base = dict(a=self.a, A=self.A, lambda_bound=self.lambda_bound, resistivity=self.resistivity)
        base.update(kw)
        return PiecewiseLinearConductivity(**base)

    def __sub__(self, other: PiecewiseLinearConductivity) -> PiecewiseLinearConductivity:
        return PiecewiseLinearConductivity(self.a - other.a, self.A - other.A, math.inf, self.resistivity)

    def __add__(self, other: PiecewiseLinearConductivity) -> PiecewiseLinearConductivity:
        return PiecewiseLinearConductivity(self.a + other.a, self.A + other.A, self.lambda_bound,
                                           self.resistivity)

    def __mul__(self, s: float) -> PiecewiseLinearConductivity:
        return PiecewiseLinearConductivity(s * self.a, s * self.A, math.inf, self.resistivity)

    __rmul__ = __mul__

    def piece(self, j: int, x) -> np.ndarray:
        """The affine function of subdomain ``j`` (1-based) at ``x`` (no inversion)."""
        x = np.asarray(x, dtype=float)
        return self.a[j - 1] + x @ self.A[j - 1]

    def extended(self, value: float = 1.0) -> PiecewiseLinearConductivity:
        """Append one constant piece (used for glued exterior boxes)."""
        a = np.append(self.a, value)
        A = np.vstack([self.A, np.zeros((1, self.A.shape[1]))])
        return PiecewiseLinearConductivity(a, A, self.lambda_bound, self.resistivity)

    def vertex_values(self, partition: DomainPartition) -> list[np.ndarray]:
        return [self.piece(j, poly) for j, poly in enumerate(partition.subdomains, start=1)]

    def is_admissible(self, partition: DomainPartition, lam: float | None = None) -> bool:
        lam = self.lambda_bound if lam is None else lam
        lo, hi = 1.0 / lam, lam
        eps = 1e-12 * max(1.0, lam)
        return all(np.all(v >= lo - eps) and np.all(v <= hi + eps) for v in self.vertex_values(partition))

    def check(self, partition: DomainPartition) -> None:
        if self.N != partition.N:
            raise ValueError(f"conductivity has {self.N} pieces, partition has {partition.N}")
        if not self.is_admissible(partition):
            raise EllipticityError(f"values leave [1/lambda, lambda] with lambda = {self.lambda_bound:g}")

    def cell_means(self, mesh: Mesh) -> np.ndarray:
        """Mean conductivity over each triangle.

        For affine conductivities the centroid value is the exact mean; the
        resistivity form is integrated with a degree-5 rule.
        """
        j = mesh.triangle_subdomain - 1
        if not self.resistivity:
            return self.a[j] + (mesh.centroids * self.A[j]).sum(axis=1)
        pts = np.einsum("qk,tkd->tqd", _QUAD_BARY, mesh.vertices[mesh.triangles])
        rho = self.a[j][:, None] + np.einsum("tqd,td->tq", pts, self.A[j])
        return (1.0 / rho) @ _QUAD_W

    def cell_jacobian(self, mesh: Mesh) -> np.ndarray:
        """Derivatives of ``cell_means`` with respect to the coefficient vector, shape (3N, n_triangles)."""
        j = mesh.triangle_subdomain - 1
        nt = mesh.n_triangles
        out = np.zeros((3 * self.N, nt))
        rows = np.arange(nt)
        if not self.resistivity:
            basis = np.column_stack([np.ones(nt), mesh.centroids])
        else:
            pts = np.einsum("qk,tkd->tqd", _QUAD_BARY, mesh.vertices[mesh.triangles])
            rho = self.a[j][:, None] + np.einsum("tqd,td->tq", pts, self.A[j])
            w = -_QUAD_W / rho ** 2
            basis = np.column_stack([w.sum(axis=1), (w[..., None] * pts).sum(axis=1)])
        for c in range(3):
            out[3 * j + c, rows] = basis[:, c]
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "resistivity" if self.resistivity else "conductivity",
            "lambda": None if math.isinf(self.lambda_bound) else float(self.lambda_bound),
            "pieces": [{"a": float(a), "A": [float(v) for v in A]} for a, A in zip(self.a, self.A)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> PiecewiseLinearConductivity:
        pieces = d["pieces"]
        lam = d.get("lambda")
        return cls(
            np.array([p["a"] for p in pieces], dtype=float),
            np.array([p.get("A", [0.0, 0.0]) for p in pieces], dtype=float),
            math.inf if lam is None else float(lam),
            d.get("kind", "conductivity") == "resistivity",
        )


def evaluate(gamma: PiecewiseLinearConductivity, partition: DomainPartition, x) -> float:
    j = partition.subdomain_of(x)
    if j == 0:
        raise OutsideDomainError(f"point {tuple(np.asarray(x, float))} lies outside the domain")
    v = float(gamma.piece(j, x))
    return 1.0 / v if gamma.resistivity else v


def sup_norm(gamma1: PiecewiseLinearConductivity, gamma2: PiecewiseLinearConductivity,
             partition: DomainPartition) -> float:
    """Exact L-infinity distance of two piecewise-affine functions (vertex maximum).

    Resistivity-form objects are compared through their affine pieces.
    """
    diff = gamma1 - gamma2
    return float(max(np.abs(v).max() for v in diff.vertex_values(partition)))


def coefficient_norm(gamma: PiecewiseLinearConductivity) -> float:
    if gamma.N == 0:
        return 0.0
    return float(np.max(np.abs(gamma.a) + np.linalg.norm(gamma.A, axis=1)))


def random_admissible(partition: DomainPartition, lam: float, seed: int, *,
                      resistivity: bool = False, max_attempts: int = 10_000) -> PiecewiseLinearConductivity:
    """Seeded sample of an admissible conductivity, by per-piece rejection."""
    if lam < 1.0:
        raise ValueError("lambda must be >= 1")
    if lam == 1.0:
        return PiecewiseLinearConductivity.constant(np.ones(partition.N), lambda_bound=1.0,
                                                    resistivity=resistivity)
    rng = np.random.default_rng(seed)
    lo, hi = 1.0 / lam, lam
    a = np.empty(partition.N)
    A = np.empty((partition.N, 2))
    attempts = 0
    for j, verts in enumerate(partition.subdomains):
        c = verts.mean(axis=0)
        diam = float(np.max(np.linalg.norm(verts[:, None] - verts[None], axis=2)))
        while True:
            attempts += 1
            if attempts > max_attempts:
                raise SamplerError(f"no admissible sample after {max_attempts} attempts")
            val = math.exp(rng.uniform(-math.log(lam), math.log(lam)))
            theta = rng.uniform(0.0, 2.0 * math.pi)
            g = rng.uniform(0.0, (hi - lo) / diam)
            grad = g * np.array([math.cos(theta), math.sin(theta)])
            vals = val + (verts - c) @ grad
            if vals.min() >= lo and vals.max() <= hi:
                a[j] = val - c @ grad
                A[j] = grad
                break
    return PiecewiseLinearConductivity(a, A, lam, resistivity)


def load_conductivity(path: str | Path) -> PiecewiseLinearConductivity:
    with open(path) as fh:
        return PiecewiseLinearConductivity.from_dict(yaml.safe_load(fh))


def save_conductivity(gamma: PiecewiseLinearConductivity, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(gamma.to_dict(), fh, sort_keys=False)


def project_admissible(gamma: PiecewiseLinearConductivity, partition: DomainPartition,
                       lam: float | None = None) -> PiecewiseLinearConductivity:
    """Clip coefficients into the admissible set.

    Each piece keeps its centroid value clipped to ``[1/lam, lam]``; its
    gradient is then shrunk until every vertex value is admissible.
    """
    lam = gamma.lambda_bound if lam is None else lam
    if math.isinf(lam) or gamma.is_admissible(partition, lam):
        return gamma
    lo, hi = 1.0 / lam, lam
    a, A = gamma.a.copy(), gamma.A.copy()
    for j, verts in enumerate(partition.subdomains):
        c = verts.mean(axis=0)
        mid = float(np.clip(a[j] + c @ A[j], lo, hi))
        dev = (verts - c) @ A[j]
        s = 1.0
        if dev.max() > 0:
            s = min(s, (hi - mid) / dev.max())
        if dev.min() < 0:
            s = min(s, (lo - mid) / dev.min())
        A[j] = max(s, 0.0) * A[j]
        a[j] = mid - c @ A[j]
    out = gamma.replace(a=a, A=A, lambda_bound=lam)
    if not out.is_admissible(partition, lam):
        raise EllipticityError("projection failed to produce an admissible conductivity")
    return out
