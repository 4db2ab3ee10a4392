"""Simulated DC-resistivity surveys on the measurement edge.

Electrodes are single boundary nodes on the ground surface ``y = 0`` of a
wide Neumann box standing in for the half-plane.  All potentials are 2D
(line sources), so geometric factors use the logarithmic potential.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conductivity import PiecewiseLinearConductivity
from .fem import FemSystem, assemble, solve_neumann
from .geometry import DomainPartition, Mesh, build_partition, mirror_triangulate, triangulate

KINDS = ("schlumberger", "dipole-dipole", "pole-pole", "square")


class ElectrodeOffSigmaError(ValueError):
    pass


def geometric_factor(a: float, b: float, m: float, n: float) -> float:
    """Factor turning ``dV / I`` into resistivity over a homogeneous half-plane.

    With the line-source potential ``V = -(rho I / pi) log r`` the voltage
    ``V(M) - V(N)`` equals ``(rho I / pi) log(AN BM / (AM BN))``.
    """
    d = [abs(a - m), abs(a - n), abs(b - m), abs(b - n)]
    if min(d) == 0.0:
        raise ValueError("current and potential electrodes coincide")
    am, an, bm, bn = d
    ratio = math.log(an * bm / (am * bn))
    if ratio == 0.0:
        raise ValueError("electrode layout has no homogeneous response")
    return math.pi / ratio


@dataclass(frozen=True)
class ElectrodeArray:
    """Four surface electrodes ``A, B`` (current) and ``M, N`` (potential).

    Positions are x-coordinates on the ground surface.  ``spacing`` and
    ``midpoint`` place the sounding in a pseudo-section.
    """

    kind: str
    a: float
    b: float
    m: float
    n: float
    current: float = 1.0
    spacing: float = math.nan
    midpoint: float = math.nan

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown array kind {self.kind!r}")
        if self.geometric_factor <= 0:
            raise ValueError("electrode order gives a negative geometric factor; swap M and N")

    @property
    def positions(self) -> np.ndarray:
        return np.array([self.a, self.b, self.m, self.n])

    @property
    def geometric_factor(self) -> float:
        return geometric_factor(self.a, self.b, self.m, self.n)

    def reciprocal(self) -> ElectrodeArray:
        """Current and potential pairs swapped."""
        return ElectrodeArray(self.kind, self.m, self.n, self.a, self.b, self.current, self.spacing, self.midpoint)

    def mirrored(self, axis: float = 0.0) -> ElectrodeArray:
        f = lambda x: 2.0 * axis - x
        # swapping both pairs keeps the geometric factor's sign
        return ElectrodeArray(self.kind, f(self.b), f(self.a), f(self.n), f(self.m), self.current,
                              self.spacing, f(self.midpoint))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "A": self.a, "B": self.b, "M": self.m, "N": self.n,
                "current": self.current, "spacing": self.spacing, "midpoint": self.midpoint}


def schlumberger(center: float, half_ab: float, half_mn: float, current: float = 1.0) -> ElectrodeArray:
    if not 0 < half_mn < half_ab:
        raise ValueError("need 0 < MN/2 < AB/2")
    return ElectrodeArray("schlumberger", center - half_ab, center + half_ab, center - half_mn,
                          center + half_mn, current, half_ab, center)


def dipole_dipole(start: float, a: float, n: int, current: float = 1.0) -> ElectrodeArray:
    """``B A`` then ``M N`` with dipole length ``a`` and separation ``n a``."""
    if a <= 0 or n < 1:
        raise ValueError("need a > 0 and n >= 1")
    b_, a_ = start, start + a
    m_ = a_ + n * a
    n_ = m_ + a
    return ElectrodeArray("dipole-dipole", a_, b_, m_, n_, current, n * a, 0.25 * (a_ + b_ + m_ + n_))


def pole_pole(x_a: float, x_m: float, remote_b: float, remote_n: float, current: float = 1.0) -> ElectrodeArray:
    """Pole-pole with finite remote electrodes, kept in the geometric factor."""
    return ElectrodeArray("pole-pole", x_a, remote_b, x_m, remote_n, current, abs(x_m - x_a), 0.5 * (x_a + x_m))


def square(start: float, a: float, current: float = 1.0) -> ElectrodeArray:
    """Equal-spacing collinear layout ``A M N B`` (all sides of length ``a``)."""
    if a <= 0:
        raise ValueError("need a > 0")
    return ElectrodeArray("square", start, start + 3 * a, start + a, start + 2 * a, current, a, start + 1.5 * a)


@dataclass
class Sounding:
    array: ElectrodeArray
    voltage: float
    apparent_resistivity: float


def electrode_nodes(mesh: Mesh, xs, surface_y: float = 0.0, tol: float | None = None) -> np.ndarray:
    """Sigma node index of each electrode; raises if one is not a mesh node."""
    nodes = mesh.sigma_nodes
    pts = mesh.vertices[nodes]
    tol = 1e-9 * max(1.0, float(np.ptp(mesh.vertices[:, 0]))) if tol is None else tol
    out = []
    for x in np.atleast_1d(np.asarray(xs, float)):
        d = np.hypot(pts[:, 0] - x, pts[:, 1] - surface_y)
        k = int(np.argmin(d))
        if d[k] > tol:
            raise ElectrodeOffSigmaError(f"electrode at x = {x:g} is not a node of the measurement edge")
        out.append(int(nodes[k]))
    return np.asarray(out, dtype=int)


def _injections(system: FemSystem, arrays, surface_y: float) -> tuple[np.ndarray, list[np.ndarray]]:
    n = system.n_dofs
    flux = np.zeros((n, len(arrays)))
    ids = []
    for k, arr in enumerate(arrays):
        e = electrode_nodes(system.mesh, arr.positions, surface_y)
        if e[0] == e[1]:
            raise ValueError("current electrodes share a node")
        flux[e[0], k] += arr.current
        flux[e[1], k] -= arr.current
        ids.append(e)
    return flux, ids


def simulate_soundings(system: FemSystem, arrays, *, surface_y: float = 0.0) -> list[Sounding]:
    """Neumann solve per current pair; ``rho_a = K dV / I``."""
    arrays = list(arrays)
    if not arrays:
        return []
    flux, ids = _injections(system, arrays, surface_y)
    u = solve_neumann(system, flux)
    out = []
    for k, (arr, e) in enumerate(zip(arrays, ids)):
        dv = float(u[e[2], k] - u[e[3], k])
        rho = arr.geometric_factor * dv / arr.current if arr.current != 0 else math.nan
        out.append(Sounding(arr, dv, rho))
    return out


def simulate_sounding(system: FemSystem, array: ElectrodeArray, *, surface_y: float = 0.0) -> tuple[float, float]:
    """Voltage ``V(M) - V(N)`` and apparent resistivity of one array."""
    s = simulate_soundings(system, [array], surface_y=surface_y)[0]
    return s.voltage, s.apparent_resistivity


def pseudo_section(system: FemSystem, arrays, *, surface_y: float = 0.0) -> tuple[list[str], np.ndarray]:
    """Plot-ready table ``(midpoint, spacing, rho_a, voltage, K)`` sorted by spacing then midpoint."""
    rows = [(s.array.midpoint, s.array.spacing, s.apparent_resistivity, s.voltage, s.array.geometric_factor)
            for s in simulate_soundings(system, arrays, surface_y=surface_y)]
    rows.sort(key=lambda r: (r[1], r[0]))
    return ["midpoint", "spacing", "rho_a", "voltage", "geometric_factor"], np.asarray(rows, dtype=float)


# -- layered-earth oracle ----------------------------------------------------


def two_layer_potential(r, rho1: float, rho2: float, thickness: float, current: float = 1.0, *,
                        rtol: float = 1e-15, max_terms: int = 1_000_000) -> np.ndarray:
    """Surface potential of a line source over a two-layer half-plane.

    Image series ``-(rho1 I / pi) [log r + sum_m k^m log(r^2 + 4 m^2 t^2)]``
    with reflection coefficient ``k = (rho2 - rho1) / (rho2 + rho1)``.  The
    potential carries an arbitrary constant; only differences are meaningful.
    """
    r = np.asarray(r, dtype=float)
    k = (rho2 - rho1) / (rho2 + rho1)
    total = np.log(r)
    if k != 0.0:
        if abs(k) >= 1.0:
            raise ValueError("series needs finite, positive resistivities")
        # drop the r-independent part log(4 m^2 t^2) so the terms decay
        m = 1
        kp = k
        while m <= max_terms:
            term = kp * np.log1p(r ** 2 / (4.0 * m * m * thickness ** 2))
            total = total + term
            if np.all(np.abs(term) <= rtol * np.maximum(np.abs(total), 1.0)) and abs(kp) < rtol:
                break
            m += 1
            kp *= k
    return -(rho1 * current / math.pi) * total


def two_layer_apparent_resistivity(array: ElectrodeArray, rho1: float, rho2: float, thickness: float) -> float:
    pot = lambda src, x: two_layer_potential(abs(x - src), rho1, rho2, thickness, array.current)
    vm = pot(array.a, array.m) - pot(array.b, array.m)
    vn = pot(array.a, array.n) - pot(array.b, array.n)
    return float(array.geometric_factor * (vm - vn) / array.current)


# -- half-plane models -------------------------------------------------------


@dataclass
class HalfSpaceModel:
    """Layered or blocky earth under the surface ``y = 0``.

    Attributes
    ----------
    thicknesses : list of float
        Thickness of every layer but the last, top to bottom.
    resistivities : list of list of float
        Per layer, one resistivity per lateral block.
    breaks : list of list of float
        Per layer, the x-positions splitting it into blocks.
    """

    thicknesses: list[float]
    resistivities: list[list[float]]
    breaks: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        self.resistivities = [list(np.atleast_1d(r).astype(float)) for r in self.resistivities]
        if not self.breaks:
            self.breaks = [[] for _ in self.resistivities]
        if len(self.thicknesses) != len(self.resistivities) - 1:
            raise ValueError("need one thickness fewer than layers")
        if len(self.breaks) != len(self.resistivities):
            raise ValueError("breaks must list every layer")
        for rho, br in zip(self.resistivities, self.breaks):
            if len(rho) != len(br) + 1:
                raise ValueError("each layer needs one resistivity more than breaks")
            if np.any(np.diff(br) <= 0):
                raise ValueError("breaks must increase")
        if any(t <= 0 for t in self.thicknesses) or any(r <= 0 for row in self.resistivities for r in row):
            raise ValueError("thicknesses and resistivities must be positive")

    @classmethod
    def homogeneous(cls, rho: float) -> HalfSpaceModel:
        return cls([], [[rho]])

    @classmethod
    def layered(cls, thicknesses, rhos) -> HalfSpaceModel:
        return cls(list(thicknesses), [[r] for r in rhos])

    def partition(self, half_width: float, depth: float) -> DomainPartition:
        """Rectangle ``[-half_width, half_width] x [-depth, 0]`` cut into blocks.

        Assumption checks are relaxed: survey boxes are far larger than the
        flat-portion scale.
        """
        ys = [0.0]
        for t in self.thicknesses:
            ys.append(ys[-1] - t)
        if ys[-1] <= -depth:
            raise ValueError("layers do not fit in the box")
        ys.append(-depth)
        subs = []
        for k, br in enumerate(self.breaks):
            if br and (br[0] <= -half_width or br[-1] >= half_width):
                raise ValueError("lateral breaks must lie inside the box")
            xs = [-half_width, *br, half_width]
            for x0, x1 in zip(xs[:-1], xs[1:]):
                subs.append([[x0, ys[k + 1]], [x1, ys[k + 1]], [x1, ys[k]], [x0, ys[k]]])
        outer = [[-half_width, -depth], [half_width, -depth], [half_width, 0.0], [-half_width, 0.0]]
        layout = {"vertices": outer, "subdomains": subs, "sigma": [2], "r0": max(half_width, depth), "L": 1.0}
        return build_partition(layout, strict=False)

    def conductivity(self) -> PiecewiseLinearConductivity:
        rho = [r for row in self.resistivities for r in row]
        return PiecewiseLinearConductivity.constant(1.0 / np.asarray(rho))

    def is_mirror_symmetric(self, axis: float = 0.0) -> bool:
        for rho, br in zip(self.resistivities, self.breaks):
            if not np.allclose(np.asarray(br), (2 * axis - np.asarray(br))[::-1]) or rho != rho[::-1]:
                return False
        return True


def survey_mesh(partition: DomainPartition, electrodes_x, *, h_fine: float, grading: float = 0.3,
                h_far: float | None = None, mirror: bool = False) -> Mesh:
    """Mesh graded away from the electrode span, with every electrode as a node."""
    xs = np.unique(np.asarray(electrodes_x, float))
    lo, hi = xs.min(), xs.max()
    x0, y0, x1, y1 = partition.omega.bounds
    h_far = 0.1 * (x1 - x0) if h_far is None else h_far

    def size(c):
        dx = np.maximum(0.0, np.maximum(lo - c[:, 0], c[:, 0] - hi))
        d = np.hypot(dx, c[:, 1] - y1)
        return np.maximum(h_fine, grading * d)

    pts = np.column_stack([xs, np.full(len(xs), y1)])
    if mirror:
        axis = 0.5 * (x0 + x1)
        pts = np.vstack([pts, pts * [-1, 1] + [2 * axis, 0]])
        return mirror_triangulate(partition, h_far, axis, refine=size, extra_points=pts, check_features=False)
    return triangulate(partition, h_far, refine=size, extra_points=pts, check_features=False)


def build_survey(model: HalfSpaceModel, arrays, *, h_fine: float = 0.1, grading: float = 0.3,
                 box_factor: float = 10.0, mirror: bool = False) -> tuple[DomainPartition, Mesh, FemSystem]:
    """Box, mesh and assembled system for a set of arrays.

    The box extends ``box_factor`` times the largest electrode separation
    beyond the electrode span on both sides and below.
    """
    arrays = list(arrays)
    xs = np.concatenate([a.positions for a in arrays])
    span = float(xs.max() - xs.min())
    reach = box_factor * span
    half = max(abs(xs.min()), abs(xs.max())) + reach
    half = max(half, max((abs(b) for br in model.breaks for b in br), default=0.0) + reach)
    depth = sum(model.thicknesses) + reach
    part = model.partition(half, depth)
    mesh = survey_mesh(part, xs, h_fine=h_fine, grading=grading, mirror=mirror)
    return part, mesh, assemble(mesh, model.conductivity())
