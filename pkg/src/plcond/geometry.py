"""Polygonal domain partitions, flat interface portions and conforming meshes.

Subdomains carry ids ``1..N``; id ``0`` stands for the exterior of the domain.
Outer-boundary edge ``i`` runs from ``vertices[i]`` to ``vertices[i + 1]``
(cyclically); the measurement portion is a set of such edge ids.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import shapely
import triangle as tr
import yaml
from shapely.geometry import LineString, MultiLineString, Point, Polygon
from shapely.ops import linemerge, unary_union


class PartitionError(ValueError):
    """Base class for invalid partition descriptions."""


class OverlapError(PartitionError):
    pass


class CoverageError(PartitionError):
    pass


class FlatPortionError(PartitionError):
    pass


class NoChainError(PartitionError):
    pass


class MeshError(ValueError):
    pass


def _as_points(poly) -> np.ndarray:
    pts = np.asarray(poly, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise PartitionError(f"polygon needs at least three 2D vertices, got shape {pts.shape}")
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    return pts


@dataclass(frozen=True, eq=False)
class InterfacePortion:
    """A straight piece of interface (or of the measurement boundary).

    ``normal`` points from ``inside_domain`` into ``outside_domain``; an
    ``outside_domain`` of 0 means the exterior of the domain.
    """

    index_k: int
    segment: np.ndarray
    center_Pk: np.ndarray
    inside_domain: int
    outside_domain: int
    normal: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.segment[1] - self.segment[0]))

    @property
    def tangent(self) -> np.ndarray:
        d = self.segment[1] - self.segment[0]
        return d / np.linalg.norm(d)

    def flipped(self, index_k: int | None = None) -> InterfacePortion:
        return InterfacePortion(
            index_k=self.index_k if index_k is None else index_k,
            segment=self.segment[::-1].copy(),
            center_Pk=self.center_Pk,
            inside_domain=self.outside_domain,
            outside_domain=self.inside_domain,
            normal=-self.normal,
        )

    def oriented(self, inside: int, index_k: int) -> InterfacePortion:
        if inside == self.inside_domain:
            return InterfacePortion(index_k, self.segment, self.center_Pk,
                                    self.inside_domain, self.outside_domain, self.normal)
        if inside == self.outside_domain:
            return self.flipped(index_k)
        raise ValueError(f"subdomain {inside} does not border this portion")

    def separates(self, i: int, j: int) -> bool:
        return {i, j} == {self.inside_domain, self.outside_domain}


@dataclass(frozen=True)
class Chain:
    """Subdomain ids ``j_1 = 1, ..., j_K`` with the portions crossed on the way.

    ``portions[k - 1]`` is the flat portion between ``ids[k - 2]`` and
    ``ids[k - 1]`` (the first one lies on the measurement boundary), oriented
    so that its ``inside_domain`` is ``ids[k - 1]``.
    """

    ids: tuple[int, ...]
    portions: tuple[InterfacePortion, ...] = ()

    @property
    def K(self) -> int:
        return len(self.ids)


@dataclass(frozen=True, eq=False)
class DomainPartition:
    outer_boundary: np.ndarray
    subdomains: tuple[np.ndarray, ...]
    sigma: tuple[int, ...]
    flat_portions: tuple[InterfacePortion, ...]
    r0: float
    lipschitz_L: float
    warnings: tuple[str, ...] = ()
    source: dict = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return len(self.subdomains)

    @cached_property
    def omega(self) -> Polygon:
        return Polygon(self.outer_boundary)

    @cached_property
    def polygons(self) -> tuple[Polygon, ...]:
        return tuple(Polygon(p) for p in self.subdomains)

    @property
    def area(self) -> float:
        return float(self.omega.area)

    @cached_property
    def diameter(self) -> float:
        x0, y0, x1, y1 = self.omega.bounds
        return math.hypot(x1 - x0, y1 - y0)

    @property
    def tol(self) -> float:
        return 1e-9 * self.diameter

    def outer_edges(self) -> np.ndarray:
        """Array of shape (n_edges, 2, 2) with the outer-boundary edges."""
        v = self.outer_boundary
        return np.stack([v, np.roll(v, -1, axis=0)], axis=1)

    @cached_property
    def sigma_lines(self) -> MultiLineString:
        edges = self.outer_edges()
        return MultiLineString([edges[i] for i in self.sigma])

    def subdomain_of(self, x) -> int:
        """Id of the subdomain containing ``x``; on interfaces the lower id wins. 0 if outside."""
        pt = Point(float(x[0]), float(x[1]))
        for j, poly in enumerate(self.polygons, start=1):
            if poly.distance(pt) <= self.tol:
                return j
        return 0

    def boundary_portion(self) -> InterfacePortion:
        for p in self.flat_portions:
            if p.outside_domain == 0:
                return p
        raise FlatPortionError("no flat portion on the measurement boundary")

    def portions_between(self, i: int, j: int) -> list[InterfacePortion]:
        return [p for p in self.flat_portions if p.separates(i, j)]

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, set[int]] = {j: set() for j in range(1, self.N + 1)}
        for p in self.flat_portions:
            if p.outside_domain and p.inside_domain:
                adj[p.inside_domain].add(p.outside_domain)
                adj[p.outside_domain].add(p.inside_domain)
        return {j: sorted(n) for j, n in adj.items()}

    def to_dict(self) -> dict:
        return {
            "vertices": self.outer_boundary.tolist(),
            "subdomains": [p.tolist() for p in self.subdomains],
            "sigma": list(self.sigma),
            "r0": self.r0,
            "L": self.lipschitz_L,
        }


# -- construction ------------------------------------------------------------


def _straight_pieces(line: LineString, tol: float) -> list[np.ndarray]:
    """Split a polyline into maximal straight segments."""
    coords = np.asarray(line.coords)
    pieces = []
    start = coords[0]
    for i in range(1, len(coords) - 1):
        d1 = coords[i] - start
        d2 = coords[i + 1] - coords[i]
        cross = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(cross) > tol * (np.linalg.norm(d1) + np.linalg.norm(d2)) or np.dot(d1, d2) < 0:
            pieces.append(np.array([start, coords[i]]))
            start = coords[i]
    pieces.append(np.array([start, coords[-1]]))
    return [p for p in pieces if np.linalg.norm(p[1] - p[0]) > tol]


def _line_parts(geom) -> list[LineString]:
    if geom.is_empty:
        return []
    if isinstance(geom, LineString):
        return [geom]
    parts = [g for g in getattr(geom, "geoms", []) if isinstance(g, LineString)]
    if not parts:
        nested = [g for g in getattr(geom, "geoms", []) if hasattr(g, "geoms")]
        for g in nested:
            parts.extend(_line_parts(g))
        return parts
    merged = linemerge(parts)
    return [merged] if isinstance(merged, LineString) else list(merged.geoms)


def _cylinder_ok(center, tangent, normal, half, inside_poly, outside_poly, omega, tol) -> bool:
    # normal points from the inside subdomain into the outside one
    ts = np.linspace(-half, half, 9) * (1.0 - 1e-6)
    ns = np.linspace(0.0, half, 6)[1:] * (1.0 - 1e-6)
    for t in ts:
        for s in ns:
            p_in = center + t * tangent - s * normal
            p_out = center + t * tangent + s * normal
            if inside_poly.distance(Point(p_in)) > tol:
                return False
            if outside_poly is None:
                if omega.contains(Point(p_out)):
                    return False
            elif outside_poly.distance(Point(p_out)) > tol:
                return False
    return True


def _make_portion(seg, inside, outside, inside_poly, k) -> InterfacePortion:
    seg = np.asarray(seg, dtype=float)
    center = 0.5 * (seg[0] + seg[1])
    t = (seg[1] - seg[0]) / np.linalg.norm(seg[1] - seg[0])
    nrm = np.array([t[1], -t[0]])
    probe = center - 1e-6 * np.linalg.norm(seg[1] - seg[0]) * nrm
    if not inside_poly.contains(Point(probe)):
        nrm = -nrm
    return InterfacePortion(k, seg, center, inside, outside, nrm)


def _find_flat(lines, inside, outside, polys, omega, r0, tol, k):
    """Longest straight piece of ``lines`` that is a flat portion of size r0, or None."""
    pieces = []
    for line in lines:
        pieces.extend(_straight_pieces(line, tol))
    pieces.sort(key=lambda s: -np.linalg.norm(s[1] - s[0]))
    for seg in pieces:
        if np.linalg.norm(seg[1] - seg[0]) < 2.0 * r0 / 3.0 - tol:
            return None
        portion = _make_portion(seg, inside, outside, polys[inside - 1], k)
        outside_poly = polys[outside - 1] if outside else None
        if _cylinder_ok(portion.center_Pk, portion.tangent, portion.normal, r0 / 3.0,
                        polys[inside - 1], outside_poly, omega, tol):
            return portion
    return None


def build_partition(layout: dict, *, strict: bool = True) -> DomainPartition:
    """Validate a partition description and locate its flat portions.

    Parameters
    ----------
    layout : dict
        Keys ``vertices`` (outer polygon), ``subdomains`` (list of polygons),
        ``sigma`` (outer edge ids), ``r0``, ``L`` and optionally
        ``interfaces`` (pairs of subdomain ids that must share a flat portion).
    strict : bool
        If False, violations of the a-priori assumptions (volume bound, flat
        portions, chain connectivity) are recorded in ``warnings`` instead of
        raised. Overlap and coverage are always enforced.
    """
    outer = _as_points(layout["vertices"])
    subs = tuple(_as_points(p) for p in layout["subdomains"])
    sigma = tuple(sorted(int(i) for i in layout.get("sigma", [])))
    r0 = float(layout.get("r0", 1.0))
    L = float(layout.get("L", 1.0))
    if not sigma:
        raise PartitionError("sigma must contain at least one outer edge")
    if any(i < 0 or i >= len(outer) for i in sigma):
        raise PartitionError(f"sigma edge ids out of range 0..{len(outer) - 1}")
    if r0 <= 0 or L <= 0:
        raise PartitionError("r0 and L must be positive")

    omega = Polygon(outer)
    if not omega.is_valid or omega.area <= 0:
        raise CoverageError("outer boundary is not a simple polygon")
    polys = [Polygon(p) for p in subs]
    for j, p in enumerate(polys, start=1):
        if not p.is_valid or p.area <= 0:
            raise PartitionError(f"subdomain {j} is not a simple non-degenerate polygon")
    area_tol = 1e-12 * omega.area
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            if polys[i].intersection(polys[j]).area > area_tol:
                raise OverlapError(f"subdomains {i + 1} and {j + 1} overlap")
    union = unary_union(polys)
    if union.geom_type != "Polygon":
        raise CoverageError("union of subdomains is not a connected domain")
    if union.symmetric_difference(omega).area > area_tol:
        raise CoverageError("subdomains do not cover the domain exactly")
    tol = 1e-9 * math.hypot(*(np.ptp(outer, axis=0)))

    issues: list[str] = []

    def fail(exc_type, msg):
        if strict:
            raise exc_type(msg)
        issues.append(msg)

    if omega.area > len(subs) * r0 ** 2 * (1 + 1e-12):
        fail(PartitionError, f"|Omega| = {omega.area:g} exceeds N*r0^2 = {len(subs) * r0 ** 2:g}")

    edges = np.stack([outer, np.roll(outer, -1, axis=0)], axis=1)
    sigma_geom = MultiLineString([edges[i] for i in sigma])
    portions: list[InterfacePortion] = []
    p1 = _find_flat(_line_parts(polys[0].boundary.intersection(sigma_geom)), 1, 0, polys,
                    omega, r0, tol, 1)
    if p1 is None:
        fail(FlatPortionError, "subdomain 1 has no flat portion of size r0 on sigma")
    else:
        portions.append(p1)

    k = 2
    for i in range(1, len(polys) + 1):
        for j in range(i + 1, len(polys) + 1):
            shared = _line_parts(polys[i - 1].boundary.intersection(polys[j - 1].boundary))
            if not shared:
                continue
            portion = _find_flat(shared, j, i, polys, omega, r0, tol, k)
            if portion is not None:
                portions.append(portion)
                k += 1

    for pair in layout.get("interfaces", []) or []:
        i, j = (int(v) for v in pair)
        if not any(p.separates(i, j) for p in portions):
            fail(FlatPortionError, f"no flat portion of size r0 between subdomains {i} and {j}")

    part = DomainPartition(outer, subs, sigma, tuple(portions), r0, L, (), dict(layout))
    if portions and portions[0].outside_domain == 0:
        for target in range(2, len(subs) + 1):
            try:
                find_chain(part, target)
            except NoChainError as exc:
                fail(NoChainError, str(exc))
    object.__setattr__(part, "warnings", tuple(issues))
    return part


def find_chain(partition: DomainPartition, target: int) -> Chain:
    """Shortest flat-portion chain from subdomain 1 to ``target``.

    Among shortest chains the lexicographically smallest id sequence is returned.
    """
    if not 1 <= target <= partition.N:
        raise ValueError(f"target {target} is not a subdomain id")
    adj = partition.adjacency()
    dist = {target: 0}
    queue = deque([target])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    if 1 not in dist:
        raise NoChainError(f"subdomain {target} is not reachable from subdomain 1 through flat portions")
    path = [1]
    while path[-1] != target:
        u = path[-1]
        path.append(min(v for v in adj[u] if dist.get(v, -1) == dist[u] - 1))
    try:
        first = partition.boundary_portion()
        portions = [first.oriented(1, 1)]
    except FlatPortionError:
        portions = []
    for k, (u, v) in enumerate(zip(path[:-1], path[1:]), start=2):
        cand = partition.portions_between(u, v)
        portions.append(cand[0].oriented(v, k))
    return Chain(tuple(path), tuple(portions))


def probe_points(portion: InterfacePortion, r0: float, count: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Equispaced points on the portion within r0/8 of its center, with the portion normal."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if count == 1:
        offsets = np.zeros(1)
    else:
        offsets = np.linspace(-r0 / 8.0, r0 / 8.0, count)
    return [(portion.center_Pk + s * portion.tangent, portion.normal.copy()) for s in offsets]


# -- partition factories -----------------------------------------------------


def layered_box(n_layers: int, width: float = 1.0, depth: float = 1.0, *, r0: float | None = None,
                L: float = 1.0, interfaces: Sequence[float] | None = None, strict: bool = True) -> DomainPartition:
    """Horizontal layers in ``[0, width] x [0, depth]``; layer 1 on top, sigma = top edge.

    ``interfaces`` are the y-coordinates of the layer boundaries, top to bottom;
    equispaced by default.
    """
    if interfaces is None:
        ys = [depth * (1.0 - k / n_layers) for k in range(n_layers + 1)]
    else:
        ys = [depth, *interfaces, 0.0]
        if len(ys) != n_layers + 1:
            raise ValueError("need n_layers - 1 interface depths")
    if r0 is None:
        thick = min(ys[k] - ys[k + 1] for k in range(n_layers))
        r0 = 0.9 * min(3.0 * thick, 1.5 * width)
    outer = [[0.0, 0.0], [width, 0.0], [width, depth], [0.0, depth]]
    subs = [[[0.0, ys[k + 1]], [width, ys[k + 1]], [width, ys[k]], [0.0, ys[k]]] for k in range(n_layers)]
    return build_partition({"vertices": outer, "subdomains": subs, "sigma": [2], "r0": r0, "L": L},
                           strict=strict)


def two_layer(*, r0: float = 1.0) -> DomainPartition:
    """Unit square split at y = 1/2; D_1 on top touches sigma = top edge."""
    return layered_box(2, r0=r0)


def unit_square(*, r0: float = 1.0, sigma: Iterable[int] = (2,), strict: bool = True) -> DomainPartition:
    outer = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    return build_partition({"vertices": outer, "subdomains": [outer], "sigma": list(sigma),
                            "r0": r0, "L": 1.0}, strict=strict)


def polygon_disk(radius: float = 1.0, n_sides: int = 64, center=(0.0, 0.0)) -> DomainPartition:
    """Regular polygon approximating a disk; sigma is the whole boundary.

    Built non-strictly: short polygon sides cannot host a flat portion of size r0.
    """
    th = 2.0 * np.pi * np.arange(n_sides) / n_sides
    outer = np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])
    r0 = math.sqrt(math.pi) * radius
    return build_partition({"vertices": outer.tolist(), "subdomains": [outer.tolist()],
                            "sigma": list(range(n_sides)), "r0": r0, "L": 1.0}, strict=False)


def augment(partition: DomainPartition, *, depth: float | None = None,
            half_width: float | None = None) -> tuple[DomainPartition, int]:
    """Glue a rectangle D_0 outside the measurement flat portion.

    The rectangle has tangential half-width ``2 r0 / 3`` (clipped to the flat
    portion) and depth ``2 r0 / 3`` along the outward normal. Returns the
    augmented partition, in which D_0 carries the last subdomain id, and that id.
    """
    p1 = partition.boundary_portion()
    r0 = partition.r0
    hw = min(2.0 * r0 / 3.0, 0.4 * p1.length) if half_width is None else half_width
    dp = 2.0 * r0 / 3.0 if depth is None else depth
    c, t, n = p1.center_Pk, p1.tangent, p1.normal
    a, b = c - hw * t, c + hw * t
    box = [a, b, b + dp * n, a + dp * n]
    d0 = Polygon(box)
    omega0 = unary_union([partition.omega, d0])
    if omega0.geom_type != "Polygon":
        raise PartitionError("augmented domain is not a single polygon")
    ring = np.asarray(omega0.exterior.coords)[:-1]
    ring = _drop_collinear(ring, partition.tol)
    if Polygon(ring).exterior.is_ccw != Polygon(partition.outer_boundary).exterior.is_ccw:
        ring = ring[::-1]
    new_edges = np.stack([ring, np.roll(ring, -1, axis=0)], axis=1)
    # sigma of the augmented domain: the far side of D_0
    far = LineString([box[2], box[3]])
    sig = [i for i, e in enumerate(new_edges) if far.distance(Point(0.5 * (e[0] + e[1]))) < partition.tol]
    subs = [p.tolist() for p in partition.subdomains] + [np.asarray(box).tolist()]
    layout = {"vertices": ring.tolist(), "subdomains": subs, "sigma": sig, "r0": r0,
            "L": partition.lipschitz_L}
    return build_partition(layout, strict=False), partition.N + 1


def _drop_collinear(ring: np.ndarray, tol: float) -> np.ndarray:
    keep = []
    n = len(ring)
    for i in range(n):
        a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) > tol * (np.linalg.norm(b - a) + np.linalg.norm(c - b)):
            keep.append(b)
    return np.asarray(keep)


# -- I/O ---------------------------------------------------------------------


def load_partition(path: str | Path, *, strict: bool = True) -> DomainPartition:
    with open(path) as fh:
        layout = yaml.safe_load(fh)
    return build_partition(layout, strict=strict)


def save_partition(partition: DomainPartition, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(partition.to_dict(), fh, sort_keys=False)


# -- meshes ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation of a partition.

    ``boundary_edge_ids`` holds the outer-edge index each boundary edge lies
    on; ``sigma_edges`` flags the boundary edges on the measurement portion.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    triangle_subdomain: np.ndarray
    boundary_edges: np.ndarray
    boundary_edge_ids: np.ndarray
    sigma_edges: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def h_max(self) -> float:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.sqrt((d ** 2).sum(axis=1)).max())

    @cached_property
    def triangle_h(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lens = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return lens.max(axis=1)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def gradients(self) -> np.ndarray:
        """P1 basis gradients, shape (n_triangles, 3, 2)."""
        p = self.vertices[self.triangles]
        # gradient of barycentric lambda_i is rot90 of the opposite edge / (2 area)
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        g = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        return -g / (2.0 * self.areas[:, None, None])

    @cached_property
    def min_angle_deg(self) -> float:
        p = self.vertices[self.triangles]
        angs = []
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            c = (u * v).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angs.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
        return float(np.min(angs))

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def sigma_nodes(self) -> np.ndarray:
        """Nodes on the measurement portion, ordered along it (endpoints included)."""
        edges = self.boundary_edges[self.sigma_edges]
        if len(edges) == 0:
            return np.zeros(0, int)
        nbrs: dict[int, list[int]] = {}
        for a, b in edges:
            nbrs.setdefault(int(a), []).append(int(b))
            nbrs.setdefault(int(b), []).append(int(a))
        ends = sorted(v for v, n in nbrs.items() if len(n) == 1)
        start = ends[0] if ends else min(nbrs)
        order = [start]
        prev = -1
        while True:
            nxt = [v for v in nbrs[order[-1]] if v != prev]
            if not nxt or nxt[0] == start:
                break
            prev = order[-1]
            order.append(nxt[0])
        return np.asarray(order, dtype=int)

    @property
    def sigma_closed(self) -> bool:
        return bool(self.sigma_edges.all())

    @cached_property
    def sigma_interior_nodes(self) -> np.ndarray:
        """Measurement nodes that carry Dirichlet data: endpoints of sigma excluded."""
        nodes = self.sigma_nodes
        if self.sigma_closed:
            return nodes
        other = np.unique(self.boundary_edges[~self.sigma_edges])
        return nodes[~np.isin(nodes, other)]

    def subdomain_triangles(self, ids: Iterable[int]) -> np.ndarray:
        return np.isin(self.triangle_subdomain, list(ids))

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates for each point (-1 if outside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.vertices[self.triangles]
        tri_idx = np.full(len(pts), -1)
        bary = np.zeros((len(pts), 3))
        v0, v1, v2 = p[:, 0], p[:, 1], p[:, 2]
        det = (v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v1[:, 1] - v0[:, 1]) * (v2[:, 0] - v0[:, 0])
        for k, x in enumerate(pts):
            l1 = ((x[0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (x[1] - v0[:, 1]) * (v2[:, 0] - v0[:, 0])) / det
            l2 = ((v1[:, 0] - v0[:, 0]) * (x[1] - v0[:, 1]) - (v1[:, 1] - v0[:, 1]) * (x[0] - v0[:, 0])) / det
            l0 = 1.0 - l1 - l2
            worst = np.minimum(np.minimum(l0, l1), l2)
            t = int(np.argmax(worst))
            if worst[t] >= -1e-10:
                tri_idx[k] = t
                bary[k] = np.clip([l0[t], l1[t], l2[t]], 0.0, 1.0)
                bary[k] /= bary[k].sum()
        return tri_idx, bary

    def interpolate(self, values: np.ndarray, points) -> np.ndarray:
        tri_idx, bary = self.locate(points)
        if np.any(tri_idx < 0):
            raise ValueError("point outside the mesh")
        return (values[self.triangles[tri_idx]] * bary).sum(axis=1)

    def nearest_node(self, point) -> int:
        return int(np.argmin(np.linalg.norm(self.vertices - np.asarray(point, float), axis=1)))


def mesh_from_arrays(vertices, triangles, triangle_subdomain, partition: DomainPartition) -> Mesh:
    """Assemble a Mesh, orienting triangles and tagging boundary edges geometrically."""
    vertices = np.asarray(vertices, dtype=float)
    tris = np.asarray(triangles, dtype=int).copy()
    p = vertices[tris]
    signed = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    e = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    outer = partition.outer_edges()
    mids = 0.5 * (vertices[bnd[:, 0]] + vertices[bnd[:, 1]])
    a = outer[:, 0][None]
    d = (outer[:, 1] - outer[:, 0])[None]
    w = mids[:, None] - a
    t = np.clip((w * d).sum(-1) / (d ** 2).sum(-1), 0, 1)
    dist = np.linalg.norm(w - t[..., None] * d, axis=-1)
    ids = np.argmin(dist, axis=1)
    if np.any(dist[np.arange(len(bnd)), ids] > 1e-7 * partition.diameter):
        raise MeshError("mesh boundary does not match the partition boundary")
    sigma = np.isin(ids, partition.sigma)
    return Mesh(vertices, tris, np.asarray(triangle_subdomain, dtype=int), bnd, ids, sigma)


def _pslg(partition: DomainPartition, h: float, extra_points) -> tuple[np.ndarray, np.ndarray]:
    segs = []
    for poly in (partition.outer_boundary, *partition.subdomains):
        segs.extend(np.stack([poly, np.roll(poly, -1, axis=0)], axis=1))
    pts = [s[0] for s in segs]
    if extra_points is not None:
        pts.extend(np.atleast_2d(np.asarray(extra_points, dtype=float)))
    pts = np.asarray(pts)
    tol = partition.tol
    out_pts: list[np.ndarray] = []
    index: dict[tuple[int, int], int] = {}

    def key(x):
        return (int(round(x[0] / tol)), int(round(x[1] / tol)))

    def add(x):
        kx = key(x)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                hit = index.get((kx[0] + dx, kx[1] + dy))
                if hit is not None:
                    return hit
        index[kx] = len(out_pts)
        out_pts.append(np.asarray(x, float))
        return index[kx]

    edges = set()
    for a, b in segs:
        d = b - a
        ln = np.linalg.norm(d)
        s = ((pts - a) @ d) / ln ** 2
        off = np.abs((pts[:, 0] - a[0]) * d[1] - (pts[:, 1] - a[1]) * d[0]) / ln
        on = (off < tol) & (s > 1e-12) & (s < 1 - 1e-12)
        cuts = np.unique(np.concatenate([[0.0, 1.0], s[on]]))
        knots = []
        for c0, c1 in zip(cuts[:-1], cuts[1:]):
            n_sub = max(1, int(math.ceil((c1 - c0) * ln / h - 1e-9)))
            knots.extend(c0 + (c1 - c0) * np.arange(n_sub) / n_sub)
        knots.append(1.0)
        ids = [add(a + c * d) for c in knots]
        for u, v in zip(ids[:-1], ids[1:]):
            if u != v:
                edges.add((min(u, v), max(u, v)))
    # interior extra points become isolated vertices
    if extra_points is not None:
        for x in np.atleast_2d(np.asarray(extra_points, dtype=float)):
            add(x)
    return np.asarray(out_pts), np.asarray(sorted(edges), dtype=int)


def triangulate(partition: DomainPartition, h_target: float, *, refine: Callable | None = None,
                extra_points=None, min_angle: float = 20.0, max_iter: int = 40,
                check_features: bool = True) -> Mesh:
    """Constrained Delaunay mesh conforming to every subdomain boundary.

    Parameters
    ----------
    partition : DomainPartition
    h_target : float
        Target edge length; the result satisfies ``h_max <= 1.5 * h_target``.
    refine : callable, optional
        Local size function ``refine(xy) -> h`` evaluated at triangle centroids
        (shape (m, 2) -> (m,)); triangles are split until they satisfy it.
    extra_points : array_like, optional
        Points forced into the mesh as vertices (electrodes, probe sites).
    check_features : bool
        Reject ``h_target`` coarser than the shortest boundary segment or
        ``r0``. Switch off when ``refine`` already resolves the small features.
    """
    if h_target <= 0:
        raise ValueError("h_target must be positive")
    seg_len = min(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).min()
                  for p in (partition.outer_boundary, *partition.subdomains))
    feature = min(seg_len, partition.r0)
    if check_features and h_target > feature:
        raise MeshError(f"h_target = {h_target:g} cannot resolve features of size {feature:g}")
    verts, segs = _pslg(partition, h_target, extra_points)
    regions = []
    for j, poly in enumerate(partition.polygons, start=1):
        rp = poly.representative_point()
        regions.append([rp.x, rp.y, j, 0])
    area = 0.3 * h_target ** 2
    flags = f"pq{min_angle:g}a{area:.17g}AQ"
    out = tr.triangulate({"vertices": verts, "segments": segs, "regions": np.asarray(regions)}, flags)

    def lengths(o):
        p = o["vertices"][o["triangles"]]
        return np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2).max(axis=1)

    for _ in range(max_iter):
        p = out["vertices"][out["triangles"]]
        cen = p.mean(axis=1)
        local = np.full(len(cen), h_target)
        if refine is not None:
            local = np.minimum(local, np.asarray(refine(cen), dtype=float))
        too_long = lengths(out) > np.minimum(1.5 * h_target, 1.5 * local)
        if not too_long.any():
            break
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        tri_area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        max_area = np.where(too_long, np.minimum(0.5 * tri_area, 0.3 * local ** 2), -1.0)
        out = tr.triangulate({**out, "triangle_max_area": max_area}, f"rpq{min_angle:g}aAQ")
    else:
        raise MeshError("mesh refinement did not converge")
    sub = out["triangle_attributes"].ravel().astype(int)
    if np.any(sub < 1):
        raise MeshError("triangle without subdomain attribute")
    return mesh_from_arrays(out["vertices"], out["triangles"], sub, partition)


def refine_uniform(mesh: Mesh, partition: DomainPartition) -> Mesh:
    """Split every triangle into four; coarse node numbering is preserved."""
    edges = mesh.edges
    nv = mesh.n_nodes
    lookup = {(int(a), int(b)): nv + k for k, (a, b) in enumerate(edges)}
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])

    def mid(a, b):
        return lookup[(min(a, b), max(a, b))]

    tris, subs = [], []
    for (a, b, c), s in zip(mesh.triangles, mesh.triangle_subdomain):
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
        subs.extend([s] * 4)
    return mesh_from_arrays(verts, np.asarray(tris), np.asarray(subs), partition)


def restrict_mesh(mesh: Mesh, ids: Iterable[int], partition: DomainPartition) -> tuple[Mesh, np.ndarray]:
    """Sub-mesh made of the triangles in subdomains ``ids``.

    Returns the sub-mesh (boundary tagged against ``partition``) and the map
    from sub-mesh node index to parent node index.
    """
    keep = mesh.subdomain_triangles(ids)
    tris = mesh.triangles[keep]
    nodes = np.unique(tris)
    renum = -np.ones(mesh.n_nodes, dtype=int)
    renum[nodes] = np.arange(len(nodes))
    sub = mesh_from_arrays(mesh.vertices[nodes], renum[tris], mesh.triangle_subdomain[keep], partition)
    return sub, nodes


def mirror_triangulate(partition: DomainPartition, h_target: float, axis_x: float, **kwargs) -> Mesh:
    """Mesh that is exactly mirror-symmetric about the line ``x = axis_x``.

    The left half of the partition is meshed and reflected; the partition must
    itself be symmetric about the axis.
    """
    x0, y0, x1, y1 = partition.omega.bounds
    half = Polygon([(x0 - 1, y0 - 1), (axis_x, y0 - 1), (axis_x, y1 + 1), (x0 - 1, y1 + 1)])
    subs = []
    for poly in partition.polygons:
        cut = poly.intersection(half)
        if cut.area > 0:
            subs.append(np.asarray(shapely.geometry.polygon.orient(cut).exterior.coords)[:-1])
    outer_half = partition.omega.intersection(half)
    outer = _drop_collinear(np.asarray(outer_half.exterior.coords)[:-1], partition.tol)
    layout = {"vertices": outer.tolist(), "subdomains": [s.tolist() for s in subs],
            "sigma": [0], "r0": partition.r0, "L": partition.lipschitz_L}
    left = build_partition(layout, strict=False)
    extra = kwargs.pop("extra_points", None)
    if extra is not None:
        extra = np.atleast_2d(np.asarray(extra, float))
        extra = extra[extra[:, 0] <= axis_x + partition.tol]
    m = triangulate(left, h_target, extra_points=extra, **kwargs)
    # left-half ids map back to the full partition's ids, on both sides of the axis
    reps = np.asarray([Polygon(s).representative_point().coords[0] for s in subs])
    left_ids = np.array([partition.subdomain_of(c) for c in reps])
    right_ids = np.array([partition.subdomain_of((2 * axis_x - c[0], c[1])) for c in reps])
    v = m.vertices
    on_axis = np.abs(v[:, 0] - axis_x) < partition.tol
    mirror_idx = np.where(on_axis, np.arange(len(v)), len(v) + np.cumsum(~on_axis) - 1)
    mirrored = v[~on_axis].copy()
    mirrored[:, 0] = 2 * axis_x - mirrored[:, 0]
    verts = np.vstack([v, mirrored])
    tris = np.vstack([m.triangles, mirror_idx[m.triangles][:, [0, 2, 1]]])
    tri_sub = np.concatenate([left_ids[m.triangle_subdomain - 1], right_ids[m.triangle_subdomain - 1]])
    return mesh_from_arrays(verts, tris, tri_sub, partition)


def save_mesh(mesh: Mesh, prefix: str | Path) -> tuple[Path, Path]:
    prefix = Path(prefix)
    vpath = prefix.with_name(prefix.name + "_vertices.tsv")
    tpath = prefix.with_name(prefix.name + "_triangles.tsv")
    np.savetxt(vpath, mesh.vertices, fmt="%.17g", delimiter="\t", header="x\ty", comments="")
    np.savetxt(tpath, np.column_stack([mesh.triangles, mesh.triangle_subdomain]), fmt="%d",
               delimiter="\t", header="v0\tv1\tv2\tsubdomain", comments="")
    return vpath, tpath
