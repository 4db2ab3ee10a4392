"""Moduli of continuity, the geometric continuation schedule and empirical stability constants."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .conductivity import PiecewiseLinearConductivity, random_admissible, sup_norm
from .fem import assemble
from .geometry import DomainPartition, Mesh, augment, find_chain, triangulate
from .greens import distance_to_boundary, fem_green, loglog_slope, region_form
from .maps import LocalDtoNMap, inv_sqrt_metric, assemble_dton, dton_derivative, fractional_metric, operator_norm

E2 = math.exp(-2.0)


class RangeError(ValueError):
    pass


# -- moduli ------------------------------------------------------------------


def omega(b: float, t):
    """Capped logarithmic modulus: ``2^b e^-2 |log t|^-b`` below ``e^-2``, ``e^-2`` above."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise RangeError("omega is defined for t > 0")
    with np.errstate(divide="ignore"):
        small = 2.0 ** b * E2 * np.abs(np.log(np.minimum(t, E2))) ** (-b)
    out = np.where(t < E2, small, E2)
    return float(out) if out.ndim == 0 else out


def _tau_step(b: float, tau: float) -> float:
    # -log(omega(exp(-tau))), stable for huge tau
    if tau <= 2.0:
        return 2.0
    return 2.0 - b * math.log(2.0) + b * math.log(tau)


def omega_iter(b: float, j: int, t: float) -> float:
    """``j``-fold composition of ``omega``."""
    if j < 1:
        raise ValueError("j must be >= 1")
    if t <= 0:
        raise RangeError("omega is defined for t > 0")
    tau = -math.log(t)
    for _ in range(j):
        tau = _tau_step(b, tau)
    return math.exp(-tau)


def omega_inverse_iter(b: float, j: int, s: float, *, tol: float = 1e-12) -> float:
    """Smallest ``t`` with ``omega_iter(b, j, t) = s`` (bisection).

    Works in ``log(-log t)`` so deeply nested inverses do not overflow; a
    result below the smallest positive float is returned as 0.
    """
    if not 0.0 < s <= E2:
        raise RangeError(f"s = {s!r} is outside the range (0, e^-2] of the iterated modulus")
    if s == E2:
        return E2
    target = -math.log(s)

    def f(log_tau):
        tau = math.exp(log_tau)
        for _ in range(j):
            tau = _tau_step(b, tau)
        return tau

    lo, hi = math.log(2.0), math.log(4.0)
    while f(hi) < target:
        lo, hi = hi, 2.0 * hi
        if hi > math.log(1e308):
            return 0.0
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    tau = math.exp(0.5 * (lo + hi))
    return math.exp(-tau) if tau < 745.0 else 0.0


# -- continuation schedule -------------------------------------------------


@dataclass(frozen=True)
class ContinuationSchedule:
    """Geometric sequence of balls approaching an interface.

    Attributes follow the construction: ``beta = arctan(1/L)``,
    ``beta1 = arctan(sin(beta)/4)``, ``lambda_1 = r0 / (1 + sin beta1)``,
    ``rho_1 = lambda_1 sin beta1`` and the ratio
    ``a = (1 - sin beta1) / (1 + sin beta1)``.
    """

    L: float
    r0: float

    @property
    def beta(self) -> float:
        return math.atan(1.0 / self.L)

    @property
    def beta1(self) -> float:
        return math.atan(math.sin(self.beta) / 4.0)

    @property
    def a(self) -> float:
        s = math.sin(self.beta1)
        return (1.0 - s) / (1.0 + s)

    @property
    def lambda1(self) -> float:
        return self.r0 / (1.0 + math.sin(self.beta1))

    @property
    def rho1(self) -> float:
        return self.lambda1 * math.sin(self.beta1)

    def lam(self, m: int) -> float:
        return self.lambda1 * self.a ** (m - 1)

    def rho(self, m: int) -> float:
        return self.rho1 * self.a ** (m - 1)

    def d(self, m: int) -> float:
        return self.lam(m) - self.rho(m)


def schedule(L: float, r0: float) -> ContinuationSchedule:
    if L <= 0 or r0 <= 0:
        raise ValueError("L and r0 must be positive")
    return ContinuationSchedule(float(L), float(r0))


def h_bar(sched: ContinuationSchedule, r: float) -> int:
    """Smallest ``m >= 1`` with ``d_m <= r``."""
    if not 0.0 < r <= sched.d(1):
        raise RangeError(f"r = {r!r} outside (0, d_1 = {sched.d(1)!r}]")
    m = max(1, math.ceil(math.log(r / sched.r0) / math.log(sched.a) - 1e-9))
    while sched.d(m) > r:
        m += 1
    while m > 1 and sched.d(m - 1) <= r:
        m -= 1
    return m


def w_point(Q, nu, sched: ContinuationSchedule, m: int) -> np.ndarray:
    return np.asarray(Q, float) - sched.lam(m) * np.asarray(nu, float)


# -- empirical Lipschitz constant ------------------------------------------


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """Per-pair norms and the empirical constant (their maximal ratio)."""

    rows: list[dict]
    N: int
    K: int
    n_nodes: int

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r["ratio"] for r in self.rows])

    @property
    def C_emp(self) -> float:
        return float(self.ratios.max())

    def table(self) -> tuple[list[str], list[list]]:
        cols = ["pair", "seed", "kind", "sup_norm", "operator_norm", "ratio"]
        return cols, [[r[c] for c in cols] for r in self.rows]


@dataclass
class StabilityProblem:
    """A partition with a fixed mesh and metric, caching forward maps."""

    partition: DomainPartition
    mesh: Mesh
    metric: np.ndarray = None
    _maps: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.metric is None:
            self.metric = fractional_metric(self.mesh)

    def forward(self, gamma: PiecewiseLinearConductivity) -> LocalDtoNMap:
        key = (gamma.vector.tobytes(), gamma.resistivity)
        if key not in self._maps:
            self._maps[key] = assemble_dton(assemble(self.mesh, gamma), metric=self.metric)
        return self._maps[key]

    def dton(self, gamma: PiecewiseLinearConductivity) -> np.ndarray:
        return self.forward(gamma).matrix

    def ratio(self, gamma1, gamma2) -> tuple[float, float, float]:
        num = sup_norm(gamma1, gamma2, self.partition)
        den = operator_norm(self.dton(gamma1) - self.dton(gamma2), self.metric)
        return num, den, (num / den if den > 0 else math.inf)


def _replace_piece(gamma, other, j) -> PiecewiseLinearConductivity:
    a, A = gamma.a.copy(), gamma.A.copy()
    a[j - 1], A[j - 1] = other.a[j - 1], other.A[j - 1]
    return gamma.replace(a=a, A=A)


def _sphere(n_dir: int, dim: int, rng) -> np.ndarray:
    d = rng.standard_normal((n_dir, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def worst_direction(problem: StabilityProblem, gamma: PiecewiseLinearConductivity, j: int, *,
                    n_dir: int = 2048, seed: int = 0) -> tuple[np.ndarray, float]:
    """Coefficient direction on subdomain ``j`` with the largest linearized ratio.

    The ratio is the sup norm of the perturbation over the operator norm of
    the exact discrete derivative of the map; directions are sampled on the
    unit sphere of the three coefficients and the best one is polished.
    """
    fwd = problem.forward(gamma)
    jac = gamma.cell_jacobian(problem.mesh)[3 * (j - 1): 3 * j]
    D = [dton_derivative(fwd, row) for row in jac]
    verts = problem.partition.subdomains[j - 1]
    T = np.column_stack([np.ones(len(verts)), verts])
    W = inv_sqrt_metric(problem.metric)
    Dw = [W @ d @ W for d in D]

    def ratio(c):
        num = np.abs(T @ c).max()
        den = np.linalg.norm(sum(ci * d for ci, d in zip(c, Dw)), 2)
        return num / den if den > 0 else 0.0

    cands = _sphere(n_dir, 3, np.random.default_rng(seed))
    vals = np.array([ratio(c) for c in cands])
    best = cands[int(np.argmax(vals))]
    res = minimize(lambda c: -ratio(c / np.linalg.norm(c)), best, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000})
    c = res.x / np.linalg.norm(res.x)
    return c, ratio(c)


def _step_along(partition, gamma, j, c, lam, size):
    """``gamma`` moved along direction ``c`` on piece ``j`` by sup-norm ``size`` (shrunk to stay admissible)."""
    verts = partition.subdomains[j - 1]
    c = c / np.abs(c[0] + verts @ c[1:]).max()
    for sgn in (1.0, -1.0):
        s = size
        for _ in range(60):
            a, A = gamma.a.copy(), gamma.A.copy()
            a[j - 1] += sgn * s * c[0]
            A[j - 1] += sgn * s * c[1:]
            g2 = gamma.replace(a=a, A=A)
            if g2.is_admissible(partition, lam):
                return g2
            s *= 0.5
    return None


def sample_pairs(partition: DomainPartition, lam: float, count: int, seed: int, *,
                 structured: bool = True, problem: StabilityProblem | None = None,
                 size: float = 0.1) -> list[tuple[str, int, PiecewiseLinearConductivity, PiecewiseLinearConductivity]]:
    """Seeded admissible pairs.

    Every other pair is structured when ``structured`` is set: the second
    member differs from the first only on the deepest chain subdomain, along
    the worst linearized direction (needs ``problem``) or, without a problem,
    by a random replacement piece.
    """
    if count < 2:
        raise ValueError("need at least two samples")
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(count)]
    last = find_chain(partition, partition.N).ids[-1] if partition.N > 1 else 1
    pairs = []
    for k, s in enumerate(seeds):
        g1 = random_admissible(partition, lam, s)
        g2 = random_admissible(partition, lam, s + 1)
        if structured and k % 2 == 0:
            if problem is not None:
                c, _ = worst_direction(problem, g1, last, seed=s)
                g2s = _step_along(partition, g1, last, c, lam, size)
                if g2s is not None:
                    pairs.append(("structured", s, g1, g2s))
                    continue
            pairs.append(("structured", s, g1, _replace_piece(g1, g2, last)))
        else:
            pairs.append(("random", s, g1, g2))
    return pairs


def estimate_lipschitz_constant(partition: DomainPartition, lam: float, count: int, seed: int, *,
                                h: float | None = None, mesh: Mesh | None = None,
                                structured: bool = True, problem: StabilityProblem | None = None) -> StabilityReport:
    """Lower estimate of the stability constant as the largest sampled ratio."""
    if problem is None:
        if mesh is None:
            mesh = triangulate(partition, h)
        problem = StabilityProblem(partition, mesh)
    rows = []
    pairs = sample_pairs(partition, lam, count, seed, structured=structured, problem=problem)
    for k, (kind, s, g1, g2) in enumerate(pairs):
        num, den, ratio = problem.ratio(g1, g2)
        if num == 0.0:
            continue
        rows.append({"pair": k, "seed": s, "kind": kind, "sup_norm": num, "operator_norm": den, "ratio": ratio})
    K = find_chain(partition, partition.N).K if partition.N > 1 else 1
    return StabilityReport(rows, partition.N, K, problem.mesh.n_nodes)


# -- blow-up along the continuation schedule -----------------------------


@dataclass(frozen=True, eq=False)
class BlowUpTable:
    radii: np.ndarray
    steps: np.ndarray
    points: np.ndarray
    distance: np.ndarray
    value: np.ndarray
    mixed: np.ndarray

    def fitted_exponents(self, tail: int | None = None) -> tuple[float, float]:
        """Log-log slopes of |S| and |d d S| against the distance to the interface.

        ``tail`` restricts the fit to the probes closest to the interface.
        """
        ok = (self.value > 0) & (self.mixed > 0)
        if tail is not None:
            near = np.argsort(self.distance)[:tail]
            ok &= np.isin(np.arange(len(ok)), near)
        if ok.sum() < 2:
            return 0.0, 0.0
        return loglog_slope(self.distance[ok], self.value[ok]), loglog_slope(self.distance[ok], self.mixed[ok])

    def table(self) -> tuple[list[str], np.ndarray]:
        cols = ["r", "m", "w_x", "w_y", "distance", "abs_S", "abs_ddS"]
        data = np.column_stack([self.radii, self.steps, self.points, self.distance, self.value, self.mixed])
        return cols, data


def blow_up_study(partition: DomainPartition, gamma1: PiecewiseLinearConductivity,
                  gamma2: PiecewiseLinearConductivity, k: int, radii, *, h: float,
                  grading: float = 0.2, fd_fraction: float = 0.25) -> BlowUpTable:
    """Singular-solution values along the probes approaching interface ``k + 1`` of the chain.

    The domain is augmented by a unit-conductivity box outside the measurement
    flat portion. The region of integration is everything except the box and
    the first ``k`` chain subdomains; probes sit on the normal through the
    centre of the next interface, on the side of the ``k``-th subdomain.
    """
    chain = find_chain(partition, partition.N)
    if not 1 <= k < chain.K:
        raise ValueError(f"k must lie in 1..{chain.K - 1}")
    portion = chain.portions[k]
    Q = portion.center_Pk
    nu = -portion.normal  # exterior normal of the k-th chain subdomain
    sched = schedule(partition.lipschitz_L, partition.r0)
    radii = np.asarray(radii, float)
    steps = np.array([h_bar(sched, r) for r in radii])
    pts = np.array([w_point(Q, nu, sched, m) for m in steps])
    dist = np.array([sched.lam(m) for m in steps])

    aug, d0 = augment(partition)
    W = {d0, *chain.ids[:k]}
    U = tuple(j for j in range(1, aug.N + 1) if j not in W)
    g1, g2 = gamma1.extended(1.0), gamma2.extended(1.0)
    h_min = grading * dist.min()

    def size(c):
        return np.maximum(h_min, grading * np.linalg.norm(c - Q, axis=1))

    mesh = triangulate(aug, h, refine=size, extra_points=pts)
    s1, s2 = assemble(mesh, g1, solver="direct"), assemble(mesh, g2, solver="direct")
    KU = region_form(mesh, g1, g2, U)

    def S(y, z):
        return float(fem_green(s1, y) @ (KU @ fem_green(s2, z)))

    value, mixed = [], []
    for w, dst in zip(pts, dist):
        value.append(abs(S(w, w)))
        step = fd_fraction * min(dst, distance_to_boundary(mesh, w))
        acc = 0.0
        for sy in (1, -1):
            G1 = fem_green(s1, w + sy * step * nu)
            for sz in (1, -1):
                acc += sy * sz * float(G1 @ (KU @ fem_green(s2, w + sz * step * nu)))
        mixed.append(abs(acc) / (4.0 * step * step))
    return BlowUpTable(radii, steps, pts, dist, np.asarray(value), np.asarray(mixed))
