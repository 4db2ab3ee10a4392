import math

import numpy as np
import pytest

from plcond import geometry as G
from plcond import stability as S
from plcond.conductivity import PiecewiseLinearConductivity as PLC
from plcond.conductivity import sup_norm

E2 = math.exp(-2.0)


def test_omega_values():
    assert S.omega(1.5, 0.5) == E2
    assert S.omega(1.5, E2) == pytest.approx(E2)
    # |log t| = 4: 2^b e^-2 4^-b = e^-2 2^-b
    assert S.omega(2.0, math.exp(-4.0)) == pytest.approx(E2 / 4.0)
    with pytest.raises(S.RangeError):
        S.omega(1.0, 0.0)


def test_omega_monotone_and_iterates():
    t = np.logspace(-300, 0, 400)
    w = S.omega(1.2, t)
    assert np.all(np.diff(w) >= 0)
    assert np.all(w <= E2)
    for x in (1e-50, 1e-5, 0.05):
        assert S.omega_iter(1.2, 1, x) == pytest.approx(S.omega(1.2, x), rel=1e-12)
        assert S.omega_iter(1.2, 2, x) == pytest.approx(S.omega(1.2, S.omega(1.2, x)), rel=1e-12)


@pytest.mark.parametrize("j", [1, 2, 3])
def test_omega_inverse_round_trip(j):
    b = 1.0
    for s in (0.1, 0.05, 0.02):
        if s >= S.omega_iter(b, j, 1e-300):
            t = S.omega_inverse_iter(b, j, s)
            assert S.omega_iter(b, j, t) == pytest.approx(s, rel=1e-8)
    with pytest.raises(S.RangeError):
        S.omega_inverse_iter(b, j, 0.5)


def test_schedule_formulas():
    sc = S.schedule(1.0, 1.0)
    beta1 = math.atan(math.sin(math.pi / 4) / 4)
    assert sc.beta == pytest.approx(math.pi / 4)
    assert sc.beta1 == pytest.approx(beta1)
    assert sc.lambda1 == pytest.approx(1 / (1 + math.sin(beta1)))
    assert sc.rho1 == pytest.approx(math.sin(beta1) / (1 + math.sin(beta1)))
    assert sc.a == pytest.approx((1 - math.sin(beta1)) / (1 + math.sin(beta1)))
    for m in range(1, 6):
        assert sc.d(m + 1) / sc.d(m) == pytest.approx(sc.a)
    # consecutive balls touch: lambda_m - rho_m = lambda_{m+1} + rho_{m+1}
    assert sc.lam(2) + sc.rho(2) == pytest.approx(sc.lam(1) - sc.rho(1))
    with pytest.raises(ValueError):
        S.schedule(0.0, 1.0)


def test_h_bar_bracket(rng):
    sc = S.schedule(1.3, 0.8)
    assert S.h_bar(sc, sc.d(1)) == 1
    for r in rng.uniform(1e-6, 1.0, 100) * sc.d(1):
        m = S.h_bar(sc, r)
        assert sc.d(m) <= r
        assert m == 1 or sc.d(m - 1) > r
    with pytest.raises(S.RangeError):
        S.h_bar(sc, 2 * sc.d(1))


@pytest.fixture(scope="module")
def two_layer_problem():
    part = G.layered_box(2)
    return S.StabilityProblem(part, G.triangulate(part, 0.15))


def test_constant_reproducible_and_is_max(two_layer_problem):
    part = two_layer_problem.partition
    r1 = S.estimate_lipschitz_constant(part, 2.0, 4, 7, mesh=two_layer_problem.mesh)
    r2 = S.estimate_lipschitz_constant(part, 2.0, 4, 7, mesh=two_layer_problem.mesh)
    assert r1.C_emp == r2.C_emp
    assert r1.table() == r2.table()
    assert r1.C_emp == max(r["sup_norm"] / r["operator_norm"] for r in r1.rows)
    assert {r["kind"] for r in r1.rows} == {"random", "structured"}


def test_single_subdomain_baseline():
    part = G.unit_square()
    rep = S.estimate_lipschitz_constant(part, 2.0, 4, 1, h=0.2)
    assert rep.K == 1 and np.isfinite(rep.C_emp) and rep.C_emp > 0


def test_linearized_ratio_matches_small_step(two_layer_problem):
    part = two_layer_problem.partition
    g = PLC.constant([1.0, 1.2])
    c, lin = S.worst_direction(two_layer_problem, g, 2, n_dir=256)
    g2 = S._step_along(part, g, 2, c, 2.0, 1e-5)
    _, _, ratio = two_layer_problem.ratio(g, g2)
    assert ratio == pytest.approx(lin, rel=0.02)
    assert sup_norm(g, g2, part) == pytest.approx(1e-5, rel=1e-9)


def test_blow_up_vanishes_for_equal_conductivities():
    part = G.layered_box(2)
    g = PLC.constant([1.0, 2.0])
    sc = S.schedule(part.lipschitz_L, part.r0)
    tab = S.blow_up_study(part, g, g, 1, sc.d(1) * np.array([0.1, 0.03]), h=0.08)
    assert np.all(tab.value == 0.0) and np.all(tab.mixed == 0.0)
    assert tab.fitted_exponents() == (0.0, 0.0)
    with pytest.raises(ValueError):
        S.blow_up_study(part, g, g, 2, [0.1], h=0.08)


def test_blow_up_growth():
    part = G.layered_box(2)
    g1 = PLC.constant([1.0, 1.0])
    g2 = PLC.constant([1.0, 2.0])
    sc = S.schedule(part.lipschitz_L, part.r0)
    tab = S.blow_up_study(part, g1, g2, 1, sc.d(1) * np.array([0.1, 0.03, 0.01, 0.003, 0.001]), h=0.08)
    value_exp, mixed_exp = tab.fitted_exponents(tail=3)
    # planar case: logarithmic growth of S, distance^-2 for the mixed derivative
    assert abs(value_exp) <= 0.3
    assert mixed_exp == pytest.approx(-2.0, abs=0.3)
    assert np.all(np.diff(tab.value[np.argsort(tab.distance)]) <= 0)


def test_omega_example_and_concavity(rng):
    assert S.omega(1.0, math.exp(-4.0)) == pytest.approx(math.exp(-2.0) / 2, rel=1e-12)
    s, t = rng.uniform(1e-12, 0.5, (2, 500))
    mid = S.omega(0.7, 0.5 * (s + t))
    assert np.all(mid >= 0.5 * (S.omega(0.7, s) + S.omega(0.7, t)) - 1e-15)


@pytest.mark.parametrize("j", [1, 2, 3])
def test_omega_inverse_recovers_argument(j):
    for t in (1e-8, 1e-4, 1e-2, 0.1):
        assert S.omega_inverse_iter(1.0, j, S.omega_iter(1.0, j, t)) == pytest.approx(t, rel=1e-10)


def test_h_bar_logarithmic_bracket(rng):
    sc = S.schedule(1.3, 0.8)
    for r in rng.uniform(1e-6, 1.0, 100) * sc.d(1):
        lo = math.log(r / sc.r0) / math.log(sc.a)
        assert lo <= S.h_bar(sc, r) <= lo + 1


def test_schedule_sequences():
    sc = S.schedule(2.0, 0.5)
    assert 0 < sc.a < 1
    for m in range(1, 8):
        assert sc.lam(m + 1) / sc.lam(m) == pytest.approx(sc.a, rel=1e-14)
        assert sc.rho(m) < sc.lam(m)
        assert sc.d(m + 1) < sc.d(m)
    w = S.w_point([0.3, 0.5], [0.0, 1.0], sc, 3)
    assert np.allclose(w, [0.3, 0.5 - sc.lam(3)])


def test_homogeneity_along_segment(two_layer_problem):
    part = two_layer_problem.partition
    g1 = PLC([1.0, 1.2], [[0.0, 0.0], [0.1, -0.1]], lambda_bound=2.0)
    g2 = PLC([1.1, 1.5], [[0.0, 0.0], [-0.1, 0.2]], lambda_bound=2.0)
    path = lambda s: PLC.from_vector(g1.vector + s * (g2.vector - g1.vector), lambda_bound=2.0)
    full = sup_norm(g1, g2, part)
    slopes = {}
    for s in (1e-2, 1e-3, 1e-4):
        num, den, _ = two_layer_problem.ratio(g1, path(s))
        assert num == pytest.approx(s * full, rel=1e-12)
        slopes[s] = den / s
    # deviation from linearity shrinks with s
    assert abs(slopes[1e-3] - slopes[1e-4]) < abs(slopes[1e-2] - slopes[1e-4])
    assert slopes[1e-3] == pytest.approx(slopes[1e-4], rel=0.05)
