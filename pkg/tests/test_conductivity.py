import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plcond import conductivity as C
from plcond import geometry as G
from plcond.conductivity import PiecewiseLinearConductivity as PLC

coef = st.floats(-3, 3, allow_nan=False)


def test_evaluate_constant(two_layer):
    g = PLC.constant([1.0, 1.0])
    for x in [(0.2, 0.3), (0.9, 0.9), (0.5, 0.5)]:
        assert C.evaluate(g, two_layer, x) == 1.0


def test_evaluate_affine(two_layer):
    g = PLC([2.0, 1.0], [[0.0, 1.0], [0.0, 0.0]])
    assert C.evaluate(g, two_layer, (0.3, 0.75)) == pytest.approx(2.75, abs=1e-15)


def test_evaluate_outside(two_layer):
    with pytest.raises(C.OutsideDomainError):
        C.evaluate(PLC.constant([1.0, 1.0]), two_layer, (1.5, 0.5))


def test_interface_point_goes_to_lower_index(two_layer):
    g = PLC.constant([3.0, 5.0])
    assert C.evaluate(g, two_layer, (0.5, 0.5)) == 3.0


def test_sup_norm_examples(two_layer):
    sq = G.unit_square()
    one = PLC.constant([1.0])
    assert C.sup_norm(one, one, sq) == 0.0
    assert C.sup_norm(one, PLC([1.0], [[1.0, 0.0]]), sq) == pytest.approx(1.0)
    g1 = PLC.constant([1.0, 1.0])
    g2 = PLC.constant([1.0, 1.3])
    assert C.sup_norm(g1, g2, two_layer) == pytest.approx(0.3)


def test_coefficient_norm_examples():
    assert C.coefficient_norm(PLC([1.0], [[0.0, 0.0]])) == 1.0
    assert C.coefficient_norm(PLC([1.0, 2.0], [[1.0, 0.0], [0.0, 0.0]])) == 2.0
    assert C.coefficient_norm(PLC(np.zeros(0), np.zeros((0, 2)))) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(coef, min_size=6, max_size=6), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_interior_values_bounded_by_sup_norm(v, x, y):
    part = G.two_layer()
    g = PLC.from_vector(v)
    zero = PLC.constant([0.0, 0.0])
    assert abs(g.piece(part.subdomain_of((x, y)), (x, y))) <= C.sup_norm(g, zero, part) + 1e-12


def test_norm_equivalence_bracket(two_layer, rng):
    zero = PLC.constant([0.0, 0.0])
    ratios = []
    for _ in range(1000):
        g = PLC.from_vector(rng.standard_normal(6))
        ratios.append(C.sup_norm(g, zero, two_layer) / C.coefficient_norm(g))
    # upper constant: the largest vertex distance from the origin
    assert max(ratios) <= math.sqrt(2) + 1e-12
    assert min(ratios) >= 0.2


def test_random_admissible_deterministic(two_layer):
    a = C.random_admissible(two_layer, 3.0, 7)
    b = C.random_admissible(two_layer, 3.0, 7)
    assert np.array_equal(a.vector, b.vector)
    assert a.is_admissible(two_layer)


def test_random_admissible_lambda_one(two_layer):
    g = C.random_admissible(two_layer, 1.0, 0)
    assert np.array_equal(g.vector, PLC.constant([1.0, 1.0]).vector)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.05, 10.0))
def test_random_admissible_passes_check(seed, lam):
    part = G.layered_box(3)
    g = C.random_admissible(part, lam, seed)
    g.check(part)


def test_ellipticity_violation(two_layer):
    g = PLC([0.1, 1.0], [[0.0, 0.0], [0.0, 0.0]], lambda_bound=2.0)
    with pytest.raises(C.EllipticityError):
        g.check(two_layer)


def test_resistivity_flag(two_layer):
    g = PLC.constant([2.0, 4.0], resistivity=True)
    assert C.evaluate(g, two_layer, (0.5, 0.8)) == 0.5
    mesh = G.triangulate(two_layer, 0.25)
    cells = g.cell_means(mesh)
    assert np.allclose(cells[mesh.triangle_subdomain == 2], 0.25)


def test_cell_means_exact_for_affine(two_layer_mesh, affine_truth):
    # centroid value is the exact mean of an affine function
    tri = two_layer_mesh.vertices[two_layer_mesh.triangles]
    j = two_layer_mesh.triangle_subdomain - 1
    vals = affine_truth.a[j][:, None] + np.einsum("tkd,td->tk", tri, affine_truth.A[j])
    assert np.allclose(affine_truth.cell_means(two_layer_mesh), vals.mean(axis=1), atol=1e-14)


def test_cell_jacobian_matches_finite_difference(two_layer_mesh):
    g = PLC([2.0, 3.0], [[0.3, -0.2], [0.1, 0.4]], resistivity=True)
    J = g.cell_jacobian(two_layer_mesh)
    d = np.array([0.1, -0.2, 0.05, 0.3, 0.0, -0.1])
    s = 1e-6
    fd = (PLC.from_vector(g.vector + s * d, resistivity=True).cell_means(two_layer_mesh)
          - PLC.from_vector(g.vector - s * d, resistivity=True).cell_means(two_layer_mesh)) / (2 * s)
    assert np.allclose(d @ J, fd, atol=1e-8)


def test_projection_lands_in_admissible_set(two_layer):
    g = PLC([5.0, 0.1], [[3.0, 0.0], [0.0, -1.0]])
    p = C.project_admissible(g, two_layer, 2.0)
    assert p.is_admissible(two_layer, 2.0)


def test_yaml_round_trip(tmp_path, affine_truth):
    C.save_conductivity(affine_truth, tmp_path / "g.yaml")
    g = C.load_conductivity(tmp_path / "g.yaml")
    assert np.array_equal(g.vector, affine_truth.vector)
    assert g.lambda_bound == affine_truth.lambda_bound
