import numpy as np
import pytest
import scipy.linalg as sla

from plcond import fem as F
from plcond import geometry as G
from plcond import maps as M
from plcond.conductivity import PiecewiseLinearConductivity as PLC


@pytest.fixture(scope="module")
def mesh():
    return G.triangulate(G.two_layer(), 0.15)


def dton(mesh, gamma, method="auto"):
    return M.assemble_dton(F.assemble(mesh, gamma), method=method)


def test_symmetric_and_methods_agree(mesh, affine_truth):
    a = dton(mesh, affine_truth, "schur")
    b = dton(mesh, affine_truth, "columns")
    assert np.abs(a.matrix - a.matrix.T).max() < 1e-10 * np.abs(a.matrix).max()
    assert np.abs(a.matrix - b.matrix).max() < 1e-9 * np.abs(a.matrix).max()


def test_scaling(mesh, affine_truth):
    c = 3.5
    scaled = PLC(c * affine_truth.a, c * affine_truth.A, lambda_bound=4.0 * c)
    a, b = dton(mesh, affine_truth), dton(mesh, scaled)
    assert np.abs(b.matrix - c * a.matrix).max() < 1e-10 * np.abs(b.matrix).max()


def test_ntod_inverts_on_zero_mean(mesh, rng):
    L = dton(mesh, PLC.constant([1.0, 2.0]))
    N = M.assemble_ntod(L)
    assert np.abs(N - N.T).max() < 1e-10 * np.abs(N).max()
    g = rng.standard_normal(L.matrix.shape[0])
    g -= g.mean()
    assert np.allclose(N @ (L.matrix @ g), g, atol=1e-8)
    assert np.allclose(N.sum(axis=0), 0.0, atol=1e-10)


def test_ntod_singular():
    with pytest.raises(M.SingularMapError):
        M.assemble_ntod(np.zeros((4, 4)))


def test_operator_norm_identity_case(mesh):
    theta = M.fractional_metric(mesh)
    assert M.operator_norm(theta, theta) == pytest.approx(1.0, rel=1e-10)
    assert M.operator_norm(np.zeros_like(theta), theta) == 0.0


def test_operator_norm_oracles(rng):
    B = rng.standard_normal((5, 5))
    theta = B @ B.T + 5 * np.eye(5)
    D = rng.standard_normal((5, 5))
    delta = D + D.T
    val = M.operator_norm(delta, theta)
    # generalized eigenvalue of (delta theta^-1 delta, theta)
    ev = sla.eigh(delta @ np.linalg.solve(theta, delta), theta, eigvals_only=True)
    assert val == pytest.approx(np.sqrt(ev.max()), rel=1e-10)
    g = rng.standard_normal((5, 200000))
    num = np.einsum("ij,ij->j", delta @ g, np.linalg.solve(theta, delta @ g))
    den = np.einsum("ij,ij->j", g, theta @ g)
    brute = np.sqrt(num / den).max()
    assert brute <= val * (1 + 1e-12)
    assert brute >= 0.99 * val


def test_metric_positive(mesh):
    theta = M.fractional_metric(mesh)
    assert np.allclose(theta, theta.T)
    assert np.linalg.eigvalsh(theta).min() > 0
    with pytest.raises(M.MetricError):
        M.inv_sqrt_metric(np.zeros((3, 3)))


def test_monotone(mesh):
    lo = dton(mesh, PLC.constant([1.0, 1.0]))
    hi = dton(mesh, PLC.constant([1.0, 3.0]))
    assert np.linalg.eigvalsh(hi.matrix - lo.matrix).min() > -1e-10


def test_pairing_identity(mesh, affine_truth, rng):
    other = PLC.constant([1.0, 1.5])
    s1, s2 = F.assemble(mesh, affine_truth), F.assemble(mesh, other)
    L1, L2 = M.assemble_dton(s1), M.assemble_dton(s2)
    m = L1.matrix.shape[0]
    f, g = rng.standard_normal((2, m))
    u1 = F.solve_dirichlet(s1, f)
    u2 = F.solve_dirichlet(s2, g)
    lhs = g @ (L1.matrix - L2.matrix) @ f
    rhs = u2 @ ((s1.stiffness - s2.stiffness) @ u1)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


def test_derivative_matches_difference(mesh, affine_truth):
    L = dton(mesh, affine_truth, "columns")
    d = np.zeros(mesh.n_triangles)
    d[mesh.triangle_subdomain == 2] = 1.0
    Ld = M.dton_derivative(L, d)
    eps = 1e-6
    shifted = PLC(affine_truth.a + np.array([0.0, eps]), affine_truth.A, lambda_bound=4.0)
    fd = (dton(mesh, shifted).matrix - L.matrix) / eps
    assert np.abs(fd - Ld).max() < 1e-4 * np.abs(Ld).max()


def test_transfer_of_same_mesh_is_identity(mesh):
    L = dton(mesh, PLC.constant([1.0, 2.0]))
    assert np.allclose(M.transfer_map(L, mesh), L.matrix, atol=1e-12)


def test_save_load_roundtrip(mesh, tmp_path):
    L = dton(mesh, PLC.constant([1.0, 2.0]))
    M.save_map(tmp_path / "m.tsv", L.matrix, L.coords)
    assert np.array_equal(M.load_map(tmp_path / "m.tsv"), L.matrix)


def test_identical_conductivities_identical_maps(mesh):
    a = dton(mesh, PLC.constant([1.0, 1.0]))
    b = dton(mesh, PLC.constant([1.0, 1.0]))
    assert np.array_equal(a.matrix, b.matrix)


def test_ones_consistent_with_energy(mesh, affine_truth):
    system = F.assemble(mesh, affine_truth)
    L = M.assemble_dton(system)
    ones = np.ones(L.matrix.shape[0])
    u = F.solve_dirichlet(system, ones)
    assert ones @ L.matrix @ ones == pytest.approx(F.energy(system, u, u), rel=1e-10)


def test_monotone_on_random_data(mesh, rng):
    lo = dton(mesh, PLC.constant([1.0, 1.0])).matrix
    hi = dton(mesh, PLC([1.0, 1.5], [[0.0, 0.1], [0.2, 0.0]], lambda_bound=3.0)).matrix
    g = rng.standard_normal((lo.shape[0], 100))
    assert np.all(np.einsum("ij,ij->j", g, hi @ g) >= np.einsum("ij,ij->j", g, lo @ g) - 1e-12)
