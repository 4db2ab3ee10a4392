import itertools

import networkx as nx
import numpy as np
import pytest

from plcond import geometry as G


def square(x0, y0, s=1.0):
    return [[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]]


def test_two_layer_partition(two_layer):
    assert two_layer.N == 2
    p1 = two_layer.boundary_portion()
    assert p1.outside_domain == 0 and p1.inside_domain == 1
    inner = two_layer.portions_between(1, 2)
    assert len(inner) == 1
    assert abs(inner[0].center_Pk[1] - 0.5) < 1e-12


def test_single_square():
    p = G.unit_square()
    assert p.N == 1
    assert p.boundary_portion().inside_domain == 1


def test_subdomain_areas_sum_to_domain(two_layer):
    total = sum(poly.area for poly in two_layer.polygons)
    assert abs(total - two_layer.area) <= 1e-12 * two_layer.area


def test_corner_contact_rejected():
    layout = {"vertices": [[0, 0], [1, 0], [1, 1], [2, 1], [2, 2], [1, 2], [1, 1], [0, 1]],
            "subdomains": [square(0, 0), square(1, 1)], "sigma": [0], "r0": 1.0}
    with pytest.raises((G.CoverageError, G.FlatPortionError, G.PartitionError)):
        G.build_partition(layout)


def test_overlap_rejected():
    layout = {"vertices": square(0, 0), "sigma": [2], "r0": 1.0,
            "subdomains": [[[0, 0], [1, 0], [1, 0.6], [0, 0.6]], [[0, 0.4], [1, 0.4], [1, 1], [0, 1]]]}
    with pytest.raises(G.OverlapError):
        G.build_partition(layout)


def test_chain_two_layer(two_layer):
    chain = G.find_chain(two_layer, 2)
    assert chain.ids == (1, 2) and chain.K == 2


def test_chain_matches_shortest_path_on_adjacency():
    p = G.layered_box(4)
    chain = G.find_chain(p, 4)
    graph = nx.Graph()
    for i, nbrs in p.adjacency().items():
        graph.add_edges_from((i, j) for j in nbrs)
    assert list(chain.ids) == nx.shortest_path(graph, 1, 4)
    assert chain.ids == (1, 2, 3, 4)
    for k in range(1, chain.K):
        assert chain.portions[k].separates(chain.ids[k - 1], chain.ids[k])


def test_isolated_subdomain_has_no_chain():
    # a small block in a corner touching its neighbour only along a short edge
    layout = {"vertices": square(0, 0), "sigma": [2], "r0": 0.9,
            "subdomains": [[[0.05, 0], [1, 0], [1, 1], [0, 1], [0, 0.05], [0.05, 0.05]],
                           [[0, 0], [0.05, 0], [0.05, 0.05], [0, 0.05]]]}
    p = G.build_partition(layout, strict=False)
    with pytest.raises(G.NoChainError):
        G.find_chain(p, 2)


def test_triangulate_unit_square():
    m = G.triangulate(G.unit_square(), 0.5)
    assert m.n_triangles >= 8
    assert m.min_angle_deg >= 20.0 - 1e-9


def test_triangulate_conforms_to_interface(two_layer_mesh):
    y = two_layer_mesh.vertices[two_layer_mesh.triangles][..., 1]
    above = np.all(y >= 0.5 - 1e-12, axis=1)
    below = np.all(y <= 0.5 + 1e-12, axis=1)
    assert np.all(above | below)
    assert np.all((two_layer_mesh.triangle_subdomain == 1) == above)


def test_coarse_target_rejected():
    p = G.unit_square(r0=0.1, strict=False)
    with pytest.raises(G.MeshError):
        G.triangulate(p, 10.0)


def test_refinement_nesting(two_layer):
    hs = [G.triangulate(two_layer, h).h_max for h in (0.2, 0.1, 0.05)]
    assert hs[0] >= hs[1] >= hs[2]


def test_probe_points_rule():
    portion = G.InterfacePortion(2, np.array([[-0.4, 0.0], [0.4, 0.0]]), np.zeros(2), 2, 1, np.array([0.0, 1.0]))
    assert np.allclose(G.probe_points(portion, 0.8, 1)[0][0], [0, 0])
    xs = [q[0] for q, _ in G.probe_points(portion, 0.8, 3)]
    assert np.allclose(xs, [-0.1, 0.0, 0.1])
    with pytest.raises(ValueError):
        G.probe_points(portion, 0.8, 0)


def test_uniform_refinement_keeps_coarse_nodes(two_layer_mesh, two_layer):
    fine = G.refine_uniform(two_layer_mesh, two_layer)
    assert fine.n_triangles == 4 * two_layer_mesh.n_triangles
    assert np.array_equal(fine.vertices[: two_layer_mesh.n_nodes], two_layer_mesh.vertices)


def test_mirror_mesh_is_symmetric(two_layer):
    m = G.mirror_triangulate(two_layer, 0.1, 0.5)
    pts = {tuple(np.round(v, 12)) for v in m.vertices}
    assert all((round(1.0 - x, 12) + 0.0, y) in pts for x, y in pts)


def test_partition_round_trip(tmp_path, two_layer):
    G.save_partition(two_layer, tmp_path / "p.yaml")
    q = G.load_partition(tmp_path / "p.yaml")
    assert q.N == two_layer.N
    for a, b in itertools.zip_longest(q.subdomains, two_layer.subdomains):
        assert np.allclose(a, b)


@pytest.mark.parametrize("n_layers", [1, 2, 3, 4])
def test_layered_partition_invariants(n_layers):
    p = G.layered_box(n_layers)
    assert p.area <= p.N * p.r0 ** 2 + 1e-12
    for portion in p.flat_portions:
        assert portion.length >= 2 * p.r0 / 3 - 1e-12
        # the normal points from the inside subdomain to the outside one
        eps = 1e-3
        assert p.subdomain_of(portion.center_Pk - eps * portion.normal) == portion.inside_domain
        beyond = p.subdomain_of(portion.center_Pk + eps * portion.normal)
        assert beyond == portion.outside_domain or (portion.outside_domain == 0 and beyond <= 0)


def test_augmented_domain():
    p = G.two_layer()
    aug, d0 = G.augment(p)
    assert d0 == 3 and aug.N == 3
    assert aug.area == pytest.approx(p.area + aug.polygons[2].area)
    assert aug.polygons[2].bounds[1] == pytest.approx(1.0)
    m = G.triangulate(aug, 0.08)
    sub, nodes = G.restrict_mesh(m, [1, 2], p)
    assert sub.n_triangles == int(m.subdomain_triangles([1, 2]).sum())
    assert np.allclose(sub.vertices, m.vertices[nodes])


def test_mesh_export(tmp_path, two_layer_mesh):
    vpath, tpath = G.save_mesh(two_layer_mesh, tmp_path / "mesh")
    verts = np.loadtxt(vpath, skiprows=1)
    tris = np.loadtxt(tpath, skiprows=1, dtype=int)
    assert np.array_equal(verts, two_layer_mesh.vertices)
    assert np.array_equal(tris[:, :3], two_layer_mesh.triangles)
