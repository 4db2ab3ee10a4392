import math

import numpy as np
import pytest

from plcond import survey as SV


def test_geometric_factor_examples():
    # Wenner-like spacing a: log(2a * 2a / (a * a)) = log 4
    arr = SV.square(0.0, 1.0)
    assert arr.geometric_factor == pytest.approx(math.pi / math.log(4.0))
    with pytest.raises(ValueError):
        SV.geometric_factor(0.0, 1.0, 0.0, 2.0)
    with pytest.raises(ValueError):
        SV.ElectrodeArray("square", 0.0, 3.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        SV.schlumberger(0.0, 1.0, 2.0)


def test_array_layouts():
    dd = SV.dipole_dipole(0.0, 1.0, 2)
    assert (dd.b, dd.a, dd.m, dd.n) == (0.0, 1.0, 3.0, 4.0)
    s = SV.schlumberger(1.0, 3.0, 0.5)
    assert s.midpoint == 1.0 and s.spacing == 3.0
    r = s.reciprocal()
    assert (r.a, r.b, r.m, r.n) == (s.m, s.n, s.a, s.b)
    assert s.mirrored(1.0).geometric_factor == pytest.approx(s.geometric_factor)


def test_oracle_homogeneous_limit():
    arr = SV.schlumberger(0.0, 2.0, 0.5)
    assert SV.two_layer_apparent_resistivity(arr, 7.0, 7.0, 1.0) == pytest.approx(7.0, rel=1e-12)


def test_oracle_two_layer_limits():
    # short spread sees the top layer, long spread approaches the bottom
    short = SV.two_layer_apparent_resistivity(SV.schlumberger(0, 0.05, 0.01), 10.0, 100.0, 1.0)
    long_ = SV.two_layer_apparent_resistivity(SV.schlumberger(0, 500.0, 1.0), 10.0, 100.0, 1.0)
    assert short == pytest.approx(10.0, rel=0.01)
    assert 50.0 < long_ < 100.0


@pytest.fixture(scope="module")
def homogeneous():
    arrays = [SV.schlumberger(0.0, s, 0.25) for s in (1.0, 2.0, 3.0)]
    model = SV.HalfSpaceModel.homogeneous(20.0)
    part, mesh, system = SV.build_survey(model, arrays, h_fine=0.05)
    return arrays, system


def test_homogeneous_apparent_resistivity(homogeneous):
    arrays, system = homogeneous
    for snd in SV.simulate_soundings(system, arrays):
        assert snd.apparent_resistivity == pytest.approx(20.0, rel=0.03)


def test_reciprocity(homogeneous):
    arrays, system = homogeneous
    for arr in arrays:
        v, _ = SV.simulate_sounding(system, arr)
        w, _ = SV.simulate_sounding(system, arr.reciprocal())
        assert w == pytest.approx(v, rel=1e-8)


def test_linearity_in_current(homogeneous):
    arrays, system = homogeneous
    arr = arrays[0]
    v1, r1 = SV.simulate_sounding(system, arr)
    scaled = SV.ElectrodeArray(arr.kind, arr.a, arr.b, arr.m, arr.n, 2.5, arr.spacing, arr.midpoint)
    v2, r2 = SV.simulate_sounding(system, scaled)
    assert v2 == pytest.approx(2.5 * v1, rel=1e-12)
    assert r2 == pytest.approx(r1, rel=1e-12)
    zero = SV.ElectrodeArray(arr.kind, arr.a, arr.b, arr.m, arr.n, 0.0)
    assert SV.simulate_sounding(system, zero)[0] == 0.0


def test_electrode_off_surface(homogeneous):
    _, system = homogeneous
    with pytest.raises(SV.ElectrodeOffSigmaError):
        SV.electrode_nodes(system.mesh, [0.0123456])


def test_two_layer_against_oracle():
    rho1, rho2, t = 10.0, 100.0, 1.0
    arrays = [SV.schlumberger(0.0, s, 0.25) for s in (0.5, 2.0, 6.0)]
    model = SV.HalfSpaceModel.layered([t], [rho1, rho2])
    _, _, system = SV.build_survey(model, arrays, h_fine=0.05)
    got = [s.apparent_resistivity for s in SV.simulate_soundings(system, arrays)]
    want = [SV.two_layer_apparent_resistivity(a, rho1, rho2, t) for a in arrays]
    assert np.allclose(got, want, rtol=0.05)
    assert np.all(np.diff(got) > 0)


def test_mirror_symmetric_pseudo_section():
    model = SV.HalfSpaceModel([1.0], [[10.0, 50.0, 10.0], [30.0]], [[-1.0, 1.0], []])
    assert model.is_mirror_symmetric()
    arrays = [SV.dipole_dipole(s, 0.5, n) for s in (-2.5, -1.0) for n in (1, 2)]
    arrays += [a.mirrored() for a in arrays]
    _, _, system = SV.build_survey(model, arrays, h_fine=0.1, mirror=True)
    rho = [s.apparent_resistivity for s in SV.simulate_soundings(system, arrays)]
    half = len(rho) // 2
    assert np.allclose(rho[:half], rho[half:], rtol=1e-6)
    cols, table = SV.pseudo_section(system, arrays)
    assert cols[:3] == ["midpoint", "spacing", "rho_a"]
    assert np.all(np.diff(table[:, 1]) >= 0)


def test_model_validation():
    with pytest.raises(ValueError):
        SV.HalfSpaceModel([1.0], [[1.0]])
    with pytest.raises(ValueError):
        SV.HalfSpaceModel.layered([1.0], [1.0, -2.0])


def test_reciprocity_all_kinds():
    arrays = [SV.schlumberger(0.0, 2.0, 0.5), SV.dipole_dipole(-2.0, 1.0, 2), SV.pole_pole(-1.0, 1.0, -8.0, 8.0),
              SV.square(-1.5, 1.0)]
    model = SV.HalfSpaceModel([1.0], [[10.0, 40.0], [100.0]], [[0.5], []])
    _, _, system = SV.build_survey(model, arrays, h_fine=0.1)
    for arr in arrays:
        v, _ = SV.simulate_sounding(system, arr)
        w, _ = SV.simulate_sounding(system, arr.reciprocal())
        assert w == pytest.approx(v, rel=1e-8)


def test_homogeneous_pseudo_section_constant():
    arrays = [SV.dipole_dipole(s, 0.5, n) for s in (-1.5, -0.5, 0.5) for n in (1, 2, 3)]
    _, _, system = SV.build_survey(SV.HalfSpaceModel.homogeneous(5.0), arrays, h_fine=0.05)
    _, table = SV.pseudo_section(system, arrays)
    assert np.allclose(table[:, 2], 5.0, rtol=0.03)
