import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from elastowave.material import (ALUMINIUM, IRON, NICKEL, URANIUM, CubicCrystal, IsotropicMaterial,
                                 MaterialError, acoustic_tensor, build_framed, build_layered,
                                 build_voronoi_polycrystal, check_symmetries, cubic_stiffness,
                                 equivalent_diameters, from_voigt, get_material, grains_for_diameter,
                                 homogeneous, is_positive_definite, isotropic_stiffness, max_wave_speed,
                                 rotate_stiffness, to_mandel, to_voigt)

GPa = 1e9


# -- catalogue: tabulated values ----------------------------------------------

@pytest.mark.parametrize("mat,c0", [(ALUMINIUM, 5102.6), (IRON, 5189.4), (URANIUM, 3012.7)])
def test_bar_speed_matches_table(mat, c0):
    # [PAPER] thin-bar speeds from the material table
    assert math.sqrt(mat.E / mat.rho) == pytest.approx(c0, rel=2e-5)


def test_catalogue_lookup():
    assert get_material("Al") is ALUMINIUM
    with pytest.raises(MaterialError):
        get_material("unobtainium")


def test_nickel_zener_ratio():
    # [DERIVED] 2*114/(249-155)
    assert NICKEL.zener_ratio == pytest.approx(2 * 114 / 94, rel=1e-12)
    assert NICKEL.zener_ratio == pytest.approx(2.4255, abs=1e-4)


def test_inconsistent_isotropic_rejected():
    with pytest.raises(MaterialError):
        IsotropicMaterial("bad", 100 * GPa, 1000.0, 58.2 * GPa, 26.1 * GPa, 0.3)
    with pytest.raises(MaterialError):
        IsotropicMaterial("bad", 70 * GPa, 1000.0, 58.2 * GPa, -1.0, 0.3)


def test_cubic_not_positive_definite_rejected():
    with pytest.raises(MaterialError):
        CubicCrystal("bad", 100 * GPa, 150 * GPa, 50 * GPa, 1000.0)


# -- tensor algebra -------------------------------------------------------------

def test_isotropic_voigt_entries():
    c = to_voigt(isotropic_stiffness(2.0, 3.0))
    assert c[0, 0] == 8.0 and c[0, 1] == 2.0 and c[3, 3] == 3.0
    assert np.allclose(from_voigt(c), isotropic_stiffness(2.0, 3.0))


def test_cubic_voigt_entries():
    v = to_voigt(cubic_stiffness(NICKEL))
    assert v[0, 0] == NICKEL.C11 and v[0, 1] == NICKEL.C12 and v[5, 5] == NICKEL.C44


def test_mandel_quadratic_form():
    # eps : C : eps equals the Mandel quadratic form
    rng = np.random.default_rng(0)
    e = rng.normal(size=(3, 3)); e = e + e.T
    c = cubic_stiffness(NICKEL)
    w = np.array([e[0, 0], e[1, 1], e[2, 2], *(math.sqrt(2) * e[i, j] for i, j in ((1, 2), (0, 2), (0, 1)))])
    assert w @ to_mandel(c) @ w == pytest.approx(np.einsum("ij,ijkl,kl", e, c, e), rel=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_rotation_preserves_symmetry_and_definiteness(seed):
    r = Rotation.random(random_state=seed).as_matrix()
    c = rotate_stiffness(cubic_stiffness(NICKEL), r)
    check_symmetries(c, rtol=1e-10)
    assert is_positive_definite(c)


@given(st.integers(0, 2**31 - 1))
def test_isotropic_rotation_invariant(seed):
    r = Rotation.random(random_state=seed).as_matrix()
    c = ALUMINIUM.stiffness()
    assert np.allclose(rotate_stiffness(c, r), c, rtol=0, atol=1e-6 * c.max())


def test_rotation_rejects_improper():
    with pytest.raises(MaterialError):
        rotate_stiffness(ALUMINIUM.stiffness(), -np.eye(3))


def test_isotropic_acoustic_eigenvalues():
    # [TRIVIAL] (lam+2mu), mu, mu along an axis
    ev = np.sort(np.linalg.eigvalsh(acoustic_tensor(ALUMINIUM.stiffness(), np.array([0, 0, 1.0]))))
    assert np.allclose(ev, [ALUMINIUM.mu, ALUMINIUM.mu, ALUMINIUM.lam + 2 * ALUMINIUM.mu])


def test_max_wave_speed_isotropic():
    cL = math.sqrt((ALUMINIUM.lam + 2 * ALUMINIUM.mu) / ALUMINIUM.rho)
    assert max_wave_speed(ALUMINIUM.stiffness(), ALUMINIUM.rho) == pytest.approx(cL, rel=1e-9)
    assert cL == pytest.approx(6394, abs=1)


def test_nickel_fastest_along_111():
    # [DERIVED] cubic with Zener > 1: quasi-longitudinal speed peaks along <111>
    c = cubic_stiffness(NICKEL)
    n = np.ones(3) / math.sqrt(3)
    v111 = math.sqrt(np.linalg.eigvalsh(acoustic_tensor(c, n)).max() / NICKEL.rho)
    assert max_wave_speed(c, NICKEL.rho) == pytest.approx(v111, rel=1e-3)


# -- microstructures -------------------------------------------------------------

def test_homogeneous_bar():
    m = homogeneous((8,), (2.0,), ALUMINIUM)
    assert m.ncomp == 1 and m.is_homogeneous and m.voxel_volume == 0.25
    assert np.allclose(m.axis_centers(0), 0.125 + 0.25 * np.arange(8))


def test_layered_fractions():
    # [DERIVED] 0.3 / 0.3 / 0.4 of the bar
    m = build_layered((2000,), (2.0,), [((0, 0.6), 0), ((0.6, 1.2), 1), ((1.2, 2.0), 0)], [ALUMINIUM, IRON])
    assert np.allclose(m.phase_fractions(), [0.7, 0.3])
    assert m.phase[599] == 0 and m.phase[600] == 1 and m.phase[1199] == 1 and m.phase[1200] == 0


def test_layered_must_cover():
    with pytest.raises(MaterialError):
        build_layered((10,), (1.0,), [((0, 0.5), 0)], [ALUMINIUM])


def test_framed_box():
    m = build_framed((1, 10, 10), (0.1, 1.0, 1.0), (0.1, 0.4, 0.4), ALUMINIUM, IRON)
    assert m.phase[0, 5, 5] == 0 and m.phase[0, 0, 0] == 1
    assert (m.phase == 0).sum() == 16


def test_voronoi_polycrystal_deterministic():
    a = build_voronoi_polycrystal((8, 8, 16), (1, 1, 2), 6, seed=3)
    b = build_voronoi_polycrystal((8, 8, 16), (1, 1, 2), 6, seed=3)
    assert np.array_equal(a.phase, b.phase) and np.array_equal(a.stiffness, b.stiffness)
    a.validate()
    assert a.stiffness.shape == (6, 3, 3, 3, 3)


def test_grain_count_from_diameter():
    n = grains_for_diameter((0.35e-3, 0.35e-3, 5.67e-3), 100e-6)
    vol = 0.35e-3 ** 2 * 5.67e-3
    assert n == round(vol / (math.pi / 6 * 1e-12))
    m = build_voronoi_polycrystal((17, 17, 279), (0.17e-3, 0.17e-3, 2.79e-3), grains_for_diameter(
        (0.17e-3, 0.17e-3, 2.79e-3), 100e-6), seed=1)
    # equal-volume diameters average near the target
    assert 60e-6 < equivalent_diameters(m).mean() < 140e-6


def test_random_texture_is_nearly_isotropic():
    m = build_voronoi_polycrystal((12, 12, 12), (1, 1, 1), 300, seed=2)
    cbar = to_voigt(m.mean_stiffness())
    # cubic symmetry of the average broken only by sampling noise
    assert abs(cbar[0, 0] - cbar[2, 2]) / cbar[0, 0] < 0.05


def test_validate_rejects_bad_phase():
    m = homogeneous((4,), (1.0,), ALUMINIUM)
    with pytest.raises(MaterialError):
        type(m)(m.dims, m.lengths, np.array([0, 0, 1, 0], np.int32), m.stiffness, m.rho, m.names).validate()
