import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from elastowave.greens import (GreensCache, GreensError, GreensMatrix, Manifold, assemble_greens,
                               content_key, load_greens, save_greens, scatter_forces, solve_forces)
from elastowave.material import ALUMINIUM, IRON, build_layered, build_voronoi_polycrystal, homogeneous
from elastowave.spectral import SpectralOperator, solve_pcg


def layered3d():
    return build_layered((3, 4, 10), (0.3, 0.4, 1.0), [((0, 0.3), 0), ((0.3, 0.6), 1), ((0.6, 1.0), 0)],
                         [ALUMINIUM, IRON], axis=2)


def columns_by_pcg(op, gamma):
    n = op.ncomp * gamma.n_points
    G = np.empty((n, n))
    for p, pt in enumerate(gamma.points):
        for j in range(op.ncomp):
            f = np.zeros((op.ncomp,) + op.micro.dims)
            f[(j,) + tuple(pt)] = 1.0
            u = op.inverse(solve_pcg(op, op.forward(f), tol=1e-12)[0])
            G[:, op.ncomp * p + j] = gamma.gather(u).reshape(-1)
    return G


# -- manifolds ----------------------------------------------------------------

def test_point_and_plane():
    assert Manifold.point((9,), (0,)).n_points == 1
    pl = Manifold.plane((2, 3, 5), 2, 4)
    assert pl.n_points == 6 and np.all(pl.points[:, 2] == 4)


def test_manifold_rejects_bad_points():
    with pytest.raises(GreensError):
        Manifold(np.array([[0, 0, 9]]), (2, 2, 2))
    with pytest.raises(GreensError):
        Manifold(np.array([[0], [0]]), (4,))


def test_disk_and_sphere():
    m = homogeneous((1, 21, 21), (0.01, 1.0, 1.0), ALUMINIUM)
    c = m.voxel_center((0, 10, 10))
    h = 1 / 21
    assert Manifold.disk(m, c, 1.01 * h, 0).n_points == 5
    # radius below one voxel falls back to the nearest voxel
    tiny = Manifold.disk(m, c, 1e-6, 0)
    assert tiny.n_points == 1 and tuple(tiny.points[0]) == (0, 10, 10)
    m3 = homogeneous((11, 11, 11), (1, 1, 1), ALUMINIUM)
    assert Manifold.sphere(m3, m3.voxel_center((5, 5, 5)), 1.01 / 11).n_points == 7


def test_gather_scatter_roundtrip():
    gam = Manifold.plane((2, 3, 4), 1, 1)
    F = np.random.default_rng(0).normal(size=(gam.n_points, 3))
    f = scatter_forces(gam, F)
    assert f.shape == (3, 2, 3, 4)
    assert np.array_equal(gam.gather(f), F)
    assert np.count_nonzero(f) == F.size


# -- assembly -----------------------------------------------------------------

def test_translation_path_matches_direct_columns():
    # [DERIVED] homogeneous G from periodic shifts equals brute-force PCG columns
    m = homogeneous((3, 4, 7), (0.3, 0.4, 0.7), ALUMINIUM)
    op = SpectralOperator(m, 0.25, 2e-5)
    gam = Manifold(np.array([[0, 0, 0], [1, 2, 3], [2, 3, 6]]), m.dims)
    gm = assemble_greens(op, gam, tol=1e-12)
    assert np.allclose(gm.G, columns_by_pcg(op, gam), rtol=1e-9, atol=1e-9 * np.abs(gm.G).max())


@pytest.mark.parametrize("workers", [1, 2])
def test_heterogeneous_matches_direct_columns(workers):
    op = SpectralOperator(layered3d(), 0.25, 2e-5)
    gam = Manifold.plane(op.micro.dims, 2, 0)
    gm = assemble_greens(op, gam, tol=1e-12, batch=4, workers=workers)
    assert np.allclose(gm.G, columns_by_pcg(op, gam), rtol=1e-8, atol=1e-8 * np.abs(gm.G).max())


@given(st.integers(0, 50))
def test_green_matrix_symmetric_positive(seed):
    m = build_voronoi_polycrystal((3, 3, 6), (1, 1, 2), 3, seed=seed)
    op = SpectralOperator(m, 0.25, 1e-4)
    gm = assemble_greens(op, Manifold.plane(m.dims, 2, seed % 6), tol=1e-12)
    G = gm.G
    assert np.allclose(G, G.T, rtol=0, atol=1e-8 * np.abs(G).max())
    assert np.linalg.eigvalsh(0.5 * (G + G.T)).min() > 0


def test_matrix_rebuilt_from_lu():
    op = SpectralOperator(layered3d(), 0.25, 2e-5)
    gm = assemble_greens(op, Manifold.plane(op.micro.dims, 2, 3), tol=1e-10)
    bare = GreensMatrix(gm.lu, gm.piv, gm.ncomp, gm.n_points)
    assert np.allclose(bare.matrix(), gm.G, rtol=1e-12, atol=1e-14 * np.abs(gm.G).max())


def test_forces_enforce_displacement():
    # beta dt^2 G F + u_b = U on the manifold
    op = SpectralOperator(layered3d(), 0.25, 2e-5)
    gam = Manifold.plane(op.micro.dims, 2, 2)
    gm = assemble_greens(op, gam, tol=1e-12)
    rng = np.random.default_rng(0)
    u_b = rng.normal(size=(3,) + op.micro.dims) * 1e-3
    target = np.broadcast_to([0, 0, 1e-3], (gam.n_points, 3))
    F = solve_forces(gm, target, gam.gather(u_b), op.beta, op.dt)
    u_f = op.inverse(solve_pcg(op, op.forward(scatter_forces(gam, F)), tol=1e-12)[0])
    u = u_b + op.scale * u_f
    assert np.abs(gam.gather(u) - target).max() < 1e-9 * 1e-3


def test_periodic_green_1d_converges():
    # [DERIVED] periodic Helmholtz Green function cosh(K(L/2-r)) / (2K sinh(KL/2));
    # the spectral column approaches it at rate ~ 2 K dx / pi^2
    L, K, beta = 1.0, 5.0, 0.25
    E, rho = ALUMINIUM.E, ALUMINIUM.rho
    dt = math.sqrt(rho / (beta * E)) / K
    for N in (33, 129, 513):
        m = homogeneous((N,), (L,), ALUMINIUM)
        op = SpectralOperator(m, beta, dt)
        c = N // 2
        gm = assemble_greens(op, Manifold(np.arange(N)[:, None], (N,)), tol=1e-13)
        col = gm.G[:, c]
        r = np.abs(m.axis_centers(0) - m.axis_centers(0)[c])
        ref = (L / N) / (beta * dt ** 2 * E) * np.cosh(K * (L / 2 - r)) / (2 * K * math.sinh(K * L / 2))
        dev = np.abs(col - ref).max() / ref.max()
        assert dev < 1.5 * 2 * K * (L / N) / math.pi ** 2


# -- persistence --------------------------------------------------------------

def test_save_load_roundtrip(tmp_path):
    op = SpectralOperator(layered3d(), 0.25, 2e-5)
    gam = Manifold.plane(op.micro.dims, 2, 0)
    gm = assemble_greens(op, gam, tol=1e-10)
    path = tmp_path / "g.bin"
    save_greens(gm, path)
    back = load_greens(path, expected_key=content_key(op, gam))
    assert np.array_equal(back.lu, gm.lu) and np.array_equal(back.piv, gm.piv)
    v = np.arange(gm.size, dtype=float)
    assert np.array_equal(back.solve(v), gm.solve(v))


def test_load_rejects_bad_files(tmp_path):
    op = SpectralOperator(layered3d(), 0.25, 2e-5)
    gam = Manifold.plane(op.micro.dims, 2, 0)
    gm = assemble_greens(op, gam, tol=1e-10)
    path = tmp_path / "g.bin"
    save_greens(gm, path)
    with pytest.raises(GreensError):
        load_greens(path, expected_key="0" * 64)
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(GreensError):
        load_greens(tmp_path / "short.bin")
    (tmp_path / "junk.bin").write_bytes(b"nope" + raw[4:])
    with pytest.raises(GreensError):
        load_greens(tmp_path / "junk.bin")


def test_content_key_sensitivity():
    m = layered3d()
    gam = Manifold.plane(m.dims, 2, 0)
    k1 = content_key(SpectralOperator(m, 0.25, 2e-5), gam)
    assert k1 == content_key(SpectralOperator(m, 0.25, 2e-5), gam)
    assert k1 != content_key(SpectralOperator(m, 0.25, 3e-5), gam)
    assert k1 != content_key(SpectralOperator(m, 0.25, 2e-5), Manifold.plane(m.dims, 2, 1))


def test_cache_reuse(tmp_path):
    m = layered3d()
    gam = Manifold.plane(m.dims, 2, 0)
    cache = GreensCache(tmp_path / "cache")
    gm1, loaded1 = cache.get_or_assemble(SpectralOperator(m, 0.25, 2e-5), gam, 1e-10)
    gm2, loaded2 = cache.get_or_assemble(SpectralOperator(m, 0.25, 2e-5), gam, 1e-10)
    assert not loaded1 and loaded2
    assert np.array_equal(gm1.lu, gm2.lu)
    _, loaded3 = cache.get_or_assemble(SpectralOperator(m, 0.25, 4e-5), gam, 1e-10)
    assert not loaded3
