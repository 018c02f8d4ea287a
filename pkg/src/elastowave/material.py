"""Material catalogue, stiffness-tensor algebra and voxel microstructures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

_EYE = np.eye(3)
_SQ2 = math.sqrt(2.0)
# Mandel ordering (11, 22, 33, 23, 13, 12)
MANDEL_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
MANDEL_WEIGHTS = np.array([1.0, 1.0, 1.0, _SQ2, _SQ2, _SQ2])


class MaterialError(ValueError):
    """Raised for inadmissible material data or microstructure definitions."""


@dataclass(frozen=True)
class IsotropicMaterial:
    """Isotropic linear elastic material.

    Catalogue entries keep the tabulated values as published, which are
    rounded to about three digits; ``consistency_rtol`` therefore defaults to
    5e-3. Materials built with :meth:`from_lame` or :meth:`from_young` are
    exactly consistent.
    """

    name: str
    E: float
    rho: float
    lam: float
    mu: float
    nu: float
    consistency_rtol: float = field(default=5e-3, repr=False, compare=False)

    def __post_init__(self):
        if not (self.E > 0 and self.rho > 0 and self.mu > 0):
            raise MaterialError(f"{self.name}: E, rho and mu must be positive")
        if not -1.0 < self.nu < 0.5:
            raise MaterialError(f"{self.name}: Poisson ratio {self.nu} outside (-1, 0.5)")
        if 3 * self.lam + 2 * self.mu <= 0:
            raise MaterialError(f"{self.name}: bulk modulus must be positive")
        E_lame = self.mu * (3 * self.lam + 2 * self.mu) / (self.lam + self.mu)
        if abs(E_lame - self.E) > self.consistency_rtol * self.E:
            raise MaterialError(
                f"{self.name}: E={self.E:.6g} inconsistent with Lame constants (E={E_lame:.6g})"
            )

    @classmethod
    def from_lame(cls, name: str, lam: float, mu: float, rho: float) -> "IsotropicMaterial":
        E = mu * (3 * lam + 2 * mu) / (lam + mu)
        nu = lam / (2 * (lam + mu))
        return cls(name, E, rho, lam, mu, nu, consistency_rtol=1e-6)

    @classmethod
    def from_young(cls, name: str, E: float, nu: float, rho: float) -> "IsotropicMaterial":
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        return cls(name, E, rho, lam, mu, nu, consistency_rtol=1e-6)

    def stiffness(self) -> np.ndarray:
        return isotropic_stiffness(self.lam, self.mu)


@dataclass(frozen=True)
class CubicCrystal:
    name: str
    C11: float
    C12: float
    C44: float
    rho: float

    def __post_init__(self):
        if not (self.C11 > abs(self.C12) and self.C44 > 0 and self.C11 + 2 * self.C12 > 0):
            raise MaterialError(f"{self.name}: cubic constants are not positive definite")
        if self.rho <= 0:
            raise MaterialError(f"{self.name}: density must be positive")

    @property
    def zener_ratio(self) -> float:
        return 2 * self.C44 / (self.C11 - self.C12)

    def stiffness(self) -> np.ndarray:
        return cubic_stiffness(self)


GPa = 1e9

ALUMINIUM = IsotropicMaterial("Al", 70.3 * GPa, 2700.0, 58.2 * GPa, 26.1 * GPa, 0.345)
IRON = IsotropicMaterial("Fe", 211.4 * GPa, 7850.0, 115.7 * GPa, 81.6 * GPa, 0.293)
URANIUM = IsotropicMaterial("U", 172.0 * GPa, 18950.0, 99.2 * GPa, 66.1 * GPa, 0.3)
NICKEL = CubicCrystal("Ni", 249 * GPa, 155 * GPa, 114 * GPa, 8908.0)
# isotropic equivalent of a random Ni polycrystal
NICKEL_POLY = IsotropicMaterial.from_young("Ni-poly", 198 * GPa, 0.306, 8908.0)

CATALOGUE: dict[str, IsotropicMaterial | CubicCrystal] = {
    m.name: m for m in (ALUMINIUM, IRON, URANIUM, NICKEL, NICKEL_POLY)
}


def get_material(name: str) -> IsotropicMaterial | CubicCrystal:
    try:
        return CATALOGUE[name]
    except KeyError:
        raise MaterialError(f"unknown material {name!r}; known: {sorted(CATALOGUE)}") from None


# --------------------------------------------------------------------------
# rank-4 tensor algebra
# --------------------------------------------------------------------------

def isotropic_stiffness(lam: float, mu: float) -> np.ndarray:
    """Hooke tensor ``C_ijkl = lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk)``."""
    if mu <= 0 or 3 * lam + 2 * mu <= 0:
        raise MaterialError("isotropic stiffness requires mu > 0 and 3 lam + 2 mu > 0")
    d = _EYE
    return (lam * np.einsum("ij,kl->ijkl", d, d)
            + mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)))


def cubic_stiffness(c: CubicCrystal) -> np.ndarray:
    """Stiffness of a cubic crystal expressed in its crystal frame."""
    voigt = np.zeros((6, 6))
    voigt[:3, :3] = c.C12
    voigt[np.arange(3), np.arange(3)] = c.C11
    voigt[np.arange(3, 6), np.arange(3, 6)] = c.C44
    return from_voigt(voigt)


def rotate_stiffness(c: np.ndarray, r: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """Return ``C'_ijkl = r_ia r_jb r_kc r_ld C_abcd``."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.allclose(r @ r.T, _EYE, atol=atol) or abs(np.linalg.det(r) - 1) > atol:
        raise MaterialError("rotation must be a proper orthogonal 3x3 matrix")
    return np.einsum("ia,jb,kc,ld,abcd->ijkl", r, r, r, r, c, optimize=True)


def to_voigt(c: np.ndarray) -> np.ndarray:
    out = np.empty((6, 6))
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        for b, (k, l) in enumerate(MANDEL_PAIRS):
            out[a, b] = c[i, j, k, l]
    return out


def from_voigt(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (6, 6) or not np.allclose(v, v.T, rtol=0, atol=1e-12 * np.abs(v).max()):
        raise MaterialError("Voigt stiffness must be a symmetric 6x6 matrix")
    v = 0.5 * (v + v.T)
    c = np.empty((3, 3, 3, 3))
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        for b, (k, l) in enumerate(MANDEL_PAIRS):
            val = v[a, b]
            c[i, j, k, l] = c[j, i, k, l] = c[i, j, l, k] = c[j, i, l, k] = val
    return c


def to_mandel(c: np.ndarray) -> np.ndarray:
    """Orthonormal 6x6 representation; ``sigma_m = C_m @ eps_m`` holds exactly."""
    return to_voigt(c) * np.outer(MANDEL_WEIGHTS, MANDEL_WEIGHTS)


def check_symmetries(c: np.ndarray, rtol: float = 1e-12) -> None:
    scale = np.abs(c).max()
    for perm in ("jikl", "ijlk", "klij"):
        if not np.allclose(c, np.einsum(f"ijkl->{perm}", c), rtol=0, atol=rtol * scale):
            raise MaterialError(f"stiffness tensor violates symmetry ijkl->{perm}")


def is_positive_definite(c: np.ndarray) -> bool:
    return bool(np.linalg.eigvalsh(to_mandel(c)).min() > 0)


def acoustic_tensor(c: np.ndarray, n: np.ndarray) -> np.ndarray:
    """``K_ik = C_ijkl n_j n_l`` for a single direction or wave vector."""
    return np.einsum("ijkl,j,l->ik", c, n, n)


def max_wave_speed(c: np.ndarray, rho: float, n_dirs: int = 400) -> float:
    """Largest phase speed over propagation directions (exact for isotropy)."""
    # axes, face and body diagonals plus a Fibonacci sphere
    dirs = [np.eye(3)[i] for i in range(3)]
    dirs += [np.array(v, float) / np.linalg.norm(v) for v in
             ((1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1), (1, -1, 1), (-1, 1, 1), (1, 1, -1))]
    k = np.arange(n_dirs) + 0.5
    phi = np.arccos(1 - 2 * k / n_dirs)
    theta = math.pi * (1 + 5 ** 0.5) * k
    fib = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    all_dirs = np.vstack([np.array(dirs), fib])
    K = np.einsum("ijkl,nj,nl->nik", c, all_dirs, all_dirs)
    return float(np.sqrt(np.linalg.eigvalsh(K).max() / rho))


# --------------------------------------------------------------------------
# microstructures
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Microstructure:
    """Voxelized periodic medium.

    ``dims`` has one entry (bar, scalar Young modulus per phase) or three
    entries (full rank-4 stiffness per phase). ``phase`` holds a phase index
    per voxel; ``stiffness[p]`` and ``rho[p]`` define phase ``p``.
    ``orientation[p]``, when present, is the rotation applied to phase ``p``.
    """

    dims: tuple[int, ...]
    lengths: tuple[float, ...]
    phase: np.ndarray
    stiffness: np.ndarray
    rho: np.ndarray
    names: tuple[str, ...] = ()
    orientation: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        phase = np.ascontiguousarray(self.phase, dtype=np.int32)
        stiffness = np.asarray(self.stiffness, dtype=float)
        rho = np.asarray(self.rho, dtype=float).reshape(-1)
        for arr in (phase, stiffness, rho):
            arr.setflags(write=False)
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "stiffness", stiffness)
        object.__setattr__(self, "rho", rho)
        self.validate()

    # -- geometry ---------------------------------------------------------
    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def ncomp(self) -> int:
        """Displacement components per voxel (1 for a bar, 3 otherwise)."""
        return 1 if self.ndim == 1 else 3

    @property
    def n_phases(self) -> int:
        return len(self.rho)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.dims))

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.lengths[axis] / self.dims[axis]
        return h * (0.5 + np.arange(self.dims[axis]))

    def voxel_center(self, index: Sequence[int]) -> np.ndarray:
        return np.array([h * (0.5 + i) for h, i in zip(self.spacing, index)])

    # -- properties -------------------------------------------------------
    @property
    def is_homogeneous(self) -> bool:
        present = np.unique(self.phase)
        if len(present) == 1:
            return True
        s = self.stiffness[present]
        r = self.rho[present]
        return bool(np.all(s == s[0]) and np.all(r == r[0]))

    def density_field(self) -> np.ndarray:
        return self.rho[self.phase]

    def phase_fractions(self) -> np.ndarray:
        counts = np.bincount(self.phase.ravel(), minlength=self.n_phases)
        return counts / self.phase.size

    def mean_density(self) -> float:
        return float(self.phase_fractions() @ self.rho)

    def mean_stiffness(self) -> np.ndarray:
        """Volume average of the phase stiffness (scalar modulus in 1D)."""
        return np.tensordot(self.phase_fractions(), self.stiffness, axes=1)

    def validate(self) -> None:
        """Check every type invariant over all voxels."""
        if len(self.dims) not in (1, 3) or len(self.lengths) != len(self.dims):
            raise MaterialError("dims/lengths must both have 1 or 3 entries")
        if any(n < 1 for n in self.dims) or any(L <= 0 for L in self.lengths):
            raise MaterialError("voxel counts must be >= 1 and lengths > 0")
        if self.phase.shape != self.dims:
            raise MaterialError(f"phase map shape {self.phase.shape} != dims {self.dims}")
        n = len(self.rho)
        if self.phase.min() < 0 or self.phase.max() >= n:
            raise MaterialError("phase index without stiffness/density definition")
        if np.any(self.rho <= 0):
            raise MaterialError("densities must be positive")
        if self.ndim == 1:
            if self.stiffness.shape != (n,) or np.any(self.stiffness <= 0):
                raise MaterialError("1D microstructure needs one positive modulus per phase")
        else:
            if self.stiffness.shape != (n, 3, 3, 3, 3):
                raise MaterialError("3D microstructure needs a 3x3x3x3 stiffness per phase")
            for c in self.stiffness:
                check_symmetries(c, rtol=1e-10)
                if not is_positive_definite(c):
                    raise MaterialError("phase stiffness is not positive definite")
        if self.orientation is not None and np.shape(self.orientation) != (n, 3, 3):
            raise MaterialError("orientation must hold one rotation per phase")


def phase_tables(materials: Sequence[IsotropicMaterial | CubicCrystal], ndim: int):
    """Per-phase stiffness and density arrays for the given dimensionality."""
    rho = np.array([m.rho for m in materials])
    if ndim == 1:
        if not all(isinstance(m, IsotropicMaterial) for m in materials):
            raise MaterialError("1D bars need isotropic materials (Young modulus)")
        return np.array([m.E for m in materials]), rho
    return np.array([m.stiffness() for m in materials]), rho


def _check_dims(dims, lengths):
    dims = tuple(int(n) for n in dims)
    lengths = tuple(float(x) for x in lengths)
    if len(dims) != len(lengths) or len(dims) not in (1, 3):
        raise MaterialError("dims and lengths must both have 1 or 3 entries")
    return dims, lengths


def homogeneous(dims, lengths, material) -> Microstructure:
    dims, lengths = _check_dims(dims, lengths)
    stiff, rho = phase_tables([material], len(dims))
    return Microstructure(dims, lengths, np.zeros(dims, np.int32), stiff, rho, (material.name,))


def build_layered(dims, lengths, layers, materials, axis: int = -1) -> Microstructure:
    """Layered medium along ``axis``.

    ``layers`` is a list of ``((start, end), phase)`` in metres that must
    partition ``[0, L]``; voxels are assigned by their center using
    half-open intervals ``[start, end)``.
    """
    dims, lengths = _check_dims(dims, lengths)
    axis = axis % len(dims)
    L = lengths[axis]
    layers = sorted(((float(a), float(b)), int(p)) for (a, b), p in layers)
    tol = 1e-9 * L
    if not layers or abs(layers[0][0][0]) > tol or abs(layers[-1][0][1] - L) > tol:
        raise MaterialError("layers must cover the whole axis [0, L]")
    for ((a0, b0), _), ((a1, _b1), _) in zip(layers, layers[1:]):
        if abs(b0 - a1) > tol:
            raise MaterialError("layers overlap or leave gaps")
    for (a, b), p in layers:
        if b <= a:
            raise MaterialError("empty layer interval")
        if not 0 <= p < len(materials):
            raise MaterialError(f"layer phase {p} has no material")
    h = L / dims[axis]
    centers = h * (0.5 + np.arange(dims[axis]))
    line = np.full(dims[axis], -1, np.int32)
    for (a, b), p in layers:
        line[(centers >= a) & (centers < b)] = p
    shape = [1] * len(dims)
    shape[axis] = dims[axis]
    phase = np.broadcast_to(line.reshape(shape), dims).copy()
    stiff, rho = phase_tables(materials, len(dims))
    return Microstructure(dims, lengths, phase, stiff, rho, tuple(m.name for m in materials))


def build_framed(dims, lengths, inner_extent, inner, outer) -> Microstructure:
    """Centered box of ``inner`` material surrounded by an ``outer`` frame."""
    dims, lengths = _check_dims(dims, lengths)
    if len(inner_extent) != len(dims):
        raise MaterialError("inner_extent needs one entry per axis")
    mask = np.ones(dims, bool)
    for ax, (e, L, n) in enumerate(zip(inner_extent, lengths, dims)):
        if e <= 0 or e > L * (1 + 1e-12):
            raise MaterialError(f"inner extent {e} not inside domain length {L} on axis {ax}")
        c = (L / n) * (0.5 + np.arange(n))
        inside = (c >= 0.5 * (L - e)) & (c < 0.5 * (L + e))
        shape = [1] * len(dims)
        shape[ax] = n
        mask &= inside.reshape(shape)
    phase = np.where(mask, 0, 1).astype(np.int32)
    stiff, rho = phase_tables([inner, outer], len(dims))
    return Microstructure(dims, lengths, phase, stiff, rho, (inner.name, outer.name))


def grains_for_diameter(lengths, mean_diameter: float) -> int:
    """Grain count whose equal-volume spheres have the given diameter."""
    vol = float(np.prod(lengths))
    return max(1, int(round(vol / (math.pi / 6 * mean_diameter ** 3))))


def build_voronoi_polycrystal(dims, lengths, n_grains: int, seed: int,
                              crystal: CubicCrystal = NICKEL) -> Microstructure:
    """Periodic Voronoi polycrystal with uniformly random grain orientations.

    One phase per grain; phase ``g`` carries the crystal stiffness rotated by
    ``orientation[g]``.
    """
    dims, lengths = _check_dims(dims, lengths)
    if len(dims) != 3:
        raise MaterialError("polycrystals are three-dimensional")
    if n_grains < 1:
        raise MaterialError("n_grains must be >= 1")
    rng = np.random.default_rng(seed)
    box = np.array(lengths)
    seeds = rng.random((n_grains, 3)) * box
    rotations = Rotation.random(n_grains, random_state=rng).as_matrix()
    axes = [(L / n) * (0.5 + np.arange(n)) for L, n in zip(lengths, dims)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    # boxsize gives periodic distances; clip guards seeds at exactly L
    tree = cKDTree(np.minimum(seeds, box * (1 - 1e-15)), boxsize=box)
    _, owner = tree.query(pts)
    phase = owner.reshape(dims).astype(np.int32)
    base = cubic_stiffness(crystal)
    stiff = np.array([rotate_stiffness(base, r) for r in rotations])
    rho = np.full(n_grains, crystal.rho)
    names = tuple(f"{crystal.name}#{g}" for g in range(n_grains))
    return Microstructure(dims, lengths, phase, stiff, rho, names, orientation=rotations)


def equivalent_diameters(micro: Microstructure) -> np.ndarray:
    """Equal-volume sphere diameter of every non-empty grain."""
    counts = np.bincount(micro.phase.ravel(), minlength=micro.n_phases)
    counts = counts[counts > 0]
    return (6 * counts * micro.voxel_volume / math.pi) ** (1 / 3)
