"""Discrete Green influence matrix on the loaded manifold.

A prescribed displacement history on a set of voxels is enforced through
point force densities. ``G[(q, i), (p, j)]`` is the ``i`` displacement at
voxel ``q`` produced by a unit force density along ``j`` at voxel ``p``
(row/column index ``ncomp * point + component``).
"""

from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .material import Microstructure
from .spectral import SpectralOperator, solve_pcg

MAGIC = b"EWGM"
VERSION = 1


class GreensError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Manifold:
    """Ordered set of voxels carrying prescribed displacements."""

    points: np.ndarray
    dims: tuple[int, ...]
    description: str = ""

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.int64))
        if pts.size == 0:
            raise GreensError("manifold has no points")
        if pts.shape[1] != len(self.dims):
            raise GreensError("point indices do not match dimensionality")
        if np.any(pts < 0) or np.any(pts >= np.array(self.dims)):
            raise GreensError("manifold point index out of range")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise GreensError("duplicate manifold points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))

    @property
    def n_points(self) -> int:
        return len(self.points)

    def index(self) -> tuple[np.ndarray, ...]:
        """Fancy index into the spatial axes."""
        return tuple(self.points.T)

    def coordinates(self, micro: Microstructure) -> np.ndarray:
        h = np.array(micro.spacing)
        return h * (0.5 + self.points)

    def gather(self, field: np.ndarray) -> np.ndarray:
        """Values of a ``(ncomp, *dims)`` field at the points, shape ``(Np, ncomp)``."""
        return np.moveaxis(field[(slice(None),) + self.index()], 0, -1)

    # -- constructors ----------------------------------------------------
    @classmethod
    def point(cls, dims, index) -> "Manifold":
        return cls(np.array([index]), dims, f"point {tuple(index)}")

    @classmethod
    def plane(cls, dims, axis: int, index: int = 0) -> "Manifold":
        dims = tuple(dims)
        grids = [np.arange(n) for n in dims]
        grids[axis] = np.array([index])
        pts = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(dims))
        return cls(pts, dims, f"plane axis={axis} index={index}")

    @classmethod
    def disk(cls, micro: Microstructure, center, radius: float, normal_axis: int) -> "Manifold":
        """Voxels of the layer through ``center`` within ``radius`` in-plane."""
        c = np.asarray(center, float)
        x = _centers(micro)
        layer = int(np.floor(c[normal_axis] / micro.spacing[normal_axis]))
        mask = np.ones(micro.dims, bool)
        d2 = np.zeros(micro.dims)
        for a in range(3):
            if a == normal_axis:
                sel = np.zeros(micro.dims[a], bool)
                sel[min(layer, micro.dims[a] - 1)] = True
                shape = [1, 1, 1]
                shape[a] = -1
                mask &= sel.reshape(shape)
            else:
                d2 = d2 + (x[a] - c[a]) ** 2
        return cls(_nonempty(mask & (d2 <= radius ** 2), d2 + ~mask * 1e300),
                   micro.dims, f"disk r={radius} normal={normal_axis}")

    @classmethod
    def sphere(cls, micro: Microstructure, center, radius: float) -> "Manifold":
        c = np.asarray(center, float)
        x = _centers(micro)
        d2 = sum((x[a] - c[a]) ** 2 for a in range(micro.ndim))
        d2 = np.broadcast_to(d2, micro.dims)
        return cls(_nonempty(d2 <= radius ** 2, d2), micro.dims, f"ball r={radius}")


def _centers(micro: Microstructure) -> list[np.ndarray]:
    out = []
    for a in range(micro.ndim):
        shape = [1] * micro.ndim
        shape[a] = -1
        out.append(micro.axis_centers(a).reshape(shape))
    return out


def _nonempty(mask: np.ndarray, dist2: np.ndarray) -> np.ndarray:
    if not mask.any():
        mask = np.zeros_like(mask)
        mask[np.unravel_index(np.argmin(dist2), mask.shape)] = True
    return np.argwhere(mask)


@dataclass(eq=False)
class GreensMatrix:
    lu: np.ndarray
    piv: np.ndarray
    ncomp: int
    n_points: int
    key: str = ""
    G: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.ncomp * self.n_points

    def matrix(self) -> np.ndarray:
        """The assembled matrix, rebuilt from the LU factors if needed."""
        if self.G is not None:
            return self.G
        n = self.size
        L = np.tril(self.lu, -1) + np.eye(n)
        A = L @ np.triu(self.lu)
        for i in reversed(range(n)):
            j = self.piv[i]
            if j != i:
                A[[i, j]] = A[[j, i]]
        return A

    def solve(self, v: np.ndarray) -> np.ndarray:
        return sla.lu_solve((self.lu, self.piv), v)


def content_key(op: SpectralOperator, gamma: Manifold) -> str:
    m = op.micro
    h = hashlib.sha256()
    h.update(struct.pack("<q", m.ndim))
    h.update(np.asarray(m.dims, "<i8").tobytes())
    h.update(np.asarray(m.lengths, "<f8").tobytes())
    h.update(np.ascontiguousarray(m.phase, "<i4").tobytes())
    h.update(np.ascontiguousarray(m.stiffness, "<f8").tobytes())
    h.update(np.ascontiguousarray(m.rho, "<f8").tobytes())
    h.update(np.ascontiguousarray(gamma.points, "<i8").tobytes())
    h.update(struct.pack("<dd", op.beta, op.dt))
    return h.hexdigest()


def _unit_forces(op: SpectralOperator, pts: np.ndarray, comps: np.ndarray) -> np.ndarray:
    f = np.zeros((len(pts), op.ncomp) + op.micro.dims)
    for b, (p, j) in enumerate(zip(pts, comps)):
        f[(b, j) + tuple(p)] = 1.0
    return op.forward(f)


def assemble_greens(op: SpectralOperator, gamma: Manifold, tol: float = 1e-9,
                    batch: int = 16, workers: int = 1, max_iter: int = 2000) -> GreensMatrix:
    """Solve the unit-force problems, assemble G and LU-factorize it.

    For a homogeneous medium the discrete operator is translation invariant,
    so ``ncomp`` solves at one voxel give every column by periodic shifts.
    """
    d = op.ncomp
    n = d * gamma.n_points
    pts = gamma.points
    G = np.empty((n, n))
    if op.homogeneous:
        origin = np.zeros((d, op.ndim), np.int64)
        u_hat, _ = solve_pcg(op, _unit_forces(op, origin, np.arange(d)), tol=tol, max_iter=max_iter)
        u = op.inverse(u_hat)  # (d_force, d_disp, *dims)
        dims = np.array(op.micro.dims)
        for p_idx, p in enumerate(pts):
            rel = (pts - p) % dims  # (Np, ndim)
            block = u[(slice(None), slice(None)) + tuple(rel.T)]  # (j, i, Np)
            G[:, d * p_idx:d * p_idx + d] = np.transpose(block, (2, 1, 0)).reshape(n, d)
    else:
        cols = [(p_idx, j) for p_idx in range(gamma.n_points) for j in range(d)]
        chunks = [cols[s:s + batch] for s in range(0, n, batch)]

        def run(chunk):
            ps = np.array([pts[p] for p, _ in chunk])
            js = np.array([j for _, j in chunk])
            u_hat, _ = solve_pcg(op, _unit_forces(op, ps, js), tol=tol, max_iter=max_iter)
            u = op.inverse(u_hat)
            vals = u[(slice(None), slice(None)) + gamma.index()]  # (b, i, Np)
            return chunk, np.transpose(vals, (0, 2, 1)).reshape(len(chunk), n)

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(c) for c in chunks]
        for chunk, vals in results:
            for (p_idx, j), col in zip(chunk, vals):
                G[:, d * p_idx + j] = col
    lu, piv = sla.lu_factor(G, check_finite=True)
    if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * np.abs(lu).max() * n):
        raise GreensError("Green matrix is singular")
    return GreensMatrix(lu, piv, d, gamma.n_points, content_key(op, gamma), G)


def solve_forces(gm: GreensMatrix, target: np.ndarray, u_b_on_gamma: np.ndarray,
                 beta: float, dt: float) -> np.ndarray:
    """Force densities giving ``beta dt^2 G F + u_b = U`` on the manifold."""
    V = np.asarray(target, float) - np.asarray(u_b_on_gamma, float)
    shape = V.shape
    F = gm.solve(V.reshape(-1)) / (beta * dt ** 2)
    return F.reshape(shape)


def scatter_forces(gamma: Manifold, F: np.ndarray, ncomp: int | None = None) -> np.ndarray:
    """Force-density field: ``F`` on the manifold voxels, zero elsewhere."""
    F = np.asarray(F, float).reshape(gamma.n_points, -1)
    ncomp = F.shape[1] if ncomp is None else ncomp
    if F.shape[1] != ncomp:
        raise GreensError("force vector length must be ncomp * Np")
    out = np.zeros((ncomp,) + gamma.dims)
    out[(slice(None),) + gamma.index()] = F.T
    return out


# -- persistence ----------------------------------------------------------

def save_greens(gm: GreensMatrix, path) -> None:
    path = Path(path)
    digest = bytes.fromhex(gm.key) if gm.key else bytes(32)
    header = MAGIC + struct.pack("<IIQ", VERSION, gm.ncomp, gm.n_points) + digest
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(gm.lu, "<f8").tobytes())
        fh.write(np.ascontiguousarray(gm.piv, "<i8").tobytes())
    tmp.replace(path)


def load_greens(path, expected_key: str | None = None) -> GreensMatrix:
    raw = Path(path).read_bytes()
    hdr = 4 + struct.calcsize("<IIQ") + 32
    if len(raw) < hdr or raw[:4] != MAGIC:
        raise GreensError(f"{path}: not a Green matrix cache file")
    version, d, npts = struct.unpack("<IIQ", raw[4:hdr - 32])
    if version != VERSION:
        raise GreensError(f"{path}: unsupported version {version}")
    key = raw[hdr - 32:hdr].hex()
    if expected_key is not None and key != expected_key:
        raise GreensError(f"{path}: content hash mismatch")
    n = d * npts
    if len(raw) != hdr + 8 * n * n + 8 * n:
        raise GreensError(f"{path}: truncated file")
    lu = np.frombuffer(raw, "<f8", n * n, hdr).reshape(n, n).copy()
    piv = np.frombuffer(raw, "<i8", n, hdr + 8 * n * n).astype(np.int32)
    return GreensMatrix(lu, piv, int(d), int(npts), key)


class GreensCache:
    """Directory of factorized Green matrices keyed by content hash."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, key: str) -> Path:
        return self.directory / f"greens_{key[:32]}.bin"

    def get_or_assemble(self, op: SpectralOperator, gamma: Manifold, tol: float, **kw):
        """Returns ``(GreensMatrix, loaded_from_disk)``."""
        key = content_key(op, gamma)
        path = self.path_for(key)
        if path.exists():
            try:
                return load_greens(path, expected_key=key), True
            except GreensError:
                pass
        gm = assemble_greens(op, gamma, tol, **kw)
        self.directory.mkdir(parents=True, exist_ok=True)
        save_greens(gm, path)
        return gm, False
