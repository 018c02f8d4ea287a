"""Fourier-space machinery for the implicit Newmark operator.

Spectral fields use the real-input (half-spectrum) layout of ``rfftn`` over
the spatial axes, which are always the trailing axes of an array. Vector
fields carry their components on the axis just before the spatial ones, so a
displacement field has shape ``(..., ncomp, *dims)`` in real space and
``(..., ncomp, *half_dims)`` in Fourier space; any leading axes are treated
as a batch of independent fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.fft as sfft

from .material import MANDEL_PAIRS, MANDEL_WEIGHTS, Microstructure, to_mandel

_ISQ2 = 1 / math.sqrt(2.0)
FFT_WORKERS = -1


class ConvergenceError(RuntimeError):
    """PCG did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class FrequencyGrid:
    """Angular frequencies per axis.

    ``xi[a]`` is stored in the natural DFT output order (zero first);
    ``index_map[a][k]`` gives the position of ``xi[a][k]`` in the ascending
    list ``(2 pi / L)(k - (N-1)/2)`` (odd N) or ``(2 pi / L)(k - N/2)`` (even N).
    """

    dims: tuple[int, ...]
    lengths: tuple[float, ...]
    xi: tuple[np.ndarray, ...]
    index_map: tuple[np.ndarray, ...]

    @property
    def shifted(self) -> tuple[np.ndarray, ...]:
        out = []
        for xi, imap in zip(self.xi, self.index_map):
            s = np.empty_like(xi)
            s[imap] = xi
            out.append(s)
        return tuple(out)

    @property
    def half_dims(self) -> tuple[int, ...]:
        return self.dims[:-1] + (self.dims[-1] // 2 + 1,)

    def derivative_vectors(self) -> list[np.ndarray]:
        """Broadcastable frequency arrays for the half-spectrum layout.

        The unmatched Nyquist frequency of an even axis is set to zero so
        first derivatives stay Hermitian.
        """
        nd = len(self.dims)
        out = []
        for a, (xi, n) in enumerate(zip(self.xi, self.dims)):
            v = xi.copy()
            if n % 2 == 0:
                v[n // 2] = 0.0
            if a == nd - 1:
                v = v[: n // 2 + 1]
            shape = [1] * nd
            shape[a] = v.size
            out.append(v.reshape(shape))
        return out

    def half_weights(self) -> np.ndarray:
        """Multiplicity of each half-spectrum coefficient in the full spectrum."""
        n = self.dims[-1]
        w = np.full(n // 2 + 1, 2.0)
        w[0] = 1.0
        if n % 2 == 0:
            w[-1] = 1.0
        return w


def make_frequency_grid(dims, lengths) -> FrequencyGrid:
    dims = tuple(int(n) for n in dims)
    lengths = tuple(float(x) for x in lengths)
    if any(n < 1 for n in dims) or any(L <= 0 for L in lengths):
        raise ValueError("dims must be >= 1 and lengths > 0")
    xis, maps = [], []
    for n, L in zip(dims, lengths):
        k = np.fft.fftfreq(n, d=1.0 / n)  # integer wave numbers, natural order
        xis.append(2 * math.pi / L * k)
        offset = (n - 1) // 2 if n % 2 else n // 2
        maps.append((k + offset).astype(np.int64))
    return FrequencyGrid(dims, lengths, tuple(xis), tuple(maps))


def _axes(ndim: int) -> tuple[int, ...]:
    return tuple(range(-ndim, 0))


def dft_forward(field: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    nd = len(grid.dims)
    if field.shape[-nd:] != grid.dims:
        raise ValueError(f"field spatial shape {field.shape[-nd:]} != grid {grid.dims}")
    return sfft.rfftn(field, axes=_axes(nd), workers=FFT_WORKERS)


def dft_inverse(spectral: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    nd = len(grid.dims)
    if spectral.shape[-nd:] != grid.half_dims:
        raise ValueError(f"spectral shape {spectral.shape[-nd:]} != {grid.half_dims}")
    return sfft.irfftn(spectral, s=grid.dims, axes=_axes(nd), workers=FFT_WORKERS)


def _acoustic_blocks(cbar: np.ndarray, xi: list[np.ndarray]) -> np.ndarray:
    """``K_ij(xi) = C_ikjm xi_k xi_m`` on a grid, shape ``(*grid, 3, 3)``."""
    shape = np.broadcast_shapes(*(x.shape for x in xi))
    K = np.zeros(shape + (3, 3))
    for k in range(3):
        for m in range(3):
            K += cbar[:, k, :, m] * (xi[k] * xi[m])[..., None, None]
    return K


class SpectralOperator:
    """``A(u) = -beta dt^2 div(C : grad^s u) + rho u`` acting on half-spectra."""

    def __init__(self, micro: Microstructure, beta: float, dt: float, fast_homogeneous: bool = True):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.micro = micro
        self.beta = float(beta)
        self.dt = float(dt)
        self.scale = self.beta * self.dt ** 2
        self.grid = make_frequency_grid(micro.dims, micro.lengths)
        self.ndim = micro.ndim
        self.ncomp = micro.ncomp
        self._xi = self.grid.derivative_vectors()
        self._weights = self.grid.half_weights()
        self.homogeneous = micro.is_homogeneous
        self.fast = bool(fast_homogeneous and self.homogeneous)
        self._rho_field = micro.density_field()
        self._rho0 = float(micro.rho[micro.phase.flat[0]])
        self._prepare_constitutive()
        self._diag = self._homogeneous_symbol() if self.fast else None

    # -- setup -----------------------------------------------------------
    def _prepare_constitutive(self):
        m = self.micro
        if self.ndim == 1:
            self._modulus = m.stiffness[m.phase]
            return
        self._mandel = np.array([to_mandel(c) for c in m.stiffness])
        if self.homogeneous:
            self._perm = None
            self._mandel0 = self._mandel[m.phase.flat[0]]
        else:
            flat = m.phase.ravel()
            self._perm = np.argsort(flat, kind="stable")
            counts = np.bincount(flat, minlength=m.n_phases)
            ends = np.cumsum(counts)
            self._segments = [(p, e - c, e) for p, (c, e) in enumerate(zip(counts, ends)) if c]

    def _homogeneous_symbol(self) -> np.ndarray:
        """``beta dt^2 K(xi) + rho I`` for a uniform medium (1D: scalar)."""
        m = self.micro
        p = m.phase.flat[0]
        if self.ndim == 1:
            return self.scale * m.stiffness[p] * self._xi[0] ** 2 + self._rho0
        K = _acoustic_blocks(m.stiffness[p], self._xi)
        return self.scale * K + self._rho0 * np.eye(3)

    # -- transforms ------------------------------------------------------
    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.ncomp,) + self.grid.half_dims

    def forward(self, field: np.ndarray) -> np.ndarray:
        return dft_forward(field, self.grid)

    def inverse(self, spectral: np.ndarray) -> np.ndarray:
        return dft_inverse(spectral, self.grid)

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Real inner product of half-spectra, batched over leading axes.

        Equals ``prod(dims) * sum(a_real * b_real)`` for the real fields.
        """
        prod = (a.real * b.real + a.imag * b.imag) * self._weights
        return prod.sum(axis=tuple(range(-(self.ndim + 1), 0)))

    # -- constitutive pieces --------------------------------------------
    def strain(self, u_hat: np.ndarray) -> np.ndarray:
        """Real-space strain: scalar in 1D, Mandel 6-vector otherwise."""
        xi = self._xi
        if self.ndim == 1:
            return self.inverse(1j * xi[0] * u_hat[..., 0, :])[..., None, :]
        e = np.empty(u_hat.shape[:-4] + (6,) + u_hat.shape[-3:], dtype=complex)
        for a, (i, j) in enumerate(MANDEL_PAIRS):
            if i == j:
                e[..., a, :, :, :] = 1j * xi[i] * u_hat[..., i, :, :, :]
            else:
                e[..., a, :, :, :] = (0.5j * MANDEL_WEIGHTS[a]) * (
                    xi[j] * u_hat[..., i, :, :, :] + xi[i] * u_hat[..., j, :, :, :])
        return self.inverse(e)

    def stress(self, eps: np.ndarray) -> np.ndarray:
        """``C(x) : eps`` voxel-wise, same layout as :meth:`strain`."""
        if self.ndim == 1:
            return self._modulus * eps
        if self._perm is None:
            return np.einsum("ab,...bxyz->...axyz", self._mandel0, eps, optimize=True)
        lead = eps.shape[:-3]
        flat = eps.reshape(lead + (-1,))[..., self._perm]
        out = np.empty_like(flat)
        for p, s, e in self._segments:
            out[..., s:e] = np.einsum("ab,...bm->...am", self._mandel[p], flat[..., s:e])
        sig = np.empty_like(out)
        sig[..., self._perm] = out
        return sig.reshape(eps.shape)

    def divergence_hat(self, sig_hat: np.ndarray) -> np.ndarray:
        """Fourier transform of ``div(sigma)`` from a transformed stress."""
        xi = self._xi
        if self.ndim == 1:
            return (1j * xi[0]) * sig_hat
        s = sig_hat
        ix, iy, iz = (1j * x for x in xi)
        s0, s1, s2 = s[..., 0, :, :, :], s[..., 1, :, :, :], s[..., 2, :, :, :]
        s3, s4, s5 = (s[..., k, :, :, :] * _ISQ2 for k in (3, 4, 5))
        return np.stack([ix * s0 + iy * s5 + iz * s4,
                         ix * s5 + iy * s1 + iz * s3,
                         ix * s4 + iy * s3 + iz * s2], axis=-4)

    def internal_force_hat(self, u_hat: np.ndarray) -> np.ndarray:
        """Fourier transform of ``div(C : grad^s u)``."""
        if self.fast:
            return -(self._apply_symbol(u_hat) - self._rho0 * u_hat) / self.scale
        return self.divergence_hat(self.forward(self.stress(self.strain(u_hat))))

    def internal_force(self, u: np.ndarray) -> np.ndarray:
        """Real-space ``div(C : grad^s u)`` for a real displacement field."""
        return self.inverse(self.internal_force_hat(self.forward(u)))

    # -- the operator ----------------------------------------------------
    def _apply_symbol(self, u_hat: np.ndarray) -> np.ndarray:
        if self.ndim == 1:
            return self._diag * u_hat
        return np.einsum("xyzij,...jxyz->...ixyz", self._diag, u_hat, optimize=True)

    def mass(self, u_hat: np.ndarray) -> np.ndarray:
        if self.homogeneous:
            return self._rho0 * u_hat
        return self.forward(self._rho_field * self.inverse(u_hat))

    def apply(self, u_hat: np.ndarray) -> np.ndarray:
        if self.fast:
            return self._apply_symbol(u_hat)
        return self.mass(u_hat) - self.scale * self.internal_force_hat(u_hat)

    __call__ = apply

    def preconditioner(self) -> "Preconditioner":
        pc = getattr(self, "_pc", None)
        if pc is None:
            pc = self._pc = build_preconditioner(self.micro, self.beta, self.dt)
        return pc


def apply_operator(op: SpectralOperator, u_hat: np.ndarray) -> np.ndarray:
    return op.apply(u_hat)


class Preconditioner:
    """Exact inverse of the operator for the volume-averaged medium."""

    def __init__(self, micro: Microstructure, beta: float, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.ndim = micro.ndim
        self.scale = beta * dt ** 2
        self.rho_bar = micro.mean_density()
        self.c_bar = micro.mean_stiffness()
        grid = make_frequency_grid(micro.dims, micro.lengths)
        self.blocks = self.blocks_for(grid.derivative_vectors())

    def blocks_for(self, xi: list[np.ndarray]) -> np.ndarray:
        """``(beta dt^2 K(xi) + rho_bar I)^-1`` for arbitrary frequency arrays."""
        if self.ndim == 1:
            return 1.0 / (self.scale * self.c_bar * xi[0] ** 2 + self.rho_bar)
        A = self.scale * _acoustic_blocks(self.c_bar, xi) + self.rho_bar * np.eye(3)
        try:
            return np.linalg.inv(A)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular preconditioner block") from exc

    def apply(self, r_hat: np.ndarray) -> np.ndarray:
        if self.ndim == 1:
            return self.blocks * r_hat
        return np.einsum("xyzij,...jxyz->...ixyz", self.blocks, r_hat, optimize=True)

    __call__ = apply


def build_preconditioner(micro: Microstructure, beta: float, dt: float) -> Preconditioner:
    return Preconditioner(micro, beta, dt)


def solve_pcg(op: SpectralOperator, rhs_hat: np.ndarray, x0_hat: np.ndarray | None = None,
              tol: float = 1e-8, max_iter: int = 1000, precond: Preconditioner | None = None,
              callback: Callable[[int, np.ndarray], None] | None = None):
    """Preconditioned conjugate gradients on the half-spectrum.

    Leading axes of ``rhs_hat`` beyond ``(ncomp, *half_dims)`` are independent
    systems solved together. Converges when ``|A x - b| <= tol |b|`` for
    every system. Returns ``(x_hat, iterations)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = precond if precond is not None else op.preconditioner()
    b = np.asarray(rhs_hat, dtype=complex)
    core = op.ndim + 1
    expand = (Ellipsis,) + (None,) * core

    x = np.zeros_like(b) if x0_hat is None else np.array(x0_hat, dtype=complex)
    r = b - op.apply(x) if x0_hat is not None else b.copy()
    bnorm = np.sqrt(op.inner(b, b))
    safe = np.where(bnorm > 0, bnorm, 1.0)
    rel = np.where(bnorm > 0, np.sqrt(op.inner(r, r)) / safe, 0.0)
    if np.all(bnorm == 0):
        return np.zeros_like(b), 0
    active = rel > tol
    z = M.apply(r)
    p = z
    rz = op.inner(r, z)
    it = 0
    while np.any(active):
        if it >= max_iter:
            worst = float(np.max(rel))
            raise ConvergenceError(f"PCG not converged after {it} iterations "
                                   f"(relative residual {worst:.3e})", worst, it)
        Ap = op.apply(p)
        pAp = op.inner(p, Ap)
        alpha = np.where(active, rz / np.where(pAp != 0, pAp, 1.0), 0.0)
        x = x + alpha[expand] * p
        r = r - alpha[expand] * Ap
        it += 1
        if callback is not None:
            callback(it, x)
        rel = np.sqrt(op.inner(r, r)) / safe
        active = rel > tol
        if not np.any(active):
            break
        z = M.apply(r)
        rz_new = op.inner(r, z)
        beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        p = z + beta[expand] * p
        rz = rz_new
    return x, it
