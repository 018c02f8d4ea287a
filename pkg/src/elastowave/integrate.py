"""Time marching: implicit Newmark-beta and explicit central differences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .greens import GreensMatrix, Manifold, assemble_greens, scatter_forces, solve_forces
from .material import Microstructure, acoustic_tensor, max_wave_speed
from .spectral import SpectralOperator, solve_pcg


class InstabilityError(RuntimeError):
    """Explicit integration blew up."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class NewmarkParams:
    dt: float
    beta: float = 0.25
    gamma: float = 0.5

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("Newmark constants must be non-negative")

    @classmethod
    def explicit(cls, dt: float) -> "NewmarkParams":
        return cls(dt, 0.0, 0.5)


@dataclass(frozen=True)
class WaveState:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    t: float = 0.0
    step: int = 0

    @classmethod
    def zeros(cls, micro: Microstructure, t: float = 0.0) -> "WaveState":
        shape = (micro.ncomp,) + micro.dims
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), t, 0)

    def copy(self) -> "WaveState":
        return replace(self, u=self.u.copy(), v=self.v.copy(), a=self.a.copy())


@dataclass(frozen=True)
class PulseSpec:
    """Bell-shaped displacement history ``U(t) * direction`` on a manifold.

    ``U(t) = A (t (T - t))^alpha / (T^2/4)^alpha`` for ``0 <= t <= T = pi/omega``.
    """

    A: float
    alpha: float
    omega: float
    direction: tuple[float, ...]
    manifold: Manifold

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        if self.omega <= 0 or self.alpha < 2:
            raise ValueError("pulse needs omega > 0 and alpha >= 2 (smooth start)")
        if not math.isclose(float(np.linalg.norm(d)), 1.0, rel_tol=1e-9):
            raise ValueError("pulse direction must be a unit vector")
        object.__setattr__(self, "direction", tuple(float(x) for x in d))

    @property
    def duration(self) -> float:
        return math.pi / self.omega


def _bell(p: PulseSpec, t, order: int):
    t = np.asarray(t, float)
    T = p.duration
    norm = (T * T / 4) ** p.alpha
    inside = (t >= 0) & (t <= T)
    tc = np.clip(t, 0.0, T)
    s = tc * (T - tc)
    a = p.alpha
    if order == 0:
        val = s ** a
    elif order == 1:
        val = a * s ** (a - 1) * (T - 2 * tc)
    else:
        val = a * ((a - 1) * s ** (a - 2) * (T - 2 * tc) ** 2 - 2 * s ** (a - 1))
    out = np.where(inside, p.A * val / norm, 0.0)
    return float(out) if out.ndim == 0 else out


def pulse_value(p: PulseSpec, t):
    return _bell(p, t, 0)


def pulse_velocity(p: PulseSpec, t):
    return _bell(p, t, 1)


def pulse_acceleration(p: PulseSpec, t):
    return _bell(p, t, 2)


def initial_acceleration(op: SpectralOperator, u0: np.ndarray, f0: np.ndarray | None = None) -> np.ndarray:
    """``a0 = (div(C : grad^s u0) + f0) / rho``."""
    div = op.internal_force(u0)
    if f0 is not None:
        div = div + f0
    return div / op.micro.density_field()


def _acoustic_eigs(c: np.ndarray, rho: float, xi: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(acoustic_tensor(c, xi) / rho)


def stable_dt(micro: Microstructure) -> tuple[float, float]:
    """``(dt_spectral, dt_fe)`` for the stiffest phase.

    ``dt_spectral = 2 / omega_max`` with ``omega^2`` the eigenvalues of
    ``C_ijkl xi_j xi_l / rho`` at ``xi_i = N_i pi / L_i``; ``dt_fe`` is
    ``min(dx) / c_max``.
    """
    present = np.unique(micro.phase)
    h = min(micro.spacing)
    if micro.ndim == 1:
        c = np.sqrt(micro.stiffness[present] / micro.rho[present]).max()
        wmax = c * micro.dims[0] * math.pi / micro.lengths[0]
        return 2.0 / wmax, h / c
    xi = np.array([n * math.pi / L for n, L in zip(micro.dims, micro.lengths)])
    w2 = max(_acoustic_eigs(micro.stiffness[p], micro.rho[p], xi).max() for p in present)
    cmax = max(max_wave_speed(micro.stiffness[p], micro.rho[p]) for p in present)
    return 2.0 / math.sqrt(w2), h / cmax


def total_energy(state: WaveState, op: SpectralOperator) -> tuple[float, float]:
    """``(kinetic, elastic)`` energies of a state, in J (J/m^2 for a bar)."""
    micro = op.micro
    dv = micro.voxel_volume
    kinetic = 0.5 * dv * float(np.sum(micro.density_field() * np.sum(state.v ** 2, axis=0)))
    eps = op.strain(op.forward(state.u))
    sig = op.stress(eps)
    elastic = 0.5 * dv * float(np.sum(eps * sig))
    return kinetic, elastic


@dataclass
class StepInfo:
    iterations: tuple[int, ...] = ()
    force: np.ndarray | None = None


@dataclass
class ImplicitNewmark:
    """Implicit Newmark stepping with displacement enforced on a manifold.

    Each step solves ``A(u_b) = b`` and ``A(u_f) = f(F)`` by PCG, where the
    manifold forces ``F`` come from the factorized Green matrix, and sets
    ``u_n = beta dt^2 u_f + u_b``.
    """

    op: SpectralOperator
    params: NewmarkParams
    pulse: PulseSpec | None = None
    greens: GreensMatrix | None = None
    tol: float = 1e-8
    max_iter: int = 1000
    _ub_hat: np.ndarray | None = field(default=None, init=False, repr=False)
    _uf_hat: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not math.isclose(self.op.beta, self.params.beta) or not math.isclose(self.op.dt, self.params.dt):
            raise ValueError("operator was built for different beta/dt")
        if self.params.beta <= 0:
            raise ValueError("implicit stepping needs beta > 0")
        if self.pulse is not None and self.greens is None:
            self.greens = assemble_greens(self.op, self.pulse.manifold, self.tol / 10)

    @classmethod
    def build(cls, micro: Microstructure, params: NewmarkParams, pulse: PulseSpec | None = None,
              tol: float = 1e-8, greens: GreensMatrix | None = None) -> "ImplicitNewmark":
        return cls(SpectralOperator(micro, params.beta, params.dt), params, pulse, greens, tol)

    def initial_state(self, u0: np.ndarray | None = None, v0: np.ndarray | None = None) -> WaveState:
        st = WaveState.zeros(self.op.micro)
        u = st.u if u0 is None else np.array(u0, float)
        v = st.v if v0 is None else np.array(v0, float)
        return WaveState(u, v, initial_acceleration(self.op, u), 0.0, 0)

    def step(self, state: WaveState) -> tuple[WaveState, StepInfo]:
        op, beta, gam, dt = self.op, self.params.beta, self.params.gamma, self.params.dt
        t = state.t + dt
        pred = state.u + dt * state.v + dt * dt * (0.5 - beta) * state.a
        rho = op.micro.density_field()
        b_hat = op.forward(rho * pred)
        x0 = self._ub_hat if self._ub_hat is not None else op.forward(state.u)
        ub_hat, it_b = solve_pcg(op, b_hat, x0, tol=self.tol, max_iter=self.max_iter)
        self._ub_hat = ub_hat
        u = op.inverse(ub_hat)
        iters = (it_b,)
        F = None
        if self.pulse is not None:
            gam_pts = self.pulse.manifold
            target = pulse_value(self.pulse, t) * np.asarray(self.pulse.direction)
            target = np.broadcast_to(target, (gam_pts.n_points, op.ncomp))
            F = solve_forces(self.greens, target, gam_pts.gather(u), beta, dt)
            f_hat = op.forward(scatter_forces(gam_pts, F, op.ncomp))
            if np.any(F):
                uf_hat, it_f = solve_pcg(op, f_hat, self._uf_hat, tol=self.tol, max_iter=self.max_iter)
            else:
                uf_hat, it_f = np.zeros_like(f_hat), 0
            self._uf_hat = uf_hat
            u = u + self.op.scale * op.inverse(uf_hat)
            iters = (it_b, it_f)
        a = (u - pred) / (beta * dt * dt)
        v = state.v + dt * ((1 - gam) * state.a + gam * a)
        return WaveState(u, v, a, t, state.step + 1), StepInfo(iters, F)


def implicit_step(state: WaveState, stepper: ImplicitNewmark) -> WaveState:
    return stepper.step(state)[0]


@dataclass
class CentralDifference:
    """Explicit central differences (Newmark beta=0, gamma=1/2).

    The manifold velocity follows the analytic pulse derivative; a run is
    aborted when the total energy exceeds ``blowup_factor`` times the
    reference energy (initial energy or the forcing energy scale, whichever
    is larger).
    """

    op: SpectralOperator
    dt: float
    pulse: PulseSpec | None = None
    blowup_factor: float = 1e3
    check_every: int = 1
    _e_ref: float | None = field(default=None, init=False, repr=False)

    @classmethod
    def build(cls, micro: Microstructure, dt: float, pulse: PulseSpec | None = None, **kw):
        # beta only scales the implicit system; any positive value builds the spatial operator
        return cls(SpectralOperator(micro, 0.25, dt), dt, pulse, **kw)

    def initial_state(self, u0=None, v0=None) -> WaveState:
        st = WaveState.zeros(self.op.micro)
        u = st.u if u0 is None else np.array(u0, float)
        v = st.v if v0 is None else np.array(v0, float)
        return WaveState(u, v, initial_acceleration(self.op, u), 0.0, 0)

    def _reference_energy(self, state: WaveState) -> float:
        e0 = sum(total_energy(state, self.op))
        if self.pulse is None:
            return e0
        micro = self.op.micro
        T = self.pulse.duration
        ts = np.linspace(0.0, T, 201)
        vmax = float(np.abs(pulse_velocity(self.pulse, ts)).max())
        # whole domain moving at the peak prescribed speed, kinetic plus elastic
        return max(e0, micro.rho.max() * vmax ** 2 * micro.volume)

    def step(self, state: WaveState) -> tuple[WaveState, StepInfo]:
        if self._e_ref is None:
            self._e_ref = self._reference_energy(state)
        op, dt = self.op, self.dt
        rho = op.micro.density_field()
        t = state.t + dt
        u = state.u + dt * state.v + 0.5 * dt * dt * state.a
        div = op.internal_force(u)
        vb = state.v + 0.5 * dt * state.a + (0.5 * dt / rho) * div
        f = np.zeros_like(u)
        F = None
        if self.pulse is not None:
            gam = self.pulse.manifold
            udot = pulse_velocity(self.pulse, t) * np.asarray(self.pulse.direction)
            rho_g = gam.gather(rho[None])  # (Np, 1)
            F = (2.0 * rho_g / dt) * (udot - gam.gather(vb))
            f = scatter_forces(gam, F, op.ncomp)
        v = vb + (0.5 * dt / rho) * f
        a = (div + f) / rho
        new = WaveState(u, v, a, t, state.step + 1)
        if new.step % self.check_every == 0:
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise InstabilityError(f"non-finite field at step {new.step}", new.step)
            e = sum(total_energy(new, op))
            if e > self.blowup_factor * max(self._e_ref, np.finfo(float).tiny):
                raise InstabilityError(
                    f"explicit integration unstable at step {new.step}: energy {e:.3e} "
                    f"exceeds {self.blowup_factor:g} x reference {self._e_ref:.3e}", new.step)
        return new, StepInfo((), F)


def explicit_step(state: WaveState, stepper: CentralDifference) -> WaveState:
    return stepper.step(state)[0]
