"""Analytic reference solutions and error metrics."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .material import IsotropicMaterial


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class InterfaceSpec:
    """Impedances ``Z = rho c`` of the incident (Z1) and transmitting (Z2) media."""

    Z1: float
    Z2: float

    def __post_init__(self):
        if not (self.Z1 > 0 and self.Z2 > 0):
            raise OracleError("impedances must be positive")


def transmission_coeffs(iface: InterfaceSpec) -> tuple[float, float]:
    """Displacement amplitude ratios ``(A_T/A_I, A_R/A_I)``."""
    r = iface.Z2 / iface.Z1
    if math.isinf(r):
        return 0.0, -1.0
    return 2.0 / (1.0 + r), (1.0 - r) / (1.0 + r)


def wave_speeds(m: IsotropicMaterial) -> tuple[float, float, float]:
    """Longitudinal, shear and thin-bar speeds."""
    return (math.sqrt((m.lam + 2 * m.mu) / m.rho), math.sqrt(m.mu / m.rho), math.sqrt(m.E / m.rho))


def helmholtz_green_1d(K: float, x, xp):
    if K <= 0:
        raise OracleError("K must be positive")
    return -np.exp(-K * np.abs(np.asarray(x) - xp)) / (2 * K)


def helmholtz_green_3d(K: float, r):
    """``-(K / (8 pi^3 r))^(1/2) K_{1/2}(K r)``, i.e. ``-exp(-K r) / (4 pi r)``."""
    if K <= 0:
        raise OracleError("K must be positive")
    r = np.asarray(r, float)
    if np.any(r <= 0):
        raise OracleError("the 3D Green function is singular at r = 0")
    z = K * r
    k_half = np.sqrt(math.pi / (2 * z)) * np.exp(-z)
    return -np.sqrt(K / (8 * math.pi ** 3 * r)) * k_half


def l2_error(numeric, reference) -> float:
    numeric = np.asarray(numeric, float)
    reference = np.asarray(reference, float)
    if numeric.shape != reference.shape:
        raise OracleError(f"shape mismatch {numeric.shape} vs {reference.shape}")
    ref = np.linalg.norm(reference)
    if ref == 0:
        raise OracleError("reference field has zero norm")
    return float(np.linalg.norm(reference - numeric) / ref)


def decay_exponent(r, amplitude, min_radius: float = 0.0, max_radius: float = math.inf) -> float:
    """Least-squares slope of ``log(amplitude)`` against ``log(r)``.

    Only samples with ``min_radius < r < max_radius`` are used (callers pass
    three source radii and the boundary-interaction radius); at least four
    are required.
    """
    r = np.asarray(r, float)
    amp = np.abs(np.asarray(amplitude, float))
    keep = (r > min_radius) & (r < max_radius) & (amp > 0)
    if keep.sum() < 4:
        raise OracleError(f"need >= 4 samples in ({min_radius}, {max_radius}), got {keep.sum()}")
    slope, _ = np.polyfit(np.log(r[keep]), np.log(amp[keep]), 1)
    return float(slope)


def peak_position(x: np.ndarray, u: np.ndarray) -> tuple[float, float]:
    """Location and value of ``max |u|`` refined by a parabola through three samples."""
    k = int(np.argmax(np.abs(u)))
    if 0 < k < len(u) - 1:
        y0, y1, y2 = np.abs(u[k - 1:k + 2])
        den = y0 - 2 * y1 + y2
        if den != 0:
            s = 0.5 * (y0 - y2) / den
            h = x[k + 1] - x[k]
            return float(x[k] + s * h), float(u[k])
    return float(x[k]), float(u[k])


# --------------------------------------------------------------------------
# d'Alembert solution on a periodic layered bar
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Layer:
    start: float
    end: float
    c: float
    Z: float


@dataclass(frozen=True, order=True)
class _Packet:
    t_enter: float
    seg: int
    direction: int
    amp: float


@dataclass
class AnalyticWave1D:
    """Traveling-pulse solution of a periodic piecewise-homogeneous bar.

    The displacement ``U(t)`` is prescribed at ``x0``, which emits a
    full-amplitude pulse in each direction and reflects incoming pulses with
    factor -1. Interfaces transmit/reflect with the impedance formulas. The
    ring coordinate runs from ``x0`` to ``x0 + L``; ``layers`` must tile it.
    Pulses are traced up to ``t_max``, which bounds the validity window.
    """

    history: Callable[[np.ndarray], np.ndarray]
    duration: float
    L: float
    x0: float
    layers: Sequence[Layer]
    t_max: float
    amp_tol: float = 1e-9
    max_packets: int = 200000
    packets: list[_Packet] = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        lay = list(self.layers)
        if abs(lay[0].start - self.x0) > 1e-12 * self.L or abs(lay[-1].end - self.x0 - self.L) > 1e-9 * self.L:
            raise OracleError("layers must tile [x0, x0 + L]")
        self.layers = lay
        self._trace()

    @classmethod
    def homogeneous(cls, history, duration, c0: float, L: float, x0: float, t_max: float):
        return cls(history, duration, L, x0, [Layer(x0, x0 + L, c0, 1.0)], t_max)

    @classmethod
    def from_profile(cls, history, duration, x_faces: Sequence[float], speeds: Sequence[float],
                     impedances: Sequence[float], L: float, x0: float, t_max: float):
        """Build from cell faces ``x_faces`` (len n+1, spanning ``[0, L]``) and per-cell media.

        Neighbouring cells with equal media are merged.
        """
        faces = np.asarray(x_faces, float)
        c = np.asarray(speeds, float)
        Z = np.asarray(impedances, float)
        # rotate so the ring starts at x0
        k0 = int(np.searchsorted(faces, x0, side="right") - 1)
        n = len(c)
        order = [(k0 + i) % n for i in range(n)]
        layers: list[Layer] = []
        pos = x0
        for step, k in enumerate(order):
            lo = faces[k] + (L if step and faces[k] < x0 - 1e-15 else 0.0)
            hi = faces[k + 1] + (L if faces[k + 1] <= x0 and step else 0.0)
            if step == 0:
                lo = x0
            if layers and layers[-1].c == c[k] and layers[-1].Z == Z[k]:
                layers[-1] = Layer(layers[-1].start, hi, c[k], Z[k])
            else:
                layers.append(Layer(pos, hi, c[k], Z[k]))
            pos = hi
        tail = Layer(pos, x0 + L, c[k0], Z[k0])
        if tail.end - tail.start > 1e-12 * L:
            if layers[-1].c == tail.c and layers[-1].Z == tail.Z:
                layers[-1] = Layer(layers[-1].start, tail.end, tail.c, tail.Z)
            else:
                layers.append(tail)
        else:
            layers[-1] = Layer(layers[-1].start, x0 + L, layers[-1].c, layers[-1].Z)
        return cls(history, duration, L, x0, layers, t_max)

    def _trace(self):
        lay = self.layers
        m = len(lay)
        heap = [_Packet(0.0, 0, +1, 1.0), _Packet(0.0, m - 1, -1, 1.0)]
        out = []
        while heap:
            pk = heapq.heappop(heap)
            out.append(pk)
            if len(out) > self.max_packets:
                raise OracleError("too many scattered pulses; shorten t_max or raise amp_tol")
            seg = lay[pk.seg]
            t_arr = pk.t_enter + (seg.end - seg.start) / seg.c
            if t_arr >= self.t_max:
                continue
            nxt = pk.seg + pk.direction
            children = []
            if nxt < 0 or nxt >= m:  # back at the prescribed point
                children.append(_Packet(t_arr, pk.seg, -pk.direction, -pk.amp))
            else:
                T, R = transmission_coeffs(InterfaceSpec(seg.Z, lay[nxt].Z))
                children.append(_Packet(t_arr, nxt, pk.direction, pk.amp * T))
                if R != 0:
                    children.append(_Packet(t_arr, pk.seg, -pk.direction, pk.amp * R))
            for ch in children:
                if abs(ch.amp) > self.amp_tol:
                    heapq.heappush(heap, ch)
        self.packets = out

    def field(self, t: float, x) -> np.ndarray:
        """Displacement at positions ``x`` (any real values, wrapped periodically)."""
        if t < 0 or t > self.t_max * (1 + 1e-9):
            raise OracleError(f"t={t} outside validity window [0, {self.t_max}]")
        x = np.asarray(x, float)
        xr = self.x0 + np.mod(x - self.x0, self.L)
        out = np.zeros_like(xr)
        starts = np.array([s.start for s in self.layers])
        seg_of = np.clip(np.searchsorted(starts, xr, side="right") - 1, 0, len(self.layers) - 1)
        for pk in self.packets:
            if pk.t_enter > t:
                continue
            s = self.layers[pk.seg]
            sel = seg_of == pk.seg
            if not sel.any():
                continue
            dist = (xr[sel] - s.start) if pk.direction > 0 else (s.end - xr[sel])
            tau = t - pk.t_enter - dist / s.c
            live = (tau > 0) & (tau < self.duration)
            if live.any():
                vals = np.zeros(tau.shape)
                vals[live] = pk.amp * self.history(tau[live])
                out[sel] += vals
        return out


def dalembert_field(w: AnalyticWave1D, t: float, grid) -> np.ndarray:
    return w.field(t, grid)
