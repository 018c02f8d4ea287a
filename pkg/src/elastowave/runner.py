"""End-to-end scenario execution, reports and convergence studies."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, build_microstructure, build_pulse, resolve_dt
from .greens import GreensCache, assemble_greens
from .integrate import (CentralDifference, ImplicitNewmark, InstabilityError, NewmarkParams,
                        WaveState, pulse_value, total_energy)
from .io import ForceWriter, ProbeWriter, write_rows, write_snapshot
from .material import Microstructure
from .oracle import AnalyticWave1D, OracleError, l2_error
from .spectral import ConvergenceError, SpectralOperator

PHASES = ("preprocess", "greens", "step", "io", "postprocess")


class SolverFailure(RuntimeError):
    """A run aborted inside the time loop; ``step`` is the failing step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass
class RunReport:
    scenario: str
    dt: float
    steps: int
    final_time: float
    iterations: list[list[int]] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in PHASES})
    total_time: float = 0.0
    final_error: float | None = None
    energy: list[tuple[float, float, float]] = field(default_factory=list)
    gamma_deviation: float = 0.0
    greens_loaded: bool = False
    gamma_points: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @property
    def max_iterations(self) -> int:
        return max((max(i) for i in self.iterations if i), default=0)

    def energy_drift(self, after: float = 0.0) -> float:
        """Relative spread of total energy over the samples with ``t > after``."""
        tot = np.array([k + e for t, k, e in self.energy if t > after])
        if tot.size < 2 or tot[0] == 0:
            return 0.0
        return float((tot.max() - tot.min()) / abs(tot[0]))


# --------------------------------------------------------------------------
# oracle
# --------------------------------------------------------------------------

def _line_speeds(micro: Microstructure, comp: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-voxel speed, impedance and cell faces along the propagation axis."""
    ax = micro.ndim - 1
    h = micro.spacing[ax]
    if micro.ndim == 1:
        line = micro.phase
        c = np.sqrt(micro.stiffness / micro.rho)
    else:
        line = micro.phase[0, 0, :]
        c = np.sqrt(micro.stiffness[:, comp, 2, comp, 2] / micro.rho)
    cv = c[line]
    return cv, micro.rho[line] * cv, h * np.arange(micro.dims[ax] + 1)


def dalembert_oracle(micro: Microstructure, pulse, t_max: float) -> tuple[AnalyticWave1D, int] | None:
    """d'Alembert reference for bars and for plane waves launched from ``x3 = index``.

    Returns ``None`` when the configuration is not a one-dimensional problem
    with a layered medium along the propagation axis.
    """
    gam = pulse.manifold
    ax = micro.ndim - 1
    if micro.ndim == 1:
        if gam.n_points != 1:
            return None
        comp = 0
    else:
        plane = gam.n_points == micro.dims[0] * micro.dims[1] and np.all(gam.points[:, 2] == gam.points[0, 2])
        if not plane:
            return None
        # medium must vary along x3 only
        if not np.all(micro.phase == micro.phase[:1, :1, :]):
            return None
        d = np.asarray(pulse.direction)
        comp = int(np.argmax(np.abs(d)))
        if np.count_nonzero(d) != 1:
            return None
        st = micro.stiffness
        # isotropic-type coupling only: the line mode must not convert
        for p in np.unique(micro.phase):
            col = st[p][:, 2, comp, 2]
            if np.any(np.abs(np.delete(col, comp)) > 1e-9 * abs(col[comp])):
                return None
    cv, Z, faces = _line_speeds(micro, comp)
    x0 = micro.axis_centers(ax)[int(gam.points[0, ax])]
    L = micro.lengths[ax]
    sign = float(np.asarray(pulse.direction)[comp])
    w = AnalyticWave1D.from_profile(lambda t: sign * pulse_value(pulse, t), pulse.duration,
                                    faces, cv, Z, L, x0, t_max)
    return w, comp


def _oracle_error(micro, pulse, state: WaveState, final_time: float):
    ref = dalembert_oracle(micro, pulse, max(final_time, state.t))
    if ref is None:
        return None
    w, comp = ref
    x = micro.axis_centers(micro.ndim - 1)
    line = state.u[0] if micro.ndim == 1 else state.u[comp, 0, 0, :]
    try:
        return l2_error(line, w.field(state.t, x))
    except OracleError:
        return None


# --------------------------------------------------------------------------
# runs
# --------------------------------------------------------------------------

class _Clock:
    def __init__(self, timings: dict):
        self.timings = timings

    def __call__(self, phase: str):
        clock = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                clock.timings[phase] += time.perf_counter() - self.t0

        return _Span()


def run_scenario(cfg: RunConfig, out_dir=None, greens=None, progress=None) -> RunReport:
    """Build, march and report one scenario.

    ``out_dir`` overrides ``output.dir``; ``None`` in both disables file
    output. ``greens`` injects an already assembled Green matrix.
    """
    t_start = time.perf_counter()
    out = dict(cfg.output)
    out_dir = out_dir if out_dir is not None else out.get("dir")
    report = RunReport(cfg.scenario, 0.0, 0, cfg.final_time)
    clock = _Clock(report.timings)

    with clock("preprocess"):
        micro = build_microstructure(cfg)
        micro.validate()
        pulse = build_pulse(cfg, micro)
        dt, n_steps = resolve_dt(cfg, micro)
        report.dt, report.steps = dt, n_steps
        report.gamma_points = pulse.manifold.n_points
        if cfg.integrator == "implicit":
            op = SpectralOperator(micro, 0.25, dt)
            op.preconditioner()
        else:
            stepper = CentralDifference.build(micro, dt, pulse)
            op = stepper.op

    if cfg.integrator == "implicit":
        with clock("greens"):
            if greens is None:
                cache_dir = out.get("greens_cache")
                if cache_dir:
                    cache_dir = Path(cache_dir)
                    if not cache_dir.is_absolute() and cfg.source is not None:
                        cache_dir = cfg.source.parent / cache_dir
                    greens, report.greens_loaded = GreensCache(cache_dir).get_or_assemble(
                        op, pulse.manifold, cfg.tol / 10)
                else:
                    greens = assemble_greens(op, pulse.manifold, cfg.tol / 10)
            else:
                report.greens_loaded = True
        with clock("preprocess"):
            stepper = ImplicitNewmark(op, NewmarkParams(dt), pulse, greens, tol=cfg.tol)

    with clock("preprocess"):
        state = stepper.initial_state()

    stride = int(out.get("stride", 1))
    e_stride = int(out.get("energy_stride", 1))
    fields = list(out.get("fields", ["u"])) if out_dir else []
    probes = writer_f = None
    with clock("io"):
        if out_dir:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "config.yaml").write_text(cfg.dump())
            pv = out.get("probes") or []
            if pv:
                coords = np.array([micro.voxel_center(v) for v in pv])
                probes = ProbeWriter(out_dir / "probes.csv", pv, coords)
            if out.get("forces", True):
                writer_f = ForceWriter(out_dir / "forces.csv", micro.ncomp)

    def emit(st: WaveState, F):
        if not out_dir:
            return
        if writer_f is not None:
            writer_f.write(st.step, st.t, F)
        if st.step % stride == 0 or st.step == n_steps:
            for name in fields:
                write_snapshot(out_dir / f"{name}_{st.step:06d}.bin", getattr(st, name), micro.lengths,
                               st.t, st.step, name)
            if probes is not None:
                probes.write(st.step, st.t, st.u)

    A = abs(pulse.A)
    direction = np.asarray(pulse.direction)
    try:
        with clock("step"):
            report.energy.append((state.t, *total_energy(state, op)))
        with clock("io"):
            emit(state, None)
        for k in range(n_steps):
            with clock("step"):
                try:
                    state, info = stepper.step(state)
                except (ConvergenceError, InstabilityError) as exc:
                    raise SolverFailure(f"step {k + 1}: {exc}", k + 1) from exc
                report.iterations.append(list(info.iterations))
                report.times.append(state.t)
                if cfg.integrator == "implicit" and A > 0:
                    target = pulse_value(pulse, state.t) * direction
                    dev = np.abs(pulse.manifold.gather(state.u) - target).max()
                    report.gamma_deviation = max(report.gamma_deviation, float(dev) / A)
                if state.step % e_stride == 0 or state.step == n_steps:
                    report.energy.append((state.t, *total_energy(state, op)))
            with clock("io"):
                emit(state, info.force)
            if progress is not None:
                progress(state, info)
    finally:
        with clock("io"):
            if probes is not None:
                probes.close()
            if writer_f is not None:
                writer_f.close()

    with clock("postprocess"):
        if cfg.oracle != "none" and n_steps > 0:
            report.final_error = _oracle_error(micro, pulse, state, cfg.final_time)
            if report.final_error is None and cfg.oracle == "dalembert":
                raise OracleError("no d'Alembert reference for this configuration")
    report.total_time = time.perf_counter() - t_start
    if out_dir:
        with clock("io"):
            report.save(out_dir / "report.json")
            if report.energy:
                write_rows(out_dir / "energy.csv", ["t", "kinetic", "elastic"], report.energy)
        report.total_time = time.perf_counter() - t_start
        report.save(out_dir / "report.json")
    return report


@dataclass
class StudyRow:
    multiplier: float
    dt: float
    error: float | None
    wall: float


@dataclass
class StudyResult:
    rows: list[StudyRow]
    order: float | None
    complete: bool = True
    failure: str | None = None

    def table(self) -> str:
        lines = ["dt/CFL        dt [s]        error        wall [s]"]
        for r in self.rows:
            err = "n/a" if r.error is None else f"{r.error:.4e}"
            lines.append(f"{r.multiplier:<12g}  {r.dt:.4e}  {err:<11}  {r.wall:.2f}")
        if self.order is not None:
            lines.append(f"fitted temporal order: {self.order:.3f}")
        if not self.complete:
            lines.append(f"INCOMPLETE: {self.failure}")
        return "\n".join(lines)


def fit_order(dts, errors) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(dts, float)), np.log(np.asarray(errors, float)), 1)
    return float(slope)


def convergence_study(cfg: RunConfig, multipliers, convention: str | None = None) -> StudyResult:
    """Run ``cfg`` at ``dt = m * CFL`` for each multiplier and fit the error slope."""
    conv = convention or cfg.dt.get("convention", "fe")
    rows: list[StudyRow] = []
    for m in multipliers:
        run_cfg = cfg.replace(dt={"cfl": float(m), "convention": conv}, output={})
        t0 = time.perf_counter()
        try:
            rep = run_scenario(run_cfg)
        except (SolverFailure, OracleError) as exc:
            return StudyResult(rows, _fit(rows), False, f"dt/CFL={m}: {exc}")
        rows.append(StudyRow(float(m), rep.dt, rep.final_error, time.perf_counter() - t0))
    return StudyResult(rows, _fit(rows))


def _fit(rows) -> float | None:
    good = [r for r in rows if r.error]
    if len(good) < 2:
        return None
    return fit_order([r.dt for r in good], [r.error for r in good])
