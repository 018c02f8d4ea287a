"""Run configuration: YAML schema, validation and built-in scenarios.

A configuration is a nested mapping::

    scenario: 1d_homogeneous_al
    microstructure: {builder: homogeneous, dims: [2187], lengths: [2.0], material: Al}
    pulse:
      A: 1.0e-3
      alpha: 4
      omega: {length: 0.4, speed: c0, material: Al}   # or a number in 1/s
      direction: [1.0]
      gamma: {kind: point, index: [0]}
    integrator: implicit          # or explicit
    dt: {cfl: 10, convention: fe} # or {value: 1.0e-7}
    final_time: 3.9195e-4         # s
    tol: 1.0e-8
    seed: 0
    output: {dir: out, stride: 10, fields: [u], probes: [[100]], forces: true,
             greens_cache: null, energy_stride: 1}

``omega`` given as ``{length, speed, material}`` means ``pi * c / length``,
i.e. a pulse occupying ``length`` metres, with ``c`` one of ``c0``
(thin bar), ``cL``, ``cS`` or ``c11`` (``sqrt(C11/rho)`` of a crystal).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .greens import GreensError, Manifold
from .integrate import PulseSpec, stable_dt
from .io import FormatError, read_orientations, read_phase_map
from .material import (CubicCrystal, IsotropicMaterial, MaterialError, Microstructure,
                       build_framed, build_layered, build_voronoi_polycrystal, cubic_stiffness,
                       get_material, grains_for_diameter, homogeneous, phase_tables, rotate_stiffness)


class ConfigError(ValueError):
    pass


BUILDERS = ("homogeneous", "layered", "framed", "polycrystal", "phase_map")
GAMMA_KINDS = ("point", "plane", "disk", "sphere")


@dataclass
class RunConfig:
    scenario: str
    microstructure: dict
    pulse: dict
    integrator: str = "implicit"
    dt: dict = field(default_factory=lambda: {"cfl": 1.0, "convention": "fe"})
    final_time: float = 0.0
    tol: float = 1e-8
    seed: int = 0
    safety: float = 0.9
    oracle: str = "auto"
    output: dict = field(default_factory=dict)
    source: Path | None = None

    # -- (de)serialisation -------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict, source: Path | None = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        known = {"scenario", "microstructure", "pulse", "integrator", "dt", "final_time", "tol",
                 "seed", "safety", "oracle", "output"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown keys: {sorted(unknown)}")
        for key in ("scenario", "microstructure", "pulse"):
            if key not in data:
                raise ConfigError(f"missing required key {key!r}")
        kw = copy.deepcopy(data)
        try:
            kw["final_time"] = float(kw.get("final_time", 0.0))
            kw["tol"] = float(kw.get("tol", 1e-8))
            kw["seed"] = int(kw.get("seed", 0))
            kw["safety"] = float(kw.get("safety", 0.9))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad scalar value: {exc}") from exc
        kw.setdefault("output", {})
        cfg = cls(**kw, source=source)
        cfg.check()
        return cfg

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "microstructure": copy.deepcopy(self.microstructure),
            "pulse": copy.deepcopy(self.pulse), "integrator": self.integrator, "dt": dict(self.dt),
            "final_time": self.final_time, "tol": self.tol, "seed": self.seed, "safety": self.safety,
            "oracle": self.oracle, "output": copy.deepcopy(self.output),
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def replace(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update(changes)
        return RunConfig.from_dict(data, self.source)

    # -- validation ----------------------------------------------------------
    def _path(self, p) -> Path:
        p = Path(p)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p

    def check(self) -> None:
        """Static checks that need no numerical work."""
        if self.integrator not in ("implicit", "explicit"):
            raise ConfigError("integrator must be 'implicit' or 'explicit'")
        if self.oracle not in ("auto", "none", "dalembert"):
            raise ConfigError("oracle must be auto, none or dalembert")
        if not self.final_time >= 0:
            raise ConfigError("final_time must be >= 0")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if not 0 < self.safety <= 1:
            raise ConfigError("safety must be in (0, 1]")
        dt = self.dt
        if not isinstance(dt, dict) or (("value" in dt) == ("cfl" in dt)):
            raise ConfigError("dt needs exactly one of 'value' or 'cfl'")
        if float(dt.get("value", dt.get("cfl"))) <= 0:
            raise ConfigError("dt must be > 0")
        if dt.get("convention", "fe") not in ("fe", "spectral"):
            raise ConfigError("dt.convention must be 'fe' or 'spectral'")
        out = self.output
        if int(out.get("stride", 1)) < 1 or int(out.get("energy_stride", 1)) < 1:
            raise ConfigError("output strides must be >= 1")
        ms = self.microstructure
        if ms.get("builder") not in BUILDERS:
            raise ConfigError(f"microstructure.builder must be one of {BUILDERS}")
        if ms["builder"] == "phase_map":
            for key in ("path",) + (("orientations",) if "orientations" in ms else ()):
                if not self._path(ms[key]).exists():
                    raise ConfigError(f"referenced file not found: {ms[key]}")
        else:
            if "dims" not in ms or "lengths" not in ms:
                raise ConfigError("microstructure needs dims and lengths")
        p = self.pulse
        for key in ("A", "alpha", "omega", "direction", "gamma"):
            if key not in p:
                raise ConfigError(f"pulse.{key} is required")
        if p["gamma"].get("kind") not in GAMMA_KINDS:
            raise ConfigError(f"pulse.gamma.kind must be one of {GAMMA_KINDS}")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return RunConfig.from_dict(data, source=path)


# --------------------------------------------------------------------------
# building solver inputs
# --------------------------------------------------------------------------

def _material(name):
    try:
        return get_material(name)
    except MaterialError as exc:
        raise ConfigError(str(exc)) from exc


def build_microstructure(cfg: RunConfig) -> Microstructure:
    ms = cfg.microstructure
    kind = ms["builder"]
    try:
        if kind == "phase_map":
            phase, lengths = read_phase_map(cfg._path(ms["path"]))
            mats = [_material(n) for n in ms.get("materials", [])]
            if not mats:
                raise ConfigError("phase_map needs a materials list")
            if "orientations" in ms:
                from scipy.spatial.transform import Rotation
                q = read_orientations(cfg._path(ms["orientations"]))
                if len(mats) != 1 or not isinstance(mats[0], CubicCrystal):
                    raise ConfigError("orientations need a single cubic crystal material")
                if q.shape[0] <= phase.max():
                    raise ConfigError("fewer orientations than phases")
                rot = Rotation.from_quat(q).as_matrix()
                base = cubic_stiffness(mats[0])
                stiff = np.array([rotate_stiffness(base, r) for r in rot])
                rho = np.full(len(rot), mats[0].rho)
                names = tuple(f"{mats[0].name}#{g}" for g in range(len(rot)))
                return Microstructure(phase.shape, lengths, phase, stiff, rho, names, orientation=rot)
            if phase.max() >= len(mats):
                raise ConfigError("phase index exceeds the materials list")
            stiff, rho = phase_tables(mats, phase.ndim)
            return Microstructure(phase.shape, lengths, phase, stiff, rho, tuple(m.name for m in mats))
        dims, lengths = tuple(ms["dims"]), tuple(float(x) for x in ms["lengths"])
        if kind == "homogeneous":
            return homogeneous(dims, lengths, _material(ms["material"]))
        if kind == "layered":
            names = []
            layers = []
            for start, end, name in ms["layers"]:
                if name not in names:
                    names.append(name)
                layers.append(((float(start), float(end)), names.index(name)))
            return build_layered(dims, lengths, layers, [_material(n) for n in names],
                                 axis=int(ms.get("axis", -1)))
        if kind == "framed":
            return build_framed(dims, lengths, ms["inner_extent"], _material(ms["inner"]),
                                _material(ms["outer"]))
        if kind == "polycrystal":
            crystal = _material(ms.get("crystal", "Ni"))
            n = ms.get("n_grains") or grains_for_diameter(lengths, float(ms["mean_diameter"]))
            return build_voronoi_polycrystal(dims, lengths, int(n), int(ms.get("seed", cfg.seed)), crystal)
    except (MaterialError, FormatError, KeyError, TypeError) as exc:
        raise ConfigError(f"microstructure: {exc!r}") from exc
    raise ConfigError(f"unknown builder {kind!r}")


def _speed(spec: dict) -> float:
    m = _material(spec["material"])
    kind = spec.get("speed", "c0")
    if isinstance(m, CubicCrystal):
        if kind != "c11":
            raise ConfigError("crystals support speed 'c11' only")
        return math.sqrt(m.C11 / m.rho)
    table = {"c0": math.sqrt(m.E / m.rho), "cL": math.sqrt((m.lam + 2 * m.mu) / m.rho),
             "cS": math.sqrt(m.mu / m.rho)}
    if kind not in table:
        raise ConfigError(f"speed must be one of {sorted(table)}")
    return table[kind]


def resolve_omega(spec) -> float:
    if isinstance(spec, dict):
        return math.pi * _speed(spec) / float(spec["length"])
    return float(spec)


def build_manifold(cfg: RunConfig, micro: Microstructure) -> Manifold:
    g = cfg.pulse["gamma"]
    kind = g["kind"]
    try:
        if kind == "point":
            return Manifold.point(micro.dims, tuple(g["index"]))
        if kind == "plane":
            return Manifold.plane(micro.dims, int(g["axis"]), int(g.get("index", 0)))
        center = g.get("center")
        if center is None:
            center = micro.voxel_center([n // 2 for n in micro.dims])
        if kind == "disk":
            return Manifold.disk(micro, center, float(g["radius"]), int(g["normal_axis"]))
        return Manifold.sphere(micro, center, float(g["radius"]))
    except (KeyError, ValueError, GreensError) as exc:
        raise ConfigError(f"pulse.gamma: {exc!r}") from exc


def build_pulse(cfg: RunConfig, micro: Microstructure) -> PulseSpec:
    p = cfg.pulse
    d = np.asarray(p["direction"], float)
    if d.size != micro.ncomp:
        raise ConfigError(f"pulse.direction needs {micro.ncomp} components")
    try:
        return PulseSpec(float(p["A"]), float(p["alpha"]), resolve_omega(p["omega"]),
                         tuple(d / np.linalg.norm(d)), build_manifold(cfg, micro))
    except ValueError as exc:
        raise ConfigError(f"pulse: {exc}") from exc


def resolve_dt(cfg: RunConfig, micro: Microstructure) -> tuple[float, int]:
    """Time step and step count; ``dt`` is shrunk so the steps end exactly at ``final_time``."""
    spec = cfg.dt
    if "value" in spec:
        dt = float(spec["value"])
    else:
        dt_spec, dt_fe = stable_dt(micro)
        dt = float(spec["cfl"]) * (dt_fe if spec.get("convention", "fe") == "fe" else dt_spec)
    if cfg.final_time == 0:
        return dt, 0
    n = max(1, math.ceil(cfg.final_time / dt - 1e-9))
    if abs(n * dt - cfg.final_time) <= 1e-9 * cfg.final_time:
        # already a whole number of steps; keep dt bit-exact so cached Green matrices match
        return dt, n
    return cfg.final_time / n, n


def validate(cfg: RunConfig) -> list[str]:
    """Dry-run checks beyond the schema; returns warnings, raises ConfigError on errors."""
    cfg.check()
    micro = build_microstructure(cfg)
    try:
        micro.validate()
    except MaterialError as exc:
        raise ConfigError(str(exc)) from exc
    pulse = build_pulse(cfg, micro)
    dt, n = resolve_dt(cfg, micro)
    warnings = []
    dt_spec, _ = stable_dt(micro)
    if cfg.integrator == "explicit" and dt > cfg.safety * dt_spec:
        raise ConfigError(f"explicit dt {dt:.3e} exceeds {cfg.safety} x stability bound {dt_spec:.3e}")
    for v in cfg.output.get("probes", []) or []:
        if len(v) != micro.ndim or any(not 0 <= i < n_ for i, n_ in zip(v, micro.dims)):
            raise ConfigError(f"probe {v} outside grid {micro.dims}")
    if pulse.duration > cfg.final_time > 0:
        warnings.append("final_time ends before the pulse does")
    return warnings


# --------------------------------------------------------------------------
# built-in scenarios
# --------------------------------------------------------------------------

def _c(name, kind):
    return _speed({"material": name, "speed": kind})


def _bar(layers=None):
    L = 2.0
    ms = ({"builder": "homogeneous", "dims": [2187], "lengths": [L], "material": "Al"} if layers is None
          else {"builder": "layered", "dims": [2187], "lengths": [L], "layers": layers})
    return {
        "microstructure": ms,
        "pulse": {"A": 1e-3, "alpha": 4, "omega": {"length": L / 5, "speed": "c0", "material": "Al"},
                  "direction": [1.0], "gamma": {"kind": "point", "index": [0]}},
        "dt": {"cfl": 10, "convention": "fe"},
        "final_time": L / _c("Al", "c0"),
    }


def _plane(shear: bool, layers=None):
    dims, lengths = [1, 27, 2187], [0.1, 1.0, 2.0]
    kind = "cS" if shear else "cL"
    ms = ({"builder": "homogeneous", "dims": dims, "lengths": lengths, "material": "Al"} if layers is None
          else {"builder": "layered", "dims": dims, "lengths": lengths, "layers": layers, "axis": 2})
    return {
        "microstructure": ms,
        "pulse": {"A": 1e-3, "alpha": 4, "omega": {"length": lengths[2] / 5, "speed": kind, "material": "Al"},
                  "direction": [1.0, 0.0, 0.0] if shear else [0.0, 0.0, 1.0],
                  "gamma": {"kind": "plane", "axis": 2, "index": 0}},
        "dt": {"cfl": 10, "convention": "fe"},
        "final_time": lengths[2] / _c("Al", "cL"),
    }


def _circular(framed: bool):
    dims, lengths = [1, 1025, 1025], [0.001, 1.0, 1.0]
    ms = ({"builder": "framed", "dims": dims, "lengths": lengths, "inner_extent": [0.001, 0.39, 0.39],
           "inner": "Al", "outer": "Fe"} if framed
          else {"builder": "homogeneous", "dims": dims, "lengths": lengths, "material": "Al"})
    return {
        "microstructure": ms,
        "pulse": {"A": 1e-3, "alpha": 4, "omega": {"length": 0.078, "speed": "cS", "material": "Al"},
                  "direction": [1.0, 0.0, 0.0],
                  "gamma": {"kind": "disk", "radius": 2.5e-3, "normal_axis": 0}},
        "dt": {"value": 1.9e-6},
        "final_time": 2.86e-4,
    }


def _spherical(framed: bool):
    dims, lengths = [129] * 3, [1.0] * 3
    ms = ({"builder": "framed", "dims": dims, "lengths": lengths, "inner_extent": [0.62] * 3,
           "inner": "Al", "outer": "Fe"} if framed
          else {"builder": "homogeneous", "dims": dims, "lengths": lengths, "material": "Al"})
    return {
        "microstructure": ms,
        "pulse": {"A": 1e-3, "alpha": 4, "omega": {"length": 0.154, "speed": "cS", "material": "Al"},
                  "direction": [1.0, 0.0, 0.0], "gamma": {"kind": "sphere", "radius": 0.01}},
        "dt": {"value": 1.52e-6},
        "final_time": 2.2e-4,
    }


def _polycrystal(pulse_grains: float):
    dg = 100e-6
    dims, lengths = [35, 35, 567], [0.35e-3, 0.35e-3, 5.67e-3]
    c11 = _c("Ni", "c11")
    # shared absolute dt so the short and long pulse runs reuse one Green matrix
    dt = 10 * (lengths[2] / dims[2]) / c11
    steps = math.ceil((pulse_grains * dg / c11 + lengths[2] / (4 * c11)) / dt)
    return {
        "microstructure": {"builder": "polycrystal", "dims": dims, "lengths": lengths,
                           "mean_diameter": dg, "crystal": "Ni", "seed": 1},
        "pulse": {"A": 5.67e-6, "alpha": 4,
                  "omega": {"length": pulse_grains * dg, "speed": "c11", "material": "Ni"},
                  "direction": [0.0, 0.0, 1.0], "gamma": {"kind": "plane", "axis": 2, "index": 0}},
        "dt": {"value": dt},
        # pulse emitted, then a quarter of the bar travelled
        "final_time": steps * dt,
        "tol": 1e-6,
        "output": {"greens_cache": "greens_cache"},
    }


_AL_FE = [[0.0, 0.6, "Al"], [0.6, 1.2, "Fe"], [1.2, 2.0, "Al"]]
_AL_U = [[0.0, 0.6, "Al"], [0.6, 1.2, "U"], [1.2, 2.0, "Al"]]

_SCENARIOS = {
    "1d_homogeneous_al": lambda: _bar(),
    "1d_layered_al_fe": lambda: _bar(_AL_FE),
    "1d_layered_al_u": lambda: _bar(_AL_U),
    "3d_plane_wave_p": lambda: _plane(False),
    "3d_plane_wave_s": lambda: _plane(True),
    "3d_plane_wave_p_layered": lambda: _plane(False, _AL_FE),
    "2d_circular": lambda: _circular(False),
    "2d_circular_framed": lambda: _circular(True),
    "3d_spherical": lambda: _spherical(False),
    "3d_spherical_framed": lambda: _spherical(True),
    "polycrystal_short": lambda: _polycrystal(3),
    "polycrystal_long": lambda: _polycrystal(20),
}


def scenario_names() -> list[str]:
    return list(_SCENARIOS)


def builtin(name: str, **overrides: Any) -> RunConfig:
    """Full-size configuration of a built-in scenario; top-level keys can be overridden."""
    try:
        data = _SCENARIOS[name]()
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; known: {scenario_names()}") from None
    data = {"scenario": name, **data}
    for key, val in overrides.items():
        # nested sections merge, except dt whose keys are mutually exclusive
        if key != "dt" and isinstance(val, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **val}
        else:
            data[key] = val
    return RunConfig.from_dict(data)
