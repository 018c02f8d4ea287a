import math

import numpy as np
import pytest
import yaml

from elastowave.config import (ConfigError, RunConfig, build_microstructure, builtin, load_config,
                               resolve_dt, scenario_names, validate)
from elastowave.io import read_probes, read_snapshot, write_orientations, write_phase_map
from elastowave.material import ALUMINIUM
from elastowave.runner import PHASES, convergence_study, fit_order, run_scenario


def small_bar(**kw):
    return builtin("1d_homogeneous_al", microstructure={"dims": [243]}, **kw)


# -- configuration ------------------------------------------------------------

def test_builtins_all_valid():
    for name in scenario_names():
        cfg = builtin(name)
        assert cfg.scenario == name
        assert RunConfig.from_dict(yaml.safe_load(cfg.dump())).to_dict() == cfg.to_dict()


def test_unknown_builtin_and_keys():
    with pytest.raises(ConfigError):
        builtin("nope")
    data = small_bar().to_dict()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**data, "bogus": 1})
    del data["pulse"]
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


@pytest.mark.parametrize("change", [
    {"dt": {"value": -1.0}},
    {"dt": {"value": 1e-6, "cfl": 1}},
    {"output": {"stride": 0}},
    {"integrator": "rk4"},
    {"final_time": -1.0},
])
def test_invalid_fields(change):
    with pytest.raises(ConfigError):
        small_bar().replace(**change)


def test_missing_phase_map_file(tmp_path):
    data = small_bar().to_dict()
    data["microstructure"] = {"builder": "phase_map", "path": "absent.txt", "materials": ["Al"]}
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data, source=tmp_path / "cfg.yaml")


def test_load_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(small_bar().dump())
    assert load_config(path).to_dict() == small_bar().to_dict()
    path.write_text("scenario: [unclosed")
    with pytest.raises(ConfigError):
        load_config(path)


def test_phase_map_builder(tmp_path):
    phase = np.zeros((2, 2, 4), np.int32)
    phase[..., 2:] = 1
    write_phase_map(tmp_path / "m.txt", phase, (1.0, 1.0, 2.0))
    data = small_bar().to_dict()
    data["microstructure"] = {"builder": "phase_map", "path": "m.txt", "materials": ["Al", "Fe"]}
    m = build_microstructure(RunConfig.from_dict(data, source=tmp_path / "c.yaml"))
    assert m.dims == (2, 2, 4) and m.rho[m.phase[0, 0, 3]] == 7850.0


def test_phase_map_with_orientations(tmp_path):
    phase = np.arange(4, dtype=np.int32).reshape(1, 2, 2)
    write_phase_map(tmp_path / "m.raw", phase, (1.0, 1.0, 1.0))
    q = np.tile([0.0, 0.0, 0.0, 1.0], (4, 1))
    q[1] = [0, 0, math.sin(0.3), math.cos(0.3)]
    write_orientations(tmp_path / "q.txt", q)
    data = small_bar().to_dict()
    data["microstructure"] = {"builder": "phase_map", "path": "m.raw", "materials": ["Ni"],
                              "orientations": "q.txt"}
    m = build_microstructure(RunConfig.from_dict(data, source=tmp_path / "c.yaml"))
    assert m.n_phases == 4
    assert np.allclose(m.stiffness[0], m.stiffness[2])
    assert not np.allclose(m.stiffness[0], m.stiffness[1])


def test_resolve_dt_hits_final_time():
    cfg = small_bar()
    m = build_microstructure(cfg)
    dt, n = resolve_dt(cfg, m)
    assert n * dt == pytest.approx(cfg.final_time, rel=1e-14)
    assert dt <= 10 * (2 / 243) / math.sqrt(ALUMINIUM.E / ALUMINIUM.rho) * (1 + 1e-12)


def test_validate_explicit_bound():
    with pytest.raises(ConfigError):
        validate(small_bar(integrator="explicit", dt={"cfl": 1.0, "convention": "fe"}))
    assert validate(small_bar(integrator="explicit", dt={"cfl": 0.8, "convention": "spectral"})) == []


def test_validate_probe_and_gamma_bounds():
    with pytest.raises(ConfigError):
        validate(small_bar(output={"probes": [[500]]}))
    with pytest.raises(ConfigError):
        validate(small_bar(pulse={"gamma": {"kind": "point", "index": [999]}}))


# -- runs ---------------------------------------------------------------------

def test_zero_final_time(tmp_path):
    rep = run_scenario(small_bar(final_time=0.0), out_dir=tmp_path)
    assert rep.steps == 0 and rep.iterations == [] and rep.final_error is None
    assert (tmp_path / "report.json").exists()
    assert sorted(p.name for p in tmp_path.glob("u_*.bin")) == ["u_000000.bin"]


def test_bar_run_outputs(tmp_path):
    cfg = small_bar(dt={"cfl": 1.0}, output={"stride": 10, "probes": [[5], [100]], "fields": ["u", "v", "a"]})
    rep = run_scenario(cfg, out_dir=tmp_path)
    assert rep.final_error is not None and rep.final_error < 0.1
    assert rep.gamma_deviation < 1e-6
    assert np.all(np.diff(rep.times) > 0)
    assert set(rep.timings) == set(PHASES)
    assert abs(sum(rep.timings.values()) - rep.total_time) <= 0.05 * rep.total_time
    rows = read_probes(tmp_path / "probes.csv")
    for step in (10, rep.steps):
        u, meta = read_snapshot(tmp_path / f"u_{step:06d}.bin")
        hit = [r for r in rows if r["step"] == step]
        assert [r["ux"] for r in hit] == [u[0, 5], u[0, 100]]
    assert (tmp_path / "v_000010.bin").exists() and (tmp_path / "a_000010.bin").exists()
    assert (tmp_path / "forces.csv").read_text().startswith("step,t,point,Fx")


def test_deterministic(tmp_path):
    cfg = builtin("polycrystal_short", microstructure={"dims": [4, 4, 12], "lengths": [4e-5, 4e-5, 1.2e-4],
                                                       "n_grains": 5, "mean_diameter": None},
                  final_time=3e-8, output={"greens_cache": None})
    a = run_scenario(cfg, out_dir=tmp_path / "a")
    b = run_scenario(cfg, out_dir=tmp_path / "b")
    assert a.steps > 0
    for name in sorted(p.name for p in (tmp_path / "a").glob("u_*.bin")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_greens_cache_reuse(tmp_path):
    cfg = builtin("3d_plane_wave_p_layered", microstructure={"dims": [1, 3, 27]}, final_time=2e-5,
                  output={"greens_cache": str(tmp_path / "cache")})
    first = run_scenario(cfg)
    second = run_scenario(cfg)
    assert not first.greens_loaded and second.greens_loaded
    assert np.allclose([e for _, _, e in first.energy], [e for _, _, e in second.energy], rtol=1e-12)


def test_study_single_multiplier():
    res = convergence_study(small_bar(), [10])
    assert len(res.rows) == 1 and res.order is None and res.complete
    assert "10" in res.table()


def test_study_flags_failure():
    res = convergence_study(small_bar(integrator="explicit"), [0.5, 1.5], convention="spectral")
    assert not res.complete and len(res.rows) == 1 and "1.5" in res.failure


def test_fit_order_exact():
    dts = np.array([1.0, 2.0, 4.0])
    assert fit_order(dts, 3 * dts ** 2) == pytest.approx(2.0)


def test_polycrystal_builtins_share_dt():
    # the short and long pulse runs must hit the same Green matrix cache entry
    short, long_ = builtin("polycrystal_short"), builtin("polycrystal_long")
    m = build_microstructure(short)
    assert resolve_dt(short, m)[0] == resolve_dt(long_, m)[0] == short.dt["value"]


def test_dt_override_replaces():
    cfg = small_bar(dt={"value": 1e-6})
    assert cfg.dt == {"value": 1e-6}
