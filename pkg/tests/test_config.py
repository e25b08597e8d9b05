import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from psmflow.config import (
    ScenarioConfig,
    build_scenario,
    check_overlaps,
    config_from_dict,
    convert_units,
    lattice_positions,
    load_config,
    preset,
    scaled_count,
)
from psmflow.errors import ConfigError


def write(tmp_path, data):
    p = tmp_path / "case.yaml"
    p.write_text(yaml.safe_dump(data))
    return p


def test_minimal_poiseuille_defaults(tmp_path):
    cfg = load_config(write(tmp_path, {"kind": "poiseuille", "fluid": {"tau": 0.8}}))
    assert cfg.domain == [32, 32, 32] and cfg.blocks == [1, 1, 1]
    assert cfg.run.steps == 100 and cfg.dem.subcycles == 10


def test_negative_viscosity_rejected():
    with pytest.raises(ConfigError, match="invalid configuration") as exc:
        config_from_dict({"kind": "poiseuille", "fluid": {"tau": 0.4}})
    assert any("viscosity" in v for v in exc.value.violations)


def test_all_violations_reported():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"kind": "custom", "colour": 1, "fluid": {"tau": 0.8, "viscosity": 2}, "run": {"steps": -1}})
    v = exc.value.violations
    assert "colour: unknown key" in v and "fluid.viscosity: unknown key" in v


def test_invariant_violations_listed_together():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"kind": "nope", "domain": [10, 10, 10], "blocks": [3, 1, 1], "particles": {"radius": 3}})
    v = exc.value.violations
    assert any("kind" in s for s in v)
    assert any("divisible" in s for s in v)
    assert any("resolution floor" in s for s in v)


def test_unparseable_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("kind: [unclosed")
    with pytest.raises(ConfigError):
        load_config(p)


def test_dense_preset():
    cfg = preset("dense")
    assert cfg.particles.radius == 10.0 and cfg.particles.density_ratio == 1.1 and cfg.dem.subcycles == 10
    assert cfg.domain == [126, 50, 200]
    assert cfg.particles.count == round(8073 * 126 * 50 * 200 / 8e7) == 127
    sc = build_scenario(cfg)
    assert len(sc.particles) == 127


def test_dilute_preset_count():
    assert scaled_count("fluidized_bed_dilute", (126, 50, 200)) == round(627 * 126 * 50 * 200 / 8e7) == 10
    sc = build_scenario(preset("dilute"))
    assert len(sc.particles) == 10
    assert sc.bc.faces["z-"].kind == "velocity" and sc.bc.faces["z+"].kind == "pressure"
    assert all(sc.bc.faces[f].kind == "noslip" for f in ("x-", "x+", "y-", "y+"))
    assert sc.bc.faces["z-"].velocity[2] == pytest.approx(1.0 * sc.fluid.nu / 20.0)


def test_settling_preset():
    sc = build_scenario(preset("settling_sphere"))
    assert len(sc.particles) == 1
    assert sc.particles[0].x.tolist() == [48.0, 48.0, 98.0]
    assert sc.fluid.f_ext[2] > 0.0
    assert sc.dem_params.gravity[2] < 0


def test_unit_conversion_worked_example():
    u = convert_units(8.9, 1.0, 1.1, 20.0, 0.8)
    assert u.nu == pytest.approx(0.1)
    # g = Ga^2 nu^2 / ((rho_r - 1) D^3) = 79.21 * 0.01 / 800
    assert u.gravity == pytest.approx(79.21 * 0.01 / 800.0, rel=1e-12)
    assert u.inflow == pytest.approx(0.005)


@given(st.floats(0.5, 50), st.floats(0, 10), st.floats(1.01, 5), st.floats(10, 40), st.floats(0.51, 2.0))
def test_unit_conversion_honours_ga_and_re(ga, re, ratio, d, tau):
    u = convert_units(ga, re, ratio, d, tau)
    assert u.galileo == pytest.approx(ga, rel=1e-12)
    assert u.reynolds == pytest.approx(re, rel=1e-12, abs=1e-14)


def test_unit_conversion_needs_heavy_particles():
    with pytest.raises(ConfigError):
        convert_units(8.9, 1.0, 1.0, 20.0, 0.8)


def _roundtrip(cfg, tmp_path):
    p = tmp_path / "rt.yaml"
    cfg.dump(p)
    return load_config(p)


@pytest.mark.parametrize("name", ["dilute", "dense", "settling_sphere", "poiseuille", "custom"])
def test_round_trip(name, tmp_path):
    cfg = preset(name)
    assert _roundtrip(cfg, tmp_path) == cfg


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 4), st.floats(0.51, 3.0), st.integers(0, 2**31), st.integers(0, 500), st.booleans(),
)
def test_round_trip_property(tmp_path_factory, b, tau, seed, steps, lub):
    cfg = config_from_dict({
        "kind": "custom", "domain": [8 * b, 16, 16], "blocks": [b, 1, 1], "fluid": {"tau": tau},
        "particles": {"seed": seed}, "run": {"steps": steps}, "dem": {"lubrication": lub},
    })
    assert _roundtrip(cfg, tmp_path_factory.mktemp("rt")) == cfg


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 0.5))
def test_lattice_positions_never_overlap(seed, gap, jitter):
    pos = lattice_positions((80, 50, 90), 10.0, 12, gap=gap, jitter=jitter, seed=seed)
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1) + np.eye(len(pos)) * 1e9
    assert d.min() >= 20.0
    assert np.all(pos >= 10.0) and np.all(pos <= np.array([70, 40, 80]))


def test_lattice_positions_fill_from_bottom():
    pos = lattice_positions((126, 50, 200), 10.0, 10, seed=1)
    assert pos[:, 2].max() < 40.0


def test_lattice_positions_too_many():
    with pytest.raises(ConfigError, match="cannot place"):
        lattice_positions((50, 50, 50), 10.0, 100)


def test_overlapping_list_rejected():
    with pytest.raises(ConfigError, match="overlap"):
        check_overlaps([[10, 10, 10], [25, 10, 10]], 10.0)
    cfg = config_from_dict({"kind": "custom", "domain": [64, 64, 64],
                            "particles": {"count": 2, "placement": "list", "positions": [[20, 20, 20], [30, 20, 20]]}})
    with pytest.raises(ConfigError, match="overlap"):
        build_scenario(cfg)


def test_seed_reproducible():
    a = lattice_positions((126, 50, 200), 10.0, 10, seed=4)
    b = lattice_positions((126, 50, 200), 10.0, 10, seed=4)
    c = lattice_positions((126, 50, 200), 10.0, 10, seed=5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_settle_in_keeps_particles_apart():
    cfg = preset("dilute", particles={"settle_steps": 20, "count": 4})
    sc = build_scenario(cfg)
    x = np.array([p.x for p in sc.particles])
    d = np.linalg.norm(x[:, None] - x[None], axis=-1) + np.eye(4) * 1e9
    assert d.min() > 19.5
    assert all(not p.u.any() for p in sc.particles)


def test_explicit_stiffness():
    cfg = preset("dilute", dem={"k_n": 100.0, "d_n": 1.0})
    sc = build_scenario(cfg)
    assert sc.dem_params.k_n == 100.0 and sc.dem_params.k_t == pytest.approx(200.0 / 7.0)


def test_config_object_defaults():
    assert ScenarioConfig().kind == "custom"
