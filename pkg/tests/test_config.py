from pathlib import Path

import pytest

from electroelastic.config import (ConfigError, ScenarioConfig, config_from_dict, parse_config,
                                   write_config)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_empty_document_uses_defaults_and_lists_them():
    cfg = config_from_dict({})
    assert cfg == ScenarioConfig(defaulted=cfg.defaulted)
    assert "scenario" in cfg.defaulted and "dielectric.eps_m" in cfg.defaulted
    assert cfg.elastic.lambda_e2_per_A4 == 10.0 and cfg.fixed_point.omega == 0.5


def test_given_keys_are_not_listed_as_defaulted():
    cfg = config_from_dict({"scenario": "born", "geometry": {"h_A": 0.5}})
    assert "scenario" not in cfg.defaulted and "geometry.h_A" not in cfg.defaulted
    assert "geometry.radius_A" in cfg.defaulted


def test_permittivity_ordering_enforced():
    with pytest.raises(ConfigError) as err:
        config_from_dict({"dielectric": {"eps_m": 90.0}})
    assert err.value.key == "dielectric.eps_m"
    assert "0 < eps_m < eps_s" in str(err.value)


@pytest.mark.parametrize("doc, key", [
    ({"geometry": {"radius": 1.0}}, "geometry.radius"),
    ({"extra": 1}, "extra"),
    ({"scenario": "unknown"}, "scenario"),
    ({"geometry": {"h_A": -1.0}}, "geometry.h_A"),
    ({"geometry": {"h_A": "fine"}}, "geometry.h_A"),
    ({"fixed_point": {"omega": 1.5}}, "fixed_point.omega"),
    ({"solver": {"mode": "exact"}}, "solver.mode"),
    ({"scenario": "two_spheres", "geometry": {"distance_A": 1.5}}, "geometry.distance_A"),
    ({"sweep": {"parameter": "eps_s"}}, "sweep.parameter"),
    ({"charges": {"pqr_file": "/nonexistent.pqr"}}, "charges.pqr_file"),
])
def test_invalid_values_name_the_key(doc, key):
    with pytest.raises(ConfigError) as err:
        config_from_dict(doc)
    assert err.value.key == key


def test_round_trip(tmp_path):
    cfg = config_from_dict({"scenario": "two_spheres", "seed": 7, "charges": {"rigid_scale": 0.3},
                            "continuation": {"kappa_per_A": [0.1, 0.2], "rigid_scale": [0.1, 0.3]}})
    write_config(cfg, tmp_path / "c.toml")
    back = parse_config(tmp_path / "c.toml")
    assert back.to_dict() == cfg.to_dict()
    assert back.digest() == cfg.digest()
    assert back.defaulted == ()


def test_digest_tracks_content():
    a = config_from_dict({"seed": 1})
    b = config_from_dict({"seed": 2})
    assert a.digest() != b.digest() and a.digest() == config_from_dict({"seed": 1}).digest()


def test_malformed_and_missing_files(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("scenario = \n")
    with pytest.raises(ConfigError):
        parse_config(p)
    with pytest.raises(OSError):
        parse_config(tmp_path / "absent.toml")


def test_relative_pqr_path_resolved(tmp_path):
    (tmp_path / "m.pqr").write_text("ATOM      1  N   ALA     1       0.000   0.000   0.000  1.0000 1.0000\n")
    (tmp_path / "c.toml").write_text('[charges]\npqr_file = "m.pqr"\n')
    cfg = parse_config(tmp_path / "c.toml")
    assert Path(cfg.charges.pqr_file) == (tmp_path / "m.pqr").resolve()


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_shipped_configs_parse(name):
    parse_config(CONFIGS / name)
