import pytest

from twolevel_lpbf import config
from twolevel_lpbf.config import ConfigError
from twolevel_lpbf.scenarios import scenario_config


def write(tmp_path, body, name="run.ini"):
    p = tmp_path / name
    p.write_text(body)
    return p


def test_cylinder_config_carries_process_table():
    cfg = config.load_config(scenario_config("cylinder"))
    p = cfg.process_params()
    assert (p.power, p.spot_size, p.velocity, p.layer_thickness) == pytest.approx((200, 65e-6, 0.8, 50e-6))
    assert p.n_phys == 20 and p.t_a == pytest.approx(1e-3)
    assert (p.T_amb, p.T_bp) == pytest.approx((298.15, 353.15))
    assert p.absorptivity == 0.7 and p.ilct == 11
    b = cfg.boundary()
    assert (b.h_pow, b.h_conv, b.emissivity) == (25, 0.1, 0.25)
    m = cfg.material()
    assert m.powder.porosity == 0.35 and m.powder.k_gas == 0.0172
    assert cfg.path("stl").is_file()


def test_porosity_out_of_range(tmp_path):
    p = write(tmp_path, "[paths]\nstl = a.stl\n[material]\nporosity = 1.2\n")
    with pytest.raises(ConfigError, match="porosity"):
        config.load_config(p)


def test_missing_d_pow_defaults_assumed(tmp_path):
    cfg = config.load_config(write(tmp_path, "[paths]\nstl = a.stl\n"))
    assert cfg.get("material", "d_pow_um") == 30.0
    assert cfg.provenance[("material", "d_pow_um")] == "assumed"
    assert cfg.provenance[("paths", "stl")] == "user"


def test_unknown_key_and_section(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        config.load_config(write(tmp_path, "[paths]\nstl = a.stl\n[process]\nlaser_pwr = 1\n"))
    with pytest.raises(ConfigError, match="unknown section"):
        config.load_config(write(tmp_path, "[paths]\nstl = a.stl\n[laser]\npower = 1\n"))


def test_missing_stl(tmp_path):
    with pytest.raises(ConfigError, match="stl"):
        config.load_config(write(tmp_path, "[process]\nlaser_power_W = 100\n"))
    with pytest.raises(ConfigError, match="not found"):
        config.load_config(tmp_path / "absent.ini")


def test_parse_errors(tmp_path):
    with pytest.raises(ConfigError):
        config.load_config(write(tmp_path, "[paths]\nstl = a.stl\n[process]\nlaser_power_W = lots\n"))
    with pytest.raises(ConfigError):
        config.load_config(write(tmp_path, "[coupling]\nmode = JACOBI\n[paths]\nstl = a.stl\n"))
    with pytest.raises(ConfigError):
        config.load_config(write(tmp_path, "no section header\n"))


def test_inline_comment_and_case(tmp_path):
    cfg = config.load_config(write(tmp_path, "[paths]\nstl = a.stl\n[coupling]\nmode = parallel  # try\n"))
    assert cfg.coupling().mode == "PARALLEL"


def test_paths_resolve_against_config_dir(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    cfg = config.load_config(write(sub, "[paths]\nstl = ../parts/a.stl\n"))
    assert cfg.path("stl") == (tmp_path / "parts" / "a.stl").resolve()


def test_manifest_round_trip(tmp_path):
    cfg = config.load_config(scenario_config("beam"))
    config.write_manifest(tmp_path / "manifest.ini", cfg, extra={"command": "run"})
    again = config.load_config(tmp_path / "manifest.ini")
    assert again.resolved() == cfg.resolved()
    assert again.provenance == cfg.provenance


def test_with_values_marks_user_and_validates(tmp_path):
    cfg = config.load_config(write(tmp_path, "[paths]\nstl = a.stl\n"))
    c2 = cfg.with_values(coupling__theta=0.5)
    assert c2.coupling().theta == 0.5 and c2.provenance[("coupling", "theta")] == "user"
    with pytest.raises(ConfigError):
        cfg.with_values(coupling__theta=2.0)
    with pytest.raises(ConfigError):
        cfg.with_values(coupling__bogus=1)


def test_every_key_has_provenance():
    cfg = config.default_config("a.stl")
    assert set(cfg.provenance.values()) <= {"paper", "assumed", "user"}
    assert set(cfg.provenance) == set(config.SCHEMA)
