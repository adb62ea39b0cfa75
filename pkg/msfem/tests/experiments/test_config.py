from pathlib import Path

import pytest

from msfem.src.config import Settings
from msfem.src.experiments.config import (
    config_from_mapping,
    load_config,
    parse_int,
    parse_real,
    resolve_potential,
    split_list,
    validate_config,
)
from msfem.src.utils.exceptions import ConfigValidationError

PRESETS = Path(__file__).parents[2] / "presets"


def base_values(**overrides):
    values = {
        "example_id": "1",
        "epsilon": "1/32",
        "coarse_h": "1/64",
        "fine_n": "3*2^8",
        "dt": "2^-6",
        "t_final": "1",
    }
    values.update(overrides)
    return values


def test_parse_real():
    assert parse_real("0.25") == 0.25
    assert parse_real("1/4096") == 1.0 / 4096.0
    assert parse_real("2^-12") == 2.0**-12
    assert parse_real("3*2^-10") == 3.0 * 2.0**-10
    assert parse_real(" 1 / 8 ") == 0.125
    assert parse_real(3) == 3.0
    with pytest.raises(ValueError):
        parse_real("")
    with pytest.raises(ValueError):
        parse_real("abc")


def test_parse_int():
    assert parse_int("3*2^10") == 3072
    assert parse_int("64") == 64
    with pytest.raises(ValueError):
        parse_int("2.5")


def test_split_list():
    assert split_list("1/64, 1/128,,") == ["1/64", "1/128"]
    assert split_list(None) == []
    assert split_list([1, 2]) == [1, 2]


def test_config_from_mapping_normalizes_values():
    config = config_from_mapping(
        base_values(METHODS="enmsfem, FEM", coarse_h="1/64,1/128", l_star_by_mesh="128:global,64:5")
    )
    assert config.methods == ["FEM", "EnMsFEM"]
    assert config.coarse_ns == [64, 128]
    assert config.fine_n == 768
    assert config.l_star_for(64) == 5
    assert config.l_star_for(128) == "global"
    assert config.example_label == "1"
    assert config.record_times() == [1.0]


def test_config_from_mapping_reports_every_problem():
    with pytest.raises(ConfigValidationError) as excinfo:
        config_from_mapping(base_values(methods="FEM,Spectral", unknown_key="1", dt="fast"))
    messages = " ".join(excinfo.value.errors)
    assert "Spectral" in messages
    assert "unknown_key" in messages
    assert "dt" in messages


def test_exactly_one_potential_source():
    with pytest.raises(ConfigValidationError):
        config_from_mapping(base_values(example_id=None))
    with pytest.raises(ConfigValidationError):
        config_from_mapping(base_values(custom_potential="pkg.mod:factory"))


def test_missing_l_star_defaults_to_log2():
    report = validate_config(config_from_mapping(base_values()))
    assert report.config.l_star_by_mesh == {64: 6}
    assert report.config.keep_fraction == 0.125
    assert report.config.reference_fine_n == 768
    assert report.config.reference_dt == 2.0**-6


def test_mesh_condition_warning():
    report = validate_config(config_from_mapping(base_values()))
    assert report.v0 == pytest.approx(21.0, abs=1e-9)
    assert report.mesh_ratios[1.0 / 64.0] == pytest.approx(2.29, abs=0.01)
    assert any("sqrt(V0)*H/eps" in w for w in report.warnings)
    payload = report.as_dict()
    assert payload["config"]["methods"] == ["FEM", "MsFEM", "EnMsFEM"]
    assert str(1.0 / 64.0) in payload["mesh_ratios"]


def test_non_nested_meshes_are_rejected():
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(config_from_mapping(base_values(fine_n="1000", coarse_h="1/64,0.3,1/64")))
    messages = excinfo.value.errors
    assert any("not nested" in m for m in messages)
    assert any("0.3" in m for m in messages)
    assert any("duplicates" in m for m in messages)


def test_time_grid_problems():
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(
            config_from_mapping(base_values(dt="0.3", series_times="0.5,2", reference_dt="2^-8"))
        )
    messages = " ".join(excinfo.value.errors)
    assert "dt=0.3 does not divide" in messages
    assert "outside [t0, T]" in messages


@pytest.mark.parametrize("delta", ["0", "-0.5"])
def test_non_positive_delta_is_rejected(delta):
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(config_from_mapping(base_values(delta=delta)))
    assert any("delta must be positive" in m for m in excinfo.value.errors)


def test_positive_delta_is_accepted():
    report = validate_config(config_from_mapping(base_values(delta="1e-3")))
    assert report.config.delta == pytest.approx(1e-3)


def test_reference_must_refine_method_mesh():
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(config_from_mapping(base_values(reference_fine_n="1000")))
    assert "must refine" in excinfo.value.errors[0]
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(config_from_mapping(base_values(reference_method="enmsfem")))
    assert "reference_coarse_h" in excinfo.value.errors[0]


def test_desk_scale_guard():
    small = Settings(desk_scale_max_dofs=100)
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(config_from_mapping(base_values()), small)
    assert "full_scale" in excinfo.value.errors[0]
    report = validate_config(config_from_mapping(base_values(full_scale="true")), small)
    assert any("beyond desk scale" in w for w in report.warnings)


def test_unknown_example_is_a_config_error():
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(config_from_mapping(base_values(example_id="9")))
    assert excinfo.value.errors[0].startswith("potential:")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigValidationError):
        load_config(tmp_path / "missing.env")


@pytest.mark.parametrize("name", sorted(p.name for p in PRESETS.glob("*.env")))
def test_shipped_presets_validate(name):
    report = validate_config(load_config(PRESETS / name))
    config = report.config
    assert resolve_potential(config).example_id == config.example_id
    if name.endswith("_full.env"):
        assert config.full_scale
        assert any("beyond desk scale" in w for w in report.warnings)
    else:
        assert not config.full_scale
    if config.example_id == 4:
        assert config.keep_fraction == 0.0625
        assert config.reference_method == "enmsfem"
    else:
        assert config.keep_fraction == 0.125
