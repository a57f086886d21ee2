import pytest

from morphoreg.config import RunConfig, resolve_config
from morphoreg.kvfile import read_kv, write_kv
from morphoreg.validation import ValidationError


def test_defaults_match_desk_schedule():
    cfg = resolve_config()
    assert cfg.schedule == "desk"
    assert cfg.main_epochs == 60
    assert cfg.swa_cycles == 5
    assert cfg.swa_cycle_epochs == 4
    assert cfg.batch_size == 6
    assert cfg.adam_lr == 1e-4
    assert cfg.swa_lr_max == 1e-2
    assert cfg.swa_lr_min == 1e-6


def test_paper_schedule_preset():
    cfg = resolve_config(overrides={"schedule": "paper"})
    assert cfg.main_epochs == 170
    assert cfg.swa_cycles == 5
    assert cfg.augment_max_translation == 15
    assert cfg.augment_max_rotation_deg == 30.0


def test_smoke_schedule_preset():
    cfg = resolve_config(overrides={"schedule": "smoke"})
    assert cfg.n_subjects == 8
    assert cfg.volume_dim == 16
    assert cfg.main_epochs == 2
    assert cfg.swa_cycles == 1


def test_file_overrides_preset_and_flags_override_file(tmp_path):
    path = tmp_path / "run.cfg"
    write_kv(path, {"schedule": "paper", "main_epochs": 25, "batch_size": 3})
    cfg = resolve_config(str(path))
    assert cfg.main_epochs == 25  # file wins over preset
    assert cfg.augment_max_translation == 15  # preset still applied elsewhere
    cfg2 = resolve_config(str(path), overrides={"main_epochs": 7})
    assert cfg2.main_epochs == 7  # explicit override wins over file


def test_config_round_trip_through_file(tmp_path):
    cfg = resolve_config(overrides={"n_subjects": 13, "adam_lr": 3e-4})
    path = tmp_path / "config.resolved"
    cfg.write(path)
    again = resolve_config(str(path))
    assert again == cfg


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    write_kv(path, {"not_a_key": 1})
    with pytest.raises(ValidationError):
        resolve_config(str(path))
    with pytest.raises(ValidationError):
        resolve_config(overrides={"bogus": 2})


def test_bad_value_types_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    write_kv(path, {"main_epochs": "sixty"})
    with pytest.raises(ValidationError):
        resolve_config(str(path))


def test_unknown_schedule_rejected():
    with pytest.raises(ValidationError):
        resolve_config(overrides={"schedule": "warp"})


def test_stage_channel_parsing():
    cfg = resolve_config(overrides={"stage_channels": "8,16"})
    assert cfg.stage_channel_tuple() == (8, 16)
    with pytest.raises(ValidationError):
        RunConfig(stage_channels="a,b").stage_channel_tuple()


def test_kv_file_rejects_duplicates(tmp_path):
    path = tmp_path / "dup.cfg"
    path.write_text("a = 1\na = 2\n")
    with pytest.raises(ValidationError):
        read_kv(path)
