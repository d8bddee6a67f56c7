from pathlib import Path

import pytest

from core.genome import MutationRates
from utils.config import (
    RunConfig,
    config_from_dict,
    default_workers,
    env_log_level,
    load_config,
    output_root,
)
from utils.errors import ConfigError

DATA = Path(__file__).parent / "data"


def test_desk_config_loads():
    config = load_config(DATA / "desk_run.cfg")
    assert config.run.budget == 20000
    assert config.run.grid_size == 32
    assert config.run.label == "desk-pca-dynamic"
    assert config.projection.manual_features == ("slope", "rolloff")
    assert config.fitness.regime == "ref_free"
    assert config.fitness.refdb == ""
    assert config.render.duration == 1.0
    assert config.seed_generations == 8
    assert config.total_generations == 8 + 305


def test_full_protocol_config_loads():
    config = load_config(DATA / "full_run.cfg")
    assert config.total_generations == 4688
    assert config.fitness.regime == "multi_ref"
    assert config.fitness.refdb == "runs/refdb"


def test_missing_file():
    with pytest.raises(ConfigError, match="config file not found: nowhere.cfg"):
        load_config("nowhere.cfg")


def test_unknown_section_and_key():
    with pytest.raises(ConfigError, match="unknown config section"):
        config_from_dict({"telemetry": {}})
    with pytest.raises(ConfigError, match="unknown key 'budgt'"):
        config_from_dict({"run": {"budgt": "100"}})


def test_bad_values():
    with pytest.raises(ConfigError, match="batch_size"):
        config_from_dict({"run": {"batch_size": "many"}})
    with pytest.raises(ConfigError):
        config_from_dict({"projection": {"regime": "tsne"}})
    with pytest.raises(ConfigError):
        config_from_dict({"projection": {"retrain_increment": "3"}})
    with pytest.raises(ConfigError):
        config_from_dict({"render": {"sample_rate": "44100"}})
    with pytest.raises(ConfigError):
        config_from_dict({"mutation": {"perturb_weight": "1.5"}})


def test_all_zero_mutation_rates_rejected():
    zeros = {name: "0" for name, _ in MutationRates().items()}
    with pytest.raises(ConfigError, match="mutation rate"):
        config_from_dict({"mutation": zeros})


def test_tuple_coercion():
    config = config_from_dict({"projection": {"regime": "manual", "manual_features": " centroid , flatness "}})
    assert config.projection.manual_features == ("centroid", "flatness")
    with pytest.raises(ConfigError, match="comma-separated"):
        config_from_dict({"projection": {"manual_features": "centroid"}})


def test_reference_regimes_need_a_store():
    with pytest.raises(ConfigError, match="refdb"):
        config_from_dict({"fitness": {"regime": "multi_ref"}})
    with pytest.raises(ConfigError, match="reference_id"):
        config_from_dict({"fitness": {"regime": "single_ref", "refdb": "runs/refdb"}})


def test_hash_ignores_presentation_keys():
    base = RunConfig()
    assert base.config_hash() == base.with_overrides(run={"workers": 8, "output_dir": "x", "label": "y"}).config_hash()
    assert base.config_hash() != base.with_overrides(run={"seed": 1}).config_hash()
    assert base.config_hash() != base.with_overrides(archive={"protection_factor": 1.2}).config_hash()


def test_to_dict_is_json_friendly():
    echo = RunConfig().to_dict()
    assert echo["projection"]["manual_features"] == ["slope", "rolloff"]
    assert set(echo) == {"run", "projection", "fitness", "render", "mutation", "archive", "features", "knn"}


def test_environment(monkeypatch):
    monkeypatch.setenv("ELITES_WORKERS", "3")
    assert default_workers() == 3
    assert RunConfig().workers == 3
    monkeypatch.setenv("ELITES_WORKERS", "lots")
    with pytest.raises(ConfigError):
        default_workers()
    monkeypatch.setenv("ELITES_OUTPUT_ROOT", "/tmp/elites")
    assert output_root() == Path("/tmp/elites")
    assert RunConfig().with_overrides(run={"output_dir": "desk"}).output_path() == Path("/tmp/elites/desk")
    monkeypatch.setenv("ELITES_LOG_LEVEL", "debug")
    assert env_log_level() == "DEBUG"
