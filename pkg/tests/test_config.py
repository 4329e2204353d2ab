import json

import pytest
from pydantic import ValidationError

from eqf.charts import FilterVariant
from eqf.filters import Strategy
from utils.config import SCHEMA_VERSION, ExperimentConfig, config_hash, load_config, parse_override


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("EQF_OUTPUT_DIR", "EQF_WORKERS", "EQF_SEED"):
        monkeypatch.delenv(key, raising=False)


def test_parse_override() -> None:
    assert parse_override("filter.batches=3") == (["filter", "batches"], 3)
    assert parse_override("trajectory.shape=circle") == (["trajectory", "shape"], "circle")
    assert parse_override("bench.m_grid=[10, 20]") == (["bench", "m_grid"], [10, 20])
    assert parse_override("filter.joseph=true") == (["filter", "joseph"], True)
    with pytest.raises(ValueError):
        parse_override("filter.batches")
    with pytest.raises(ValueError):
        parse_override("=3")


def test_defaults() -> None:
    config = load_config(use_env=False)
    assert config.schema_version == SCHEMA_VERSION
    assert config.filter.settings(FilterVariant.ESKF, Strategy.TP).variant is FilterVariant.ESKF
    assert config.filter.prior_covariance().shape == (15, 15)


def test_default_file_matches_models() -> None:
    assert load_config("configs/default.json", use_env=False) == ExperimentConfig()


def test_unknown_keys_are_rejected(tmp_path) -> None:
    with pytest.raises(ValidationError):
        load_config(overrides=["filter.unknown=1"], use_env=False)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema_version": 2}), encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config(str(path), use_env=False)
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(str(path), use_env=False)


def test_precedence_file_env_overrides(tmp_path, monkeypatch) -> None:
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": 1, "workers": 2, "filter": {"batches": 2}}), encoding="utf-8")
    monkeypatch.setenv("EQF_SEED", "9")
    monkeypatch.setenv("EQF_OUTPUT_DIR", str(tmp_path / "out"))
    config = load_config(str(path), overrides=["seed=11", "filter.strategy=tc"])
    assert config.seed == 11
    assert config.workers == 2
    assert config.output_dir == str(tmp_path / "out")
    assert config.filter.batches == 2
    assert config.filter.strategy is Strategy.TC


def test_config_hash_is_stable() -> None:
    a = load_config(use_env=False)
    b = load_config(overrides=["seed=0"], use_env=False)
    c = load_config(overrides=["seed=1"], use_env=False)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 12
    int(config_hash(a), 16)
