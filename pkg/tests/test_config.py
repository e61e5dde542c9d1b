"""Tests for presets, TOML loading and the config hash."""

import pytest

from covgen.config import (
    ConfigError,
    build_config,
    config_hash,
    load_config,
    preset_names,
    preset_scorer_names,
)
from covgen.scorers import Direction, Threshold


def create_test_config_file(tmp_path, text):
    """Write a TOML config and return its path."""
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


def test_preset_scorers_are_cumulative():
    """Test models 1-4 add overlap, QED and similarity in order."""
    assert len(preset_names()) == 8
    base = ["validity", "sa", "covalent_activity", "residue_affinity", "docking"]
    assert preset_scorer_names("egfr-1") == base
    assert preset_scorer_names("ache-2") == base + ["overlap"]
    assert preset_scorer_names("egfr-4") == base + ["overlap", "qed", "tanimoto"]


def test_targets_set_residue_class():
    """Test each target carries its residue class."""
    assert build_config(preset="egfr-2").residue_class == "Cys"
    assert build_config(preset="ache-1").residue_class == "Ser/Thr"


def test_unknown_preset():
    """Test an unknown preset lists the available ones."""
    with pytest.raises(ConfigError, match="Available"):
        build_config(preset="kras-1")


@pytest.mark.parametrize(
    "data",
    [
        {"colour": "blue"},
        {"rl": {"batch": 10}},
        {"paths": {"corpora": "x.smi"}},
        {"scorers": {"qed": {"weigth": 1.0}}},
        {"scorers": {"mystery": {"weight": 1.0}}},
        {"rl": {"batch_size": 0}},
        {"scorers": {"sa": {"threshold": ["~", 3.0]}}},
        {"scorers": {"docking": {"knots": [[0.0, 0.0], [-1.0, 1.0]]}}},
    ],
)
def test_invalid_config_values(data):
    """Test unknown keys and invalid values raise ConfigError."""
    with pytest.raises(ConfigError):
        build_config(data)


def test_scorer_overrides_and_additions():
    """Test scorer tables override preset scorers and add new ones."""
    cfg = build_config({
        "preset": "egfr-1",
        "scorers": {
            "sa": {"threshold": ["<=", 5.0], "weight": 2.0},
            "docking": {"enabled": False},
            "qed": {},
            "warhead": {"kind": "motif", "motif": "acrylamide"},
        },
    })
    scorers = {s.name: s for s in cfg.active_scorers()}

    assert "docking" not in scorers
    assert scorers["sa"].threshold == Threshold("<=", 5.0)
    assert scorers["sa"].weight == 2.0
    assert scorers["sa"].direction is Direction.LOWER_BETTER
    assert scorers["warhead"].motif == "C=CC(=O)N"
    assert list(scorers)[-2:] == ["qed", "warhead"]


def test_config_hash_stability():
    """Test identical settings hash identically and any change alters the hash."""
    first = build_config({"seed": 3, "rl": {"iterations": 5}})
    second = build_config({"rl": {"iterations": 5}, "seed": 3})

    assert config_hash(first) == config_hash(second)
    assert len(config_hash(first)) == 16
    assert config_hash(build_config({"seed": 4, "rl": {"iterations": 5}})) != config_hash(first)
    assert config_hash(build_config({"seed": 3, "rl": {"iterations": 6}})) != config_hash(first)


def test_load_config_file_and_overrides(tmp_path):
    """Test TOML files load and command-line preset and seed take precedence."""
    path = create_test_config_file(tmp_path, 'preset = "ache-3"\nseed = 7\n\n[generator]\nhidden_dim = 32\n')

    cfg = load_config(path)
    assert (cfg.preset, cfg.seed, cfg.generator.hidden_dim) == ("ache-3", 7, 32)
    override = load_config(path, preset="egfr-1", seed=9)
    assert (override.preset, override.seed) == ("egfr-1", 9)
    assert load_config().preset == "egfr-1"


def test_load_config_errors(tmp_path):
    """Test missing files and malformed TOML raise ConfigError."""
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(create_test_config_file(tmp_path, "seed = = 1\n"))


def test_paths_resolve():
    """Test configured paths are returned as Path objects."""
    cfg = build_config({"paths": {"corpus": "data/corpus.smi"}})

    assert cfg.path("corpus").name == "corpus.smi"
    assert cfg.path("reference") is None


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
