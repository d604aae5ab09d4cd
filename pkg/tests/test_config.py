import pytest
import yaml

from popnet.config.settings import ConfigError, RunConfig, setup_logging


def test_defaults():
    config = RunConfig()
    assert config.anneal.cost_cutoff == 15.0
    assert config.anneal.max_steps_per_level == 200000
    assert config.anneal.cooling == [0.99, 0.99, 0.99, 0.995]
    assert config.sim.p_transmit == 0.15
    assert config.sim.n_seeds == 300
    assert config.network.gq_k == 12
    assert config.threads == 1


def test_overrides_by_section_key():
    config = RunConfig()
    config.apply_overrides({"sim.p_transmit": 0.3, "threads": 4, "out_dir": None})
    assert config.sim.p_transmit == 0.3
    assert config.threads == 4
    assert config.out_dir is None


@pytest.mark.parametrize("overrides, field", [
    ({"sim.bogus": 1}, "sim.bogus"),
    ({"nosuch.x": 1}, "nosuch.x"),
    ({"colour": "red"}, "run.colour"),
    ({"sim.p_transmit": 1.5}, "sim.p_transmit"),
    ({"anneal.cooling": [0.9, 0.9]}, "anneal.cooling"),
    ({"network.gq_k": 5}, "network.gq_k"),
    ({"threads": 0}, "run.threads"),
])
def test_invalid_values_name_the_field(overrides, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        RunConfig().apply_overrides(overrides)


def test_load_yaml_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({
        "run": {"master_seed": 42, "threads": 2},
        "sim": {"replicates": 3, "boundary_mode": "home_only"},
        "anneal": {"max_steps_per_level": 1000},
    }))
    config = RunConfig(str(path))
    assert config.master_seed == 42
    assert config.threads == 2
    assert config.sim.replicates == 3
    assert config.sim.boundary_mode == "home_only"
    assert config.anneal.max_steps_per_level == 1000
    # untouched settings keep their defaults
    assert config.anneal.cost_cutoff == 15.0


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("plotting:\n  colour: red\n")
    with pytest.raises(ConfigError, match="plotting"):
        RunConfig(str(path))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        RunConfig(str(tmp_path / "nope.yaml"))


def test_saved_config_reloads(tmp_path):
    config = RunConfig()
    config.apply_overrides({"master_seed": 5, "sim.replicates": 4, "network.work_alpha": 0.5})
    path = str(tmp_path / "saved.yaml")
    assert config.save_config(path)
    again = RunConfig(path)
    assert again.as_dict() == config.as_dict()


def test_bad_log_level():
    with pytest.raises(ConfigError, match="log_level"):
        setup_logging("chatty")
