import pytest

from flowfuse.config import RunConfig, load_run_config, read_config_file
from flowfuse.ingest import ConfigError


def test_defaults_resolve():
    cfg = load_run_config(env={})
    assert cfg.model.name == "full" and cfg.train.learning_rate == 0.001
    assert cfg.paths["data_dir"] == "data"
    assert cfg.schema("aux").pickup_time == "pickup_datetime"


def test_file_env_override_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\npaths.data_dir = from_file\ntrain.epochs = 7  # trailing\nmodel.k = 2\n")
    cfg = load_run_config(path, env={"FLOWFUSE_DATA_DIR": "from_env"})
    assert cfg.paths["data_dir"] == "from_env" and cfg.train.epochs == 7 and cfg.model.k == 2
    cfg = load_run_config(path, {"paths.data_dir": "from_flag", "train.epochs": "9"},
                          env={"FLOWFUSE_DATA_DIR": "from_env"})
    assert cfg.paths["data_dir"] == "from_flag" and cfg.train.epochs == 9


def test_env_only_for_paths():
    cfg = load_run_config(env={"FLOWFUSE_EPOCHS": "3", "FLOWFUSE_RUN_DIR": "r"})
    assert cfg.train.epochs == 200 and cfg.paths["run_dir"] == "r"


@pytest.mark.parametrize("values", [
    {"train.nope": "1"}, {"bogus.key": "1"}, {"nosection": "1"}, {"paths.where": "x"},
    {"train.epochs": "many"}, {"model.variant": "weird"}, {"synth.rho": "2"},
    {"train.random_split": "maybe"}, {"ingest.days": "x"}, {"ingest.unknown": "1"},
])
def test_bad_keys_and_values_fatal(values):
    with pytest.raises(ConfigError):
        RunConfig.from_mapping(values)


def test_typed_values():
    cfg = RunConfig.from_mapping({
        "model.baseline": "gat", "model.variant": "none", "model.fc_widths": "8,4",
        "train.random_split": "yes", "synth.profile": "1,2,3,4", "synth.P": "4",
    })
    assert cfg.model.name == "gat" and cfg.model.fc_widths == (8, 4)
    assert cfg.train.random_split is True and cfg.synth.profile == (1.0, 2.0, 3.0, 4.0)


def test_snapshot_round_trip(tmp_path):
    cfg = RunConfig.from_mapping({"model.dropout_p": "0.3", "synth.noise": "0.1",
                                  "ingest.delimiter": "tab", "model.fc_widths": "16"})
    cfg.write(tmp_path / "snap.cfg")
    again = load_run_config(tmp_path / "snap.cfg", env={})
    assert again == cfg
    assert again.flat() == cfg.flat()
    assert again.schema("taxi").delimiter == "\t"


def test_read_config_file_errors(tmp_path):
    (tmp_path / "bad.cfg").write_text("just words\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        read_config_file(tmp_path / "bad.cfg")
