"""Run-configuration parsing and validation."""

import pytest

from dcqn.config import RunConfig, load_config
from dcqn.errors import ConfigError

FULL = """
[data]
csv = data/wind.csv
timestamp_column = TIMESTAMP
power_column = TARGETVAR
covariate_columns = U10, V10, U100, V100

[backbone]
layers = 3
channels = 16
kernel_size = 3
dilations = 1, 2, 4

[training]
learning_rate = 0.002
batch_size = 16
max_epochs = 40
patience = 5
seed = 123
grid_size = 256

[generate]
n_scenarios = 50
seed = 7

[metrics]
variogram_order = 2.0

[output]
dir = runs/demo
"""


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


class TestLoadConfig:
    def test_full_file(self, tmp_path):
        config = load_config(write(tmp_path, FULL))
        assert config.covariate_columns == ("U10", "V10", "U100", "V100")
        assert config.tcn.layers == 3
        assert config.tcn.dilations == (1, 2, 4)
        assert config.train.batch_size == 16
        assert config.seed == 123
        assert config.n_scenarios == 50
        assert config.output_dir == "runs/demo"

    def test_defaults(self, tmp_path):
        config = load_config(write(tmp_path, "[training]\nseed = 1\n"))
        assert config.tcn.layers == 4
        assert config.tcn.channels == 32
        assert config.tcn.dilations == (1, 2, 4, 8)
        assert config.train.learning_rate == 1e-3
        assert config.train.batch_size == 32
        assert config.train.max_epochs == 500
        assert config.train.patience == 20
        assert config.grid_size == 512
        assert config.n_scenarios == 100

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[nonsense]\nkey = 1\n"))

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[training]\nlearning_rat = 0.1\n"))

    def test_bad_value(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[training]\nbatch_size = many\n"))

    def test_invalid_range(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[training]\nmax_epochs = 0\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.cfg")

    def test_default_object(self):
        config = RunConfig()
        assert config.train.max_epochs == 500
        assert config.variogram_order == 2.0
