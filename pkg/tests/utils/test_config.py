import os
import tempfile

import numpy as np
import pytest

from swarmflow.errors import ConfigError
from swarmflow.utils.config import THREADS_ENV, ScenarioConfig, format_value, parse_value

SAMPLE = """
# a comment line
scenario.name = sample
scenario.pipeline = hydro   # trailing comment
grid.dim = 2
grid.cells = 32
time.T = 0.5
time.outputs = 0.1, 0.5, 0.25
scheme.flux = hll
scheme.pressureless = True
kernel.K.kind = gaussian
kernel.K.amplitude = -1.0
kernel.K.length = 3e-1
initial.u = 1.0, 0
"""


@pytest.fixture
def config():
    return ScenarioConfig.loads(SAMPLE)


def test_parse_values(config):
    assert config["grid.dim"] == 2
    assert isinstance(config["grid.dim"], int)
    assert config["time.T"] == 0.5
    assert config["scheme.flux"] == "hll"
    assert config["scheme.pressureless"] is True
    assert config["kernel.K.length"] == pytest.approx(0.3)
    assert config["initial.u"] == [1.0, 0]
    assert config["scenario.pipeline"] == "hydro"

    assert parse_value("-3") == -3
    assert parse_value("1e3") == 1000.0
    assert parse_value("FALSE") is False


def test_format_value():
    assert format_value(True) == "true"
    assert format_value([1.0, 2]) == "1.0, 2"
    assert format_value(0.1) == "0.1"
    assert parse_value(format_value(1e-12)) == 1e-12


@pytest.mark.parametrize(
    "text, line, key",
    [
        ("scenario.name = a\ngrid.dim 2\n", 2, None),
        ("scenario.name = a\n\nGrid.dim = 2\n", 3, "Grid.dim"),
        ("nodot = 1\n", 1, "nodot"),
        ("grid.dim = 1\ngrid.dim = 2\n", 2, "grid.dim"),
        ("grid.dim =\n", 1, "grid.dim"),
        ("a.b = 1,\n", 1, "a.b"),
    ],
)
def test_parse_errors_carry_location(text, line, key):
    with pytest.raises(ConfigError) as excinfo:
        ScenarioConfig.loads(text)
    assert excinfo.value.line == line
    assert excinfo.value.key == key
    assert f"line {line}" in str(excinfo.value)


def test_typed_getters(config):
    assert config.get_float("grid.cells") == 32.0
    assert config.get_int("missing.key", 7) == 7
    assert config.get_list("time.outputs") == [0.1, 0.5, 0.25]
    assert config.get_list("scheme.flux") == ["hll"]
    assert config.get_list("missing.key") == []
    with pytest.raises(ConfigError) as excinfo:
        config.get_float("scheme.flux")
    assert excinfo.value.key == "scheme.flux"
    with pytest.raises(ConfigError):
        config.get_int("time.T")
    with pytest.raises(ConfigError):
        config["missing.key"]


def test_sections_and_params(config):
    assert config.section("kernel.K") == dict(kind="gaussian", amplitude=-1.0, length=0.3)
    assert config.params("kernel.K") == dict(amplitude=-1.0, length=0.3)
    assert set(config.section("kernel")) == {"K.kind", "K.amplitude", "K.length"}
    assert config.params("kernel") == {}


def test_overrides(config):
    changed = config.with_overrides(grid__cells=128, scheme__cfl=0.5)
    assert changed["grid.cells"] == 128
    assert changed["scheme.cfl"] == 0.5
    assert config["grid.cells"] == 32
    assert changed.fingerprint() != config.fingerprint()


def test_validate(config):
    assert config.validate() is config
    with pytest.raises(ConfigError) as excinfo:
        ScenarioConfig(dict(config.values, **{"grid.dim": 4})).validate()
    assert excinfo.value.key == "grid.dim"
    with pytest.raises(ConfigError):
        config.with_overrides(time__T=0.0).validate()

    values = config.to_dict()
    del values["scenario.pipeline"]
    with pytest.raises(ConfigError) as excinfo:
        ScenarioConfig(values).validate()
    assert excinfo.value.key == "scenario.pipeline"


def test_properties(config, monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert config.name == "sample"
    assert config.pipeline == "hydro"
    assert config.seed == 0
    assert config.threads == 1

    monkeypatch.setenv(THREADS_ENV, "4")
    assert config.threads == 4
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        config.threads


def test_output_times(config):
    np.testing.assert_array_equal(config.output_times(), [0.1, 0.25, 0.5])
    np.testing.assert_allclose(config.with_overrides(time__outputs=5).output_times(), np.linspace(0.0, 0.5, 6))
    np.testing.assert_allclose(ScenarioConfig({"time.T": 1.0}).output_times(), np.linspace(0.0, 1.0, 11))
    with pytest.raises(ConfigError):
        config.with_overrides(time__outputs=0).output_times()


def test_dumps_round_trip(config):
    text = config.dumps()
    assert text.splitlines() == sorted(text.splitlines())
    assert ScenarioConfig.loads(text) == config
    assert ScenarioConfig.loads(text).fingerprint() == config.fingerprint()


def test_save_and_load(config):
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "scenario.cfg")
        config.save(path)
        assert ScenarioConfig.load(path) == config
        with pytest.raises(FileNotFoundError):
            ScenarioConfig.load(os.path.join(tmp, "missing.cfg"))
