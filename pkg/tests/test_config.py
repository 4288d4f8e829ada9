"""
Tests for configuration loading and validation
"""
import pytest

from symflow.config import PipelineConfig, ScaleLaws, build_config, load_config
from symflow.errors import ConfigurationError


def test_defaults_validate():
    config = build_config()
    assert isinstance(config, PipelineConfig)
    assert 0 < config.eps < config.rho < 0.25
    assert config.chi is None
    assert config.model.matrix == [[2, 1], [1, 1]]
    assert config.laws == ScaleLaws.desk()


@pytest.mark.parametrize("overrides", [
    {"chi": 1.0},
    {"chi": 1.5},
    {"chi": 0.0},
    {"rho": 0.25},
    {"eps": 0.3},
    {"eps": 0.0},
    {"quadrature_nodes": 1600},
    {"jobs": 0},
    {"window": 20, "manifold_depth": 10},
    {"random_orbits": -1},
])
def test_invalid_values_rejected(overrides):
    with pytest.raises(ConfigurationError):
        build_config(overrides)


def test_invalid_model_rejected():
    with pytest.raises(ConfigurationError):
        build_config({"model": {"beta": 1.5}})
    with pytest.raises(ConfigurationError):
        build_config({"model": {"roof": -1.0}})


def test_overrides_win_and_none_is_ignored():
    config = build_config({"seed": 3, "jobs": 2}, seed=7, jobs=None)
    assert config.seed == 7
    assert config.jobs == 2


def test_load_toml(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        'rho = 0.15\n'
        'eps = 0.005\n'
        'window = 60\n'
        'manifold_depth = 20\n'
        '[model]\n'
        'roof = 2.0\n'
        '[tolerances]\n'
        'markov = 1e-5\n',
        encoding="utf-8",
    )
    config = load_config(str(path), use_env=False)
    assert config.rho == 0.15
    assert config.model.roof == 2.0
    assert config.tolerances.markov == 1e-5
    assert config.tolerances.membership == 1e-7


def test_load_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / "missing.toml"), use_env=False)
    bad = tmp_path / "bad.toml"
    bad.write_text("rho = = 0.1\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_config(str(bad), use_env=False)


def test_environment_overrides(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("SYMFLOW_SEED", "11")
    monkeypatch.setenv("SYMFLOW_OUT", "elsewhere")
    config = load_config()
    assert config.seed == 11
    assert config.out == "elsewhere"
    # explicit flags beat the environment
    assert load_config(seed=5).seed == 5


def test_bad_environment_value(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("SYMFLOW_JOBS", "many")
    with pytest.raises(ConfigurationError):
        load_config()


def test_scale_laws():
    literal = ScaleLaws.literal()
    assert literal.Q(0.01, 1.0, 1.0) == pytest.approx(0.01 ** 6)
    assert literal.Q(0.01, 2.0, 1.0) == pytest.approx(0.01 ** 6 * 2.0 ** -48)
    assert literal.overlap_radius(0.1, 0.1) == pytest.approx(0.01 ** 4)
    desk = ScaleLaws.desk()
    assert desk.Q(0.01, 2.0, 0.5) == pytest.approx(0.01 ** 2 * 2.0 ** -8)
    assert desk.snap_cell(1e-2) == pytest.approx(0.25 * 1e-3)
