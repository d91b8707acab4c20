"""Tests for YAML run configs and CLI overrides."""

import pytest

from errors import ConfigError
from run_config import RunConfig, load_config


def write_yaml(tmp_path, text: str):
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadConfig:
    def test_defaults_without_path(self):
        config = load_config(None)
        assert config.indices.s == 2.0
        assert config.grid_model.n_x == 32
        assert config.scenario.mu_ladder == [2.0]

    def test_yaml_sections(self, tmp_path):
        path = write_yaml(
            tmp_path,
            "indices:\n  s: 4.0\n  s_tilde: 1.2\n"
            "grid:\n  n_x: 64\n  n_t: 257\n"
            "scenario:\n  kind: step\n  mu_ladder: [2.0, 3.0]\n",
        )
        config = load_config(path)
        assert config.indices.s == 4.0 and config.indices.s_tilde == 1.2
        assert config.grid_model.n_t == 257
        assert config.scenario.kind == "step"
        assert config.scenario.mu_ladder == [2.0, 3.0]

    def test_unknown_scenario_kind_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="kind"):
            load_config(write_yaml(tmp_path, "scenario:\n  kind: solve\n"))

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="solver"):
            load_config(write_yaml(tmp_path, "solver:\n  kind: fast\n"))

    def test_standing_assumption_checked(self, tmp_path):
        with pytest.raises(ConfigError, match="standing assumption"):
            load_config(write_yaml(tmp_path, "indices:\n  s: 2.0\n  s_tilde: 2.5\n"))

    def test_partial_diffusion_indices_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="together"):
            load_config(write_yaml(tmp_path, "indices:\n  k: 2\n"))

    def test_diffusion_needs_operator(self, tmp_path):
        text = "indices:\n  s: 5.0\n  s_tilde: 1.0\n  s_bar: 2.0\n  m_bar: 1\n  k: 2\n"
        with pytest.raises(ConfigError, match="operator"):
            load_config(write_yaml(tmp_path, text))
        config = load_config(write_yaml(tmp_path, text + "scenario:\n  operator: minus_laplacian\n"))
        assert config.indices.diffusion

    def test_invalid_yaml(self, tmp_path):
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(write_yaml(tmp_path, "indices: [unclosed\n"))

    def test_top_level_must_be_mapping(self, tmp_path):
        with pytest.raises(ConfigError, match="mapping"):
            load_config(write_yaml(tmp_path, "- 1\n- 2\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")


class TestScenarioChecks:
    @pytest.mark.parametrize(
        "override",
        [
            {"scenario.mu_ladder": [1.5]},
            {"scenario.n_steps": 6},
            {"scenario.modes": [(0, 0)]},
            {"scenario.modes": [(1, 0, 0)]},
            {"grid.n_x": 15},
        ],
    )
    def test_rejected(self, override):
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(**override)


class TestOverrides:
    def test_dotted_keys(self, tmp_path):
        config = RunConfig().with_overrides(**{"scenario.seed": 5, "tolerances.scale": 2.0, "output_dir": tmp_path})
        assert config.scenario.seed == 5
        assert config.tolerances.scaled("cde_relative") == pytest.approx(2e-2)
        assert config.output_dir == tmp_path

    def test_none_values_are_skipped(self):
        assert RunConfig().with_overrides(**{"scenario.seed": None}) == RunConfig()

    def test_config_is_frozen(self):
        config = RunConfig()
        with pytest.raises(Exception):
            config.scenario.seed = 3
