import pyjson5
import pytest

from app.internal.config import (
    ExperimentConfig,
    IdentitySettings,
    OneDSettings,
    PostprocessingConfig,
    RegionSpec,
    ViscousSettings,
)
from app.internal.exceptions import ConfigError
from app.services.fields import Annulus, Ball, Rectangle


class TestRegionSpec:
    """Test RegionSpec parsing and building."""

    def test_default_is_centered_square(self):
        """Test that the default region is (-1/2, 1/2)²."""
        region = RegionSpec.parse({}).build()
        assert region == Rectangle(-0.5, 0.5, -0.5, 0.5)

    def test_ball(self):
        """Test parsing a ball."""
        spec = RegionSpec.parse(
            {"shape": "ball", "center": [0.25, 0.0], "radius": 0.3}
        )
        assert spec.build() == Ball((0.25, 0.0), 0.3)

    def test_annulus(self):
        """Test parsing an annulus."""
        region = RegionSpec.parse(
            {"shape": "annulus", "r_in": 0.1, "r_out": 0.4}
        ).build()
        assert isinstance(region, Annulus)

    def test_unknown_shape(self):
        """Test that unknown shapes are rejected."""
        with pytest.raises(ConfigError, match="shape"):
            RegionSpec.parse({"shape": "triangle"})

    def test_center_length(self):
        """Test that centers have two coordinates."""
        with pytest.raises(ConfigError):
            RegionSpec.parse({"center": [0.0]})


class TestSections:
    """Test the per-command sections."""

    def test_oned_defaults(self):
        """Test the 1-D defaults."""
        settings = OneDSettings.parse({})
        assert settings.n == 2049
        assert settings.quadrature == "trapezoid"

    def test_oned_quadrature(self):
        """Test that quadratures are named."""
        with pytest.raises(ConfigError, match="quadrature"):
            OneDSettings.parse({"quadrature": "gauss"})

    def test_viscous_values(self):
        """Test parsing explicit viscous settings."""
        settings = ViscousSettings.parse(
            {"n": 33, "eps_schedule": [0.5, 0.1], "init": "zero"}
        )
        assert settings.n == 33
        assert settings.eps_schedule == [0.5, 0.1]
        assert settings.init == "zero"

    def test_viscous_init(self):
        """Test that unknown initial guesses are rejected."""
        with pytest.raises(ConfigError, match="init"):
            ViscousSettings.parse({"init": "random"})

    def test_bad_number(self):
        """Test that non-numeric values name their key."""
        with pytest.raises(ConfigError, match="viscous.n"):
            ViscousSettings.parse({"n": "many"})

    def test_exact_level_floor(self):
        """Test that exact-solution checks need fine meshes."""
        with pytest.raises(ConfigError, match="exact_level"):
            IdentitySettings.parse({"exact_level": 4})

    def test_chain_pairs(self):
        """Test that chain pairs have two entries."""
        with pytest.raises(ConfigError):
            IdentitySettings.parse({"chain_pairs": [[1.0, 2.0, 3.0]]})

    def test_postprocessing_plots(self):
        """Test the plots flag and its type."""
        assert PostprocessingConfig.parse({"plots": True}).plots is True
        assert PostprocessingConfig.parse({}).plots is False
        with pytest.raises(ConfigError):
            PostprocessingConfig.parse({"plots": "yes"})


class TestExperimentConfig:
    """Test the top-level configuration."""

    def test_parse_complete_config(self, sample_config_dict):
        """Test parsing a configuration touching every section."""
        config = ExperimentConfig.parse(sample_config_dict)

        assert config.command == "solve1d"
        assert config.problem_name == "interior-t0"
        assert config.seed == 3
        assert config.oned.n == 513
        assert config.oned.quadrature == "exact"
        assert config.viscous.eps_stop == 0.05
        assert config.scan.region.build() == Ball((0.0, 0.0), 0.5)
        assert config.identities.polynomials == 5
        assert config.gehring.q == [2.0, 3.0]

    def test_parse_minimal_config(self):
        """Test that only the command is required."""
        config = ExperimentConfig.parse({"command": "regularity-scan"})
        assert config.problem_name == "sharp-w"
        assert config.out_dir == "results"
        assert config.scan.levels == [4, 5, 6, 7, 8, 9]

    def test_default_oned_problem(self):
        """Test that 1-D commands default to the 1-D sharp profile."""
        config = ExperimentConfig.parse({}, command="solve1d")
        assert config.problem_name == "sharp-1d"

    def test_command_argument_wins(self, sample_config_dict):
        """Test that an explicit command replaces the file's."""
        sample_config_dict["problem"] = "sharp-w"
        config = ExperimentConfig.parse(sample_config_dict, "solve2d")
        assert config.command == "solve2d"

    def test_missing_command(self):
        """Test that a command is required."""
        with pytest.raises(ConfigError, match="command"):
            ExperimentConfig.parse({})

    def test_unknown_command(self):
        """Test that commands are validated."""
        with pytest.raises(ConfigError, match="Unknown command"):
            ExperimentConfig.parse({"command": "train"})

    def test_unknown_top_level_key(self):
        """Test that typos are reported."""
        with pytest.raises(ConfigError, match="outdir"):
            ExperimentConfig.parse({"command": "solve2d", "outdir": "x"})

    def test_unknown_nested_key(self):
        """Test that nested typos carry their dotted path."""
        with pytest.raises(ConfigError, match="scan.region.radus"):
            ExperimentConfig.parse(
                {
                    "command": "regularity-scan",
                    "scan": {"region": {"radus": 1}},
                }
            )

    def test_unknown_problem(self):
        """Test that problem names are validated per dimension."""
        with pytest.raises(ConfigError, match="Unknown problem"):
            ExperimentConfig.parse(
                {"command": "solve1d", "problem": "sharp-w"}
            )

    def test_files_come_in_pairs(self):
        """Test that f_file needs g_file."""
        with pytest.raises(ConfigError, match="together"):
            ExperimentConfig.parse({"command": "solve2d", "f_file": "f.csv"})

    def test_files_skip_problem_lookup(self):
        """Test that file input does not need a named problem."""
        config = ExperimentConfig.parse(
            {
                "command": "solve2d",
                "problem": "from-files",
                "f_file": "f.csv",
                "g_file": "g.csv",
            }
        )
        assert config.f_file == "f.csv"

    def test_from_json_with_comments(self, tmp_path):
        """Test loading a JSONC file."""
        config_file = tmp_path / "config.jsonc"
        config_file.write_text(
            """{
                // which experiment
                "command": "gehring-probe",
                "gehring": {"alpha": 2.5},  /* inline */
            }"""
        )
        config = ExperimentConfig.from_json(str(config_file))
        assert config.command == "gehring-probe"
        assert config.gehring.alpha == 2.5

    def test_from_json_missing_file(self, tmp_path):
        """Test that an unreadable file is a configuration error."""
        with pytest.raises(ConfigError, match="Cannot read"):
            ExperimentConfig.from_json(str(tmp_path / "missing.jsonc"))

    def test_from_json_malformed(self, tmp_path):
        """Test that syntax errors are configuration errors."""
        config_file = tmp_path / "config.jsonc"
        config_file.write_text('{"command": ')
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(str(config_file))


class TestOverrides:
    """Test command-line overrides."""

    def test_none_is_ignored(self):
        """Test that unset flags keep file values."""
        config = ExperimentConfig.parse({"command": "solve2d", "seed": 7})
        assert config.with_overrides(seed=None, alpha=None).seed == 7

    def test_scan_values(self):
        """Test that alpha, p and kappa go to the scan section."""
        config = ExperimentConfig.parse({"command": "regularity-scan"})
        result = config.with_overrides(alpha=2.25, p=2.0, kappa=0.1)
        assert (result.scan.alpha, result.scan.p, result.scan.kappa) == (
            2.25,
            2.0,
            0.1,
        )
        assert config.scan.alpha == 1.5

    def test_n_follows_command(self):
        """Test that n targets the solver of the command."""
        oned = ExperimentConfig.parse({"command": "solve1d"})
        twod = ExperimentConfig.parse({"command": "solve2d"})
        assert oned.with_overrides(n=257).oned.n == 257
        assert twod.with_overrides(n=33).viscous.n == 33

    def test_top_level(self):
        """Test problem and output directory overrides."""
        config = ExperimentConfig.parse({"command": "solve2d"})
        result = config.with_overrides(problem="tilted-f", out_dir="/tmp/x")
        assert result.problem_name == "tilted-f"
        assert result.out_dir == "/tmp/x"



class TestRanges:
    """Out-of-range values are rejected while parsing."""

    @pytest.mark.parametrize(
        "section,values,path",
        [
            ("viscous", {"dt_safety": 1.5}, "dt_safety"),
            ("viscous", {"residual_tol": 0.0}, "residual_tol"),
            ("viscous", {"eps_ratio": 1.5}, "viscous"),
            ("viscous", {"eps_schedule": [0.5, 0.1, 0.1]}, "decreasing"),
            ("viscous", {"stepping": "newton"}, "stepping"),
            ("viscous", {"n": 3}, "viscous.n"),
            ("oned", {"tol": -1.0}, "oned.tol"),
            ("scan", {"levels": [4, 5, 6]}, "scan.levels"),
            ("scan", {"p": 0.5}, "scan.p"),
            ("identities", {"solver_sizes": [33]}, "solver_sizes"),
            ("identities", {"solver_problems": ["nope"]}, "solver_problems"),
            ("gehring", {"alpha": 1.2}, "gehring"),
            ("gehring", {"q": [3.5]}, "gehring"),
            ("gehring", {"energy_levels": [7]}, "energy_levels"),
        ],
    )
    def test_section_range(self, section, values, path):
        """Test that each range violation names its key."""
        with pytest.raises(ConfigError, match=path):
            ExperimentConfig.parse({"command": "solve2d", section: values})

    def test_negative_seed(self):
        """Test that seeds are nonnegative."""
        with pytest.raises(ConfigError, match="seed"):
            ExperimentConfig.parse({"command": "solve2d", "seed": -1})

    def test_overrides_are_checked(self):
        """Test that command-line overrides go through the same ranges."""
        config = ExperimentConfig.parse({"command": "solve2d"})
        with pytest.raises(ConfigError, match="viscous.n"):
            config.with_overrides(n=2)

@pytest.mark.unit
def test_config_record_roundtrip(tmp_path, sample_config_dict):
    """Test that the recorded configuration parses back unchanged."""
    original = ExperimentConfig.parse(sample_config_dict)

    config_file = tmp_path / "config.json"
    config_file.write_text(pyjson5.encode(original.to_record()))

    loaded = ExperimentConfig.from_json(str(config_file))
    assert loaded == original
