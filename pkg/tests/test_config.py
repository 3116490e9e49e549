"""Tests for JSON run configuration and the output manifest."""

import json

import pytest


class TestRunConfig:
    def test_defaults(self):
        """An empty document yields every section's defaults."""
        from reservesets.config import config_from_dict

        config = config_from_dict({})

        assert config.data.n_hours == 4096
        assert config.system.seed == 42
        assert config.train.iterations == 200
        assert config.eval.tau == 0.95

    def test_nested_sections(self):
        """Nested objects build nested dataclasses."""
        from reservesets.config import config_from_dict

        config = config_from_dict({"data": {"params": {"ar_coeff": 0.0}, "n_hours": 96}, "train": {"eps": 0.2}})

        assert config.data.params.ar_coeff == 0.0
        assert config.data.n_hours == 96
        assert config.train.eps == 0.2

    def test_lists_become_tuples(self):
        """JSON arrays are frozen into tuples."""
        from reservesets.config import config_from_dict

        config = config_from_dict({"eval": {"taus": [0.9, 0.95], "tight_zones": [1, 3]}})
        assert config.eval.taus == (0.9, 0.95)
        assert config.eval.tight_zones == (1, 3)

    def test_unknown_key(self):
        """Unknown keys are reported with their dotted path."""
        from reservesets.config import config_from_dict
        from reservesets.errors import ConfigError

        with pytest.raises(ConfigError, match="train.step") as info:
            config_from_dict({"train": {"step": 0.1}})
        assert info.value.key == "train.step"

    def test_invalid_value(self):
        """Values the section rejects surface as a ConfigError naming the section."""
        from reservesets.config import config_from_dict
        from reservesets.errors import ConfigError

        with pytest.raises(ConfigError) as info:
            config_from_dict({"train": {"tau": 1.5}})
        assert info.value.key == "train"

    def test_section_not_object(self):
        """A section must be a JSON object."""
        from reservesets.config import config_from_dict
        from reservesets.errors import ConfigError

        with pytest.raises(ConfigError, match="eval"):
            config_from_dict({"eval": [1, 2]})

    def test_round_trip(self):
        """The archived JSON rebuilds an equal configuration."""
        from reservesets.config import config_from_dict, config_to_json

        config = config_from_dict({"contextual": {"iterations": 5}, "eval": {"include_oracle": True}})
        assert config_from_dict(config_to_json(config)) == config

    def test_with_seed(self):
        """A seed override reaches every section."""
        from reservesets.config import config_from_dict

        config = config_from_dict({}, seed=7)

        assert config.data.params.seed == 7
        assert config.system.seed == 7
        assert (config.train.seed, config.contextual.seed, config.eval.seed) == (7, 7, 7)

    def test_config_hash(self):
        """Equal configurations hash equally and any change alters the hash."""
        from reservesets.config import config_from_dict, config_hash

        a = config_hash(config_from_dict({}))
        assert a == config_hash(config_from_dict({}))
        assert a.startswith("sha256-")
        assert a != config_hash(config_from_dict({"train": {"eps": 0.25}}))


class TestLoadConfig:
    def test_no_path(self):
        """Without a file the defaults are used."""
        from reservesets.config import RunConfig, load_config

        assert load_config(None) == RunConfig()

    def test_reads_file(self, tmp_path):
        """A JSON file is parsed into a RunConfig."""
        from reservesets.config import load_config

        path = tmp_path / "run.json"
        path.write_text(json.dumps({"data": {"n_hours": 200}}))
        assert load_config(path).data.n_hours == 200

    def test_invalid_json(self, tmp_path):
        """Malformed JSON is a ConfigError carrying the line number."""
        from reservesets.config import load_config
        from reservesets.errors import ConfigError

        path = tmp_path / "run.json"
        path.write_text('{\n  "data": ,\n}')
        with pytest.raises(ConfigError, match="line 2"):
            load_config(path)


class TestManifest:
    def test_missing_manifest(self, tmp_path):
        """A directory without a manifest reads as empty."""
        from reservesets.config import read_manifest

        manifest = read_manifest(tmp_path / "manifest.json")
        assert manifest.files == {}
        assert manifest.version == 1

    def test_record_outputs(self, tmp_path):
        """Outputs and the archived config are listed with integrity and size."""
        from reservesets.config import compute_integrity, config_from_dict, config_hash, record_outputs

        out = tmp_path / "out.csv"
        out.write_text("a,b\n1,2\n")
        config = config_from_dict({})
        manifest = record_outputs(tmp_path, config, [out])

        assert list(manifest.files) == ["config.json", "out.csv"]
        assert manifest.files["out.csv"].integrity == compute_integrity(out)
        assert manifest.files["out.csv"].size == 8
        assert manifest.config_hash == config_hash(config)
        assert (tmp_path / "manifest.json").exists()

    def test_manifest_round_trip(self, tmp_path):
        """A written manifest reads back with the same entries."""
        from reservesets.config import config_from_dict, read_manifest, record_outputs

        out = tmp_path / "x.txt"
        out.write_text("x")
        written = record_outputs(tmp_path, config_from_dict({}), [out])
        back = read_manifest(tmp_path / "manifest.json")

        assert back.files == written.files
        assert back.config_hash == written.config_hash

    def test_record_merges(self, tmp_path):
        """Later records keep earlier entries in the same directory."""
        from reservesets.config import config_from_dict, record_outputs

        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        a.write_text("a")
        b.write_text("b")
        record_outputs(tmp_path, config_from_dict({}), [a])
        manifest = record_outputs(tmp_path, config_from_dict({}), [b])

        assert set(manifest.files) == {"a.txt", "b.txt", "config.json"}

    def test_verify_detects_changes(self, tmp_path):
        """Edited or deleted outputs are reported."""
        from reservesets.config import config_from_dict, record_outputs, verify_manifest

        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        a.write_text("a")
        b.write_text("b")
        record_outputs(tmp_path, config_from_dict({}), [a, b])
        assert verify_manifest(tmp_path) == []

        a.write_text("changed")
        b.unlink()
        assert verify_manifest(tmp_path) == ["a.txt", "b.txt"]
