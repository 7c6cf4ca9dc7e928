# tests/test_config_loader.py
import pytest
from pydantic import ValidationError

from src.models.config_models import PipelineConfig
from src.utils.config_loader import DEFAULT_CONFIG_PATH, apply_overrides, load_config


def test_bundled_config_matches_defaults():
    assert DEFAULT_CONFIG_PATH.exists()
    assert load_config() == PipelineConfig()


def test_partial_config_fills_defaults(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("fusion:\n  k: 50\nstages:\n  hlatr: false\n")
    config = load_config(path)
    assert config.fusion.k == 50
    assert config.fusion.depth == 1000
    assert not config.stages.hlatr
    assert config.hlatr.d_model == 64


@pytest.mark.parametrize("content", [
    "fusion:\n  k: 0\n",
    "hlatr:\n  d_model: 10\n  n_heads: 4\n",
    "corpus:\n  window: 10\n  stride: 20\n",
    "sparse:\n  b: 1.5\n",
    "ranking:\n  unknown_knob: 1\n",
    "fusion:\n  sources:\n    - {name: a, kind: bm25, weight: 0}\n",
    "fusion:\n  sources:\n    - {name: ext, kind: run}\n",
])
def test_invalid_values_are_rejected(tmp_path, content):
    path = tmp_path / "config.yaml"
    path.write_text(content)
    with pytest.raises(ValidationError):
        load_config(path)


def test_unreadable_configs(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.yaml")
    path = tmp_path / "broken.yaml"
    path.write_text("fusion: [unclosed\n")
    with pytest.raises(ValueError, match="YAML"):
        load_config(path)
    path.write_text("- just\n- a list\n")
    with pytest.raises(ValueError, match="mapping"):
        load_config(path)


def test_global_flags_override_every_seed():
    config = apply_overrides(PipelineConfig(), seed=7, threads=3, output_dir="out", log_level="DEBUG")
    assert (config.runtime.seed, config.hlatr.seed, config.synth.seed, config.ranking.scorer.seed) == (7, 7, 7, 7)
    assert config.runtime.threads == 3
    assert config.runtime.output_dir == "out"
    assert config.runtime.log_level == "DEBUG"
    assert apply_overrides(config) == config
