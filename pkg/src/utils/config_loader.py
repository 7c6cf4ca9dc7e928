# src/utils/config_loader.py
import yaml
from pathlib import Path
from typing import Optional, Union

from ..models.config_models import PipelineConfig

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent.parent / 'config.yaml'


def load_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """Loads and validates the pipeline configuration (the root config.yaml by default)."""
    config_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found at: {config_path}")

    with open(config_path, 'r', encoding='utf-8') as f:
        try:
            raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValueError(f"Error parsing YAML file: {e}")

    if not isinstance(raw, dict):
        raise ValueError(f"Configuration root in {config_path} must be a mapping.")
    return PipelineConfig.model_validate(raw)


def apply_overrides(
    config: PipelineConfig,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    output_dir: Optional[str] = None,
    log_level: Optional[str] = None,
) -> PipelineConfig:
    """Returns a copy of the config with global command-line flags applied."""
    data = config.model_dump()
    if seed is not None:
        for section in ('runtime', 'hlatr', 'synth'):
            data[section]['seed'] = seed
        data['ranking']['scorer']['seed'] = seed
    if threads is not None:
        data['runtime']['threads'] = threads
    if output_dir is not None:
        data['runtime']['output_dir'] = output_dir
    if log_level is not None:
        data['runtime']['log_level'] = log_level
    return PipelineConfig.model_validate(data)
