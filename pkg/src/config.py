"""
Configuration loading, logging setup and seed splitting.

Precedence: CLI overrides > user config file > config/config.yaml defaults.
A user config file may be nested YAML, flat YAML with dotted keys
(``ode.method: rk4``) or plain ``section.key=value`` lines.
"""

from __future__ import annotations

import copy
import logging
import os
import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Mapping, Optional, Union

import numpy as np
import yaml
from dotenv import load_dotenv

if TYPE_CHECKING:
    from src.data.synthetic import SyntheticConfig
    from src.evaluation.predictor import EvalConfig
    from src.models.anchors import AnchorConfig
    from src.models.networks import ModelConfig
    from src.models.ode import SolverConfig
    from src.models.train import TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "config.yaml"
LOG_LEVEL_ENV = "STCN_LOG_LEVEL"


def deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``update`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _expand_dotted(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if isinstance(value, Mapping):
            value = _expand_dotted(value)
        parts = str(key).split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        if isinstance(value, dict) and isinstance(node.get(parts[-1]), dict):
            node[parts[-1]] = deep_merge(node[parts[-1]], value)
        else:
            node[parts[-1]] = value
    return nested


def _read_config_file(path: Path) -> Dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    loaded = yaml.safe_load(text) if text.strip() else {}
    if isinstance(loaded, Mapping):
        return _expand_dotted(loaded)
    # key=value lines
    flat = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key=value', got {line!r}")
        key, raw = line.split("=", 1)
        flat[key.strip()] = yaml.safe_load(raw.strip())
    return _expand_dotted(flat)


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    defaults_path: Union[str, Path] = DEFAULT_CONFIG_PATH,
) -> Dict[str, Any]:
    """
    Resolve the experiment configuration.

    Args:
        path: Optional user config file
        overrides: Dotted-key overrides from the command line; ``None`` values are skipped
        defaults_path: Built-in defaults file

    Returns:
        Nested configuration dictionary
    """
    load_dotenv()
    defaults_path = Path(defaults_path)
    config = _read_config_file(defaults_path) if defaults_path.exists() else {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        config = deep_merge(config, _read_config_file(path))
        logger.info(f"Loaded config overrides from {path}")
    if overrides:
        config = deep_merge(config, _expand_dotted({k: v for k, v in overrides.items() if v is not None}))
    env_level = os.environ.get(LOG_LEVEL_ENV)
    if env_level:
        config.setdefault("logging", {})["level"] = env_level.upper()
    return config


def setup_logging(level: str = "INFO", fmt: Optional[str] = None,
                  log_file: Optional[Union[str, Path]] = None) -> None:
    """Configure the root logger with a stream handler and an optional file handler."""
    handlers = [logging.StreamHandler()]
    if log_file:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=fmt or "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


def derive_seed(root: int, name: str) -> int:
    """Independent, order-free child seed for the subsystem ``name``."""
    seq = np.random.SeedSequence([int(root), zlib.crc32(name.encode("utf-8"))])
    return int(seq.generate_state(1)[0])


def make_rng(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, name))


def build_section(cls, values: Optional[Mapping[str, Any]], **extra):
    """
    Instantiate the dataclass ``cls`` from a config section.

    Raises:
        ValueError: the section contains keys ``cls`` does not define
    """
    values = dict(values or {})
    values.update({k: v for k, v in extra.items() if v is not None})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**values)


@dataclass
class ExperimentConfig:
    """Typed view over the resolved configuration dictionary."""

    data: "SyntheticConfig"
    model: "ModelConfig"
    solver: "SolverConfig"
    anchors: "AnchorConfig"
    train: "TrainConfig"
    eval: "EvalConfig"
    output_dir: Path
    seed: int
    n_jobs: int
    raw: Dict[str, Any]

    @classmethod
    def from_dict(cls, config: Mapping[str, Any]) -> "ExperimentConfig":
        from src.data.synthetic import SyntheticConfig
        from src.evaluation.predictor import EvalConfig
        from src.models.anchors import AnchorConfig
        from src.models.networks import ModelConfig
        from src.models.ode import SolverConfig
        from src.models.train import TrainConfig

        misc = config.get("misc", {}) or {}
        seed = int(misc.get("seed", 42))
        data_section = {k: v for k, v in (config.get("data") or {}).items()
                        if k not in ("path", "test_path", "test_per_pattern", "normalize")}
        data = build_section(SyntheticConfig, data_section, seed=seed)
        model = build_section(ModelConfig, config.get("model"))
        solver = build_section(SolverConfig, config.get("ode"))
        anchors = build_section(AnchorConfig, config.get("anchors"))
        train = build_section(TrainConfig, config.get("train"))
        evaluation = build_section(EvalConfig, config.get("eval"))
        for part in (data, model, solver, anchors, train, evaluation):
            part.validate()
        output_dir = Path((config.get("output") or {}).get("dir", "runs/default"))
        return cls(data, model, solver, anchors, train, evaluation, output_dir,
                   seed, int(misc.get("n_jobs", 1)), dict(config))
