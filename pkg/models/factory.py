"""
Model Factory
Builds a model from its kind and config record, and restores models from checkpoints
"""

from pathlib import Path
from typing import Tuple, Union
import logging

from models.base import RegressionModel
from models.expc import ExpCConfig, ExpCModel
from models.graphormer import GraphormerConfig, GraphormerModel
from models.params import ParameterStore, load_checkpoint
from utils.errors import CheckpointError, ConfigError

logger = logging.getLogger(__name__)

MODEL_CLASSES = {
    "graphormer": (GraphormerModel, GraphormerConfig),
    "expc": (ExpCModel, ExpCConfig),
}


def build_model(kind: str, cfg: Union[dict, GraphormerConfig, ExpCConfig]) -> RegressionModel:
    """
    Args:
        kind: 'graphormer' or 'expc'
        cfg: Config object or its to_dict() record
    """
    if kind not in MODEL_CLASSES:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {tuple(MODEL_CLASSES)}")
    model_cls, cfg_cls = MODEL_CLASSES[kind]
    if isinstance(cfg, dict):
        try:
            cfg = cfg_cls.from_dict(cfg)
        except TypeError as e:
            raise ConfigError(f"invalid {kind} config record: {e}") from e
    if not isinstance(cfg, cfg_cls):
        raise ConfigError(f"{kind} model needs a {cfg_cls.__name__}, got {type(cfg).__name__}")
    return model_cls(cfg)


def load_model(path: Union[str, Path]) -> Tuple[RegressionModel, ParameterStore]:
    """
    Restores (model, parameters) from a checkpoint

    Raises:
        CheckpointError: unreadable file, or parameter names / shapes disagree with the stored config
    """
    checkpoint = load_checkpoint(path)
    model = build_model(checkpoint.model, checkpoint.config)
    try:
        checkpoint.params.check_specs(model.parameter_specs())
    except (CheckpointError, ConfigError) as e:
        raise CheckpointError(f"{path}: {e}") from e
    return model, checkpoint.params
