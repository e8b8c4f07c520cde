"""
Model Base
Shared plumbing of the two regressors: vocabulary resolution, initialization, eval-mode prediction
"""

from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from autodiff.tape import Tape, Value
from data.featurizer import FeaturizedGraph, MoleculeFeaturizer, RbfConfig
from data.graph import DatasetSchema
from models.params import ParameterStore, ParamSpec
from utils.errors import ConfigError
from utils.helpers import chunked, derive_rng

logger = logging.getLogger(__name__)


def resolve_vocab(
    declared: Optional[Sequence[int]],
    capacity: Optional[int],
    schema_vocab: Sequence[int],
    label: str,
) -> Tuple[int, ...]:
    """
    Picks the embedding table sizes of one feature group

    Args:
        declared: Explicit per-column sizes, or None
        capacity: Uniform per-column size, or None (takes precedence over declared)
        schema_vocab: Sizes announced by the dataset header
        label: 'atom' or 'bond', for error messages

    Returns:
        Per-column sizes, one per schema column

    Raises:
        ConfigError: the schema has values the tables cannot index
    """
    schema_vocab = tuple(int(v) for v in schema_vocab)
    if capacity is not None:
        sizes = (int(capacity),) * len(schema_vocab)
    elif declared is not None:
        sizes = tuple(int(v) for v in declared)
    else:
        return schema_vocab
    if len(sizes) != len(schema_vocab):
        raise ConfigError(f"{label} vocabulary has {len(sizes)} columns, dataset has {len(schema_vocab)}")
    for column, (size, needed) in enumerate(zip(sizes, schema_vocab)):
        if needed > size:
            raise ConfigError(f"{label} column {column}: dataset vocabulary {needed} exceeds configured {size}")
    return sizes


def column_offsets(vocab: Sequence[int]) -> np.ndarray:
    """Row offset of every column inside one concatenated embedding table"""
    return np.concatenate([[0], np.cumsum(vocab)[:-1]]).astype(np.int64) if len(vocab) else np.zeros(0, np.int64)


class RegressionModel(ABC):
    """
    A graph-level scalar regressor over FeaturizedGraph batches

    Subclasses declare their parameters through parameter_specs and implement
    collate + forward; everything else (initialization, counting, eval-mode
    prediction) lives here.
    """

    kind: str = ""

    def __init__(self, cfg):
        self.cfg = cfg

    # --------------------------------------------------
    # Declaration
    # --------------------------------------------------
    @abstractmethod
    def parameter_specs(self) -> Dict[str, ParamSpec]:
        ...

    @property
    @abstractmethod
    def spatial_mode(self) -> str:
        ...

    @property
    def rbf(self) -> RbfConfig:
        return self.cfg.rbf

    def featurizer(self, workers: int = 1) -> MoleculeFeaturizer:
        return MoleculeFeaturizer(self.rbf, self.spatial_mode, workers)

    def with_schema(self, schema: DatasetSchema) -> "RegressionModel":
        return type(self)(self.cfg.resolve(schema))

    def count_parameters(self) -> int:
        return int(sum(spec.size for spec in self.parameter_specs().values()))

    def init_params(self, seed: int) -> ParameterStore:
        return ParameterStore.initialize(self.parameter_specs(), derive_rng(seed, "init", self.kind))

    # --------------------------------------------------
    # Computation
    # --------------------------------------------------
    @abstractmethod
    def collate(self, fgs: Sequence[FeaturizedGraph], augment: bool = False, seed: int = 0, epoch: int = 0):
        ...

    @abstractmethod
    def forward(
        self,
        tape: Tape,
        params: Dict[str, Value],
        batch,
        train: bool = False,
        seed: int = 0,
        step: int = 0,
        trace: Optional[List[np.ndarray]] = None,
    ) -> Value:
        """Predictions for every molecule of the batch, shape (B,)"""

    def predict(self, params: ParameterStore, fgs: Sequence[FeaturizedGraph], batch_size: int = 256) -> np.ndarray:
        """
        Eval-mode predictions (no dropout, no augmentation), in input order

        Args:
            params: Parameter values
            fgs: Featurized molecules
            batch_size: Molecules per forward pass

        Returns:
            float64 array of len(fgs) predictions
        """
        if not fgs:
            return np.zeros(0, dtype=np.float64)
        outputs = []
        for group in chunked(list(fgs), batch_size):
            tape = Tape()
            pred = self.forward(tape, params.bind(tape), self.collate(group), train=False)
            outputs.append(np.array(pred.data, dtype=np.float64))
        return np.concatenate(outputs)
