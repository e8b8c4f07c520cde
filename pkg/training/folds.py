"""
Cross-Validation Folds
Seeded fold assignment and the run list of the final submission
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from utils.errors import ConfigError, DataFormatError

logger = logging.getLogger(__name__)

ALL_FOLDS = "All"

# Ensemble weights in results-table row order
GRAPHORMER_WEIGHTS = (0.05, 0.05, 0.05, 0.08, 0.05, 0.08, 0.08, 0.05, 0.05, 0.08)
EXPC_WEIGHTS = (0.05, 0.05, 0.05, 0.03, 0.05, 0.03, 0.05, 0.03)
SUBMISSION_NORMALIZER = 0.96


@dataclass(frozen=True)
class FoldRun:
    """
    One training run of a fold plan

    val_fold is None for a run trained on every fold ('All').
    """

    train_folds: Tuple[int, ...]
    val_fold: Optional[int]
    seed: int

    @property
    def label(self) -> str:
        return ALL_FOLDS if self.val_fold is None else str(self.val_fold)


@dataclass
class FoldPlan:
    """Assignment of molecule ids to folds 0 .. n_folds - 1"""

    n_folds: int
    seed: int
    assignment: Dict[str, int] = field(default_factory=dict)

    def fold_ids(self, fold: int) -> List[str]:
        return [mol_id for mol_id, k in self.assignment.items() if k == fold]

    def fold_sizes(self) -> List[int]:
        counts = np.bincount(list(self.assignment.values()), minlength=self.n_folds)
        return [int(c) for c in counts]

    def run(self, fold: Union[int, str], seed: int) -> FoldRun:
        """
        Args:
            fold: Validation fold index, or 'All' to train on every fold
            seed: Training seed of the run
        """
        if str(fold) == ALL_FOLDS:
            return FoldRun(tuple(range(self.n_folds)), None, seed)
        fold = int(fold)
        if not 0 <= fold < self.n_folds:
            raise ConfigError(f"fold {fold} outside [0, {self.n_folds})")
        return FoldRun(tuple(k for k in range(self.n_folds) if k != fold), fold, seed)

    def split(self, run: FoldRun) -> Tuple[List[str], List[str]]:
        """(train ids, validation ids) of a run, each in assignment order"""
        train_folds = set(run.train_folds)
        train = [mol_id for mol_id, k in self.assignment.items() if k in train_folds]
        val = [] if run.val_fold is None else self.fold_ids(run.val_fold)
        return train, val

    def to_dict(self) -> dict:
        return {"n_folds": self.n_folds, "seed": self.seed, "assignment": dict(self.assignment)}

    @classmethod
    def from_dict(cls, record: dict) -> "FoldPlan":
        return cls(int(record["n_folds"]), int(record["seed"]), {str(k): int(v) for k, v in record["assignment"].items()})


def kfold_split(ids: Sequence[str], n_folds: int = 8, seed: int = 0) -> FoldPlan:
    """
    Seeded shuffle, then round-robin fold assignment

    Args:
        ids: Unique molecule ids
        n_folds: Number of folds
        seed: Shuffle seed

    Returns:
        FoldPlan whose fold sizes differ by at most one
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise DataFormatError("kfold_split: molecule ids are not unique")
    if n_folds < 1:
        raise ConfigError(f"n_folds must be >= 1, got {n_folds}")
    if n_folds > len(ids):
        raise ConfigError(f"n_folds {n_folds} exceeds the number of molecules {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    assignment = {ids[int(j)]: position % n_folds for position, j in enumerate(order)}
    # Keep dataset order in the mapping itself
    assignment = {mol_id: assignment[mol_id] for mol_id in ids}
    logger.info(f"Split {len(ids)} molecules into {n_folds} folds (seed={seed})")
    return FoldPlan(n_folds=n_folds, seed=seed, assignment=assignment)


@dataclass(frozen=True)
class SubmissionRun:
    model: str
    fold: str
    seed: int
    weight: float

    @property
    def name(self) -> str:
        return f"{self.model}-fold{self.fold}-seed{self.seed}"


def submission_plan() -> List[SubmissionRun]:
    """
    The 18 runs of the final submission, results-table order, each with its ensemble weight

    Graphormer folds 0-7 (seed = fold), Graphormer 'All' with seeds 0 and 1,
    then ExpC* folds 0-7 (seed = fold).
    """
    graphormer = [("graphormer", str(k), k) for k in range(8)] + [
        ("graphormer", ALL_FOLDS, 0),
        ("graphormer", ALL_FOLDS, 1),
    ]
    expc = [("expc", str(k), k) for k in range(8)]
    runs = [
        SubmissionRun(model, fold, seed, weight)
        for (model, fold, seed), weight in zip(graphormer, GRAPHORMER_WEIGHTS)
    ]
    runs += [SubmissionRun(model, fold, seed, weight) for (model, fold, seed), weight in zip(expc, EXPC_WEIGHTS)]
    return runs
