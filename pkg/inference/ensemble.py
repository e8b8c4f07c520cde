"""
Weighted Ensemble
Spec file, weighted averaging of per-model predictions, and cross-run comparison
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from data.graph import MolecularGraph
from models.factory import load_model
from training.folds import SUBMISSION_NORMALIZER, submission_plan
from utils.errors import ConfigError, DataFormatError, MolPropError, NumericalError, ShapeError
from utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)

NORMALIZER_TOLERANCE = 1e-12
CROSS_ENVIRONMENT_TOLERANCE = 1e-4


@dataclass(frozen=True)
class EnsembleEntry:
    checkpoint: str
    weight: float


@dataclass
class EnsembleSpec:
    """Ordered (checkpoint, weight) entries and the normalizer (sum of weights)"""

    entries: List[EnsembleEntry] = field(default_factory=list)
    normalizer: float = 0.0

    @property
    def weights(self) -> np.ndarray:
        return np.array([entry.weight for entry in self.entries], dtype=np.float64)


def validate_spec(spec: EnsembleSpec) -> EnsembleSpec:
    """
    Checks entries exist, weights are positive and the normalizer equals their sum

    Raises:
        ConfigError: on any violation
    """
    if not spec.entries:
        raise ConfigError("ensemble spec has no entries")
    for index, entry in enumerate(spec.entries):
        if not (math.isfinite(entry.weight) and entry.weight > 0):
            raise ConfigError(f"entry {index} ({entry.checkpoint}): weight must be positive, got {entry.weight}")
    total = math.fsum(entry.weight for entry in spec.entries)
    if abs(total - spec.normalizer) > NORMALIZER_TOLERANCE:
        raise ConfigError(f"normalizer {spec.normalizer} differs from the sum of weights {total!r}")
    return spec


def ensemble_predict(predictions, spec: EnsembleSpec) -> np.ndarray:
    """
    out_j = sum_i w_i * pred_ij / normalizer

    Each column is summed exactly (math.fsum), so entry order never changes
    the result; the output is clipped into [min_i pred_ij, max_i pred_ij],
    which only removes rounding.

    Args:
        predictions: (M, N) per-model predictions, rows in entry order
        spec: Validated spec with M entries

    Returns:
        (N,) ensemble predictions
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.ndim != 2 or predictions.shape[0] != len(spec.entries):
        raise ShapeError("ensemble_predict (rows vs entries)", predictions.shape, (len(spec.entries),))
    if not np.isfinite(predictions).all():
        raise NumericalError("ensemble_predict: non-finite model prediction")
    products = spec.weights[:, None] * predictions
    totals = np.array([math.fsum(products[:, j]) for j in range(predictions.shape[1])], dtype=np.float64)
    out = totals / spec.normalizer
    if predictions.shape[1] == 0:
        return out
    return np.clip(out, predictions.min(axis=0), predictions.max(axis=0))


# --------------------------------------------------
# Spec file
# --------------------------------------------------
def read_spec(path: Union[str, Path], root: Optional[Union[str, Path]] = None) -> EnsembleSpec:
    """
    Parses an ensemble spec file

    Format: '#' comments, one 'normalizer <value>' line, then one
    '<weight><TAB><checkpoint path>' line per entry. Relative checkpoint
    paths resolve against root (default: the spec file's directory).

    Raises:
        DataFormatError: malformed line (with its number)
    """
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"ensemble spec not found: {path}")
    base = Path(root) if root is not None else path.parent
    entries: List[EnsembleEntry] = []
    normalizer: Optional[float] = None
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.split()[0] == "normalizer":
            parts = line.split()
            if len(parts) != 2 or normalizer is not None:
                raise DataFormatError("expected a single 'normalizer <value>' line", line=line_no)
            normalizer = _parse_float(parts[1], line_no)
            continue
        parts = raw.rstrip("\n").split("\t") if "\t" in raw else line.split(None, 1)
        if len(parts) != 2 or not parts[1].strip():
            raise DataFormatError("expected '<weight><TAB><checkpoint>'", line=line_no)
        checkpoint = Path(parts[1].strip())
        if not checkpoint.is_absolute():
            checkpoint = base / checkpoint
        entries.append(EnsembleEntry(str(checkpoint), _parse_float(parts[0].strip(), line_no)))
    if normalizer is None:
        raise DataFormatError(f"{path}: missing 'normalizer' line")
    return EnsembleSpec(entries=entries, normalizer=normalizer)


def _parse_float(text: str, line_no: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"not a number: {text!r}", line=line_no) from None


def write_spec(path: Union[str, Path], spec: EnsembleSpec, header: Sequence[str] = ()) -> Path:
    lines = [f"# {text}" for text in header]
    lines.append(f"normalizer {spec.normalizer!r}")
    lines.extend(f"{entry.weight!r}\t{entry.checkpoint}" for entry in spec.entries)
    return atomic_write_text(path, "\n".join(lines) + "\n")


def submission_spec(checkpoint_dir: str = "checkpoints") -> EnsembleSpec:
    """The 18-entry final-submission spec, checkpoints named after their runs"""
    entries = [EnsembleEntry(f"{checkpoint_dir}/{run.name}.ckpt", run.weight) for run in submission_plan()]
    return EnsembleSpec(entries=entries, normalizer=SUBMISSION_NORMALIZER)


# --------------------------------------------------
# Prediction files
# --------------------------------------------------
def write_predictions(path: Union[str, Path], ids: Sequence[str], values: Sequence[float]) -> Path:
    if len(ids) != len(values):
        raise ShapeError("write_predictions", (len(ids),), (len(values),))
    text = "".join(f"{mol_id}\t{float(value)!r}\n" for mol_id, value in zip(ids, values))
    return atomic_write_text(path, text)


def read_predictions(path: Union[str, Path]) -> Dict[str, float]:
    predictions: Dict[str, float] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 2:
            raise DataFormatError("expected '<id><TAB><prediction>'", line=line_no)
        if parts[0] in predictions:
            raise DataFormatError(f"duplicate molecule id {parts[0]!r}", line=line_no)
        predictions[parts[0]] = _parse_float(parts[1], line_no)
    return predictions


@dataclass
class Comparison:
    n: int
    mae: float
    max_abs: float
    tolerance: float

    @property
    def within_tolerance(self) -> bool:
        return self.mae <= self.tolerance


def compare_predictions(
    a: Union[str, Path, Dict[str, float]],
    b: Union[str, Path, Dict[str, float]],
    tol: float = CROSS_ENVIRONMENT_TOLERANCE,
) -> Comparison:
    """
    MAE between two prediction sets keyed by molecule id

    Raises:
        DataFormatError: the two sets cover different molecules
    """
    left = a if isinstance(a, dict) else read_predictions(a)
    right = b if isinstance(b, dict) else read_predictions(b)
    if set(left) != set(right):
        only = sorted(set(left) ^ set(right))
        raise DataFormatError(f"prediction sets differ in {len(only)} ids (first: {only[0]})")
    if not left:
        return Comparison(0, 0.0, 0.0, tol)
    diff = np.array([abs(left[mol_id] - right[mol_id]) for mol_id in left], dtype=np.float64)
    return Comparison(len(diff), float(diff.mean()), float(diff.max()), tol)


# --------------------------------------------------
# Inference
# --------------------------------------------------
def _entry_predictions(index: int, checkpoint: str, graphs: Sequence[MolecularGraph], batch_size: int) -> np.ndarray:
    try:
        model, params = load_model(checkpoint)
        fgs = model.featurizer().featurize_all(graphs)
        return model.predict(params, fgs, batch_size)
    except MolPropError as e:
        raise _entry_error(index, checkpoint, e) from e


def _entry_error(index: int, checkpoint: str, error: MolPropError) -> MolPropError:
    # Plain message plus exit code: survives the trip back from a worker process
    wrapped = MolPropError(f"ensemble entry {index} ({checkpoint}): {error}")
    wrapped.exit_code = error.exit_code
    return wrapped


def run_inference(
    spec: EnsembleSpec,
    graphs: Sequence[MolecularGraph],
    workers: int = 1,
    batch_size: int = 256,
) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """
    Per-model eval-mode predictions followed by the weighted reduction

    Args:
        spec: Ensemble spec (validated here)
        graphs: Molecules to predict
        workers: Processes for per-model inference (1 = serial)
        batch_size: Molecules per forward pass

    Returns:
        (ids, ensemble predictions (N,), per-model predictions (M, N))
    """
    validate_spec(spec)
    graphs = list(graphs)
    ids = [g.mol_id for g in graphs]
    logger.info(f"Ensembling {len(spec.entries)} checkpoints over {len(graphs)} molecules (workers={workers})")
    if workers > 1 and len(spec.entries) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_entry_predictions, i, entry.checkpoint, graphs, batch_size)
                for i, entry in enumerate(spec.entries)
            ]
            rows = [future.result() for future in futures]
    else:
        rows = [_entry_predictions(i, entry.checkpoint, graphs, batch_size) for i, entry in enumerate(spec.entries)]
    per_model = np.vstack(rows) if graphs else np.zeros((len(spec.entries), 0))
    return ids, ensemble_predict(per_model, spec), per_model
