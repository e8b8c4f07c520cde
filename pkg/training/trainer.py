"""
Training Loop
Step (Graphormer) and epoch (ExpC*) loops with evaluation, checkpoint selection and metric logs
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union
import json
import logging
import math

import numpy as np

from autodiff.tape import Tape
from data.featurizer import FeaturizedGraph
from models.base import RegressionModel
from models.database import RunRegistry
from models.factory import load_model
from models.params import ParameterStore, save_checkpoint
from training.folds import FoldPlan, FoldRun
from training.optim import (
    AdamState,
    ExpCTrainConfig,
    GraphormerTrainConfig,
    adam_step,
    clip_grad_norm,
    lr_linear_warmup_decay,
    lr_step_decay,
    mae_loss,
)
from utils.errors import ConfigError, DataFormatError, NumericalError
from utils.helpers import atomic_write_text, chunked, derive_rng

logger = logging.getLogger(__name__)

TrainConfig = Union[GraphormerTrainConfig, ExpCTrainConfig]


@dataclass
class FitResult:
    checkpoint: Path
    metric_log: Path
    params: ParameterStore
    best_step: int
    best_val_mae: Optional[float]
    final_train_mae: float
    history: List[Dict] = field(default_factory=list)


# --------------------------------------------------
# Evaluation
# --------------------------------------------------
def evaluate_mae(
    model: RegressionModel, params: ParameterStore, fgs: Sequence[FeaturizedGraph], batch_size: int = 256
) -> float:
    """
    Eval-mode MAE (no dropout, no augmentation)

    Raises:
        DataFormatError: empty set or a molecule without a target
    """
    if not fgs:
        raise DataFormatError("cannot evaluate MAE on an empty set")
    _require_targets(fgs)
    targets = np.array([fg.target for fg in fgs], dtype=np.float64)
    return float(np.mean(np.abs(model.predict(params, fgs, batch_size) - targets)))


def evaluate_checkpoint(path: Union[str, Path], fgs: Sequence[FeaturizedGraph], batch_size: int = 256) -> float:
    model, params = load_model(path)
    return evaluate_mae(model, params, fgs, batch_size)


def _require_targets(fgs: Sequence[FeaturizedGraph]) -> None:
    missing = [fg.mol_id for fg in fgs if fg.target is None]
    if missing:
        raise DataFormatError(f"{len(missing)} molecules have no target (first: {missing[0]})")


# --------------------------------------------------
# Schedule iteration
# --------------------------------------------------
def _schedule(cfg: TrainConfig, n_train: int, seed: int) -> Iterator[Tuple[int, int, float, np.ndarray, bool]]:
    """
    Yields (step, epoch, lr, batch indices, evaluate after this step)

    Every epoch reshuffles the training set with a generator keyed by (seed, epoch).
    """
    if isinstance(cfg, GraphormerTrainConfig):
        step, epoch = 0, 0
        while step < cfg.max_steps:
            order = derive_rng(seed, "shuffle", epoch).permutation(n_train)
            for group in chunked(order, cfg.batch_size):
                step += 1
                last = step == cfg.max_steps
                yield step, epoch, lr_linear_warmup_decay(step, cfg), np.asarray(group), last or step % cfg.eval_interval == 0
                if last:
                    return
            epoch += 1
    else:
        step = 0
        for epoch in range(cfg.max_epochs):
            lr = lr_step_decay(epoch, cfg)
            order = derive_rng(seed, "shuffle", epoch).permutation(n_train)
            groups = list(chunked(order, cfg.batch_size))
            for position, group in enumerate(groups):
                step += 1
                yield step, epoch, lr, np.asarray(group), position == len(groups) - 1


def _check_pairing(model: RegressionModel, cfg: TrainConfig) -> None:
    expected = GraphormerTrainConfig if model.kind == "graphormer" else ExpCTrainConfig
    if not isinstance(cfg, expected):
        raise ConfigError(f"{model.kind} trains with {expected.__name__}, got {type(cfg).__name__}")


# --------------------------------------------------
# Fit
# --------------------------------------------------
def train_step(
    model: RegressionModel,
    params: ParameterStore,
    state: AdamState,
    batch_fgs: Sequence[FeaturizedGraph],
    lr: float,
    cfg: TrainConfig,
    seed: int,
    step: int,
    epoch: int,
) -> float:
    """One forward / backward / Adam update; returns the batch loss"""
    tape = Tape()
    leaves = params.bind(tape)
    batch = model.collate(batch_fgs, augment=getattr(cfg, "augment", False), seed=seed, epoch=epoch)
    loss = mae_loss(model.forward(tape, leaves, batch, train=True, seed=seed, step=step), batch.targets)
    value = loss.item()
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss {value} at step {step} (batch {[fg.mol_id for fg in batch_fgs]})")
    tape.backward(loss)
    grads = {name: leaves[name].grad for name in params}
    if cfg.grad_clip_norm is not None:
        grads = clip_grad_norm(grads, cfg.grad_clip_norm)
    adam_step(params, grads, state, lr, cfg)
    return value


def fit(
    model: RegressionModel,
    data: Sequence[FeaturizedGraph],
    train_cfg: TrainConfig,
    run: FoldRun,
    out_dir: Union[str, Path],
    plan: Optional[FoldPlan] = None,
    run_name: str = "run",
    registry: Optional[RunRegistry] = None,
    run_id: Optional[str] = None,
    eval_batch_size: int = 256,
) -> FitResult:
    """
    Trains one model on one fold-plan run

    Args:
        model: Model with resolved config
        data: Featurized molecules (every one labeled)
        train_cfg: GraphormerTrainConfig or ExpCTrainConfig matching the model
        run: Train folds, validation fold (None for 'All') and seed
        out_dir: Where the checkpoint and metric log go
        plan: Fold assignment; None trains on every molecule
        run_name: File stem of the artifacts
        registry: Optional run registry receiving the metric rows
        run_id: Registry run id
        eval_batch_size: Molecules per evaluation forward pass

    Returns:
        FitResult. With a validation fold the checkpoint is the best
        validation evaluation (earliest on ties); otherwise the last step.

    Raises:
        NumericalError: non-finite loss, with step and batch ids
    """
    _check_pairing(model, train_cfg)
    by_id = {fg.mol_id: fg for fg in data}
    if plan is not None:
        train_ids, val_ids = plan.split(run)
        missing = [mol_id for mol_id in train_ids + val_ids if mol_id not in by_id]
        if missing:
            raise DataFormatError(f"fold plan names {len(missing)} molecules absent from the data (first: {missing[0]})")
        train = [by_id[mol_id] for mol_id in train_ids]
        val = [by_id[mol_id] for mol_id in val_ids]
    else:
        if run.val_fold is not None:
            raise ConfigError("a validation fold needs a fold plan")
        train, val = list(data), []
    if not train:
        raise DataFormatError("training set is empty")
    _require_targets(train)
    _require_targets(val)

    seed = run.seed
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / f"{run_name}.ckpt"
    log_path = out_dir / f"{run_name}.metrics.jsonl"

    params = model.init_params(seed)
    state = AdamState.zeros_like(params)
    logger.info(
        f"Fitting {model.kind} ({params.num_parameters()} params) | fold={run.label} seed={seed} "
        f"train={len(train)} val={len(val)}"
    )

    history: List[Dict] = []
    best_params = params.copy()
    best_val: Optional[float] = None
    best_step = 0
    losses: List[float] = []

    def evaluate(step: int, epoch: int, lr: float) -> None:
        nonlocal best_params, best_val, best_step
        train_mae = evaluate_mae(model, params, train, eval_batch_size)
        val_mae = evaluate_mae(model, params, val, eval_batch_size) if val else None
        row = {
            "step": step,
            "epoch": epoch,
            "lr": lr,
            "loss": float(np.mean(losses)) if losses else None,
            "train_mae": train_mae,
            "val_mae": val_mae,
        }
        history.append(row)
        losses.clear()
        val_text = f"{val_mae:.6f}" if val_mae is not None else "-"
        logger.info(f"step {step} epoch {epoch} | lr={lr:.3e} train_mae={train_mae:.6f} val_mae={val_text}")
        if val_mae is None:
            best_params, best_step = params.copy(), step
        elif best_val is None or val_mae < best_val:
            best_params, best_val, best_step = params.copy(), val_mae, step
        atomic_write_text(log_path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in history))

    last = None
    for step, epoch, lr, indices, evaluate_now in _schedule(train_cfg, len(train), seed):
        batch_fgs = [train[int(i)] for i in indices]
        losses.append(train_step(model, params, state, batch_fgs, lr, train_cfg, seed, step, epoch))
        last = (step, epoch, lr)
        if evaluate_now:
            evaluate(step, epoch, lr)

    if last is None:
        # Nothing to train: the initialization is the checkpoint
        evaluate(0, 0, 0.0)

    save_checkpoint(checkpoint_path, best_params, model.kind, model.cfg.to_dict())
    if registry is not None and run_id is not None:
        registry.log_metrics(run_id, history)

    return FitResult(
        checkpoint=checkpoint_path,
        metric_log=log_path,
        params=best_params,
        best_step=best_step,
        best_val_mae=best_val,
        final_train_mae=history[-1]["train_mae"],
        history=history,
    )
