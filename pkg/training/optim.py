"""
Optimization
Loss, learning-rate schedules, Adam and gradient clipping for both training loops
"""

from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import Dict, Mapping, Optional, Tuple
import logging
import math

import numpy as np

from autodiff import ops
from autodiff.tape import Value
from models.params import ParameterStore
from utils.errors import ConfigError, NumericalError, ShapeError

logger = logging.getLogger(__name__)


# --------------------------------------------------
# Training configs
# --------------------------------------------------
@dataclass(frozen=True)
class GraphormerTrainConfig:
    """
    Step-based loop: linear warm-up to peak_lr, then linear decay to zero at max_steps

    eval_interval: steps between validation passes (the last step is always evaluated).
    augment: Laplace bond-distance noise on training batches.
    """

    max_steps: int = 1_500_000
    peak_lr: float = 2e-4
    batch_size: int = 1024
    warmup_steps: int = 10_000
    adam_eps: float = 1e-8
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    grad_clip_norm: Optional[float] = 5.0
    weight_decay: float = 0.0
    eval_interval: int = 500
    augment: bool = True

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.max_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("max_steps and warmup_steps must be >= 0")
        if self.max_steps > 0 and not self.warmup_steps < self.max_steps:
            raise ConfigError(f"warmup_steps {self.warmup_steps} must be < max_steps {self.max_steps}")
        _check_common(self)
        if self.eval_interval < 1:
            raise ConfigError(f"eval_interval must be >= 1, got {self.eval_interval}")

    def to_dict(self) -> dict:
        record = asdict(self)
        record["adam_betas"] = list(self.adam_betas)
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "GraphormerTrainConfig":
        return cls(**record)


@dataclass(frozen=True)
class ExpCTrainConfig:
    """Epoch-based loop with lr = peak_lr * decay_rate ** floor(epoch / decay_step)"""

    max_epochs: int = 100
    batch_size: int = 256
    peak_lr: float = 1e-4
    adam_eps: float = 1e-8
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    lr_decay_rate: float = 0.75
    lr_decay_step: int = 20
    grad_clip_norm: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if not 0.0 < self.lr_decay_rate <= 1.0:
            raise ConfigError(f"lr_decay_rate must be in (0, 1], got {self.lr_decay_rate}")
        if self.lr_decay_step < 1:
            raise ConfigError(f"lr_decay_step must be >= 1, got {self.lr_decay_step}")
        _check_common(self)

    def to_dict(self) -> dict:
        record = asdict(self)
        record["adam_betas"] = list(self.adam_betas)
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "ExpCTrainConfig":
        return cls(**record)


def _check_common(cfg) -> None:
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if not cfg.peak_lr > 0:
        raise ConfigError(f"peak_lr must be positive, got {cfg.peak_lr}")
    if not cfg.adam_eps > 0:
        raise ConfigError(f"adam_eps must be positive, got {cfg.adam_eps}")
    if len(cfg.adam_betas) != 2 or not all(0.0 <= b < 1.0 for b in cfg.adam_betas):
        raise ConfigError(f"adam_betas must be two values in [0, 1), got {cfg.adam_betas}")
    if cfg.weight_decay < 0:
        raise ConfigError(f"weight_decay must be >= 0, got {cfg.weight_decay}")
    if cfg.grad_clip_norm is not None and not cfg.grad_clip_norm > 0:
        raise ConfigError(f"grad_clip_norm must be positive, got {cfg.grad_clip_norm}")


# --------------------------------------------------
# Loss
# --------------------------------------------------
def mae_loss(pred: Value, target) -> Value:
    """
    Mean absolute error; the subgradient at pred == target is 0

    Args:
        pred: (B,) predictions
        target: (B,) targets (array)

    Raises:
        ShapeError: empty batch or length mismatch
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim != 1 or pred.shape != target.shape or pred.shape[0] == 0:
        raise ShapeError("mae_loss", pred.shape, target.shape)
    residual = ops.sub(pred, pred.tape.constant(target, "target"))
    return ops.mean(ops.abs_(residual))


# --------------------------------------------------
# Schedules
# --------------------------------------------------
def lr_linear_warmup_decay(step: int, cfg: GraphormerTrainConfig) -> float:
    """
    peak * step / warmup up to warmup, then linear from peak down to 0 at max_steps

    Raises:
        ValueError: step outside [0, max_steps]
    """
    if not 0 <= step <= cfg.max_steps:
        raise ValueError(f"step {step} outside [0, {cfg.max_steps}]")
    if step <= cfg.warmup_steps:
        if cfg.warmup_steps == 0:
            return cfg.peak_lr
        return cfg.peak_lr * (step / cfg.warmup_steps)
    return cfg.peak_lr * ((cfg.max_steps - step) / (cfg.max_steps - cfg.warmup_steps))


def lr_step_decay(epoch: int, cfg: ExpCTrainConfig) -> float:
    """peak_lr * decay_rate ** floor(epoch / decay_step), a right-continuous step function"""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    # Decimal on the configured literals, so 1e-4 * 0.75 is exactly 7.5e-5
    factor = Decimal(repr(cfg.lr_decay_rate)) ** (epoch // cfg.lr_decay_step)
    return float(Decimal(repr(cfg.peak_lr)) * factor)


# --------------------------------------------------
# Adam
# --------------------------------------------------
@dataclass
class AdamState:
    """First / second moment estimates and the number of steps taken"""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: ParameterStore) -> "AdamState":
        return cls(
            step=0,
            m={name: np.zeros_like(array) for name, array in params.items()},
            v={name: np.zeros_like(array) for name, array in params.items()},
        )


def adam_step(
    params: ParameterStore, grads: Mapping[str, np.ndarray], state: AdamState, lr: float, cfg
) -> Tuple[ParameterStore, AdamState]:
    """
    One bias-corrected Adam update, in place

    theta -= lr * m_hat / (sqrt(v_hat) + eps). A non-zero weight_decay adds
    weight_decay * theta to the gradient (coupled L2, no decoupled term).

    Args:
        params: Parameters (updated in place)
        grads: Gradient per parameter name
        state: Moments (updated in place)
        lr: Learning rate of this step
        cfg: Any config with adam_betas, adam_eps, weight_decay

    Raises:
        ShapeError: gradient names or shapes do not line up with params
        NumericalError: non-finite gradient
    """
    if set(grads) != set(params):
        raise ShapeError("adam_step (parameter names)", (len(params),), (len(grads),))
    beta1, beta2 = cfg.adam_betas
    t = state.step + 1
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise ShapeError(f"adam_step ({name})", theta.shape, g.shape)
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {name}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        m = beta1 * state.m.get(name, np.zeros_like(theta)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(theta)) + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        params[name] = theta - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)

    state.step = t
    return params, state


# --------------------------------------------------
# Gradient clipping
# --------------------------------------------------
def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    """L2 norm over every gradient entry, accumulated in name order"""
    total = 0.0
    for name in grads:
        g = np.asarray(grads[name], dtype=np.float64)
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float = 5.0) -> Dict[str, np.ndarray]:
    """
    Rescales all gradients by max_norm / norm when the global norm exceeds max_norm

    Raises:
        NumericalError: non-finite norm
    """
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NumericalError(f"non-finite gradient norm {norm}")
    if norm <= max_norm:
        return {name: np.asarray(g, dtype=np.float64) for name, g in grads.items()}
    factor = max_norm / norm
    return {name: np.asarray(g, dtype=np.float64) * factor for name, g in grads.items()}
