import math

import numpy as np
import pytest

from autodiff.tape import Tape
from models.params import ParameterStore
from training.optim import (
    AdamState,
    ExpCTrainConfig,
    GraphormerTrainConfig,
    adam_step,
    clip_grad_norm,
    global_norm,
    lr_linear_warmup_decay,
    lr_step_decay,
    mae_loss,
)
from training.profiles import PAPER_EXPC_TRAIN, PAPER_GRAPHORMER_TRAIN
from utils.errors import ConfigError, NumericalError, ShapeError


def test_mae_examples():
    tape = Tape()
    pred = tape.leaf([1.0, 2.0, 3.0])
    loss = mae_loss(pred, [1.0, 1.0, 1.0])
    assert loss.item() == 1.0
    tape.backward(loss)
    np.testing.assert_allclose(pred.grad, [0.0, 1 / 3, 1 / 3])
    assert mae_loss(Tape().leaf([-2.0]), [2.0]).item() == 4.0


def test_mae_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 20))
        p, t = rng.normal(size=n), rng.normal(size=n)
        assert mae_loss(Tape().leaf(p), t).item() == pytest.approx(sum(abs(a - b) for a, b in zip(p, t)) / n)


def test_mae_shape_errors():
    with pytest.raises(ShapeError):
        mae_loss(Tape().leaf(np.zeros(0)), np.zeros(0))
    with pytest.raises(ShapeError):
        mae_loss(Tape().leaf(np.zeros(2)), np.zeros(3))


def test_warmup_decay_schedule():
    cfg = GraphormerTrainConfig()
    assert lr_linear_warmup_decay(0, cfg) == 0.0
    assert lr_linear_warmup_decay(5000, cfg) == 1e-4
    assert lr_linear_warmup_decay(10_000, cfg) == 2e-4
    assert lr_linear_warmup_decay(cfg.max_steps, cfg) == 0.0
    midway = 10_000 + (cfg.max_steps - 10_000) // 2
    assert lr_linear_warmup_decay(midway, cfg) == pytest.approx(1e-4)
    values = [lr_linear_warmup_decay(s, cfg) for s in range(10_000, cfg.max_steps + 1, 10_000)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    with pytest.raises(ValueError):
        lr_linear_warmup_decay(cfg.max_steps + 1, cfg)


def test_step_decay_schedule():
    cfg = ExpCTrainConfig()
    assert lr_step_decay(0, cfg) == 1e-4
    assert lr_step_decay(19, cfg) == 1e-4
    assert lr_step_decay(20, cfg) == 7.5e-5
    assert lr_step_decay(45, cfg) == 5.625e-5
    with pytest.raises(ValueError):
        lr_step_decay(-1, cfg)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        GraphormerTrainConfig(max_steps=100, warmup_steps=100)
    with pytest.raises(ConfigError):
        ExpCTrainConfig(lr_decay_rate=0.0)
    with pytest.raises(ConfigError):
        ExpCTrainConfig(batch_size=0)
    cfg = GraphormerTrainConfig(max_steps=10, warmup_steps=2)
    assert GraphormerTrainConfig.from_dict(cfg.to_dict()) == cfg


def _store():
    return ParameterStore({"w": np.array([[0.5, -1.0], [2.0, 0.0]]), "b": np.array([0.1])})


def test_zero_gradient_leaves_parameters():
    params = _store()
    before = params.copy()
    state = AdamState.zeros_like(params)
    adam_step(params, {"w": np.zeros((2, 2)), "b": np.zeros(1)}, state, 1e-3, ExpCTrainConfig())
    assert params.equals(before)
    assert state.step == 1


def test_first_step_moves_by_learning_rate():
    params = _store()
    grads = {"w": np.array([[1.0, -2.0], [0.5, 3.0]]), "b": np.array([-4.0])}
    adam_step(params, grads, AdamState.zeros_like(params), 1e-3, ExpCTrainConfig())
    np.testing.assert_allclose(_store()["w"] - params["w"], 1e-3 * np.sign(grads["w"]), rtol=1e-6)
    assert params["b"][0] == pytest.approx(0.1 + 1e-3, rel=1e-6)


def test_adam_matches_reference_loop():
    cfg = ExpCTrainConfig(weight_decay=0.01)
    rng = np.random.default_rng(1)
    params = ParameterStore({"x": rng.normal(size=3)})
    x = params["x"].copy()
    m, v = np.zeros(3), np.zeros(3)
    state = AdamState.zeros_like(params)
    for t in range(1, 11):
        g = rng.normal(size=3)
        adam_step(params, {"x": g}, state, 0.01, cfg)
        g = g + 0.01 * x
        m = 0.9 * m + (1 - 0.9) * g
        v = 0.999 * v + (1 - 0.999) * g * g
        x = x - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params["x"], x, rtol=0, atol=1e-12)
    assert state.step == 10


def test_adam_rejects_bad_gradients():
    params = _store()
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros((2, 2))}, AdamState.zeros_like(params), 1e-3, ExpCTrainConfig())
    with pytest.raises(NumericalError):
        adam_step(
            params, {"w": np.full((2, 2), np.nan), "b": np.zeros(1)}, AdamState.zeros_like(params), 1e-3, ExpCTrainConfig()
        )


def test_clip_examples():
    grads = {"a": np.array([6.0]), "b": np.array([8.0])}
    assert global_norm(grads) == 10.0
    clipped = clip_grad_norm(grads, 5.0)
    assert clipped["a"].tolist() == [3.0]
    assert clipped["b"].tolist() == [4.0]
    small = {"a": np.array([3.0, 4.0])}
    assert clip_grad_norm(small, 5.0)["a"].tolist() == [3.0, 4.0]
    with pytest.raises(NumericalError):
        clip_grad_norm({"a": np.array([np.inf])})


def test_clip_is_idempotent():
    rng = np.random.default_rng(2)
    for _ in range(20):
        grads = {"a": rng.normal(scale=10, size=(3, 4)), "b": rng.normal(scale=10, size=5)}
        once = clip_grad_norm(grads, 5.0)
        assert global_norm(once) <= 5.0 + 1e-12
        twice = clip_grad_norm(once, 5.0)
        for name in grads:
            np.testing.assert_allclose(twice[name], once[name], rtol=1e-12)
    assert math.isclose(global_norm({}), 0.0)


def test_paper_training_profiles():
    assert PAPER_GRAPHORMER_TRAIN.max_steps == 1_500_000
    assert PAPER_GRAPHORMER_TRAIN.warmup_steps == 10_000
    assert PAPER_EXPC_TRAIN.max_epochs == 100
    assert (PAPER_EXPC_TRAIN.lr_decay_rate, PAPER_EXPC_TRAIN.lr_decay_step) == (0.75, 20)
