import json

import numpy as np
import pytest

from data.synthetic import synthesize_molecules
from training.folds import kfold_split
from training.optim import ExpCTrainConfig, GraphormerTrainConfig
from training.profiles import MINI_EXPC_TRAIN, MINI_GRAPHORMER_TRAIN
from training.trainer import evaluate_checkpoint, evaluate_mae, fit
from utils.errors import ConfigError, DataFormatError

SHORT_GRAPHORMER = GraphormerTrainConfig(
    max_steps=6, warmup_steps=2, batch_size=4, peak_lr=3e-3, eval_interval=3
)
SHORT_EXPC = ExpCTrainConfig(max_epochs=2, batch_size=4, peak_lr=3e-3)


@pytest.fixture
def g_data(mini_graphormer, molecules):
    return mini_graphormer.featurizer().featurize_all(molecules)


@pytest.fixture
def e_data(mini_expc, molecules):
    return mini_expc.featurizer().featurize_all(molecules)


def test_untrained_model_mae_is_mean_abs_target(mini_graphormer, g_data):
    targets = np.array([fg.target for fg in g_data])
    mae = evaluate_mae(mini_graphormer, mini_graphormer.init_params(0), g_data)
    assert mae == pytest.approx(np.mean(np.abs(targets)), abs=1e-12)
    with pytest.raises(DataFormatError):
        evaluate_mae(mini_graphormer, mini_graphormer.init_params(0), [])


def test_zero_steps_saves_initialization(tmp_path, mini_graphormer, g_data):
    plan = kfold_split([fg.mol_id for fg in g_data], 4, seed=0)
    cfg = GraphormerTrainConfig(max_steps=0, warmup_steps=0)
    result = fit(mini_graphormer, g_data, cfg, plan.run(1, seed=2), tmp_path, plan, "zero")
    assert result.params.equals(mini_graphormer.init_params(2))
    assert result.best_step == 0
    assert len(result.history) == 1


def test_graphormer_fit_with_validation(tmp_path, mini_graphormer, g_data):
    plan = kfold_split([fg.mol_id for fg in g_data], 4, seed=0)
    result = fit(mini_graphormer, g_data, SHORT_GRAPHORMER, plan.run(0, seed=0), tmp_path, plan, "g0")
    assert [row["step"] for row in result.history] == [3, 6]
    vals = [row["val_mae"] for row in result.history]
    assert result.best_val_mae == min(vals)
    assert result.best_step == [3, 6][vals.index(min(vals))]

    _, val_ids = plan.split(plan.run(0, seed=0))
    by_id = {fg.mol_id: fg for fg in g_data}
    assert evaluate_checkpoint(result.checkpoint, [by_id[i] for i in val_ids]) == result.best_val_mae

    logged = [json.loads(line) for line in result.metric_log.read_text().splitlines()]
    assert logged == result.history


def test_fits_are_bit_identical(tmp_path, mini_graphormer, g_data):
    a = fit(mini_graphormer, g_data, SHORT_GRAPHORMER, kfold_split(["x"], 1).run("All", 5), tmp_path / "a", run_name="r")
    b = fit(mini_graphormer, g_data, SHORT_GRAPHORMER, kfold_split(["x"], 1).run("All", 5), tmp_path / "b", run_name="r")
    assert a.params.equals(b.params)
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert not a.params.equals(mini_graphormer.init_params(5))


def test_expc_epoch_loop(tmp_path, mini_expc, e_data):
    plan = kfold_split([fg.mol_id for fg in e_data], 4, seed=1)
    run = plan.run("All", seed=0)
    result = fit(mini_expc, e_data, SHORT_EXPC, run, tmp_path, plan, "e")
    assert [(row["step"], row["epoch"]) for row in result.history] == [(3, 0), (6, 1)]
    assert [row["lr"] for row in result.history] == [3e-3, 3e-3]
    assert result.best_val_mae is None
    assert result.best_step == 6
    assert result.final_train_mae == evaluate_checkpoint(result.checkpoint, e_data)


def test_config_pairing_and_plan_checks(tmp_path, mini_graphormer, g_data):
    plan = kfold_split([fg.mol_id for fg in g_data], 4, seed=0)
    with pytest.raises(ConfigError):
        fit(mini_graphormer, g_data, SHORT_EXPC, plan.run(0, 0), tmp_path, plan)
    with pytest.raises(ConfigError):
        fit(mini_graphormer, g_data, SHORT_GRAPHORMER, plan.run(0, 0), tmp_path, None)
    with pytest.raises(DataFormatError):
        fit(mini_graphormer, g_data[:6], SHORT_GRAPHORMER, plan.run(0, 0), tmp_path, plan)


@pytest.fixture(scope="module")
def overfit_set():
    return synthesize_molecules(64, seed=0)


@pytest.mark.slow
def test_mini_graphormer_memorizes_64_molecules(tmp_path, mini_graphormer, overfit_set):
    data = mini_graphormer.featurizer().featurize_all(overfit_set)
    result = fit(mini_graphormer, data, MINI_GRAPHORMER_TRAIN, kfold_split(["x"], 1).run("All", 0), tmp_path)
    assert result.history[-1]["step"] == 2000
    assert result.final_train_mae < 0.01
    assert result.final_train_mae == evaluate_checkpoint(result.checkpoint, data)


@pytest.mark.slow
def test_mini_expc_memorizes_64_molecules(tmp_path, mini_expc, overfit_set):
    data = mini_expc.featurizer().featurize_all(overfit_set)
    result = fit(mini_expc, data, MINI_EXPC_TRAIN, kfold_split(["x"], 1).run("All", 0), tmp_path)
    assert result.history[-1]["epoch"] == 199
    assert result.final_train_mae < 0.02
