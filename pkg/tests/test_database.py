import pytest

from models.database import RunRegistry


@pytest.fixture
def registry(tmp_path):
    return RunRegistry(f"sqlite:///{tmp_path / 'runs.db'}")


def test_run_lifecycle(registry):
    registry.start_run("r1", "train", model="expc", profile="mini", fold="0", seed=0, config_snapshot={"a": 1})
    registry.finish_run("r1", "ok", finished_at="t1", best_val_mae=0.2, final_train_mae=0.1)
    frame = registry.summary_frame()
    assert frame["run_id"].tolist() == ["r1"]
    row = frame.iloc[0]
    assert row["status"] == "ok"
    assert row["val_mae"] == 0.2
    assert row["fold"] == "0"


def test_metric_rows_are_unique_per_step(registry):
    registry.start_run("r1", "train")
    rows = [{"step": 3, "epoch": 0, "lr": 1e-3, "loss": 0.5, "train_mae": 0.4, "val_mae": 0.6}]
    assert registry.log_metrics("r1", rows) == 1
    assert registry.log_metrics("r1", rows + [{"step": 6, "train_mae": 0.3}]) == 1
    metrics = registry.metrics_frame("r1")
    assert metrics["step"].tolist() == [3, 6]
    assert metrics["val_mae"].isna().tolist() == [False, True]


def test_cv_summary(registry):
    for i, (model, val) in enumerate([("expc", 0.1), ("expc", 0.3), ("graphormer", 0.2)]):
        registry.start_run(f"r{i}", "train", model=model, fold=str(i))
        registry.finish_run(f"r{i}", "ok", best_val_mae=val)
    registry.start_run("all", "train", model="graphormer", fold="All")
    registry.finish_run("all", "ok")
    registry.start_run("bad", "train", model="expc", fold="4")
    registry.finish_run("bad", "failed", best_val_mae=9.0)
    summary = registry.cv_summary().set_index("model")
    assert summary.loc["expc", "count"] == 2
    assert summary.loc["expc", "mean"] == pytest.approx(0.2)
    assert summary.loc["graphormer", "count"] == 1


def test_empty_registry(registry):
    assert registry.summary_frame().empty
    assert list(registry.cv_summary().columns) == ["model", "mean", "std", "count"]
