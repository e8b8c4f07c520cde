import math
from pathlib import Path

import pytest

from inference.ensemble import read_spec, submission_spec, validate_spec
from training.folds import ALL_FOLDS, FoldPlan, kfold_split, submission_plan
from utils.errors import ConfigError, DataFormatError

IDS = [f"m{i:03d}" for i in range(100)]


def test_eight_molecules_one_per_fold():
    plan = kfold_split(IDS[:8], 8, seed=0)
    assert plan.fold_sizes() == [1] * 8


def test_uneven_sizes():
    plan = kfold_split(IDS[:17], 8, seed=3)
    assert sorted(plan.fold_sizes()) == [2, 2, 2, 2, 2, 2, 2, 3]


def test_split_is_seeded():
    assert kfold_split(IDS, 8, seed=1).assignment == kfold_split(IDS, 8, seed=1).assignment
    assert kfold_split(IDS, 8, seed=1).assignment != kfold_split(IDS, 8, seed=2).assignment
    assert list(kfold_split(IDS, 8, seed=1).assignment) == IDS


def test_runs_partition_the_data():
    plan = kfold_split(IDS, 8, seed=0)
    seen = []
    for fold in range(8):
        train, val = plan.split(plan.run(fold, seed=fold))
        assert not set(train) & set(val)
        assert sorted(train + val) == sorted(IDS)
        seen += val
    assert sorted(seen) == sorted(IDS)
    everything = plan.run(ALL_FOLDS, seed=0)
    assert everything.label == "All"
    train, val = plan.split(everything)
    assert val == []
    assert train == IDS


def test_bad_inputs():
    with pytest.raises(DataFormatError):
        kfold_split(["a", "b", "a"], 2)
    with pytest.raises(ConfigError):
        kfold_split(IDS[:3], 8)
    with pytest.raises(ConfigError):
        kfold_split(IDS, 8).run(8, seed=0)


def test_plan_round_trip():
    plan = kfold_split(IDS[:20], 4, seed=9)
    again = FoldPlan.from_dict(plan.to_dict())
    assert again.assignment == plan.assignment
    assert again.n_folds == 4


def test_submission_plan():
    runs = submission_plan()
    assert len(runs) == 18
    assert [r.model for r in runs].count("graphormer") == 10
    assert runs[8].name == "graphormer-foldAll-seed0"
    assert runs[9].name == "graphormer-foldAll-seed1"
    assert runs[-1].name == "expc-fold7-seed7"
    assert math.fsum(r.weight for r in runs) == pytest.approx(0.96, abs=1e-12)


def test_submission_spec_matches_shipped_profile():
    spec = submission_spec("checkpoints")
    validate_spec(spec)
    shipped = read_spec(Path(__file__).resolve().parents[1] / "profiles" / "ensemble_paper.tsv")
    assert shipped.normalizer == 0.96
    assert shipped.weights.tolist() == spec.weights.tolist()
    assert [Path(e.checkpoint).name for e in shipped.entries] == [Path(e.checkpoint).name for e in spec.entries]


def test_shipped_profile_resolves_under_checkpoints(tmp_path):
    shipped = read_spec(Path(__file__).resolve().parents[1] / "profiles" / "ensemble_paper.tsv", root=tmp_path)
    for entry in shipped.entries:
        assert Path(entry.checkpoint).parent == tmp_path / "checkpoints"
