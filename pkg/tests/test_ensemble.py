import math

import numpy as np
import pytest

from conftest import randomize_head
from inference.ensemble import (
    EnsembleEntry,
    EnsembleSpec,
    compare_predictions,
    ensemble_predict,
    read_predictions,
    read_spec,
    run_inference,
    validate_spec,
    write_predictions,
    write_spec,
)
from models.params import save_checkpoint
from utils.errors import ConfigError, DataFormatError, MolPropError, NumericalError, ShapeError


def _spec(weights, normalizer=None):
    entries = [EnsembleEntry(f"m{i}.ckpt", w) for i, w in enumerate(weights)]
    return EnsembleSpec(entries, math.fsum(weights) if normalizer is None else normalizer)


def test_validation_examples():
    validate_spec(_spec([0.5, 0.46]))
    with pytest.raises(ConfigError):
        validate_spec(_spec([0.5, 0.46], normalizer=1.0))
    with pytest.raises(ConfigError):
        validate_spec(_spec([0.5, 0.0]))
    with pytest.raises(ConfigError):
        validate_spec(_spec([0.5, -0.1]))
    with pytest.raises(ConfigError):
        validate_spec(_spec([0.5, float("nan")], normalizer=0.5))
    with pytest.raises(ConfigError):
        validate_spec(EnsembleSpec([], 0.0))


def test_weighted_average_example():
    out = ensemble_predict([[0.0], [4.0]], _spec([1.0, 3.0]))
    assert out.tolist() == [3.0]


def test_constant_predictions_are_exact():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = int(rng.integers(1, 20))
        spec = _spec(list(rng.uniform(0.01, 1.0, m)))
        c = float(rng.normal(scale=100))
        assert ensemble_predict(np.full((m, 3), c), spec).tolist() == [c, c, c]


def test_output_stays_inside_model_range():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        m, n = int(rng.integers(1, 10)), int(rng.integers(1, 6))
        preds = rng.normal(size=(m, n)) * rng.uniform(0.1, 100)
        out = ensemble_predict(preds, _spec(list(rng.uniform(1e-3, 1.0, m))))
        assert np.all(out >= preds.min(axis=0))
        assert np.all(out <= preds.max(axis=0))


def test_matches_loop_oracle_and_ignores_entry_order():
    rng = np.random.default_rng(2)
    for _ in range(100):
        m, n = int(rng.integers(1, 19)), int(rng.integers(1, 8))
        weights = list(rng.uniform(0.01, 0.1, m))
        preds = rng.normal(size=(m, n))
        spec = _spec(weights)
        out = ensemble_predict(preds, spec)
        for j in range(n):
            expected = sum(w * preds[i, j] for i, w in enumerate(weights)) / spec.normalizer
            assert out[j] == pytest.approx(expected, abs=1e-12)
        order = rng.permutation(m)
        shuffled = EnsembleSpec([spec.entries[i] for i in order], spec.normalizer)
        assert ensemble_predict(preds[order], shuffled).tobytes() == out.tobytes()


def test_duplicate_entry_equals_doubled_weight():
    preds = np.array([[1.0, 2.0], [5.0, -1.0]])
    doubled = ensemble_predict(preds, _spec([0.5, 0.25]))
    repeated = ensemble_predict(np.vstack([preds, preds[1:]]), _spec([0.5, 0.125, 0.125]))
    np.testing.assert_allclose(repeated, doubled, rtol=0, atol=1e-15)


def test_rescaling_weights_changes_nothing():
    preds = np.random.default_rng(3).normal(size=(4, 5))
    a = ensemble_predict(preds, _spec([0.1, 0.2, 0.3, 0.4]))
    b = ensemble_predict(preds, _spec([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_predict_rejects_bad_input():
    with pytest.raises(ShapeError):
        ensemble_predict(np.zeros((3, 2)), _spec([1.0, 1.0]))
    with pytest.raises(NumericalError):
        ensemble_predict([[np.nan], [1.0]], _spec([1.0, 1.0]))
    assert ensemble_predict(np.zeros((2, 0)), _spec([1.0, 1.0])).shape == (0,)


def test_spec_file_round_trip(tmp_path):
    spec = EnsembleSpec([EnsembleEntry("a.ckpt", 0.1), EnsembleEntry("sub/b.ckpt", 0.2)], 0.3)
    path = write_spec(tmp_path / "spec.tsv", spec, header=["two models"])
    assert path.read_text().startswith("# two models\nnormalizer ")
    loaded = read_spec(path)
    assert loaded.normalizer == spec.normalizer
    assert loaded.weights.tolist() == [0.1, 0.2]
    assert loaded.entries[1].checkpoint == str(tmp_path / "sub" / "b.ckpt")
    validate_spec(loaded)
    other = read_spec(path, root="/models")
    assert other.entries[0].checkpoint == "/models/a.ckpt"


@pytest.mark.parametrize(
    "text, line",
    [
        ("normalizer 1.0\n0.5\n", 2),
        ("normalizer 1.0\nheavy\ta.ckpt\n", 2),
        ("# c\nnormalizer one\n", 2),
        ("normalizer 1\nnormalizer 1\n", 2),
    ],
)
def test_malformed_spec_reports_line(tmp_path, text, line):
    path = tmp_path / "bad.tsv"
    path.write_text(text)
    with pytest.raises(DataFormatError) as info:
        read_spec(path)
    assert info.value.line == line


def test_spec_without_normalizer(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("0.5\ta.ckpt\n")
    with pytest.raises(DataFormatError):
        read_spec(path)


def test_prediction_files_and_comparison(tmp_path):
    a = write_predictions(tmp_path / "a.tsv", ["x", "y"], [0.1, 1 / 3])
    assert read_predictions(a) == {"x": 0.1, "y": 1 / 3}
    b = write_predictions(tmp_path / "b.tsv", ["y", "x"], [1 / 3 + 1e-5, 0.1])
    result = compare_predictions(a, b)
    assert result.n == 2
    assert result.max_abs == pytest.approx(1e-5)
    assert result.within_tolerance
    assert not compare_predictions(a, {"x": 0.2, "y": 1 / 3}, tol=1e-4).within_tolerance
    with pytest.raises(DataFormatError):
        compare_predictions(a, {"x": 0.1})
    dup = tmp_path / "dup.tsv"
    dup.write_text("x\t1.0\nx\t2.0\n")
    with pytest.raises(DataFormatError):
        read_predictions(dup)


def test_inference_over_checkpoints(tmp_path, mini_graphormer, mini_expc, molecules):
    g_params = randomize_head(mini_graphormer.init_params(0), seed=1)
    e_params = randomize_head(mini_expc.init_params(0), seed=2)
    save_checkpoint(tmp_path / "g.ckpt", g_params, "graphormer", mini_graphormer.cfg.to_dict())
    save_checkpoint(tmp_path / "e.ckpt", e_params, "expc", mini_expc.cfg.to_dict())
    spec = EnsembleSpec([EnsembleEntry(str(tmp_path / "g.ckpt"), 0.6), EnsembleEntry(str(tmp_path / "e.ckpt"), 0.36)], 0.96)

    ids, out, per_model = run_inference(spec, molecules, workers=1, batch_size=5)
    assert ids == [g.mol_id for g in molecules]
    assert per_model.shape == (2, len(molecules))
    expected_g = mini_graphormer.predict(g_params, mini_graphormer.featurizer().featurize_all(molecules))
    np.testing.assert_allclose(per_model[0], expected_g, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(out, ensemble_predict(per_model, spec))

    _, parallel, _ = run_inference(spec, molecules, workers=2, batch_size=5)
    assert parallel.tobytes() == out.tobytes()


def test_inference_names_the_failing_entry(tmp_path, molecules):
    spec = EnsembleSpec([EnsembleEntry(str(tmp_path / "missing.ckpt"), 1.0)], 1.0)
    with pytest.raises(MolPropError) as info:
        run_inference(spec, molecules)
    assert "ensemble entry 0" in str(info.value)
    assert info.value.exit_code == 2
