import numpy as np
import pytest

from models.factory import build_model, load_model
from models.params import ParameterStore, ParamSpec, load_checkpoint, save_checkpoint
from training.profiles import MINI_EXPC
from utils.errors import CheckpointError, ConfigError


def test_initializers():
    specs = {
        "w": ParamSpec((16, 4)),
        "e": ParamSpec((3, 2), "normal", std=0.02),
        "b": ParamSpec((4,), "zeros"),
        "g": ParamSpec((4,), "ones"),
    }
    store = ParameterStore.initialize(specs, np.random.default_rng(0))
    assert list(store) == ["w", "e", "b", "g"]
    assert np.all(np.abs(store["w"]) <= 0.25)
    assert store["b"].tolist() == [0.0] * 4
    assert store["g"].tolist() == [1.0] * 4
    assert store.num_parameters() == 64 + 6 + 8
    with pytest.raises(ConfigError):
        ParamSpec((2,), "xavier")


def test_same_seed_same_parameters(mini_graphormer):
    assert mini_graphormer.init_params(5).equals(mini_graphormer.init_params(5))
    assert not mini_graphormer.init_params(5).equals(mini_graphormer.init_params(6))


def test_shape_is_fixed():
    store = ParameterStore({"w": np.zeros((2, 2))})
    store["w"] = np.ones((2, 2))
    with pytest.raises(ConfigError):
        store["w"] = np.ones(3)


def test_checkpoint_round_trip(tmp_path, mini_graphormer):
    params = mini_graphormer.init_params(1)
    path = save_checkpoint(tmp_path / "g.ckpt", params, "graphormer", mini_graphormer.cfg.to_dict())
    model, loaded = load_model(path)
    assert loaded.equals(params)
    assert model.cfg == mini_graphormer.cfg
    manifest = (tmp_path / "g.ckpt.manifest.txt").read_text().splitlines()
    assert manifest[0] == "# model: graphormer"
    assert manifest[1] == f"# parameters: {params.num_parameters()}"
    assert manifest[2].startswith("atom_embed\t")


def test_corrupt_checkpoints(tmp_path, mini_expc):
    path = save_checkpoint(tmp_path / "e.ckpt", mini_expc.init_params(0), "expc", mini_expc.cfg.to_dict())
    payload = path.read_bytes()
    for name, data in [("short", payload[:-3]), ("foreign", b"XXXXXXXX" + payload[8:]), ("long", payload + b"!")]:
        bad = tmp_path / name
        bad.write_bytes(data)
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_config_and_parameters_must_agree(tmp_path, mini_expc):
    params = mini_expc.init_params(0)
    wider = build_model("expc", {**mini_expc.cfg.to_dict(), "hidden_dim": 12})
    path = save_checkpoint(tmp_path / "e.ckpt", params, "expc", wider.cfg.to_dict())
    with pytest.raises(CheckpointError):
        load_model(path)
    with pytest.raises(CheckpointError):
        params.check_specs(wider.parameter_specs())


def test_build_model_rejects_bad_input():
    with pytest.raises(ConfigError):
        build_model("transformer", MINI_EXPC)
    with pytest.raises(ConfigError):
        build_model("graphormer", MINI_EXPC)
    with pytest.raises(ConfigError):
        build_model("expc", {"hidden_width": 3})
