import numpy as np
import pytest

from data.cache import encode_cache, load_cache_for, read_cache, write_cache
from data.featurizer import MoleculeFeaturizer, RbfConfig
from utils.errors import CheckpointError, ConfigError

RBF = RbfConfig(n_kernels=8)


@pytest.fixture
def records(molecules):
    return MoleculeFeaturizer(RBF).featurize_all(molecules[:4])


def test_cache_restores_every_field(tmp_path, records):
    path = write_cache(tmp_path / "feat.bin", records, "euclidean-rbf", RBF)
    loaded, mode, rbf = read_cache(path)
    assert mode == "euclidean-rbf"
    assert rbf == RBF
    assert len(loaded) == len(records)
    for a, b in zip(records, loaded):
        assert a.mol_id == b.mol_id
        assert a.target == b.target
        for name in ("node_feat_idx", "arcs", "edge_feat_idx", "bond_dist", "pair_rbf", "hop", "in_degree"):
            x, y = getattr(a, name), getattr(b, name)
            assert x.shape == y.shape
            assert x.dtype == y.dtype
            np.testing.assert_array_equal(x, y)


def test_cache_bytes_are_reproducible(records):
    assert encode_cache(records, "euclidean-rbf", RBF) == encode_cache(records, "euclidean-rbf", RBF)


def test_empty_cache(tmp_path):
    path = write_cache(tmp_path / "empty.bin", [], "hop", RBF)
    assert read_cache(path)[0] == []


def test_cache_rejects_other_mode_or_layout(tmp_path, records):
    path = write_cache(tmp_path / "feat.bin", records, "euclidean-rbf", RBF)
    assert len(load_cache_for(path, "euclidean-rbf", RBF)) == 4
    with pytest.raises(ConfigError):
        load_cache_for(path, "hop", RBF)
    with pytest.raises(ConfigError):
        load_cache_for(path, "euclidean-rbf", RbfConfig(n_kernels=16))


def test_corrupt_cache(tmp_path, records):
    payload = encode_cache(records, "euclidean-rbf", RBF)
    truncated = tmp_path / "short.bin"
    truncated.write_bytes(payload[:-5])
    with pytest.raises(CheckpointError):
        read_cache(truncated)
    foreign = tmp_path / "foreign.bin"
    foreign.write_bytes(b"NOTACACHE" + payload[9:])
    with pytest.raises(CheckpointError):
        read_cache(foreign)
    trailing = tmp_path / "trailing.bin"
    trailing.write_bytes(payload + b"\x00")
    with pytest.raises(CheckpointError):
        read_cache(trailing)


def test_parallel_featurization_gives_identical_cache(molecules):
    serial = MoleculeFeaturizer(RBF, workers=1).featurize_all(molecules)
    parallel = MoleculeFeaturizer(RBF, workers=3).featurize_all(molecules)
    assert encode_cache(serial, "euclidean-rbf", RBF) == encode_cache(parallel, "euclidean-rbf", RBF)
