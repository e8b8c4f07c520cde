import numpy as np
import pytest

from conftest import make_graph
from data.batching import collate_expc, collate_graphormer
from data.featurizer import LaplaceParams, RbfConfig, featurize_molecule
from data.graph import UNREACHABLE
from utils.errors import ShapeError

RBF = RbfConfig(n_kernels=8)


@pytest.fixture
def pair(path_graph):
    single = make_graph("single", [[3, 2, 1]], [], [[0, 0, 0]], target=-1.0)
    return [featurize_molecule(path_graph, RBF), featurize_molecule(single, RBF)]


def test_graphormer_padding_and_mask(pair):
    batch = collate_graphormer(pair, RBF)
    assert batch.size == 2
    assert batch.n_atoms.tolist() == [3, 1]
    assert batch.node_idx.shape == (2, 3, 3)
    assert batch.atom_mask.tolist() == [[True, True, True], [True, False, False]]
    assert batch.pair_rbf.shape == (2, 3, 3, 8)
    assert np.all(batch.pair_rbf[1, 1:] == 0.0)
    assert batch.hop[1, 0, 1] == UNREACHABLE
    assert batch.targets.tolist() == [0.7, -1.0]


def test_graphormer_arcs_carry_molecule_index(pair):
    batch = collate_graphormer(pair, RBF)
    assert batch.arc_graph.tolist() == [0, 0, 0, 0]
    assert batch.arc_src.tolist() == [0, 1, 1, 2]
    assert batch.arc_dst.tolist() == [1, 0, 2, 1]
    assert batch.arc_feat.tolist() == [[1, 0], [1, 0], [2, 1], [2, 1]]
    assert batch.arc_rbf.shape == (4, 8)


def test_graphormer_batch_without_bonds():
    g = make_graph("single", [[0, 0, 0]], [], [[0, 0, 0]])
    batch = collate_graphormer([featurize_molecule(g, RBF)], RBF, LaplaceParams(), seed=1)
    assert batch.arc_rbf.shape == (0, 8)


def test_augmentation_depends_on_seed_and_epoch(pair):
    noise = LaplaceParams()
    a = collate_graphormer(pair, RBF, noise, seed=3, epoch=0)
    b = collate_graphormer(pair, RBF, noise, seed=3, epoch=0)
    c = collate_graphormer(pair, RBF, noise, seed=3, epoch=1)
    clean = collate_graphormer(pair, RBF)
    assert a.arc_rbf.tobytes() == b.arc_rbf.tobytes()
    assert not np.array_equal(a.arc_rbf, c.arc_rbf)
    assert not np.array_equal(a.arc_rbf, clean.arc_rbf)
    # both directions of a bond see the same perturbed length
    np.testing.assert_array_equal(a.arc_rbf[0::2], a.arc_rbf[1::2])
    # the pairwise spatial encoding is never perturbed
    np.testing.assert_array_equal(a.pair_rbf, clean.pair_rbf)


def test_expc_virtual_arcs(pair):
    batch = collate_expc(pair, n_atom_fields=2, n_bond_fields=1)
    assert batch.n_real == 4
    assert batch.n_nodes == 6
    assert batch.virtual_nodes.tolist() == [4, 5]
    assert batch.node_graph.tolist() == [0, 0, 0, 1]
    assert batch.node_idx.shape == (4, 2)
    assert batch.arc_feat.tolist() == [[1], [1], [2], [2]]
    assert batch.n_real_arcs == 4
    assert batch.n_virtual_arcs == 8
    real = list(zip(batch.arc_src[:4].tolist(), batch.arc_dst[:4].tolist()))
    assert real == [(0, 1), (1, 0), (1, 2), (2, 1)]
    virtual = list(zip(batch.arc_src[4:].tolist(), batch.arc_dst[4:].tolist()))
    assert virtual == [(0, 4), (4, 0), (1, 4), (4, 1), (2, 4), (4, 2), (3, 5), (5, 3)]


def test_expc_offsets_second_molecule(path_graph):
    fg = featurize_molecule(path_graph, RBF)
    batch = collate_expc([fg, fg], 3, 2)
    assert batch.arc_src[4:8].tolist() == [3, 4, 4, 5]


def test_empty_batches_rejected():
    with pytest.raises(ShapeError):
        collate_graphormer([], RBF)
    with pytest.raises(ShapeError):
        collate_expc([], 1, 1)
