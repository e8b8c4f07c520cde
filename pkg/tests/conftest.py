"""
Shared fixtures: synthetic molecules, small models and randomized parameters
"""

import numpy as np
import pytest

from data.graph import MolecularGraph, validate_graph
from data.loader import write_dataset
from data.synthetic import DEFAULT_SCHEMA, synthesize_molecules
from models.factory import build_model
from training.profiles import MINI_EXPC, MINI_GRAPHORMER


def make_graph(mol_id, atom_features, bonds, coords, bond_features=None, target=None, schema=DEFAULT_SCHEMA):
    bonds = np.asarray(bonds, dtype=np.int64).reshape(-1, 2)
    if bond_features is None:
        bond_features = np.zeros((len(bonds), len(schema.bond_vocab)), dtype=np.int64)
    return validate_graph(
        MolecularGraph(
            mol_id=mol_id,
            atom_features=atom_features,
            bonds=bonds,
            bond_features=bond_features,
            coords=coords,
            target=target,
            schema=schema,
        )
    )


def randomize_head(params, seed=0, std=0.5):
    """Replaces zero-initialized head weights so predictions depend on the encoder"""
    rng = np.random.default_rng(seed)
    for name in list(params):
        if name.startswith("head."):
            params[name] = rng.normal(0.0, std, params[name].shape)
    return params


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def schema():
    return DEFAULT_SCHEMA


@pytest.fixture
def molecules():
    return synthesize_molecules(12, seed=0)


@pytest.fixture(scope="session")
def fifty_molecules():
    """Invariance set: 50 molecules of at most 10 atoms"""
    return synthesize_molecules(50, seed=21, max_atoms=10)


@pytest.fixture
def dataset_file(tmp_path, molecules):
    return write_dataset(tmp_path / "molecules.jsonl", DEFAULT_SCHEMA, molecules)


@pytest.fixture
def path_graph():
    """Three atoms in a row, 1.5 A apart"""
    return make_graph(
        "path",
        [[1, 0, 0], [2, 1, 0], [1, 0, 2]],
        [(0, 1), (1, 2)],
        [[0.0, 0.0, 0.0], [1.5, 0.0, 0.0], [3.0, 0.0, 0.0]],
        bond_features=[[1, 0], [2, 1]],
        target=0.7,
    )


@pytest.fixture
def mini_graphormer():
    return build_model("graphormer", MINI_GRAPHORMER).with_schema(DEFAULT_SCHEMA)


@pytest.fixture
def mini_expc():
    return build_model("expc", MINI_EXPC).with_schema(DEFAULT_SCHEMA)
