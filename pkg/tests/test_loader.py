import json

import numpy as np
import pytest

from data.loader import DatasetReader, load_dataset, read_schema, write_dataset
from data.synthetic import DEFAULT_SCHEMA, dataset_stats
from utils.errors import DataFormatError


def _header():
    return json.dumps({"schema": DEFAULT_SCHEMA.to_dict()})


def _record(mol_id, atom=(0, 0, 0)):
    return json.dumps(
        {
            "id": mol_id,
            "atom_features": [list(atom), [1, 1, 1]],
            "bonds": [[0, 1]],
            "bond_features": [[1, 0]],
            "coords": [[0, 0, 0], [1.4, 0, 0]],
            "target": 0.25,
        }
    )


def test_empty_file_after_header(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text(_header() + "\n")
    assert list(load_dataset(path)) == []
    assert read_schema(path) == DEFAULT_SCHEMA


def test_records_come_back_in_order(tmp_path):
    path = tmp_path / "three.jsonl"
    path.write_text("\n".join([_header(), _record("a"), "", _record("b"), _record("c")]) + "\n")
    graphs = list(load_dataset(path))
    assert [g.mol_id for g in graphs] == ["a", "b", "c"]
    assert graphs[0].target == 0.25
    assert graphs[0].bonds.tolist() == [[0, 1]]


def test_out_of_vocabulary_names_line_and_column(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join([_header(), _record("a"), _record("b", atom=(0, 9, 0))]) + "\n")
    with pytest.raises(DataFormatError) as info:
        list(load_dataset(path))
    assert info.value.line == 3
    assert info.value.column == 1


@pytest.mark.parametrize(
    "line",
    [
        "{not json",
        json.dumps(["a", "list"]),
        json.dumps({"id": "x", "bonds": []}),
        json.dumps({"id": "x", "atom_features": [[0, 0, 0]], "bonds": [], "bond_features": [], "coords": [[0, 0, 0]], "target": "high"}),
    ],
)
def test_malformed_records(tmp_path, line):
    path = tmp_path / "bad.jsonl"
    path.write_text(_header() + "\n" + line + "\n")
    with pytest.raises(DataFormatError) as info:
        list(load_dataset(path))
    assert info.value.line == 2


def test_missing_or_broken_header(tmp_path):
    with pytest.raises(DataFormatError):
        DatasetReader(tmp_path / "absent.jsonl")
    path = tmp_path / "noheader.jsonl"
    path.write_text("\n")
    with pytest.raises(DataFormatError) as info:
        read_schema(path)
    assert info.value.line == 1


def test_write_then_load_preserves_molecules(tmp_path, molecules):
    path = write_dataset(tmp_path / "out.jsonl", DEFAULT_SCHEMA, molecules)
    loaded = list(load_dataset(path))
    assert [g.mol_id for g in loaded] == [g.mol_id for g in molecules]
    for a, b in zip(molecules, loaded):
        np.testing.assert_array_equal(a.coords, b.coords)
        np.testing.assert_array_equal(a.atom_features, b.atom_features)
        assert a.target == b.target


def test_dataset_stats(molecules):
    stats = dataset_stats(molecules)
    assert list(stats.columns) == ["n_atoms", "n_bonds", "target"]
    assert stats.loc["count", "n_atoms"] == len(molecules)
