"""
Molecular Graph Model
Data model, validation and geometric / topological preprocessing shared by both models
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from utils.errors import GraphValidationError

logger = logging.getLogger(__name__)

# Hop distance of a pair with no connecting path. A plain integer so it can be
# bucketed into an embedding row; never produced by a real path length.
UNREACHABLE = 2**31 - 1


@dataclass(frozen=True)
class DatasetSchema:
    """
    Vocabulary sizes declared by a dataset header record

    The first `n_official_*_fields` columns are the officially provided
    features; any further columns are extra chemistry attributes.
    """

    atom_vocab: Tuple[int, ...]
    bond_vocab: Tuple[int, ...]
    n_official_atom_fields: Optional[int] = None
    n_official_bond_fields: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "atom_vocab", tuple(int(v) for v in self.atom_vocab))
        object.__setattr__(self, "bond_vocab", tuple(int(v) for v in self.bond_vocab))
        if self.n_official_atom_fields is None:
            object.__setattr__(self, "n_official_atom_fields", len(self.atom_vocab))
        if self.n_official_bond_fields is None:
            object.__setattr__(self, "n_official_bond_fields", len(self.bond_vocab))
        if any(v < 1 for v in self.atom_vocab + self.bond_vocab):
            raise ValueError("vocabulary sizes must be positive")
        if not 0 < self.n_official_atom_fields <= len(self.atom_vocab):
            raise ValueError("n_official_atom_fields out of range")
        if not 0 <= self.n_official_bond_fields <= len(self.bond_vocab):
            raise ValueError("n_official_bond_fields out of range")

    @property
    def official_atom_vocab(self) -> Tuple[int, ...]:
        return self.atom_vocab[: self.n_official_atom_fields]

    @property
    def official_bond_vocab(self) -> Tuple[int, ...]:
        return self.bond_vocab[: self.n_official_bond_fields]

    def to_dict(self) -> dict:
        return {
            "atom_vocab": list(self.atom_vocab),
            "bond_vocab": list(self.bond_vocab),
            "n_official_atom_fields": self.n_official_atom_fields,
            "n_official_bond_fields": self.n_official_bond_fields,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "DatasetSchema":
        return cls(
            atom_vocab=tuple(record["atom_vocab"]),
            bond_vocab=tuple(record["bond_vocab"]),
            n_official_atom_fields=record.get("n_official_atom_fields"),
            n_official_bond_fields=record.get("n_official_bond_fields"),
        )


@dataclass
class MolecularGraph:
    """
    Raw ingested molecule

    Bonds are undirected (u, v) pairs aligned row-by-row with bond_features.
    Coordinates are in Angstrom; target is the HOMO-LUMO gap in eV.
    """

    mol_id: str
    atom_features: np.ndarray
    bonds: np.ndarray
    bond_features: np.ndarray
    coords: np.ndarray
    target: Optional[float] = None
    schema: Optional[DatasetSchema] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.atom_features = np.asarray(self.atom_features, dtype=np.int64)
        if self.atom_features.ndim == 1:
            self.atom_features = self.atom_features.reshape(-1, 1)
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        self.bonds = np.asarray(self.bonds, dtype=np.int64).reshape(-1, 2)
        n_bond_fields = len(self.schema.bond_vocab) if self.schema is not None else 0
        self.bond_features = np.asarray(self.bond_features, dtype=np.int64)
        if self.bond_features.size == 0:
            self.bond_features = self.bond_features.reshape(len(self.bonds), n_bond_fields)
        elif self.bond_features.ndim == 1:
            self.bond_features = self.bond_features.reshape(-1, 1)
        if self.target is not None:
            self.target = float(self.target)

    @property
    def n_atoms(self) -> int:
        return int(self.atom_features.shape[0])

    @property
    def n_bonds(self) -> int:
        return int(self.bonds.shape[0])


def validate_graph(g: MolecularGraph) -> MolecularGraph:
    """
    Checks every MolecularGraph invariant

    Args:
        g: Graph to check

    Returns:
        The same graph, unchanged

    Raises:
        GraphValidationError: with a distinct tag per violated invariant
    """
    n = g.n_atoms
    if n == 0:
        raise GraphValidationError("empty_molecule", "atom_features")
    if g.coords.shape != (n, 3):
        raise GraphValidationError(
            "shape_mismatch", "coords", detail=f"expected ({n}, 3), got {g.coords.shape}"
        )
    if g.bond_features.shape[0] != g.n_bonds:
        raise GraphValidationError(
            "shape_mismatch",
            "bond_features",
            detail=f"{g.bond_features.shape[0]} rows for {g.n_bonds} bonds",
        )

    seen = set()
    for k, (u, v) in enumerate(g.bonds.tolist()):
        if not (0 <= u < n and 0 <= v < n):
            raise GraphValidationError(
                "endpoint_out_of_range", "bond_list", k, detail=f"({u}, {v}) with {n} atoms"
            )
        if u == v:
            raise GraphValidationError("self_loop", "bond_list", k, detail=f"({u}, {v})")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise GraphValidationError("duplicate_bond", "bond_list", k, detail=f"({u}, {v})")
        seen.add(key)

    bad_rows = np.flatnonzero(~np.isfinite(g.coords).all(axis=1))
    if bad_rows.size:
        raise GraphValidationError("non_finite_coordinate", "coords", int(bad_rows[0]))

    if g.schema is not None:
        _check_vocab(g.atom_features, g.schema.atom_vocab, "atom_features")
        _check_vocab(g.bond_features, g.schema.bond_vocab, "bond_features")
    return g


def _check_vocab(values: np.ndarray, vocab: Sequence[int], name: str) -> None:
    if values.shape[1] != len(vocab):
        raise GraphValidationError(
            "shape_mismatch",
            name,
            detail=f"{values.shape[1]} columns, schema declares {len(vocab)}",
        )
    for column, size in enumerate(vocab):
        bad = np.flatnonzero((values[:, column] < 0) | (values[:, column] >= size))
        if bad.size:
            row = int(bad[0])
            raise GraphValidationError(
                "out_of_vocabulary",
                name,
                row,
                column=column,
                detail=f"value {int(values[row, column])} outside [0, {size})",
            )


def pairwise_euclidean(coords: np.ndarray) -> np.ndarray:
    """
    All-pairs Euclidean distance matrix

    Args:
        coords: n x 3 coordinates (Angstrom)

    Returns:
        n x n symmetric matrix with zero diagonal
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    bad_rows = np.flatnonzero(~np.isfinite(coords).all(axis=1))
    if bad_rows.size:
        raise GraphValidationError("non_finite_coordinate", "coords", int(bad_rows[0]))
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def adjacency_matrix(g: MolecularGraph):
    """Symmetric sparse 0/1 adjacency of the bond list"""
    n = g.n_atoms
    rows = np.concatenate([g.bonds[:, 0], g.bonds[:, 1]])
    cols = np.concatenate([g.bonds[:, 1], g.bonds[:, 0]])
    data = np.ones(rows.shape[0], dtype=np.float64)
    return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def shortest_path_lengths(g: MolecularGraph) -> np.ndarray:
    """
    Unweighted all-pairs shortest path lengths (hop counts)

    Args:
        g: Validated graph

    Returns:
        n x n int64 matrix; disconnected pairs hold UNREACHABLE
    """
    dist = shortest_path(adjacency_matrix(g), method="D", directed=False, unweighted=True)
    hop = np.full(dist.shape, UNREACHABLE, dtype=np.int64)
    reachable = np.isfinite(dist)
    hop[reachable] = np.rint(dist[reachable]).astype(np.int64)
    return hop


def permute_atoms(g: MolecularGraph, perm: Sequence[int]) -> MolecularGraph:
    """
    Relabels atoms so that old atom i becomes new atom perm[i]

    Bond order and bond features are kept; only endpoints are renamed.
    """
    perm = np.asarray(perm, dtype=np.int64)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    return replace(
        g,
        atom_features=g.atom_features[inverse],
        coords=g.coords[inverse],
        bonds=perm[g.bonds] if g.n_bonds else g.bonds.copy(),
        bond_features=g.bond_features.copy(),
    )
