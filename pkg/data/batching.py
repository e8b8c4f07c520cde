"""
Batch Assembly
Stacks featurized molecules into the padded (Graphormer) or disjoint-union (ExpC*) layouts
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from data.featurizer import (
    FeaturizedGraph,
    LaplaceParams,
    RbfConfig,
    augment_arc_distances,
    rbf_expand,
)
from data.graph import UNREACHABLE
from utils.errors import ShapeError
from utils.helpers import derive_rng


def _targets(fgs: Sequence[FeaturizedGraph]) -> np.ndarray:
    return np.array([np.nan if fg.target is None else fg.target for fg in fgs], dtype=np.float64)


@dataclass
class GraphormerBatch:
    """
    B molecules padded to N = max atoms in the batch

    Padded atoms have atom_mask False; the model turns that into an additive
    key mask so no real atom attends to them. Arc arrays list every directed
    bond of every molecule with its molecule index.
    """

    mol_ids: List[str]
    n_atoms: np.ndarray        # (B,)
    node_idx: np.ndarray       # (B, N, F) int
    in_degree: np.ndarray      # (B, N) int
    atom_mask: np.ndarray      # (B, N) bool
    pair_rbf: np.ndarray       # (B, N, N, K); K = 0 in hop mode
    hop: np.ndarray            # (B, N, N) int
    arc_graph: np.ndarray      # (E,)
    arc_src: np.ndarray        # (E,)
    arc_dst: np.ndarray        # (E,)
    arc_feat: np.ndarray       # (E, F_bond) int
    arc_rbf: np.ndarray        # (E, K_edge)
    targets: np.ndarray        # (B,), NaN when unlabeled

    @property
    def size(self) -> int:
        return len(self.mol_ids)


def collate_graphormer(
    fgs: Sequence[FeaturizedGraph],
    edge_rbf: RbfConfig,
    laplace: Optional[LaplaceParams] = None,
    seed: int = 0,
    epoch: int = 0,
) -> GraphormerBatch:
    """
    Pads molecules into one Graphormer batch

    Args:
        fgs: Featurized molecules (at least one)
        edge_rbf: Kernel layout for the per-arc bond distance expansion
        laplace: Bond-distance noise; None disables augmentation
        seed: Global seed of the augmentation stream
        epoch: Epoch index; noise is redrawn every epoch

    Returns:
        GraphormerBatch
    """
    if not fgs:
        raise ShapeError("collate_graphormer (empty batch)", ())
    b = len(fgs)
    n_max = max(fg.n_atoms for fg in fgs)
    n_feat = fgs[0].node_feat_idx.shape[1]
    k = fgs[0].pair_rbf.shape[2]

    node_idx = np.zeros((b, n_max, n_feat), dtype=np.int64)
    in_degree = np.zeros((b, n_max), dtype=np.int64)
    atom_mask = np.zeros((b, n_max), dtype=bool)
    pair_rbf = np.zeros((b, n_max, n_max, k), dtype=np.float64)
    hop = np.full((b, n_max, n_max), UNREACHABLE, dtype=np.int64)

    arc_graph, arc_src, arc_dst, arc_feat, arc_dist = [], [], [], [], []
    for i, fg in enumerate(fgs):
        n = fg.n_atoms
        if fg.node_feat_idx.shape[1] != n_feat or fg.pair_rbf.shape[2] != k:
            raise ShapeError("collate_graphormer", fgs[0].pair_rbf.shape, fg.pair_rbf.shape)
        node_idx[i, :n] = fg.node_feat_idx
        in_degree[i, :n] = fg.in_degree
        atom_mask[i, :n] = True
        pair_rbf[i, :n, :n] = fg.pair_rbf
        hop[i, :n, :n] = fg.hop

        rng = derive_rng(seed, fg.mol_id, epoch) if laplace is not None else None
        arc_dist.append(augment_arc_distances(fg.bond_dist, laplace, rng))
        arc_graph.append(np.full(fg.n_arcs, i, dtype=np.int64))
        arc_src.append(fg.arcs[:, 0])
        arc_dst.append(fg.arcs[:, 1])
        arc_feat.append(fg.edge_feat_idx)

    dist = np.concatenate(arc_dist)
    return GraphormerBatch(
        mol_ids=[fg.mol_id for fg in fgs],
        n_atoms=np.array([fg.n_atoms for fg in fgs], dtype=np.int64),
        node_idx=node_idx,
        in_degree=in_degree,
        atom_mask=atom_mask,
        pair_rbf=pair_rbf,
        hop=hop,
        arc_graph=np.concatenate(arc_graph),
        arc_src=np.concatenate(arc_src).astype(np.int64),
        arc_dst=np.concatenate(arc_dst).astype(np.int64),
        arc_feat=np.concatenate(arc_feat).astype(np.int64),
        arc_rbf=rbf_expand(dist, edge_rbf) if dist.size else np.zeros((0, edge_rbf.n_kernels)),
        targets=_targets(fgs),
    )


@dataclass
class ExpCBatch:
    """
    Disjoint union of B molecules plus one virtual node per molecule

    Real atoms occupy node rows [0, n_real); the virtual node of molecule g is
    row n_real + g. Arcs list the real (directed bond) arcs first, then for
    every real atom u the pair (u -> virtual, virtual -> u).
    """

    mol_ids: List[str]
    node_idx: np.ndarray       # (n_real, F_official) int
    node_graph: np.ndarray     # (n_real,)
    virtual_nodes: np.ndarray  # (B,)
    arc_src: np.ndarray        # (E_real + E_virtual,)
    arc_dst: np.ndarray
    arc_feat: np.ndarray       # (E_real, F_official_bond) int
    targets: np.ndarray

    @property
    def size(self) -> int:
        return len(self.mol_ids)

    @property
    def n_real(self) -> int:
        return int(self.node_idx.shape[0])

    @property
    def n_nodes(self) -> int:
        return self.n_real + self.size

    @property
    def n_real_arcs(self) -> int:
        return int(self.arc_feat.shape[0])

    @property
    def n_virtual_arcs(self) -> int:
        return int(self.arc_src.shape[0]) - self.n_real_arcs


def collate_expc(
    fgs: Sequence[FeaturizedGraph], n_atom_fields: int, n_bond_fields: int
) -> ExpCBatch:
    """
    Concatenates molecules with per-graph node offsets

    Args:
        fgs: Featurized molecules (at least one)
        n_atom_fields: Leading atom columns to keep (the official features)
        n_bond_fields: Leading bond columns to keep

    Returns:
        ExpCBatch
    """
    if not fgs:
        raise ShapeError("collate_expc (empty batch)", ())
    sizes = np.array([fg.n_atoms for fg in fgs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    n_real = int(sizes.sum())
    virtual_nodes = n_real + np.arange(len(fgs), dtype=np.int64)

    real_src, real_dst, feats = [], [], []
    for fg, offset in zip(fgs, offsets):
        real_src.append(fg.arcs[:, 0] + offset)
        real_dst.append(fg.arcs[:, 1] + offset)
        feats.append(fg.edge_feat_idx[:, :n_bond_fields])

    node_graph = np.repeat(np.arange(len(fgs), dtype=np.int64), sizes)
    members = np.arange(n_real, dtype=np.int64)
    hubs = virtual_nodes[node_graph]
    virt_src = np.stack([members, hubs], axis=1).reshape(-1)
    virt_dst = np.stack([hubs, members], axis=1).reshape(-1)

    return ExpCBatch(
        mol_ids=[fg.mol_id for fg in fgs],
        node_idx=np.concatenate([fg.node_feat_idx[:, :n_atom_fields] for fg in fgs]).astype(np.int64),
        node_graph=node_graph,
        virtual_nodes=virtual_nodes,
        arc_src=np.concatenate(real_src + [virt_src]).astype(np.int64),
        arc_dst=np.concatenate(real_dst + [virt_dst]).astype(np.int64),
        arc_feat=np.concatenate(feats).astype(np.int64),
        targets=_targets(fgs),
    )
