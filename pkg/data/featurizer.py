"""
Featurization Module
Turns validated molecular graphs into dense model-ready arrays
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import partial
from typing import Iterable, List, Optional
import logging
import math

import numpy as np

from data.graph import (
    MolecularGraph,
    pairwise_euclidean,
    shortest_path_lengths,
    validate_graph,
)
from utils.errors import ConfigError, GraphValidationError

logger = logging.getLogger(__name__)

SPATIAL_MODES = ("euclidean-rbf", "hop")

# Augmented bond distances never drop below this (Angstrom)
MIN_BOND_DISTANCE = 1e-3


@dataclass(frozen=True)
class RbfConfig:
    """
    Gaussian radial basis over distances

    Centers are `n_kernels` evenly spaced points on [center_min, center_max].
    When gamma is omitted it is 1 / (2 * spacing^2).
    """

    n_kernels: int = 256
    center_min: float = 0.0
    center_max: float = 10.0
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.n_kernels < 1:
            raise ConfigError(f"n_kernels must be >= 1, got {self.n_kernels}")
        if not self.center_min < self.center_max:
            raise ConfigError(f"center_min {self.center_min} must be < center_max {self.center_max}")
        if self.gamma is None:
            spacing = (self.center_max - self.center_min) / max(self.n_kernels - 1, 1)
            object.__setattr__(self, "gamma", 1.0 / (2.0 * spacing * spacing))
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigError(f"gamma must be positive, got {self.gamma}")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(self.center_min, self.center_max, self.n_kernels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, record: dict) -> "RbfConfig":
        return cls(**record)


@dataclass(frozen=True)
class LaplaceParams:
    """Location / scale (Angstrom) of the bond-distance noise"""

    mu: float = 0.001994
    b: float = 0.031939

    def __post_init__(self):
        if not self.b > 0:
            raise ConfigError(f"Laplace scale b must be positive, got {self.b}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FeaturizedGraph:
    """
    Model-ready arrays for one molecule

    Arcs come in (u, v), (v, u) pairs: arc 2k and 2k+1 are bond k.
    pair_rbf is n x n x K in euclidean-rbf mode and n x n x 0 in hop mode.
    """

    mol_id: str
    node_feat_idx: np.ndarray
    arcs: np.ndarray
    edge_feat_idx: np.ndarray
    bond_dist: np.ndarray
    pair_rbf: np.ndarray
    hop: np.ndarray
    in_degree: np.ndarray
    target: Optional[float] = None

    @property
    def n_atoms(self) -> int:
        return int(self.node_feat_idx.shape[0])

    @property
    def n_arcs(self) -> int:
        return int(self.arcs.shape[0])


# --------------------------------------------------
# Distance featurization
# --------------------------------------------------
def rbf_expand(d, cfg: RbfConfig) -> np.ndarray:
    """
    Gaussian RBF expansion, component k = exp(-gamma * (d - mu_k)^2)

    Args:
        d: Distance (scalar or array, Angstrom)
        cfg: Kernel layout

    Returns:
        Array of shape d.shape + (K,), values in (0, 1]
    """
    d = np.asarray(d, dtype=np.float64)
    bad = ~np.isfinite(d) | (d < 0)
    if bad.any():
        where = int(np.flatnonzero(bad.reshape(-1))[0])
        raise GraphValidationError(
            "invalid_distance", "distance", where, detail=f"{d.reshape(-1)[where]!r}"
        )
    delta = d[..., None] - cfg.centers
    return np.exp(-cfg.gamma * delta * delta)


def sample_laplace(p: LaplaceParams, rng: np.random.Generator, size) -> np.ndarray:
    """
    Inverse-CDF Laplace draws: x = mu - b * sign(u) * ln(1 - 2|u|), u ~ U(-0.5, 0.5)
    """
    u = rng.uniform(-0.5, 0.5, size)
    # u = -0.5 would give ln(0)
    u = np.clip(u, -np.nextafter(0.5, 0.0), np.nextafter(0.5, 0.0))
    return p.mu - p.b * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_augment(
    bond_dists: np.ndarray,
    p: Optional[LaplaceParams],
    rng: Optional[np.random.Generator],
    floor: float = MIN_BOND_DISTANCE,
) -> np.ndarray:
    """
    Adds independent Laplace(mu, b) noise to every entry

    Args:
        bond_dists: Distances (Angstrom)
        p: Noise parameters; None disables augmentation (identity)
        rng: Seeded generator
        floor: Lower clamp applied after adding noise

    Returns:
        New array; the input is left untouched
    """
    bond_dists = np.asarray(bond_dists, dtype=np.float64)
    if p is None:
        return bond_dists.copy()
    if rng is None:
        raise ValueError("laplace_augment needs a seeded generator")
    noisy = bond_dists + sample_laplace(p, rng, bond_dists.shape)
    return np.maximum(noisy, floor)


def augment_arc_distances(
    bond_dist: np.ndarray, p: Optional[LaplaceParams], rng: Optional[np.random.Generator]
) -> np.ndarray:
    """One draw per undirected bond, written to both of its arcs"""
    if p is None or bond_dist.size == 0:
        return np.asarray(bond_dist, dtype=np.float64).copy()
    per_bond = laplace_augment(bond_dist[0::2], p, rng)
    return np.repeat(per_bond, 2)


# --------------------------------------------------
# Molecule featurization
# --------------------------------------------------
def featurize_molecule(
    g: MolecularGraph, cfg: RbfConfig, spatial_mode: str = "euclidean-rbf"
) -> FeaturizedGraph:
    """
    Assembles every FeaturizedGraph field for one molecule

    Args:
        g: Molecule (validated here)
        cfg: RBF layout for the pairwise expansion
        spatial_mode: 'euclidean-rbf' or 'hop'

    Returns:
        FeaturizedGraph
    """
    if spatial_mode not in SPATIAL_MODES:
        raise ConfigError(f"unknown spatial mode {spatial_mode!r}; choose from {SPATIAL_MODES}")
    validate_graph(g)
    n = g.n_atoms

    dist = pairwise_euclidean(g.coords)
    hop = shortest_path_lengths(g)

    # Bond k becomes arcs 2k = (u, v) and 2k+1 = (v, u)
    arcs = np.empty((2 * g.n_bonds, 2), dtype=np.int64)
    arcs[0::2] = g.bonds
    arcs[1::2] = g.bonds[:, ::-1]
    edge_feat_idx = np.repeat(g.bond_features, 2, axis=0)
    bond_dist = dist[arcs[:, 0], arcs[:, 1]] if arcs.size else np.zeros(0)

    if spatial_mode == "euclidean-rbf":
        pair_rbf = rbf_expand(dist, cfg)
    else:
        pair_rbf = np.zeros((n, n, 0), dtype=np.float64)

    in_degree = np.bincount(arcs[:, 1], minlength=n).astype(np.int64) if arcs.size else np.zeros(n, dtype=np.int64)

    return FeaturizedGraph(
        mol_id=g.mol_id,
        node_feat_idx=g.atom_features.copy(),
        arcs=arcs,
        edge_feat_idx=edge_feat_idx,
        bond_dist=np.asarray(bond_dist, dtype=np.float64),
        pair_rbf=pair_rbf,
        hop=hop,
        in_degree=in_degree,
        target=g.target,
    )


class MoleculeFeaturizer:
    """
    Featurizes molecules, optionally on a process pool

    Output order always follows input order, so the worker count never
    changes the result.
    """

    def __init__(self, cfg: RbfConfig, spatial_mode: str = "euclidean-rbf", workers: int = 1):
        """
        Args:
            cfg: RBF layout
            spatial_mode: 'euclidean-rbf' or 'hop'
            workers: Process count (1 = in-process)
        """
        if spatial_mode not in SPATIAL_MODES:
            raise ConfigError(f"unknown spatial mode {spatial_mode!r}; choose from {SPATIAL_MODES}")
        self.cfg = cfg
        self.spatial_mode = spatial_mode
        self.workers = max(1, int(workers))

    def featurize(self, g: MolecularGraph) -> FeaturizedGraph:
        return featurize_molecule(g, self.cfg, self.spatial_mode)

    def featurize_all(self, graphs: Iterable[MolecularGraph]) -> List[FeaturizedGraph]:
        graphs = list(graphs)
        logger.info(
            f"Featurizing {len(graphs)} molecules | mode={self.spatial_mode} "
            f"kernels={self.cfg.n_kernels} workers={self.workers}"
        )
        if self.workers == 1 or len(graphs) < 2:
            return [self.featurize(g) for g in graphs]

        job = partial(featurize_molecule, cfg=self.cfg, spatial_mode=self.spatial_mode)
        chunksize = max(1, len(graphs) // (self.workers * 4))
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(job, graphs, chunksize=chunksize))
