"""
ExpC* Model
Edge-gated, dimension-expanded neighborhood aggregation with a summed virtual-node readout
"""

from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from autodiff import ops
from autodiff.tape import Tape, Value
from data.batching import ExpCBatch, collate_expc
from data.featurizer import FeaturizedGraph, RbfConfig
from data.graph import DatasetSchema
from models.base import RegressionModel, column_offsets, resolve_vocab
from models.params import ParamSpec
from utils.errors import ConfigError, NumericalError, ShapeError
from utils.helpers import derive_rng

logger = logging.getLogger(__name__)

# Official categorical feature sizes of the public molecule benchmark
OFFICIAL_ATOM_VOCAB = (119, 5, 12, 12, 10, 6, 6, 2, 2)
OFFICIAL_BOND_VOCAB = (5, 6, 2)


@dataclass(frozen=True)
class ExpCConfig:
    n_layers: int = 5
    hidden_dim: int = 600
    expanded_dim: int = 1200
    dropout: float = 0.0
    atom_vocab: Optional[Tuple[int, ...]] = OFFICIAL_ATOM_VOCAB
    bond_vocab: Optional[Tuple[int, ...]] = OFFICIAL_BOND_VOCAB

    def __post_init__(self):
        for name in ("n_layers", "hidden_dim", "expanded_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.expanded_dim < self.hidden_dim:
            raise ConfigError(f"expanded_dim {self.expanded_dim} must be >= hidden_dim {self.hidden_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("atom_vocab", "bond_vocab"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))
        if self.bond_vocab is not None and not self.bond_vocab:
            raise ConfigError("ExpC* needs at least one bond feature column")

    @property
    def resolved(self) -> bool:
        return self.atom_vocab is not None and self.bond_vocab is not None

    def resolve(self, schema: DatasetSchema) -> "ExpCConfig":
        """Fixes vocabulary sizes against the official (leading) schema columns"""
        return replace(
            self,
            atom_vocab=resolve_vocab(self.atom_vocab, None, schema.official_atom_vocab, "atom"),
            bond_vocab=resolve_vocab(self.bond_vocab, None, schema.official_bond_vocab, "bond"),
        )

    def to_dict(self) -> dict:
        record = asdict(self)
        for name in ("atom_vocab", "bond_vocab"):
            if record[name] is not None:
                record[name] = list(record[name])
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "ExpCConfig":
        return cls(**record)


@dataclass
class ExpCLayerParams:
    """
    One aggregation layer

    Weights act on row vectors: w1 is (edge_dim, d'), w2 is (d, d');
    the MLP maps d' -> d' -> d.
    """

    w1: Value
    w2: Value
    mlp_w1: Value
    mlp_b1: Value
    mlp_w2: Value
    mlp_b2: Value

    @classmethod
    def from_params(cls, params: Dict[str, Value], layer: int) -> "ExpCLayerParams":
        p = f"layers.{layer}."
        return cls(
            w1=params[p + "w1"],
            w2=params[p + "w2"],
            mlp_w1=params[p + "mlp.w1"],
            mlp_b1=params[p + "mlp.b1"],
            mlp_w2=params[p + "mlp.w2"],
            mlp_b2=params[p + "mlp.b2"],
        )


def expc_layer(h: Value, arcs: np.ndarray, edge_states: Value, p: ExpCLayerParams) -> Value:
    """
    out_v = MLP( sum_{(u,v)} relu(e_uv W1) * relu(h_u W2) + relu(h_v W2) )

    Arcs are sorted by (target, source) before anything is computed, so the
    summation order, and with it every output bit, is fixed by node index.

    Args:
        h: (n, d) node states
        arcs: (E, 2) directed (source, target) pairs
        edge_states: (E, edge_dim) rows aligned with arcs
        p: Layer parameters

    Returns:
        (n, d) new node states
    """
    arcs = np.asarray(arcs, dtype=np.int64).reshape(-1, 2)
    if h.ndim != 2 or h.shape[1] != p.w2.shape[0]:
        raise ShapeError("expc_layer (node states vs W2)", h.shape, p.w2.shape)
    if edge_states.ndim != 2 or edge_states.shape[0] != arcs.shape[0] or edge_states.shape[1] != p.w1.shape[0]:
        raise ShapeError("expc_layer (edge states vs arcs / W1)", edge_states.shape, arcs.shape, p.w1.shape)
    if arcs.size and (arcs.min() < 0 or arcs.max() >= h.shape[0]):
        raise ShapeError("expc_layer (arc endpoint outside node range)", arcs.shape, h.shape)

    order = np.lexsort((arcs[:, 0], arcs[:, 1]))
    src, dst = arcs[order, 0], arcs[order, 1]
    gates = ops.relu(ops.matmul(ops.embedding_lookup(edge_states, order), p.w1))
    expanded = ops.relu(ops.matmul(h, p.w2))
    messages = ops.mul(gates, ops.embedding_lookup(expanded, src))
    combined = ops.add(ops.index_add(messages, (dst,), expanded.shape), expanded)

    hidden = ops.relu(ops.add(ops.matmul(combined, p.mlp_w1), p.mlp_b1))
    return ops.add(ops.matmul(hidden, p.mlp_w2), p.mlp_b2)


def virtual_readout(states: Sequence[Value]) -> Value:
    """Element-wise sum of the virtual-node state recorded after every layer"""
    if not states:
        raise ShapeError("virtual_readout (no layer states)", ())
    total = states[0]
    for state in states[1:]:
        total = ops.add(total, state)
    return total


def parameter_specs(cfg: ExpCConfig) -> Dict[str, ParamSpec]:
    if not cfg.resolved:
        raise ConfigError("ExpC* vocabularies are unresolved; call resolve(schema) first")
    d, dx = cfg.hidden_dim, cfg.expanded_dim
    specs: Dict[str, ParamSpec] = {
        "atom_embed": ParamSpec((sum(cfg.atom_vocab), d), "normal"),
        "bond_embed": ParamSpec((sum(cfg.bond_vocab), d), "normal"),
        "virtual_init": ParamSpec((1, d), "normal"),
        "virtual_edge": ParamSpec((1, d), "normal"),
    }
    for layer in range(cfg.n_layers):
        p = f"layers.{layer}."
        specs[p + "w1"] = ParamSpec((d, dx))
        specs[p + "w2"] = ParamSpec((d, dx))
        specs[p + "mlp.w1"] = ParamSpec((dx, dx))
        specs[p + "mlp.b1"] = ParamSpec((dx,), "zeros")
        specs[p + "mlp.w2"] = ParamSpec((dx, d))
        specs[p + "mlp.b2"] = ParamSpec((d,), "zeros")
    specs["head.weight"] = ParamSpec((d, 1), "zeros")
    specs["head.bias"] = ParamSpec((1,), "zeros")
    return specs


class ExpCModel(RegressionModel):
    """ExpC* regressor over the official categorical features, no geometry"""

    kind = "expc"

    def __init__(self, cfg: ExpCConfig):
        super().__init__(cfg)

    @property
    def spatial_mode(self) -> str:
        # Hop mode skips the pairwise RBF expansion this model never reads
        return "hop"

    @property
    def rbf(self) -> RbfConfig:
        return RbfConfig()

    def parameter_specs(self) -> Dict[str, ParamSpec]:
        return parameter_specs(self.cfg)

    def collate(
        self, fgs: Sequence[FeaturizedGraph], augment: bool = False, seed: int = 0, epoch: int = 0
    ) -> ExpCBatch:
        return collate_expc(fgs, len(self.cfg.atom_vocab), len(self.cfg.bond_vocab))

    def forward(
        self,
        tape: Tape,
        params: Dict[str, Value],
        batch: ExpCBatch,
        train: bool = False,
        seed: int = 0,
        step: int = 0,
        trace: Optional[List[np.ndarray]] = None,
    ) -> Value:
        cfg = self.cfg
        if batch.node_idx.shape[1] != len(cfg.atom_vocab) or batch.arc_feat.shape[1] != len(cfg.bond_vocab):
            raise ShapeError("expc forward (feature columns)", batch.node_idx.shape, batch.arc_feat.shape)

        atoms = ops.sum_(
            ops.embedding_lookup(params["atom_embed"], batch.node_idx + column_offsets(cfg.atom_vocab)), axis=1
        )
        hubs = ops.embedding_lookup(params["virtual_init"], np.zeros(batch.size, dtype=np.int64))
        h = ops.concat([atoms, hubs], axis=0)

        bonds = ops.sum_(
            ops.embedding_lookup(params["bond_embed"], batch.arc_feat + column_offsets(cfg.bond_vocab)), axis=1
        )
        virtual = ops.embedding_lookup(params["virtual_edge"], np.zeros(batch.n_virtual_arcs, dtype=np.int64))
        edge_states = ops.concat([bonds, virtual], axis=0)
        arcs = np.stack([batch.arc_src, batch.arc_dst], axis=1)

        states = []
        for layer in range(cfg.n_layers):
            h = expc_layer(h, arcs, edge_states, ExpCLayerParams.from_params(params, layer))
            rng = derive_rng(seed, step, layer, 0) if train and cfg.dropout > 0 else None
            h = ops.dropout(h, cfg.dropout, train, rng)
            if not np.isfinite(h.data).all():
                raise NumericalError(f"non-finite activation in ExpC* layer {layer} (batch {batch.mol_ids})")
            states.append(ops.embedding_lookup(h, batch.virtual_nodes))
            if trace is not None:
                trace.append(np.array(states[-1].data))

        readout = virtual_readout(states)
        pred = ops.add(ops.matmul(readout, params["head.weight"]), params["head.bias"])
        return ops.reshape(pred, (batch.size,))


def expc_forward(fg: FeaturizedGraph, params, cfg: ExpCConfig, mode: str = "eval", seed: int = 0, step: int = 0) -> float:
    """Scalar prediction for one featurized molecule"""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    model = ExpCModel(cfg)
    tape = Tape()
    pred = model.forward(tape, params.bind(tape), model.collate([fg]), train=mode == "train", seed=seed, step=step)
    return pred.item()
