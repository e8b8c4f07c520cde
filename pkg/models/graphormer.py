"""
Graphormer Model
Pre-norm transformer over atoms whose attention is biased by RBF-expanded Euclidean distances
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from autodiff import ops
from autodiff.tape import Tape, Value
from data.batching import GraphormerBatch, collate_graphormer
from data.featurizer import SPATIAL_MODES, FeaturizedGraph, LaplaceParams, RbfConfig
from data.graph import UNREACHABLE, DatasetSchema
from models.base import RegressionModel, column_offsets, resolve_vocab
from models.params import ParamSpec
from utils.errors import ConfigError, NumericalError, ShapeError
from utils.helpers import derive_rng

logger = logging.getLogger(__name__)

# Additive logit on padded keys; exp() of it underflows to exactly 0
KEY_MASK_VALUE = -1e30

# Dropout sites inside one block
_ATTN_SITE, _ATTN_OUT_SITE, _FFN_OUT_SITE, _EMBED_SITE = 0, 1, 2, 3


@dataclass(frozen=True)
class GraphormerConfig:
    """
    Graphormer hyper-parameters

    Vocabularies: column_capacity gives every categorical column the same
    table size; otherwise atom_vocab / bond_vocab give explicit sizes; when
    both are unset the dataset schema decides (see resolve).
    """

    n_layers: int = 12
    hidden_dim: int = 768
    ffn_dim: int = 768
    n_heads: int = 32
    head_dim: int = 24
    ffn_dropout: float = 0.1
    attn_dropout: float = 0.1
    embed_dropout: float = 0.0
    rbf: RbfConfig = field(default_factory=RbfConfig)
    spatial_mode: str = "euclidean-rbf"
    max_degree: int = 512
    max_hop: int = 20
    atom_vocab: Optional[Tuple[int, ...]] = None
    bond_vocab: Optional[Tuple[int, ...]] = None
    column_capacity: Optional[int] = None
    laplace: Optional[LaplaceParams] = field(default_factory=LaplaceParams)

    def __post_init__(self):
        if self.n_layers < 0:
            raise ConfigError(f"n_layers must be >= 0, got {self.n_layers}")
        for name in ("hidden_dim", "ffn_dim", "n_heads", "head_dim", "max_degree", "max_hop"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_heads * self.head_dim != self.hidden_dim:
            raise ConfigError(
                f"n_heads x head_dim = {self.n_heads * self.head_dim} must equal hidden_dim {self.hidden_dim}"
            )
        for name in ("ffn_dropout", "attn_dropout", "embed_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if self.spatial_mode not in SPATIAL_MODES:
            raise ConfigError(f"unknown spatial mode {self.spatial_mode!r}")
        if self.column_capacity is not None and self.column_capacity < 1:
            raise ConfigError(f"column_capacity must be positive, got {self.column_capacity}")
        for name in ("atom_vocab", "bond_vocab"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))

    @property
    def resolved(self) -> bool:
        return self.atom_vocab is not None and self.bond_vocab is not None

    def resolve(self, schema: DatasetSchema) -> "GraphormerConfig":
        """Fixes the vocabulary sizes against a dataset schema (all columns)"""
        return replace(
            self,
            atom_vocab=resolve_vocab(self.atom_vocab, self.column_capacity, schema.atom_vocab, "atom"),
            bond_vocab=resolve_vocab(self.bond_vocab, self.column_capacity, schema.bond_vocab, "bond"),
        )

    def to_dict(self) -> dict:
        record = asdict(self)
        record["rbf"] = self.rbf.to_dict()
        record["laplace"] = self.laplace.to_dict() if self.laplace is not None else None
        for name in ("atom_vocab", "bond_vocab"):
            if record[name] is not None:
                record[name] = list(record[name])
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "GraphormerConfig":
        record = dict(record)
        record["rbf"] = RbfConfig.from_dict(record.get("rbf") or {})
        laplace = record.get("laplace")
        record["laplace"] = LaplaceParams(**laplace) if laplace is not None else None
        return cls(**record)


# --------------------------------------------------
# Parameter layout
# --------------------------------------------------
def block_specs(cfg: GraphormerConfig, layer: int) -> Dict[str, ParamSpec]:
    d, f = cfg.hidden_dim, cfg.ffn_dim
    p = f"layers.{layer}."
    return {
        p + "ln1.gain": ParamSpec((d,), "ones"),
        p + "ln1.bias": ParamSpec((d,), "zeros"),
        p + "attn.wq": ParamSpec((d, d)),
        p + "attn.bq": ParamSpec((d,), "zeros"),
        p + "attn.wk": ParamSpec((d, d)),
        p + "attn.bk": ParamSpec((d,), "zeros"),
        p + "attn.wv": ParamSpec((d, d)),
        p + "attn.bv": ParamSpec((d,), "zeros"),
        p + "attn.wo": ParamSpec((d, d)),
        p + "attn.bo": ParamSpec((d,), "zeros"),
        p + "ln2.gain": ParamSpec((d,), "ones"),
        p + "ln2.bias": ParamSpec((d,), "zeros"),
        p + "ffn.w1": ParamSpec((d, f)),
        p + "ffn.b1": ParamSpec((f,), "zeros"),
        p + "ffn.w2": ParamSpec((f, d)),
        p + "ffn.b2": ParamSpec((d,), "zeros"),
    }


def parameter_specs(cfg: GraphormerConfig) -> Dict[str, ParamSpec]:
    """
    Ordered name -> ParamSpec map; initialization and counting both derive from it

    Raises:
        ConfigError: vocabularies not resolved yet
    """
    if not cfg.resolved:
        raise ConfigError("Graphormer vocabularies are unresolved; call resolve(schema) first")
    d, h, k = cfg.hidden_dim, cfg.n_heads, cfg.rbf.n_kernels
    specs: Dict[str, ParamSpec] = {
        "atom_embed": ParamSpec((sum(cfg.atom_vocab), d), "normal"),
        "degree_embed": ParamSpec((cfg.max_degree, d), "normal"),
        "graph_token": ParamSpec((1, d), "normal"),
        "token_bias": ParamSpec((h,), "zeros"),
    }
    if cfg.spatial_mode == "euclidean-rbf":
        specs["spatial_proj"] = ParamSpec((k, h))
        specs["spatial_offset"] = ParamSpec((h,), "zeros")
    else:
        specs["hop_embed"] = ParamSpec((cfg.max_hop + 2, h), "normal")
    if sum(cfg.bond_vocab):
        specs["edge_type_embed"] = ParamSpec((sum(cfg.bond_vocab), h), "normal")
    specs["edge_dist_proj"] = ParamSpec((k, h))
    specs["edge_dist_offset"] = ParamSpec((h,), "zeros")
    for layer in range(cfg.n_layers):
        specs.update(block_specs(cfg, layer))
    specs["final_ln.gain"] = ParamSpec((d,), "ones")
    specs["final_ln.bias"] = ParamSpec((d,), "zeros")
    specs["head.weight"] = ParamSpec((d, 1), "zeros")
    specs["head.bias"] = ParamSpec((1,), "zeros")
    return specs


def count_parameters(cfg: GraphormerConfig) -> int:
    return int(sum(spec.size for spec in parameter_specs(cfg).values()))


def closed_form_parameter_count(cfg: GraphormerConfig) -> int:
    """
    Size formula, independent of parameter_specs

    sum(atom_vocab)*d + max_degree*d + d + H + spatial + sum(bond_vocab)*H
    + (K*H + H) + L*(4d^2 + 4d + 2df + f + d + 4d) + 2d + d + 1
    with spatial = K*H + H (euclidean-rbf) or (max_hop + 2)*H (hop).
    """
    d, f, h, k, n = cfg.hidden_dim, cfg.ffn_dim, cfg.n_heads, cfg.rbf.n_kernels, cfg.n_layers
    spatial = k * h + h if cfg.spatial_mode == "euclidean-rbf" else (cfg.max_hop + 2) * h
    embeddings = sum(cfg.atom_vocab) * d + cfg.max_degree * d + d + h + spatial
    edges = sum(cfg.bond_vocab) * h + k * h + h
    block = 4 * d * d + 4 * d + 2 * d * f + f + d + 4 * d
    return embeddings + edges + n * block + 2 * d + d + 1


# --------------------------------------------------
# Attention bias
# --------------------------------------------------
def spatial_bias(pair_rbf, proj: Value, offset: Value) -> Value:
    """
    Per-head bias from RBF-expanded pair distances

    bias[..., i, j, h] = <proj[:, h], pair_rbf[..., i, j, :]> + offset[h]

    Args:
        pair_rbf: (..., n, n, K) array or Value
        proj: (K, H) projection
        offset: (H,) per-head offset

    Raises:
        ShapeError: K differs between pair_rbf and proj
    """
    if not isinstance(pair_rbf, Value):
        pair_rbf = proj.tape.constant(pair_rbf, "pair_rbf")
    if pair_rbf.shape[-1] != proj.shape[0] or offset.shape != (proj.shape[1],):
        raise ShapeError("spatial_bias", pair_rbf.shape, proj.shape, offset.shape)
    return ops.add(ops.matmul(pair_rbf, proj), offset)


def hop_buckets(hop: np.ndarray, max_hop: int) -> np.ndarray:
    """Clips hop counts to max_hop; UNREACHABLE pairs get their own bucket max_hop + 1"""
    buckets = np.minimum(hop, max_hop)
    buckets[hop == UNREACHABLE] = max_hop + 1
    return buckets


class GraphormerModel(RegressionModel):
    """Graphormer regressor: graph token, centrality, spatial and edge encodings, L pre-norm blocks"""

    kind = "graphormer"

    def __init__(self, cfg: GraphormerConfig):
        super().__init__(cfg)

    @property
    def spatial_mode(self) -> str:
        return self.cfg.spatial_mode

    def parameter_specs(self) -> Dict[str, ParamSpec]:
        return parameter_specs(self.cfg)

    def collate(
        self, fgs: Sequence[FeaturizedGraph], augment: bool = False, seed: int = 0, epoch: int = 0
    ) -> GraphormerBatch:
        laplace = self.cfg.laplace if augment else None
        return collate_graphormer(fgs, self.cfg.rbf, laplace, seed, epoch)

    # --------------------------------------------------
    # Encodings
    # --------------------------------------------------
    def node_input(self, params: Dict[str, Value], batch: GraphormerBatch) -> Value:
        """Sum of per-column atom embeddings plus the in-degree embedding, (B, N, d)"""
        cfg = self.cfg
        if batch.node_idx.shape[2] != len(cfg.atom_vocab):
            raise ShapeError("node_input", batch.node_idx.shape, (len(cfg.atom_vocab),))
        idx = batch.node_idx + column_offsets(cfg.atom_vocab)
        atoms = ops.sum_(ops.embedding_lookup(params["atom_embed"], idx), axis=2)
        degree = np.minimum(batch.in_degree, cfg.max_degree - 1)
        return ops.add(atoms, ops.embedding_lookup(params["degree_embed"], degree))

    def edge_bias(self, params: Dict[str, Value], batch: GraphormerBatch, n: int) -> Value:
        """
        Bonded-pair bias (B, N, N, H): bond-type term plus the RBF-projected
        bond distance, written at (i, j) for every directed arc i -> j
        """
        cfg = self.cfg
        per_arc = spatial_bias(batch.arc_rbf, params["edge_dist_proj"], params["edge_dist_offset"])
        if "edge_type_embed" in params and batch.arc_feat.shape[1]:
            idx = batch.arc_feat + column_offsets(cfg.bond_vocab)
            types = ops.sum_(ops.embedding_lookup(params["edge_type_embed"], idx), axis=1)
            per_arc = ops.add(per_arc, ops.scale(types, 1.0 / batch.arc_feat.shape[1]))
        return ops.index_add(
            per_arc, (batch.arc_graph, batch.arc_src, batch.arc_dst), (batch.size, n, n, cfg.n_heads)
        )

    def attention_bias(self, params: Dict[str, Value], batch: GraphormerBatch) -> Value:
        """Full additive attention bias (B, H, N+1, N+1), key mask included"""
        cfg = self.cfg
        b, n = batch.atom_mask.shape
        if cfg.spatial_mode == "euclidean-rbf":
            pair = spatial_bias(batch.pair_rbf, params["spatial_proj"], params["spatial_offset"])
        else:
            pair = ops.embedding_lookup(params["hop_embed"], hop_buckets(batch.hop, cfg.max_hop))
        pair = ops.add(pair, self.edge_bias(params, batch, n))
        framed = ops.transpose(ops.pad_pair_border(pair, params["token_bias"]), (0, 3, 1, 2))

        valid = np.concatenate([np.ones((b, 1), dtype=bool), batch.atom_mask], axis=1)
        mask = np.where(valid, 0.0, KEY_MASK_VALUE)[:, None, None, :]
        mask = np.broadcast_to(mask, framed.shape).copy()
        return ops.add(framed, framed.tape.constant(mask, "key_mask"))

    # --------------------------------------------------
    # Transformer
    # --------------------------------------------------
    def _dropout(self, x: Value, p: float, train: bool, seed: int, step: int, layer: int, site: int) -> Value:
        rng = derive_rng(seed, step, layer, site) if train and p > 0 else None
        return ops.dropout(x, p, train, rng)

    def block(
        self,
        params: Dict[str, Value],
        x: Value,
        bias: Value,
        layer: int,
        train: bool,
        seed: int,
        step: int,
        trace: Optional[List[np.ndarray]],
    ) -> Value:
        cfg = self.cfg
        p = f"layers.{layer}."
        b, n1, d = x.shape
        heads, dh = cfg.n_heads, cfg.head_dim

        y = ops.layer_norm(x, params[p + "ln1.gain"], params[p + "ln1.bias"])

        def project(w: str, bias_name: str) -> Value:
            z = ops.add(ops.matmul(y, params[p + w]), params[p + bias_name])
            return ops.reshape(z, (b, n1, heads, dh))

        q = ops.transpose(project("attn.wq", "attn.bq"), (0, 2, 1, 3))
        k = ops.transpose(project("attn.wk", "attn.bk"), (0, 2, 3, 1))
        v = ops.transpose(project("attn.wv", "attn.bv"), (0, 2, 1, 3))

        logits = ops.add(ops.scale(ops.matmul(q, k), 1.0 / math.sqrt(dh)), bias)
        attn = ops.softmax(logits)
        if trace is not None:
            trace.append(np.array(attn.data))
        attn = self._dropout(attn, cfg.attn_dropout, train, seed, step, layer, _ATTN_SITE)

        context = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (b, n1, d))
        out = ops.add(ops.matmul(context, params[p + "attn.wo"]), params[p + "attn.bo"])
        x = ops.add(x, self._dropout(out, cfg.ffn_dropout, train, seed, step, layer, _ATTN_OUT_SITE))

        y = ops.layer_norm(x, params[p + "ln2.gain"], params[p + "ln2.bias"])
        hidden = ops.gelu(ops.add(ops.matmul(y, params[p + "ffn.w1"]), params[p + "ffn.b1"]))
        out = ops.add(ops.matmul(hidden, params[p + "ffn.w2"]), params[p + "ffn.b2"])
        return ops.add(x, self._dropout(out, cfg.ffn_dropout, train, seed, step, layer, _FFN_OUT_SITE))

    def forward(
        self,
        tape: Tape,
        params: Dict[str, Value],
        batch: GraphormerBatch,
        train: bool = False,
        seed: int = 0,
        step: int = 0,
        trace: Optional[List[np.ndarray]] = None,
    ) -> Value:
        """
        Predictions (B,) read off the final graph-token state

        Args:
            tape: Tape holding params
            params: Bound parameters (ParameterStore.bind)
            batch: collate() output
            train: Enables dropout
            seed: Dropout stream seed
            step: Optimizer step, keys the dropout masks
            trace: When given, receives every layer's post-softmax attention (B, H, N+1, N+1)

        Raises:
            NumericalError: non-finite activation, reported with its layer index
        """
        cfg = self.cfg
        b = batch.size
        x = self.node_input(params, batch)
        token = ops.embedding_lookup(params["graph_token"], np.zeros((b, 1), dtype=np.int64))
        x = ops.concat([token, x], axis=1)
        x = self._dropout(x, cfg.embed_dropout, train, seed, step, -1, _EMBED_SITE)

        # One bias tensor serves every layer
        bias = self.attention_bias(params, batch)
        for layer in range(cfg.n_layers):
            x = self.block(params, x, bias, layer, train, seed, step, trace)
            if not np.isfinite(x.data).all():
                raise NumericalError(f"non-finite activation in Graphormer layer {layer} (batch {batch.mol_ids})")

        x = ops.layer_norm(x, params["final_ln.gain"], params["final_ln.bias"])
        graph = ops.select(x, 0, axis=1)
        pred = ops.add(ops.matmul(graph, params["head.weight"]), params["head.bias"])
        return ops.reshape(pred, (b,))


def encoder_forward(
    fg: FeaturizedGraph, params, cfg: GraphormerConfig, mode: str = "eval", seed: int = 0, step: int = 0
) -> float:
    """
    Scalar prediction for a single featurized molecule

    Args:
        fg: Molecule featurized in the config's spatial mode
        params: ParameterStore matching cfg
        cfg: Resolved config
        mode: 'train' (dropout active) or 'eval'
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    model = GraphormerModel(cfg)
    tape = Tape()
    pred = model.forward(tape, params.bind(tape), model.collate([fg]), train=mode == "train", seed=seed, step=step)
    return pred.item()
