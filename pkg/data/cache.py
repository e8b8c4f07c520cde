"""
Featurized Cache
Versioned little-endian binary container of FeaturizedGraph records
"""

from pathlib import Path
from typing import List, Sequence, Tuple, Union
import io
import json
import logging
import struct

import numpy as np

from data.featurizer import FeaturizedGraph, RbfConfig
from utils.errors import CheckpointError, ConfigError
from utils.helpers import atomic_write_bytes

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"MOLFEAT\x00"
CACHE_VERSION = 1

_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")


# --------------------------------------------------
# Writing
# --------------------------------------------------
def _write_array(buf: io.BytesIO, array: np.ndarray, dtype: str) -> None:
    array = np.ascontiguousarray(array, dtype=dtype)
    buf.write(_U32.pack(array.ndim))
    for dim in array.shape:
        buf.write(_I64.pack(int(dim)))
    buf.write(array.tobytes(order="C"))


def _write_record(buf: io.BytesIO, fg: FeaturizedGraph) -> None:
    mol_id = fg.mol_id.encode("utf-8")
    buf.write(_U32.pack(len(mol_id)))
    buf.write(mol_id)
    _write_array(buf, fg.node_feat_idx, "<i8")
    _write_array(buf, fg.arcs, "<i8")
    _write_array(buf, fg.edge_feat_idx, "<i8")
    _write_array(buf, fg.bond_dist, "<f8")
    _write_array(buf, fg.pair_rbf, "<f8")
    _write_array(buf, fg.hop, "<i8")
    _write_array(buf, fg.in_degree, "<i8")
    buf.write(b"\x01" if fg.target is not None else b"\x00")
    buf.write(_F64.pack(fg.target if fg.target is not None else 0.0))


def encode_cache(records: Sequence[FeaturizedGraph], spatial_mode: str, rbf: RbfConfig) -> bytes:
    header = json.dumps(
        {"spatial_mode": spatial_mode, "rbf": rbf.to_dict(), "count": len(records)},
        sort_keys=True,
    ).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC)
    buf.write(_U32.pack(CACHE_VERSION))
    buf.write(_U32.pack(len(header)))
    buf.write(header)
    for fg in records:
        _write_record(buf, fg)
    return buf.getvalue()


def write_cache(
    path: Union[str, Path], records: Sequence[FeaturizedGraph], spatial_mode: str, rbf: RbfConfig
) -> Path:
    """
    Writes featurized molecules to a cache file (atomically)

    Args:
        path: Destination
        records: Featurized molecules in dataset order
        spatial_mode: Mode the records were built with
        rbf: RBF layout the records were built with
    """
    target = atomic_write_bytes(path, encode_cache(records, spatial_mode, rbf))
    logger.info(f"Wrote {len(records)} featurized records to {target}")
    return target


# --------------------------------------------------
# Reading
# --------------------------------------------------
class _Cursor:
    def __init__(self, payload: bytes):
        self.view = memoryview(payload)
        self.offset = 0

    def take(self, size: int) -> memoryview:
        if self.offset + size > len(self.view):
            raise CheckpointError(f"cache truncated at byte {self.offset}")
        chunk = self.view[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))[0]

    def array(self, dtype: str) -> np.ndarray:
        ndim = self.unpack(_U32)
        shape = tuple(self.unpack(_I64) for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        width = np.dtype(dtype).itemsize
        data = np.frombuffer(self.take(count * width), dtype=dtype).reshape(shape)
        return data.astype(dtype[1:], copy=True)


def _read_record(cursor: _Cursor) -> FeaturizedGraph:
    mol_id = bytes(cursor.take(cursor.unpack(_U32))).decode("utf-8")
    node_feat_idx = cursor.array("<i8")
    arcs = cursor.array("<i8")
    edge_feat_idx = cursor.array("<i8")
    bond_dist = cursor.array("<f8")
    pair_rbf = cursor.array("<f8")
    hop = cursor.array("<i8")
    in_degree = cursor.array("<i8")
    has_target = bytes(cursor.take(1)) == b"\x01"
    target = cursor.unpack(_F64)
    return FeaturizedGraph(
        mol_id=mol_id,
        node_feat_idx=node_feat_idx,
        arcs=arcs,
        edge_feat_idx=edge_feat_idx,
        bond_dist=bond_dist,
        pair_rbf=pair_rbf,
        hop=hop,
        in_degree=in_degree,
        target=target if has_target else None,
    )


def read_cache(path: Union[str, Path]) -> Tuple[List[FeaturizedGraph], str, RbfConfig]:
    """
    Loads a cache file

    Returns:
        (records, spatial_mode, rbf config)
    """
    payload = Path(path).read_bytes()
    cursor = _Cursor(payload)
    if bytes(cursor.take(len(CACHE_MAGIC))) != CACHE_MAGIC:
        raise CheckpointError(f"{path}: not a featurized cache")
    version = cursor.unpack(_U32)
    if version != CACHE_VERSION:
        raise CheckpointError(f"{path}: unsupported cache version {version}")
    header = json.loads(bytes(cursor.take(cursor.unpack(_U32))).decode("utf-8"))
    records = [_read_record(cursor) for _ in range(int(header["count"]))]
    if cursor.offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - cursor.offset} trailing bytes")
    return records, header["spatial_mode"], RbfConfig.from_dict(header["rbf"])


def load_cache_for(path: Union[str, Path], spatial_mode: str, rbf: RbfConfig) -> List[FeaturizedGraph]:
    """Reads a cache and rejects it unless it was built with the given mode and RBF layout"""
    records, cached_mode, cached_rbf = read_cache(path)
    if cached_mode != spatial_mode:
        raise ConfigError(f"cache {path} built in {cached_mode!r} mode, model needs {spatial_mode!r}")
    if spatial_mode == "euclidean-rbf" and cached_rbf != rbf:
        raise ConfigError(f"cache {path} RBF layout {cached_rbf} differs from model's {rbf}")
    return records
