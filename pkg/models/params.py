"""
Parameter Storage
Named, shaped parameter arrays and the checkpoint container shared by both models
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional, Tuple, Union
import io
import json
import logging
import struct

import numpy as np

from autodiff.tape import Tape, Value
from utils.errors import CheckpointError, ConfigError
from utils.helpers import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MOLCKPT\x00"
CHECKPOINT_VERSION = 1

_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")

INITIALIZERS = ("normal", "fan_in_uniform", "zeros", "ones")


@dataclass(frozen=True)
class ParamSpec:
    """Shape and initializer of one parameter tensor"""

    shape: Tuple[int, ...]
    init: str = "fan_in_uniform"
    std: float = 0.02

    def __post_init__(self):
        if self.init not in INITIALIZERS:
            raise ConfigError(f"unknown initializer {self.init!r}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class ParameterStore:
    """
    Ordered mapping of parameter name -> float64 array

    Reads are safe from many workers; only the optimizer writes, in place.
    """

    def __init__(self, arrays: Optional[Mapping[str, np.ndarray]] = None):
        self._arrays: Dict[str, np.ndarray] = {}
        for name, array in (arrays or {}).items():
            self._arrays[name] = np.array(array, dtype=np.float64, copy=True)

    # --------------------------------------------------
    # Construction
    # --------------------------------------------------
    @classmethod
    def initialize(cls, specs: Mapping[str, ParamSpec], rng: np.random.Generator) -> "ParameterStore":
        """
        Draws every tensor from its initializer, in spec order

        normal: N(0, std^2); fan_in_uniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
        with fan_in the leading dimension; zeros; ones.
        """
        arrays = {}
        for name, spec in specs.items():
            if spec.init == "normal":
                arrays[name] = rng.normal(0.0, spec.std, spec.shape)
            elif spec.init == "fan_in_uniform":
                bound = 1.0 / np.sqrt(max(spec.shape[0], 1)) if spec.shape else 1.0
                arrays[name] = rng.uniform(-bound, bound, spec.shape)
            elif spec.init == "zeros":
                arrays[name] = np.zeros(spec.shape)
            else:
                arrays[name] = np.ones(spec.shape)
        return cls(arrays)

    def copy(self) -> "ParameterStore":
        return ParameterStore(self._arrays)

    # --------------------------------------------------
    # Mapping interface
    # --------------------------------------------------
    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, array: np.ndarray) -> None:
        array = np.asarray(array, dtype=np.float64)
        if name in self._arrays and array.shape != self._arrays[name].shape:
            raise ConfigError(f"{name}: cannot change shape {self._arrays[name].shape} -> {array.shape}")
        self._arrays[name] = array

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def as_dict(self) -> Dict[str, np.ndarray]:
        return dict(self._arrays)

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: array.shape for name, array in self._arrays.items()}

    def num_parameters(self) -> int:
        return int(sum(array.size for array in self._arrays.values()))

    def bind(self, tape: Tape) -> Dict[str, Value]:
        """Records every parameter as a leaf on the tape"""
        return {name: tape.leaf(array, name) for name, array in self._arrays.items()}

    def check_specs(self, specs: Mapping[str, ParamSpec]) -> None:
        """Raises CheckpointError unless names and shapes match the specs exactly"""
        expected = {name: spec.shape for name, spec in specs.items()}
        if list(expected) != list(self._arrays):
            missing = sorted(set(expected) - set(self._arrays))
            extra = sorted(set(self._arrays) - set(expected))
            raise CheckpointError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, shape in expected.items():
            if self._arrays[name].shape != shape:
                raise CheckpointError(f"{name}: checkpoint shape {self._arrays[name].shape}, config expects {shape}")

    def equals(self, other: "ParameterStore") -> bool:
        """Bitwise equality of names, shapes and values"""
        if list(self._arrays) != list(other._arrays):
            return False
        return all(
            self._arrays[name].shape == other[name].shape
            and self._arrays[name].tobytes() == other[name].tobytes()
            for name in self._arrays
        )


# --------------------------------------------------
# Checkpoint container
# --------------------------------------------------
@dataclass
class Checkpoint:
    model: str
    config: dict
    params: ParameterStore


def encode_checkpoint(params: ParameterStore, model: str, config: dict) -> bytes:
    header = json.dumps({"model": model, "config": config, "entries": len(params)}, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(_U32.pack(CHECKPOINT_VERSION))
    buf.write(_U32.pack(len(header)))
    buf.write(header)
    for name, array in params.items():
        encoded = name.encode("utf-8")
        buf.write(_U32.pack(len(encoded)))
        buf.write(encoded)
        buf.write(_U32.pack(array.ndim))
        for dim in array.shape:
            buf.write(_I64.pack(int(dim)))
        buf.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return buf.getvalue()


def manifest_text(params: ParameterStore, model: str) -> str:
    lines = [f"# model: {model}", f"# parameters: {params.num_parameters()}"]
    for name, array in params.items():
        lines.append(f"{name}\t{'x'.join(str(d) for d in array.shape) or 'scalar'}")
    return "\n".join(lines) + "\n"


def save_checkpoint(path: Union[str, Path], params: ParameterStore, model: str, config: dict) -> Path:
    """
    Writes the binary checkpoint and a text manifest next to it

    Args:
        path: Checkpoint file
        params: Parameter values
        model: 'graphormer' or 'expc'
        config: Model config record (to_dict())

    Returns:
        Checkpoint path
    """
    target = atomic_write_bytes(path, encode_checkpoint(params, model, config))
    atomic_write_text(Path(str(target) + ".manifest.txt"), manifest_text(params, model))
    logger.info(f"Saved {model} checkpoint ({params.num_parameters()} params) to {target}")
    return target


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Reads a checkpoint container

    Raises:
        CheckpointError: missing, truncated or foreign file
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = memoryview(path.read_bytes())
    offset = 0

    def take(size: int) -> memoryview:
        nonlocal offset
        if offset + size > len(payload):
            raise CheckpointError(f"{path}: truncated at byte {offset}")
        chunk = payload[offset:offset + size]
        offset += size
        return chunk

    if bytes(take(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = _U32.unpack(take(4))[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(bytes(take(_U32.unpack(take(4))[0])).decode("utf-8"))

    arrays: Dict[str, np.ndarray] = {}
    for _ in range(int(header["entries"])):
        name = bytes(take(_U32.unpack(take(4))[0])).decode("utf-8")
        ndim = _U32.unpack(take(4))[0]
        shape = tuple(_I64.unpack(take(8))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes")
    return Checkpoint(model=header["model"], config=header["config"], params=ParameterStore(arrays))
