"""
Utility Helper Functions
Atomic file writes, hashing, seed derivation and timestamps
"""

from typing import Iterator, List, Optional, Sequence, TypeVar, Union
from datetime import datetime, timezone
from pathlib import Path
import hashlib
import json
import logging
import os
import tempfile

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
PathLike = Union[str, os.PathLike]


def utc_timestamp() -> str:
    """Returns the current UTC time as an ISO-8601 string"""
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """
    Writes bytes to a temporary sibling file and renames it into place

    Args:
        path: Destination file
        payload: Bytes to write

    Returns:
        The destination path
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: PathLike, record: dict) -> Path:
    return atomic_write_text(path, json.dumps(record, indent=2, sort_keys=True) + "\n")


def file_sha256(path: PathLike) -> str:
    """
    Hex SHA-256 digest of a file's bytes

    Args:
        path: File to hash

    Returns:
        Digest string, or an empty string if the file does not exist
    """
    target = Path(path)
    if not target.is_file():
        return ""
    digest = hashlib.sha256()
    with open(target, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def stable_hash(text: str) -> int:
    """64-bit integer hash of a string, stable across processes (unlike hash())"""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def derive_rng(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """
    Builds an independent random generator from a seed and a key path

    The same (seed, keys) always produce the same stream, whichever worker
    or in whatever order the call happens.

    Args:
        seed: Global seed
        keys: Integers or strings (strings are hashed with stable_hash)

    Returns:
        numpy Generator
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        entropy.append(stable_hash(key) if isinstance(key, str) else int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def chunked(items: Sequence[T], size: int) -> Iterator[List[T]]:
    """Yields consecutive slices of at most `size` items"""
    if size < 1:
        raise ValueError(f"chunk size must be positive, got {size}")
    for start in range(0, len(items), size):
        yield list(items[start:start + size])


def resolve_workers(workers: Optional[int], default: int) -> int:
    """Worker count from an explicit flag, else the configured default (min 1)"""
    value = default if workers is None else workers
    return max(1, int(value))
