"""
Dataset Loading Module
Reads and writes line-delimited molecule records with a schema header line
"""

from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Union
import json
import logging
import math

from data.graph import DatasetSchema, MolecularGraph, validate_graph
from utils.errors import DataFormatError, GraphValidationError
from utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("atom_features", "bonds", "bond_features", "coords", "id")


class DatasetReader:
    """
    Streams validated MolecularGraphs from a line-delimited dataset file

    Line 1 is the schema header ({"schema": {"atom_vocab": [...], ...}});
    every following non-blank line is one molecule record.
    """

    def __init__(self, path: Union[str, Path]):
        """
        Args:
            path: Dataset file
        """
        self.path = Path(path)
        if not self.path.is_file():
            raise DataFormatError(f"dataset file not found: {self.path}")
        self._schema: Optional[DatasetSchema] = None

    # --------------------------------------------------
    # Header
    # --------------------------------------------------
    @property
    def schema(self) -> DatasetSchema:
        if self._schema is None:
            with open(self.path, "r", encoding="utf-8") as handle:
                first = handle.readline()
            self._schema = self._parse_schema(first)
        return self._schema

    @staticmethod
    def _parse_schema(line: str) -> DatasetSchema:
        if not line.strip():
            raise DataFormatError("missing schema header", line=1)
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"schema header is not valid JSON: {e.msg}", line=1) from e
        record = record.get("schema", record) if isinstance(record, dict) else record
        try:
            return DatasetSchema.from_dict(record)
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"invalid schema header: {e}", line=1) from e

    # --------------------------------------------------
    # Records
    # --------------------------------------------------
    def __iter__(self) -> Iterator[MolecularGraph]:
        schema = self.schema
        count = 0
        with open(self.path, "r", encoding="utf-8") as handle:
            handle.readline()
            for line_no, line in enumerate(handle, start=2):
                if not line.strip():
                    continue
                yield self._parse_record(line, line_no, schema)
                count += 1
        logger.info(f"Loaded {count} molecules from {self.path}")

    @staticmethod
    def _parse_record(line: str, line_no: int, schema: DatasetSchema) -> MolecularGraph:
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"malformed record: {e.msg}", line=line_no) from e
        if not isinstance(record, dict):
            raise DataFormatError("record is not an object", line=line_no)
        missing = [name for name in REQUIRED_FIELDS if name not in record]
        if missing:
            raise DataFormatError(f"missing fields {missing}", line=line_no)

        target = record.get("target")
        if target is not None and not (isinstance(target, (int, float)) and math.isfinite(target)):
            raise DataFormatError(f"target must be a finite number or null, got {target!r}", line=line_no)

        try:
            g = MolecularGraph(
                mol_id=str(record["id"]),
                atom_features=record["atom_features"],
                bonds=record["bonds"],
                bond_features=record["bond_features"],
                coords=record["coords"],
                target=target,
                schema=schema,
            )
            return validate_graph(g)
        except GraphValidationError as e:
            raise DataFormatError(str(e), line=line_no, column=e.column) from e
        except (TypeError, ValueError) as e:
            raise DataFormatError(f"schema mismatch: {e}", line=line_no) from e


def load_dataset(path: Union[str, Path]) -> Iterator[MolecularGraph]:
    """
    Streams validated graphs from a dataset file

    Args:
        path: Dataset file (schema header first)

    Returns:
        Iterator of MolecularGraph in file order
    """
    return iter(DatasetReader(path))


def read_schema(path: Union[str, Path]) -> DatasetSchema:
    return DatasetReader(path).schema


def write_dataset(path: Union[str, Path], schema: DatasetSchema, graphs: Iterable[MolecularGraph]) -> Path:
    """
    Writes graphs in the line-delimited dataset format

    Args:
        path: Destination file (written atomically)
        schema: Header record
        graphs: Molecules to write

    Returns:
        The destination path
    """
    lines: List[str] = [json.dumps({"schema": schema.to_dict()})]
    for g in graphs:
        lines.append(
            json.dumps(
                {
                    "id": g.mol_id,
                    "atom_features": g.atom_features.tolist(),
                    "bonds": g.bonds.tolist(),
                    "bond_features": g.bond_features.tolist(),
                    "coords": g.coords.tolist(),
                    "target": g.target,
                }
            )
        )
    return atomic_write_text(path, "\n".join(lines) + "\n")
