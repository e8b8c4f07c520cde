"""
Exception hierarchy
Every failure raised by the package derives from MolPropError
"""

from typing import Optional, Tuple


class MolPropError(Exception):
    """Base class for all package errors"""

    exit_code = 2


class GraphValidationError(MolPropError):
    """
    A molecular graph violates one of its invariants

    Args:
        tag: Machine-readable error tag (e.g. 'duplicate_bond')
        field: Offending field name
        index: Offending row / entry index, if any
        column: Offending categorical column, if any
        detail: Human-readable description
    """

    def __init__(
        self,
        tag: str,
        field: str,
        index: Optional[int] = None,
        column: Optional[int] = None,
        detail: str = "",
    ):
        self.tag = tag
        self.field = field
        self.index = index
        self.column = column
        where = f"{field}[{index}]" if index is not None else field
        if column is not None:
            where += f"[column {column}]"
        message = f"{tag}: {where}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class DataFormatError(MolPropError):
    """Malformed dataset, cache or spec file"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        prefix = ""
        if line is not None:
            prefix = f"line {line}: "
        if column is not None:
            prefix += f"column {column}: "
        super().__init__(prefix + message)


class ShapeError(MolPropError):
    """Operand shapes are incompatible"""

    exit_code = 3

    def __init__(self, op: str, *shapes: Tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shape mismatch {rendered}")


class NumericalError(MolPropError):
    """Non-finite activation, loss or gradient"""

    exit_code = 3


class NonDeterminismError(NumericalError):
    """Repeated evaluation of an objective gave different results"""


class ConfigError(MolPropError):
    """Invalid configuration or config/checkpoint mismatch"""

    exit_code = 1


class CheckpointError(MolPropError):
    """Corrupt or incompatible checkpoint / cache container"""
