"""
Reverse-mode Tape
Values record the operations that produced them; backward replays the tape in reverse
"""

from typing import Callable, List, Optional, Sequence
import logging

import numpy as np

from utils.errors import ShapeError

logger = logging.getLogger(__name__)

BackwardFn = Callable[["Value"], None]


class Value:
    """
    A dense float64 array on a tape

    `data` never changes shape after creation. `grad` starts as zeros of the
    same shape and accumulates dloss/dvalue during Tape.backward.
    """

    __slots__ = ("data", "grad", "tape", "position", "parents", "backward_fn", "name")

    def __init__(self, data: np.ndarray, tape: "Tape", name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.data.setflags(write=False)
        self.grad = np.zeros_like(self.data)
        self.tape = tape
        self.position = -1
        self.parents: Sequence["Value"] = ()
        self.backward_fn: Optional[BackwardFn] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, ())
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Value{label} shape={self.shape} pos={self.position}>"


class Tape:
    """
    Ordered record of a forward computation

    Entries are appended as they are produced, so the recording order is a
    topological order. A tape belongs to a single worker.

    Non-smooth ops register their activity pattern through `mark_kink`;
    gradient checking compares these patterns between perturbed runs.
    """

    def __init__(self):
        self.entries: List[Value] = []
        self.kinks: List[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.entries)

    def _append(self, value: Value) -> Value:
        value.position = len(self.entries)
        self.entries.append(value)
        return value

    def leaf(self, data: np.ndarray, name: str = "") -> Value:
        """Records an input (parameter or constant) with no parents"""
        return self._append(Value(np.array(data, dtype=np.float64), self, name))

    def constant(self, data: np.ndarray, name: str = "") -> Value:
        return self.leaf(data, name)

    def apply(
        self,
        data: np.ndarray,
        parents: Sequence[Value],
        backward_fn: BackwardFn,
        name: str = "",
    ) -> Value:
        """
        Records the output of an op

        Args:
            data: Forward result
            parents: Input Values (must belong to this tape)
            backward_fn: Called with the output Value; adds output.grad's
                contribution into each parent's grad
            name: Op name for debugging

        Returns:
            The new Value
        """
        for parent in parents:
            if parent.tape is not self:
                raise ValueError(f"{name}: operand {parent!r} belongs to another tape")
        out = Value(data, self, name)
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        return self._append(out)

    def mark_kink(self, pattern: np.ndarray) -> None:
        self.kinks.append(np.asarray(pattern, dtype=bool))

    def backward(self, loss: Value) -> None:
        """
        Fills every entry's grad with dloss/dentry

        Args:
            loss: Scalar Value recorded on this tape
        """
        if loss.tape is not self:
            raise ValueError("loss belongs to another tape")
        if loss.data.size != 1:
            raise ShapeError("backward (loss must be scalar)", loss.shape, ())
        for entry in self.entries:
            entry.grad = np.zeros_like(entry.data)
        loss.grad = np.ones_like(loss.data)
        for entry in reversed(self.entries[: loss.position + 1]):
            if entry.backward_fn is not None:
                entry.backward_fn(entry)
