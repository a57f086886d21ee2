"""Reverse-mode automatic differentiation over a linear tape.

Values are dense numpy arrays wrapped in :class:`Tensor`. Storage is
32-bit float by default; the same kernels run unchanged on 64-bit tensors,
which is how finite-difference checks get tight tolerances. Every
operation appends one node to the active :class:`Tape`, so recording
order is already a topological order and backward simply walks the node
list in reverse. Nothing on the tape is ever mutated in place.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .validation import ValidationError

__all__ = ["Tensor", "Tape", "Gradients"]

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Dense n-dimensional value, optionally tracked on one tape.

    ``node_id`` is None for free values; a tracked tensor belongs to
    exactly one tape (the one that created it via ``watch`` or an op).
    """

    __slots__ = ("data", "node_id")

    def __init__(self, data, dtype=np.float32, node_id: Optional[int] = None):
        arr = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        if arr.dtype not in _ALLOWED_DTYPES:
            raise ValidationError(f"tensors store float32 or float64, not {arr.dtype}")
        self.data = arr
        self.node_id = node_id

    @classmethod
    def _tracked(cls, data: np.ndarray, node_id: int) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.node_id = node_id
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype)

    def __repr__(self):
        tag = "" if self.node_id is None else f", node_id={self.node_id}"
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"


class _Node:
    __slots__ = ("op", "inputs", "shape", "dtype", "backward")

    def __init__(self, op, inputs, shape, dtype, backward):
        self.op = op
        self.inputs = inputs
        self.shape = shape
        self.dtype = dtype
        self.backward = backward


class Gradients:
    """Gradient store keyed by tape node id.

    Nodes the loss never reached read as exact zeros. Returned arrays may
    be views of internal buffers; treat them as read-only.
    """

    def __init__(self, nodes, store):
        self._nodes = nodes
        self._store = store

    def get(self, ref) -> np.ndarray:
        node_id = ref.node_id if isinstance(ref, Tensor) else ref
        if node_id is None:
            raise ValidationError("gradient requested for an untracked tensor")
        grad = self._store.get(node_id)
        if grad is None:
            node = self._nodes[node_id]
            return np.zeros(node.shape, dtype=node.dtype)
        return grad

    def __contains__(self, ref) -> bool:
        node_id = ref.node_id if isinstance(ref, Tensor) else ref
        return node_id in self._store


class Tape:
    """Ordered record of operations; one training step uses one tape."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def op_names(self) -> list[str]:
        return [n.op for n in self._nodes]

    def watch(self, tensor: Tensor) -> Tensor:
        """Register a leaf and return a tracked view sharing its data."""
        node_id = self._push("leaf", (), tensor.shape, tensor.dtype, None)
        return Tensor._tracked(tensor.data, node_id)

    def _push(self, op, inputs, shape, dtype, backward) -> int:
        self._nodes.append(_Node(op, inputs, shape, dtype, backward))
        return len(self._nodes) - 1

    def record(
        self,
        op: str,
        inputs: tuple,
        out_data: np.ndarray,
        backward: Callable,
    ) -> Tensor:
        """Append an op node producing ``out_data`` from ``inputs``.

        ``backward(grad_out, accumulate)`` must push cotangents to the
        input node ids via ``accumulate(node_id, delta)`` without mutating
        ``grad_out`` or any saved forward value.
        """
        ids = tuple(t.node_id for t in inputs)
        node_id = self._push(op, ids, out_data.shape, out_data.dtype, backward)
        return Tensor._tracked(out_data, node_id)

    def backward(self, loss: Tensor) -> Gradients:
        """Run reverse accumulation from a scalar loss recorded on this tape."""
        if loss.node_id is None or loss.node_id >= len(self._nodes):
            raise ValidationError("loss is not recorded on this tape")
        if loss.size != 1:
            raise ValidationError(f"loss must be scalar, got shape {loss.shape}")

        store: dict[int, np.ndarray] = {}
        owned: set[int] = set()

        def accumulate(node_id, delta):
            if node_id is None:
                return
            current = store.get(node_id)
            if current is None:
                store[node_id] = delta
            elif node_id in owned:
                np.add(current, delta, out=current)
            else:
                store[node_id] = current + delta
                owned.add(node_id)

        seed = np.ones(loss.shape, dtype=loss.dtype)
        store[loss.node_id] = seed
        owned.add(loss.node_id)

        for node_id in range(loss.node_id, -1, -1):
            node = self._nodes[node_id]
            if node.backward is None:
                continue
            grad_out = store.get(node_id)
            if grad_out is None:
                continue
            node.backward(grad_out, accumulate)

        return Gradients(self._nodes, store)
