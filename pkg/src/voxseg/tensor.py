"""Dense float32 tensor with reverse-mode automatic differentiation.

A Tensor wraps a numpy float32 array.  Operations (defined in voxseg.ops)
record their inputs and a backward closure on the output tensor, building a
define-by-run graph.  backward() on a scalar walks that graph once in
reverse topological order, accumulating gradients into every reachable
tensor that requires them.

Gradients of interior nodes are released as soon as they have been
propagated, so peak memory during backward stays proportional to the live
frontier of the graph rather than its full depth.  Leaf gradients persist
and accumulate across backward calls until zeroed by the optimizer.
"""

import contextlib

import numpy as np

from .errors import ContractViolation

_grad_enabled = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording within the block (inference / detached data)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def grad_enabled():
    return _grad_enabled[-1]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data, dtype=np.float32)
        if not data.flags["C_CONTIGUOUS"]:
            data = np.ascontiguousarray(data)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls(data)
        if grad_enabled():
            parents = tuple(p for p in parents if p.requires_grad or p._parents)
            if parents:
                out._parents = parents
                out._backward = backward
                out.requires_grad = True
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """A view of the same data with no graph history."""
        return Tensor(self.data)

    def item(self):
        if self.data.size != 1:
            raise ContractViolation("item() requires a single-element tensor")
        return float(self.data.reshape(())[()])

    def accumulate_grad(self, g):
        g = np.asarray(g, dtype=np.float32)
        if self.grad is None:
            self.grad = g.copy().reshape(self.data.shape)
        else:
            self.grad += g.reshape(self.data.shape)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate grads of all reachable requires_grad tensors.

        Only scalar roots are supported; calling twice accumulates into leaf
        grads (the trainer zeroes them each step).
        """
        if self.data.size != 1:
            raise ContractViolation("backward() requires a scalar loss")
        if self._backward is None and not self._parents:
            if self.requires_grad:
                self.accumulate_grad(np.ones_like(self.data))
                return
            raise ContractViolation("backward() on a tensor with no graph history")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            node.grad = None  # interior grad fully consumed; leaves never get here

    # --- convenience arithmetic (thin wrappers over voxseg.ops) ---

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        from . import ops
        return ops.add(as_tensor(other), ops.mul(self, -1.0))

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))
