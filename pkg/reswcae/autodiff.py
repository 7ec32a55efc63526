"""
Dense tensors with define-by-run reverse-mode differentiation.

Every forward operation on a tensor that requires gradients records its
parents and a backward closure. `backward` traces the recorded graph from a
scalar loss in topological order and accumulates gradients into the leaves.
"""

import contextlib
import threading

import numpy as np
from scipy.special import expit

from reswcae.models import ContractViolationError

ELEMENTWISE_KINDS = ("add", "sub", "mul", "relu", "sigmoid", "log", "square")
REDUCE_KINDS = ("sum", "mean")

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """
    An n-dimensional array with an optional gradient buffer.

    Attributes:
        data (numpy.ndarray): Values, float32 unless created from float64 data.
        grad (numpy.ndarray): Accumulated gradient of the same shape, or None.
        requires_grad (bool): Whether operations on this tensor are recorded.
        op (str): Name of the operation that produced the tensor, None for leaves.
    """

    def __init__(self, data, requires_grad=False, dtype=None):
        array = np.asarray(data)
        if dtype is None:
            dtype = array.dtype if array.dtype in (np.float32, np.float64) else np.float32
        self.data = np.ascontiguousarray(array, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = None
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward_fn, op):
        """
        Wrap the result of a differentiable operation.

        Args:
            data (numpy.ndarray): Forward result.
            parents (tuple): Input tensors, in the order `backward_fn` returns their gradients.
            backward_fn (callable): Maps the output gradient to a tuple of input gradients
                (None for inputs that need none).
            op (str): Operation name, used in graph records.

        Returns:
            Tensor: The result, recorded in the graph when any parent requires gradients.
        """
        out = cls(data, dtype=data.dtype)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.op = op
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractViolationError(
                f"item() requires a single-element tensor, got shape {self.shape}."
            )
        return self.data.reshape(()).item()

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", self, other)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("add", elementwise("mul", self, -1.0), other)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", self, other)

    def __neg__(self):
        return elementwise("mul", self, -1.0)

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad_flag})"


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def elementwise(op_kind, a, b=None):
    """
    Apply an elementwise operation.

    Args:
        op_kind (str): One of add, sub, mul (binary) or relu, sigmoid, log, square (unary).
        a (Tensor): First operand.
        b (Tensor or float): Second operand of binary kinds. A plain number is broadcast
            against `a`; tensors must have exactly `a`'s shape.

    Returns:
        Tensor: The elementwise result.

    Raises:
        ContractViolationError: Unknown kind, shape mismatch, a missing operand, or log of
            a non-positive value.
    """
    if op_kind not in ELEMENTWISE_KINDS:
        raise ContractViolationError(f"Unsupported elementwise operation '{op_kind}'.")
    a = as_tensor(a)

    if op_kind in ("add", "sub", "mul"):
        if b is None:
            raise ContractViolationError(f"{op_kind} needs two operands.")
        if isinstance(b, Tensor):
            if b.shape != a.shape:
                raise ContractViolationError(
                    f"{op_kind} shape mismatch: {a.shape} vs {b.shape}."
                )
            return _binary(op_kind, a, b)
        if np.ndim(b) != 0:
            raise ContractViolationError(
                f"{op_kind} only broadcasts plain scalars, got an array of shape {np.shape(b)}."
            )
        return _binary_scalar(op_kind, a, float(b))

    if b is not None:
        raise ContractViolationError(f"{op_kind} takes a single operand.")

    if op_kind == "relu":
        mask = a.data > 0
        return Tensor._from_op(
            np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu"
        )
    if op_kind == "sigmoid":
        out = expit(a.data).astype(a.dtype)
        return Tensor._from_op(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")
    if op_kind == "log":
        if np.any(a.data <= 0):
            raise ContractViolationError("log requires strictly positive inputs.")
        return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")
    # square
    return Tensor._from_op(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def _binary(op_kind, a, b):
    if op_kind == "add":
        return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if op_kind == "sub":
        return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")
    return Tensor._from_op(
        a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul"
    )


def _binary_scalar(op_kind, a, scalar):
    if op_kind == "add":
        return Tensor._from_op(a.data + scalar, (a,), lambda g: (g,), "add")
    if op_kind == "sub":
        return Tensor._from_op(a.data - scalar, (a,), lambda g: (g,), "sub")
    return Tensor._from_op(a.data * scalar, (a,), lambda g: (g * scalar,), "mul")


def reduce(op_kind, a):
    """
    Reduce a tensor to a scalar.

    Args:
        op_kind (str): `sum` or `mean`.
        a (Tensor): Non-empty input.

    Returns:
        Tensor: A 0-dimensional tensor.

    Raises:
        ContractViolationError: Unknown kind or empty input.
    """
    if op_kind not in REDUCE_KINDS:
        raise ContractViolationError(f"Unsupported reduction '{op_kind}'.")
    a = as_tensor(a)
    if a.size == 0:
        raise ContractViolationError(f"Cannot {op_kind} an empty tensor.")
    shape, dtype = a.shape, a.dtype
    if op_kind == "sum":
        return Tensor._from_op(
            np.asarray(a.data.sum(), dtype=dtype),
            (a,),
            lambda g: (np.full(shape, g, dtype=dtype),),
            "sum",
        )
    count = a.size
    return Tensor._from_op(
        np.asarray(a.data.mean(), dtype=dtype),
        (a,),
        lambda g: (np.full(shape, g / count, dtype=dtype),),
        "mean",
    )


def reshape(a, shape):
    original = a.shape
    return Tensor._from_op(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), "reshape"
    )


def matmul(a, b):
    """Matrix product of two 2D tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolationError(f"matmul shape mismatch: {a.shape} @ {b.shape}.")
    return Tensor._from_op(
        a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul"
    )


class GraphNode:
    """
    One recorded operation.

    Attributes:
        op (str): Operation name, None for leaves.
        inputs (tuple): Positions of the input nodes in the graph order.
        tensor (Tensor): The operation output.
    """

    def __init__(self, op, inputs, tensor):
        self.op = op
        self.inputs = inputs
        self.tensor = tensor


class ComputeGraph:
    """
    The recorded operations reachable from an output, in topological order.

    Attributes:
        nodes (list): GraphNode objects; every node's inputs precede it.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, output):
        """
        Collect the graph behind `output` with an iterative depth-first walk.

        Args:
            output (Tensor): The tensor whose history is traced.

        Returns:
            ComputeGraph: Nodes in an order where inputs precede consumers.
        """
        order = []
        position = {}
        stack = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            key = id(tensor)
            if key in position:
                continue
            if expanded:
                position[key] = len(order)
                order.append(tensor)
                continue
            stack.append((tensor, True))
            for parent in reversed(tensor._parents):
                if parent.requires_grad and id(parent) not in position:
                    stack.append((parent, False))

        nodes = [
            GraphNode(
                t.op,
                tuple(position[id(p)] for p in t._parents if p.requires_grad),
                t,
            )
            for t in order
        ]
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """
    Accumulate d(loss)/d(leaf) into the `grad` of every leaf that requires gradients.

    Gradients add to whatever the leaves already hold; callers zero them between steps.

    Args:
        loss (Tensor): A single-element tensor produced by recorded operations.

    Raises:
        ContractViolationError: If `loss` is not scalar or is not connected to a graph.
    """
    if loss.size != 1:
        raise ContractViolationError(
            f"backward requires a scalar loss, got shape {loss.shape}."
        )
    if not loss.requires_grad:
        raise ContractViolationError("backward called on a tensor without a recorded graph.")

    graph = ComputeGraph.trace(loss)
    pending = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}

    for node in reversed(graph.nodes):
        tensor = node.tensor
        grad = pending.pop(id(tensor), None)
        if grad is None:
            continue
        if tensor.is_leaf:
            grad = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            continue
        parent_grads = tensor._backward(grad)
        for parent, parent_grad in zip(tensor._parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad
