"""Dense tensors and the define-by-run graph used for reverse-mode differentiation."""

import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConstructionError, ContractError

if TYPE_CHECKING:
    from .functions import Function

logger = logging.getLogger(__name__)

# Single precision for training; float64 is selected explicitly for gradient checks.
DEFAULT_DTYPE = np.float32

_active_graph: ContextVar[Optional["Graph"]] = ContextVar("acpp_active_graph", default=None)


class Tensor:
    """N-dimensional array with optional gradient storage.

    ``data`` is never mutated by the engine after construction; only ``grad``
    accumulates. Parameters are updated by replacing ``data`` wholesale.
    """

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: Optional[int] = None
        self._graph: Optional["Graph"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        from .functions import elementwise
        return elementwise(self, other, "add")

    def __sub__(self, other: "Tensor") -> "Tensor":
        from .functions import elementwise
        return elementwise(self, other, "sub")

    def __mul__(self, other: "Tensor") -> "Tensor":
        from .functions import elementwise
        return elementwise(self, other, "mul")

    def __truediv__(self, other: "Tensor") -> "Tensor":
        from .functions import elementwise
        return elementwise(self, other, "div")

    def __neg__(self) -> "Tensor":
        from .functions import affine
        return affine(self, scale=-1.0)


def tensor_new(
    shape: Sequence[int],
    fill: Union[float, Sequence[float], np.ndarray] = 0.0,
    dtype: Optional[np.dtype] = None,
    requires_grad: bool = False,
    name: Optional[str] = None,
) -> Tensor:
    """Create a tensor of ``shape`` from a scalar fill value or row-major data."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ConstructionError(f"shape extents must be positive, got {shape}")
    dtype = np.dtype(dtype or DEFAULT_DTYPE)
    count = int(np.prod(shape))

    if np.isscalar(fill):
        data = np.full(shape, fill, dtype=dtype)
    else:
        flat = np.asarray(fill, dtype=dtype).reshape(-1)
        if flat.size != count:
            raise ConstructionError(
                f"data length {flat.size} does not match shape {shape} (needs {count})"
            )
        data = flat.reshape(shape).copy()

    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(value: Union[Tensor, np.ndarray, float], dtype: Optional[np.dtype] = None) -> Tensor:
    """Wrap arrays and scalars as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    array = np.asarray(value, dtype=dtype or DEFAULT_DTYPE)
    if array.ndim == 0:
        array = array.reshape(1)
    return Tensor(array)


@dataclass
class Node:
    """One recorded operation: its function (with saved values), inputs and output."""

    node_id: int
    function: "Function"
    inputs: Tuple[Tensor, ...]
    output: Tensor


class Graph:
    """Tape of operations recorded while the graph is active.

    Usage::

        with Graph() as graph:
            loss = mae_loss(model_forward(params, x), y)
        grads = graph.backward(loss)

    Node ids are assigned in execution order, so every input id is smaller
    than its consumer's id. A graph belongs to one worker at a time.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self._token = None

    def __enter__(self) -> "Graph":
        self._token = _active_graph.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_graph.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def outputs(self) -> List[int]:
        """Ids of nodes whose output no recorded node consumes."""
        consumed = {
            t.node_id
            for node in self.nodes
            for t in node.inputs
            if t._graph is self and t.node_id is not None
        }
        return [node.node_id for node in self.nodes if node.node_id not in consumed]

    def record(self, function: "Function", inputs: Tuple[Tensor, ...], output: Tensor) -> None:
        node = Node(node_id=len(self.nodes), function=function, inputs=inputs, output=output)
        output.node_id = node.node_id
        output._graph = self
        self.nodes.append(node)

    def backward(
        self,
        loss: Tensor,
        leaves: Optional[Iterable[Tensor]] = None,
    ) -> Dict[Tensor, np.ndarray]:
        """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf.

        Leaves passed in ``leaves`` that the loss does not depend on receive an
        all-zero gradient. Returns the gradient map over all touched leaves.
        Calling twice without ``zero_grad`` accumulates.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._graph is not self or loss.node_id is None:
            raise ContractError("loss was not produced by an operation recorded on this graph")

        pending: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        touched: Dict[int, Tensor] = {}

        for node in reversed(self.nodes[: loss.node_id + 1]):
            grad = pending.pop(node.node_id, None)
            if grad is None:
                continue
            input_grads = node.function.backward(grad)
            for tensor, input_grad in zip(node.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                input_grad = np.asarray(input_grad, dtype=tensor.dtype)
                if tensor._graph is self and tensor.node_id is not None:
                    previous = pending.get(tensor.node_id)
                    pending[tensor.node_id] = input_grad if previous is None else previous + input_grad
                else:
                    if tensor.grad is None:
                        tensor.grad = input_grad.copy()
                    else:
                        tensor.grad = tensor.grad + input_grad
                    touched[id(tensor)] = tensor

        for leaf in leaves or ():
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            touched[id(leaf)] = leaf

        return {tensor: tensor.grad for tensor in touched.values()}


def current_graph() -> Optional[Graph]:
    return _active_graph.get()


def backward(loss: Tensor, graph: Graph, leaves: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """Functional form of :meth:`Graph.backward`."""
    return graph.backward(loss, leaves=leaves)
