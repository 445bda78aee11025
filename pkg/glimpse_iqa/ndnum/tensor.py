"""Define the dense tensor value and the tape that records primitive applications."""
from dataclasses import dataclass
import logging
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import NonFiniteError, ShapeError

_LOGGER: logging.Logger = logging.getLogger(__name__)

DTYPE = np.float64

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    An immutable dense array, optionally attached to a tape.

    Tensors created outside a tape are constants: gradients never flow into them.
    """

    __slots__ = ("data", "tape", "slot", "name")

    def __init__(
        self,
        data,
        tape: Optional["GraphTape"] = None,
        slot: Optional[int] = None,
        name: Optional[str] = None,
    ) -> None:
        """Initialize."""
        array = np.array(data, dtype=DTYPE)
        if array.ndim == 0:
            array = array.reshape(1)
        array.setflags(write=False)
        self.data: np.ndarray = array
        self.tape: Optional[GraphTape] = tape
        self.slot: Optional[int] = slot
        self.name: Optional[str] = name

    @property
    def shape(self) -> Tuple[int, ...]:
        """Return the shape."""
        return self.data.shape

    @property
    def size(self) -> int:
        """Return the number of elements."""
        return self.data.size

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return the (read-only) underlying array."""
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} slot={self.slot}>"


@dataclass(frozen=True)
class Node:
    """One recorded primitive application."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


class GraphTape:
    """Record primitive applications in order so they can be replayed backward."""

    def __init__(self) -> None:
        """Initialize."""
        self._nodes: List[Node] = []
        self._leaves: Dict[str, Tensor] = {}
        self._next_slot: int = 0

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def nodes(self) -> Tuple[Node, ...]:
        """Return the recorded nodes in recording order."""
        return tuple(self._nodes)

    @property
    def leaves(self) -> Dict[str, Tensor]:
        """Return the named leaves."""
        return dict(self._leaves)

    def _allocate(self) -> int:
        slot = self._next_slot
        self._next_slot += 1
        return slot

    def leaf(self, value, name: str) -> Tensor:
        """Register a named input that receives a gradient."""
        if name in self._leaves:
            raise ShapeError(f"Leaf {name} is already registered on this tape")
        tensor = Tensor(value, tape=self, slot=self._allocate(), name=name)
        self._leaves[name] = tensor
        return tensor

    def record(
        self, op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: VJP
    ) -> Tensor:
        """Wrap a primitive's output and remember how to push gradients back."""
        check_finite(data, op)
        output = Tensor(data, tape=self, slot=self._allocate())
        self._nodes.append(Node(op, tuple(inputs), output, vjp))
        return output


def check_finite(data: np.ndarray, op: str) -> None:
    """Raise if an array holds NaN or Inf."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"Non-finite value produced by {op}")


def tape_of(*tensors: Tensor) -> Optional[GraphTape]:
    """Return the tape shared by the given tensors, if any is attached."""
    tape = None
    for tensor in tensors:
        if tensor.tape is None:
            continue
        if tape is not None and tensor.tape is not tape:
            raise ShapeError("Tensors from different tapes cannot be combined")
        tape = tensor.tape
    return tape


def backward(
    tape: GraphTape,
    loss: Optional[Tensor] = None,
    injections: Optional[Mapping[Tensor, np.ndarray]] = None,
) -> Dict[str, np.ndarray]:
    """
    Replay the tape in reverse and return d(loss)/d(leaf) for every named leaf.

    `injections` adds externally computed upstream gradients at arbitrary recorded
    values, on top of the gradient flowing from `loss`. Leaves that no path reaches
    receive zeros.
    """
    grads: Dict[int, np.ndarray] = {}

    def accumulate(tensor: Tensor, grad: np.ndarray) -> None:
        if tensor.tape is not tape or tensor.slot is None:
            return
        grad = np.asarray(grad, dtype=DTYPE).reshape(tensor.shape)
        if tensor.slot in grads:
            grads[tensor.slot] = grads[tensor.slot] + grad
        else:
            grads[tensor.slot] = grad

    if loss is not None:
        if loss.size != 1:
            raise ShapeError(f"Loss root must be scalar, got shape {loss.shape}")
        if loss.tape is not tape:
            raise ShapeError("Loss was not recorded on this tape")
        accumulate(loss, np.ones(loss.shape, dtype=DTYPE))

    for tensor, grad in (injections or {}).items():
        if tensor.tape is not tape:
            raise ShapeError("Injected gradient targets a value from another tape")
        accumulate(tensor, grad)

    for node in reversed(tape.nodes):
        upstream = grads.pop(node.output.slot, None)
        if upstream is None:
            continue
        for tensor, grad in zip(node.inputs, node.vjp(upstream)):
            if grad is not None:
                accumulate(tensor, grad)

    return {
        name: grads.get(leaf.slot, np.zeros(leaf.shape, dtype=DTYPE))
        for name, leaf in tape.leaves.items()
    }
