"""
Vector module for ark_toolkit.

The abstract vector operation set (streaming and reduction operations) and
three node-local backends:

- SerialVector: host data, single thread, reductions are left folds.
- PooledVector: host data, streaming ops split across a worker pool,
  reductions use a fixed balanced tree per policy block.
- DeviceSimVector: data resident in the device arena; host access requires an
  explicit copy, and every reduction returns its scalar through a counted
  device-to-host transfer.
"""

import logging
import math
import os
import threading
from abc import ABC, abstractmethod
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import AccessViolation, EmptyVector, InvalidPolicy, LengthMismatch
from .memory import MemoryArbiter, MemoryBlock, MemorySpace, get_default_arbiter

logger = logging.getLogger(__name__)


class Backend(str, Enum):
    """Node-local vector backends."""
    SERIAL = "serial"
    POOLED = "pooled"
    DEVSIM = "devsim"


class PolicyKind(str, Enum):
    """Execution policy variants."""
    THREAD_DIRECT = "thread-direct"
    GRID_STRIDE = "grid-stride"
    BLOCK_REDUCE = "block-reduce"


class ReduceOp(str, Enum):
    SUM = "sum"
    MAX = "max"
    MIN = "min"
    AND = "logical_and"


@dataclass(frozen=True)
class ExecPolicy:
    """
    Mapping of vector elements onto workers.

    THREAD_DIRECT gives each worker one contiguous chunk of ceil(n/w)
    elements, GRID_STRIDE gives worker k the elements k, k+w, k+2w, ...,
    and BLOCK_REDUCE splits a reduction into blocks of ``block_size``.
    """
    kind: PolicyKind = PolicyKind.THREAD_DIRECT
    workers: int = 1
    block_size: int = 256

    def __post_init__(self):
        if self.workers < 1:
            raise InvalidPolicy(f"workers must be >= 1, got {self.workers}")
        if self.block_size < 1:
            raise InvalidPolicy(f"block size must be >= 1, got {self.block_size}")

    @classmethod
    def thread_direct(cls, workers: int = 1) -> "ExecPolicy":
        return cls(PolicyKind.THREAD_DIRECT, workers=workers)

    @classmethod
    def grid_stride(cls, workers: int = 1) -> "ExecPolicy":
        return cls(PolicyKind.GRID_STRIDE, workers=workers)

    @classmethod
    def block_reduce(cls, block_size: int = 256, workers: int = 1) -> "ExecPolicy":
        return cls(PolicyKind.BLOCK_REDUCE, workers=workers, block_size=block_size)

    def chunk_length(self, n: int) -> int:
        """Elements per contiguous chunk for THREAD_DIRECT and BLOCK_REDUCE."""
        if self.kind is PolicyKind.BLOCK_REDUCE:
            return self.block_size
        return max(1, -(-n // self.workers))

    def partition(self, n: int) -> List[slice]:
        """
        Split ``range(n)`` into the work items of this policy.

        Args:
            n: Vector length

        Returns:
            List of slices, one per work item
        """
        if n == 0:
            return []
        if self.kind is PolicyKind.GRID_STRIDE:
            return [slice(k, n, self.workers) for k in range(min(self.workers, n))]
        chunk = self.chunk_length(n)
        return [slice(start, min(n, start + chunk)) for start in range(0, n, chunk)]


_POOLS: Dict[int, ThreadPoolExecutor] = {}
_POOLS_LOCK = threading.Lock()
_QUEUE_LOCKS: Dict[Tuple[str, int], threading.RLock] = defaultdict(threading.RLock)
_QUEUE_LOCKS_GUARD = threading.Lock()


def get_worker_pool(workers: int) -> ThreadPoolExecutor:
    """Shared worker pool for the given worker count."""
    with _POOLS_LOCK:
        pool = _POOLS.get(workers)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"ark-vec-{workers}")
            _POOLS[workers] = pool
        return pool


def _queue_lock(backend: "Backend", queue_id: int) -> threading.RLock:
    with _QUEUE_LOCKS_GUARD:
        return _QUEUE_LOCKS[(backend.value, queue_id)]


def default_workers() -> int:
    return os.cpu_count() or 1


def _tree_sum_rows(matrix: np.ndarray) -> np.ndarray:
    """Balanced pairwise sum along axis 1, one partial per row."""
    while matrix.shape[1] > 1:
        if matrix.shape[1] % 2:
            matrix = np.concatenate([matrix, np.zeros((matrix.shape[0], 1), dtype=matrix.dtype)], axis=1)
        matrix = matrix[:, 0::2] + matrix[:, 1::2]
    return matrix[:, 0]


def left_fold_sum(values: np.ndarray) -> float:
    """Sequential left-to-right sum."""
    if values.shape[0] == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def tree_fold_sum(values: np.ndarray, policy: ExecPolicy) -> float:
    """
    Sum with a fixed balanced tree over each policy block, then a left fold
    of the block partials.

    Args:
        values: Per-element contributions
        policy: Reduction policy defining the blocks

    Returns:
        Deterministic sum
    """
    n = values.shape[0]
    if n == 0:
        return 0.0
    if policy.kind is PolicyKind.GRID_STRIDE:
        width = policy.workers
        rows = -(-n // width)
        padded = np.zeros(rows * width, dtype=values.dtype)
        padded[:n] = values
        matrix = padded.reshape(rows, width).T
    else:
        width = policy.chunk_length(n)
        rows = -(-n // width)
        padded = np.zeros(rows * width, dtype=values.dtype)
        padded[:n] = values
        matrix = padded.reshape(rows, width)
    return left_fold_sum(_tree_sum_rows(matrix))


class Vector(ABC):
    """
    Abstract vector operation set.

    Streaming operations write into ``self``; reductions read ``self`` and
    return a host scalar.
    """

    @property
    @abstractmethod
    def length(self) -> int:
        """Global element count."""

    @abstractmethod
    def clone(self) -> "Vector":
        """New vector with the same layout and backend; contents unspecified."""

    @abstractmethod
    def destroy(self) -> None:
        """Release the vector's storage."""

    # streaming

    @abstractmethod
    def const_fill(self, c: float) -> None:
        """z_i = c"""

    @abstractmethod
    def linear_sum(self, a: float, x: "Vector", b: float, y: "Vector") -> None:
        """z_i = a*x_i + b*y_i"""

    @abstractmethod
    def prod(self, x: "Vector", y: "Vector") -> None:
        """z_i = x_i*y_i"""

    @abstractmethod
    def div(self, x: "Vector", y: "Vector") -> None:
        """z_i = x_i/y_i (no zero check)"""

    @abstractmethod
    def scale(self, c: float, x: "Vector") -> None:
        """z_i = c*x_i"""

    @abstractmethod
    def abs_val(self, x: "Vector") -> None:
        """z_i = |x_i|"""

    @abstractmethod
    def inv(self, x: "Vector") -> None:
        """z_i = 1/x_i (no zero check)"""

    @abstractmethod
    def add_const(self, x: "Vector", b: float) -> None:
        """z_i = x_i + b"""

    @abstractmethod
    def compare(self, c: float, x: "Vector") -> None:
        """z_i = 1 if |x_i| >= c else 0"""

    def copy_from(self, x: "Vector") -> None:
        """z_i = x_i"""
        self.scale(1.0, x)

    def elementwise(self, kind: str, *args) -> None:
        """
        Dispatch an elementwise streaming operation by name.

        Args:
            kind: One of prod, div, scale, abs_val, inv, add_const, compare
            *args: Operands in the order of the named method
        """
        operations = {
            "prod": self.prod,
            "div": self.div,
            "scale": self.scale,
            "abs_val": self.abs_val,
            "inv": self.inv,
            "add_const": self.add_const,
            "compare": self.compare,
        }
        if kind not in operations:
            raise ValueError(f"Unknown elementwise operation: {kind}")
        operations[kind](*args)

    # reductions

    @abstractmethod
    def dot(self, y: "Vector") -> float:
        """sum x_i*y_i"""

    @abstractmethod
    def max_norm(self) -> float:
        """max |x_i|"""

    @abstractmethod
    def min_val(self) -> float:
        """min x_i"""

    @abstractmethod
    def l1_norm(self) -> float:
        """sum |x_i|"""

    @abstractmethod
    def weighted_square_sum(self, w: "Vector", mask: Optional["Vector"] = None) -> float:
        """sum (x_i*w_i)^2, restricted to mask_i > 0 when a mask is given"""

    @abstractmethod
    def min_quotient(self, den: "Vector") -> float:
        """min over den_i != 0 of x_i/den_i, +inf if there is none"""

    @abstractmethod
    def inv_test(self, x: "Vector") -> bool:
        """z_i = 1/x_i where x_i != 0; False iff some x_i == 0"""

    @abstractmethod
    def constr_mask(self, c: "Vector", x: "Vector") -> bool:
        """Write the constraint-violation mask of x under codes c; True iff all satisfied"""

    def wrms_norm(self, w: "Vector") -> float:
        """sqrt((1/n) sum (x_i*w_i)^2)"""
        n = self._require_nonempty()
        return math.sqrt(self.weighted_square_sum(w) / n)

    def wrms_norm_mask(self, w: "Vector", mask: "Vector") -> float:
        """Masked WRMS norm; the divisor stays the full length n."""
        n = self._require_nonempty()
        return math.sqrt(self.weighted_square_sum(w, mask) / n)

    def wl2_norm(self, w: "Vector") -> float:
        """sqrt(sum (x_i*w_i)^2)"""
        return math.sqrt(self.weighted_square_sum(w))

    # memory spaces

    def copy_to_space(self, space: MemorySpace = MemorySpace.DEVICE) -> None:
        """Make data coherent in ``space``; host-resident backends need nothing."""

    def copy_from_space(self) -> None:
        """Make data coherent on the host; host-resident backends need nothing."""

    @abstractmethod
    def view(self, space: MemorySpace = MemorySpace.HOST) -> np.ndarray:
        """Read-only element access from ``space``."""

    @abstractmethod
    def to_numpy(self) -> np.ndarray:
        """Host copy of the elements (reads back device data)."""

    def _require_nonempty(self) -> int:
        n = self.length
        if n == 0:
            raise EmptyVector("reduction on an empty vector")
        return n


def _check_same_length(n: int, operands: Sequence[Vector]) -> None:
    for operand in operands:
        if operand.length != n:
            raise LengthMismatch(f"vector lengths differ: {n} vs {operand.length}")


Kernel = Callable[..., None]


class NodeLocalVector(Vector):
    """
    Vector whose data lives in a single memory block.

    Subclasses choose the memory space, the execution side, and how kernels
    and reductions are launched.
    """

    backend: ClassVar[Backend]
    exec_side: ClassVar[MemorySpace] = MemorySpace.HOST

    def __init__(
        self,
        length: int,
        arbiter: Optional[MemoryArbiter] = None,
        streaming: Optional[ExecPolicy] = None,
        reduction: Optional[ExecPolicy] = None,
        queue_id: int = 0,
    ):
        """
        Initialize a node-local vector.

        Args:
            length: Element count
            arbiter: Memory arbiter owning the storage (process default if None)
            streaming: Policy for streaming operations
            reduction: Policy for reductions
            queue_id: Ordering tag; ops sharing a tag on one backend run in issue order
        """
        if length < 0:
            raise ValueError(f"length must be non-negative, got {length}")
        self.arbiter = arbiter or get_default_arbiter()
        self.queue_id = queue_id
        self._length = length
        self.streaming_policy = ExecPolicy.thread_direct()
        self.reduction_policy = ExecPolicy.block_reduce()
        self.set_exec_policy(streaming or self._default_streaming(), reduction or self._default_reduction())
        self._block = self._allocate_storage()

    @property
    def length(self) -> int:
        return self._length

    @property
    def block(self) -> MemoryBlock:
        return self._block

    def _default_streaming(self) -> ExecPolicy:
        return ExecPolicy.thread_direct()

    def _default_reduction(self) -> ExecPolicy:
        return ExecPolicy.block_reduce()

    def _allocate_storage(self) -> MemoryBlock:
        return self.arbiter.alloc(MemorySpace.HOST, self._length, 8)

    def set_exec_policy(self, streaming: ExecPolicy, reduction: ExecPolicy) -> None:
        """
        Select the policies used by subsequent operations.

        Raises:
            InvalidPolicy: If BLOCK_REDUCE is given as the streaming policy
        """
        if streaming.kind is PolicyKind.BLOCK_REDUCE:
            raise InvalidPolicy("BLOCK_REDUCE is a reduction policy")
        self.streaming_policy = streaming
        self.reduction_policy = reduction

    def clone(self) -> "NodeLocalVector":
        return type(self)(
            self._length,
            arbiter=self.arbiter,
            streaming=self.streaming_policy,
            reduction=self.reduction_policy,
            queue_id=self.queue_id,
            **self._clone_kwargs(),
        )

    def _clone_kwargs(self) -> dict:
        return {}

    def destroy(self) -> None:
        if not self._block.released:
            self.arbiter.release(self._block)

    def kernel_array(self) -> np.ndarray:
        """Writable element access from the vector's execution side (for user kernels)."""
        array = self.arbiter.view(self._block, self.exec_side, writable=True)
        self._written()
        return array

    def kernel_view(self) -> np.ndarray:
        """Read-only element access from the execution side; leaves coherency untouched."""
        return self.arbiter.view(self._block, self.exec_side)

    def _operand_array(self, operand: Vector) -> np.ndarray:
        if not isinstance(operand, NodeLocalVector):
            raise TypeError(f"{type(operand).__name__} cannot be an operand of {type(self).__name__}")
        return operand.arbiter.view(operand._block, self.exec_side)

    def load(self, values) -> None:
        """
        Write host values into the vector.

        Args:
            values: Array-like of length n
        """
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.shape[0] != self._length:
            raise LengthMismatch(f"load of {values.shape[0]} values into length {self._length}")
        self.arbiter.view(self._block, MemorySpace.HOST, writable=True)[:] = values

    def view(self, space: MemorySpace = MemorySpace.HOST) -> np.ndarray:
        return self.arbiter.view(self._block, MemorySpace(space))

    def to_numpy(self) -> np.ndarray:
        self.copy_from_space()
        return np.array(self.view(MemorySpace.HOST))

    # launch machinery

    def _launch(self, kernel: Kernel, out: np.ndarray, inputs: Sequence[np.ndarray]) -> None:
        kernel(slice(0, self._length), out, *inputs)

    def _fold(self, values: np.ndarray, op: ReduceOp):
        if op is ReduceOp.SUM:
            return left_fold_sum(values)
        return _exact_fold(values, op)

    def _deliver(self, value):
        return value

    def _written(self) -> None:
        pass

    def _stream(self, kernel: Kernel, *operands: Vector) -> None:
        _check_same_length(self._length, operands)
        inputs = [self._operand_array(operand) for operand in operands]
        out = self.kernel_array()
        with _queue_lock(self.backend, self.queue_id):
            self._launch(kernel, out, inputs)
        self._written()

    def _reduce(self, op: ReduceOp, kernel: Kernel, *operands: Vector, dtype=np.float64):
        _check_same_length(self._length, operands)
        inputs = [self._operand_array(self)] + [self._operand_array(operand) for operand in operands]
        contributions = np.empty(self._length, dtype=dtype)
        with _queue_lock(self.backend, self.queue_id):
            self._launch(kernel, contributions, inputs)
            value = self._fold(contributions, op)
        self.arbiter.record_reduction()
        return self._deliver(value)

    # streaming operations

    def const_fill(self, c: float) -> None:
        def kernel(sl, z):
            z[sl] = c
        self._stream(kernel)

    def linear_sum(self, a: float, x: Vector, b: float, y: Vector) -> None:
        def kernel(sl, z, xa, ya):
            z[sl] = a * xa[sl] + b * ya[sl]
        self._stream(kernel, x, y)

    def prod(self, x: Vector, y: Vector) -> None:
        def kernel(sl, z, xa, ya):
            z[sl] = xa[sl] * ya[sl]
        self._stream(kernel, x, y)

    def div(self, x: Vector, y: Vector) -> None:
        def kernel(sl, z, xa, ya):
            with np.errstate(divide="ignore", invalid="ignore"):
                z[sl] = xa[sl] / ya[sl]
        self._stream(kernel, x, y)

    def scale(self, c: float, x: Vector) -> None:
        def kernel(sl, z, xa):
            z[sl] = c * xa[sl]
        self._stream(kernel, x)

    def abs_val(self, x: Vector) -> None:
        def kernel(sl, z, xa):
            z[sl] = np.abs(xa[sl])
        self._stream(kernel, x)

    def inv(self, x: Vector) -> None:
        def kernel(sl, z, xa):
            with np.errstate(divide="ignore"):
                z[sl] = 1.0 / xa[sl]
        self._stream(kernel, x)

    def add_const(self, x: Vector, b: float) -> None:
        def kernel(sl, z, xa):
            z[sl] = xa[sl] + b
        self._stream(kernel, x)

    def compare(self, c: float, x: Vector) -> None:
        def kernel(sl, z, xa):
            z[sl] = np.where(np.abs(xa[sl]) >= c, 1.0, 0.0)
        self._stream(kernel, x)

    def copy_from(self, x: Vector) -> None:
        def kernel(sl, z, xa):
            z[sl] = xa[sl]
        self._stream(kernel, x)

    # reductions

    def dot(self, y: Vector) -> float:
        def kernel(sl, out, xa, ya):
            out[sl] = xa[sl] * ya[sl]
        return self._reduce(ReduceOp.SUM, kernel, y)

    def max_norm(self) -> float:
        self._require_nonempty()

        def kernel(sl, out, xa):
            out[sl] = np.abs(xa[sl])
        return self._reduce(ReduceOp.MAX, kernel)

    def min_val(self) -> float:
        self._require_nonempty()

        def kernel(sl, out, xa):
            out[sl] = xa[sl]
        return self._reduce(ReduceOp.MIN, kernel)

    def l1_norm(self) -> float:
        def kernel(sl, out, xa):
            out[sl] = np.abs(xa[sl])
        return self._reduce(ReduceOp.SUM, kernel)

    def weighted_square_sum(self, w: Vector, mask: Optional[Vector] = None) -> float:
        if mask is None:
            def kernel(sl, out, xa, wa):
                prod = xa[sl] * wa[sl]
                out[sl] = prod * prod
            return self._reduce(ReduceOp.SUM, kernel, w)

        def masked(sl, out, xa, wa, ma):
            prod = xa[sl] * wa[sl]
            out[sl] = np.where(ma[sl] > 0.0, prod * prod, 0.0)
        return self._reduce(ReduceOp.SUM, masked, w, mask)

    def min_quotient(self, den: Vector) -> float:
        def kernel(sl, out, num, dena):
            d = dena[sl]
            quotient = np.full(d.shape, np.inf)
            np.divide(num[sl], d, out=quotient, where=d != 0.0)
            out[sl] = quotient
        return self._reduce(ReduceOp.MIN, kernel, den)

    def inv_test(self, x: Vector) -> bool:
        def kernel(sl, z, xa):
            np.divide(1.0, xa[sl], out=z[sl], where=xa[sl] != 0.0)
        self._stream(kernel, x)

        def nonzero(sl, out, za, xa):
            out[sl] = xa[sl] != 0.0
        return bool(self._reduce(ReduceOp.AND, nonzero, x, dtype=np.bool_))

    def constr_mask(self, c: Vector, x: Vector) -> bool:
        def kernel(sl, m, ca, xa):
            m[sl] = _constraint_violations(ca[sl], xa[sl])
        self._stream(kernel, c, x)

        def satisfied(sl, out, ma):
            out[sl] = ma[sl] == 0.0
        return bool(self._reduce(ReduceOp.AND, satisfied, dtype=np.bool_))


def _constraint_violations(codes: np.ndarray, values: np.ndarray) -> np.ndarray:
    """1.0 where values violate their constraint code (+-2 strict, +-1 non-strict, 0 none)."""
    product = codes * values
    magnitude = np.abs(codes)
    strict = (magnitude > 1.5) & (product <= 0.0)
    loose = (magnitude > 0.5) & (product < 0.0)
    return np.where(strict | loose, 1.0, 0.0)


def _exact_fold(values: np.ndarray, op: ReduceOp):
    if op is ReduceOp.MAX:
        return float(values.max())
    if op is ReduceOp.MIN:
        return float(values.min()) if values.shape[0] else math.inf
    if op is ReduceOp.AND:
        return bool(values.all())
    raise ValueError(f"Not an order-independent reduction: {op}")


class SerialVector(NodeLocalVector):
    """Host data, one thread, left-fold reductions. Policies are recorded but not used."""
    backend = Backend.SERIAL


class PooledVector(NodeLocalVector):
    """Host data with streaming kernels spread over a worker pool."""
    backend = Backend.POOLED

    def _default_streaming(self) -> ExecPolicy:
        return ExecPolicy.thread_direct(default_workers())

    def _launch(self, kernel: Kernel, out: np.ndarray, inputs: Sequence[np.ndarray]) -> None:
        work = self.streaming_policy.partition(self._length)
        if len(work) <= 1:
            for sl in work:
                kernel(sl, out, *inputs)
            return
        pool = get_worker_pool(self.streaming_policy.workers)
        futures = [pool.submit(kernel, sl, out, *inputs) for sl in work]
        for future in futures:
            future.result()

    def _fold(self, values: np.ndarray, op: ReduceOp):
        if op is ReduceOp.SUM:
            return tree_fold_sum(values, self.reduction_policy)
        return _exact_fold(values, op)


class DeviceSimVector(PooledVector):
    """
    Device-resident data with a host mirror.

    Host views are valid only after ``copy_from_space`` and until the next
    operation writes the vector. Reductions copy their scalar result from a
    one-element device block to a one-element host block.
    """
    backend = Backend.DEVSIM
    exec_side = MemorySpace.DEVICE

    def __init__(self, length: int, arbiter: Optional[MemoryArbiter] = None,
                 streaming: Optional[ExecPolicy] = None, reduction: Optional[ExecPolicy] = None,
                 queue_id: int = 0, unified: bool = False):
        self.unified = unified
        super().__init__(length, arbiter=arbiter, streaming=streaming, reduction=reduction, queue_id=queue_id)
        self._host_block = None if unified else self.arbiter.alloc(MemorySpace.HOST, length, 8)
        self._host_coherent = True
        self._scalar_device = self.arbiter.alloc(MemorySpace.DEVICE, 1, 8)
        self._scalar_host = self.arbiter.alloc(MemorySpace.HOST, 1, 8)

    def _allocate_storage(self) -> MemoryBlock:
        space = MemorySpace.UNIFIED if self.unified else MemorySpace.DEVICE
        return self.arbiter.alloc(space, self._length, 8)

    def _clone_kwargs(self) -> dict:
        return {"unified": self.unified}

    def destroy(self) -> None:
        for block in (self._block, self._host_block, self._scalar_device, self._scalar_host):
            if block is not None and not block.released:
                self.arbiter.release(block)

    def _written(self) -> None:
        self._host_coherent = False

    def _deliver(self, value):
        self.arbiter.view(self._scalar_device, MemorySpace.DEVICE, writable=True)[0] = value
        self.arbiter.copy(self._scalar_host, self._scalar_device)
        result = self.arbiter.view(self._scalar_host, MemorySpace.HOST)[0]
        if isinstance(value, (bool, np.bool_)):
            return bool(result)
        return float(result)

    def load(self, values) -> None:
        if self.unified:
            super().load(values)
            return
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.shape[0] != self._length:
            raise LengthMismatch(f"load of {values.shape[0]} values into length {self._length}")
        self.arbiter.view(self._host_block, MemorySpace.HOST, writable=True)[:] = values
        self.copy_to_space(MemorySpace.DEVICE)

    def copy_to_space(self, space: MemorySpace = MemorySpace.DEVICE) -> None:
        """Upload the host mirror to the device."""
        if self.unified:
            return
        if MemorySpace(space) is not MemorySpace.DEVICE:
            raise AccessViolation(f"DeviceSimVector data cannot be moved to {space}")
        self.arbiter.copy(self._block, self._host_block)
        self._host_coherent = True

    def copy_from_space(self) -> None:
        """Download device data into the host mirror."""
        if self.unified:
            return
        self.arbiter.copy(self._host_block, self._block)
        self._host_coherent = True

    def view(self, space: MemorySpace = MemorySpace.HOST) -> np.ndarray:
        space = MemorySpace(space)
        if space is MemorySpace.DEVICE or self.unified:
            return self.arbiter.view(self._block, space)
        if not self._host_coherent:
            raise AccessViolation("host view of device-resident data without copy_from_space")
        return self.arbiter.view(self._host_block, MemorySpace.HOST)


_BACKENDS = {
    Backend.SERIAL: SerialVector,
    Backend.POOLED: PooledVector,
    Backend.DEVSIM: DeviceSimVector,
}


def create_vector(
    backend: Union[str, Backend],
    length: int,
    arbiter: Optional[MemoryArbiter] = None,
    streaming: Optional[ExecPolicy] = None,
    reduction: Optional[ExecPolicy] = None,
    queue_id: int = 0,
    **kwargs,
) -> NodeLocalVector:
    """
    Factory function for node-local vectors.

    Args:
        backend: "serial", "pooled" or "devsim"
        length: Element count
        arbiter: Memory arbiter
        streaming: Streaming policy
        reduction: Reduction policy
        queue_id: Ordering tag
        **kwargs: Backend-specific options (``unified`` for devsim)

    Returns:
        Configured vector

    Raises:
        ValueError: If backend is not supported
    """
    try:
        cls = _BACKENDS[Backend(backend)]
    except ValueError:
        raise ValueError(f"Unsupported vector backend: {backend}") from None
    return cls(length, arbiter=arbiter, streaming=streaming, reduction=reduction, queue_id=queue_id, **kwargs)


def from_array(backend: Union[str, Backend], values, **kwargs) -> NodeLocalVector:
    """Create a vector of the given backend holding ``values``."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    vector = create_vector(backend, values.shape[0], **kwargs)
    vector.load(values)
    return vector
