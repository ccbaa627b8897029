"""
Composite vectors for ark_toolkit.

ManyVector groups subvectors into one logical vector. DistVector is the
single-local-vector specialization whose reductions are completed across
ranks through a Communicator. Ranks are in-process threads.
"""

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, List, Optional, Sequence

import numpy as np

from .errors import CommunicatorTimeout, LengthMismatch
from .memory import MemorySpace
from .nvector import ReduceOp, Vector

logger = logging.getLogger(__name__)


class Communicator:
    """
    In-process communicator for ``rank_count`` ranks.

    Collectives combine contributions in ascending rank order, so every rank
    sees the identical result. A rank that never joins a collective makes the
    others fail with CommunicatorTimeout instead of hanging.
    """

    def __init__(self, rank_count: int, timeout: float = 30.0):
        """
        Initialize Communicator.

        Args:
            rank_count: Number of ranks R >= 1
            timeout: Seconds a collective waits for all ranks
        """
        if rank_count < 1:
            raise ValueError(f"rank_count must be >= 1, got {rank_count}")
        self.rank_count = rank_count
        self.timeout = timeout
        self._barrier = threading.Barrier(rank_count)
        self._slots: List[Any] = [None] * rank_count
        self._lock = threading.Lock()
        self.allreduce_count = 0
        self.message_count = 0
        self.bytes_sent = 0

    def _wait(self) -> None:
        try:
            self._barrier.wait(self.timeout)
        except threading.BrokenBarrierError:
            raise CommunicatorTimeout(
                f"collective on {self.rank_count} ranks did not complete within {self.timeout}s"
            ) from None

    def abort(self) -> None:
        """Break the barrier so waiting ranks fail instead of blocking."""
        self._barrier.abort()

    def _check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.rank_count:
            raise ValueError(f"rank {rank} outside [0, {self.rank_count})")

    def allreduce(self, rank: int, value, op: ReduceOp = ReduceOp.SUM):
        """
        Combine one value per rank; every rank receives the same result.

        Args:
            rank: Calling rank
            value: Local contribution (float, or bool for logical_and)
            op: sum, max, min or logical_and

        Returns:
            Combined value, folded in ascending rank order
        """
        self._check_rank(rank)
        op = ReduceOp(op)
        self._slots[rank] = value
        self._wait()
        result = self._slots[0]
        for contribution in self._slots[1:]:
            result = _combine(result, contribution, op)
        self._wait()
        if rank == 0:
            with self._lock:
                self.allreduce_count += 1
        return result

    def halo_exchange(self, rank: int, send_right: np.ndarray) -> np.ndarray:
        """
        Send values to the right neighbor and receive from the left one (periodic).

        Args:
            rank: Calling rank
            send_right: Boundary values for rank (rank + 1) mod R

        Returns:
            Copy of the values sent by rank (rank - 1) mod R
        """
        self._check_rank(rank)
        payload = np.array(send_right, dtype=np.float64, copy=True)
        self._slots[rank] = payload
        with self._lock:
            self.message_count += 1
            self.bytes_sent += payload.nbytes
        self._wait()
        received = np.array(self._slots[(rank - 1) % self.rank_count], copy=True)
        self._wait()
        return received

    def gather(self, rank: int, array: np.ndarray) -> List[np.ndarray]:
        """Collect one array per rank, in rank order, on every rank."""
        self._check_rank(rank)
        self._slots[rank] = np.array(array, copy=True)
        self._wait()
        gathered = [np.array(item, copy=True) for item in self._slots]
        self._wait()
        return gathered

    def run_ranks(self, fn: Callable[[int], Any]) -> List[Any]:
        """
        Run ``fn(rank)`` on one thread per rank.

        Args:
            fn: Per-rank body

        Returns:
            Per-rank results in rank order

        Raises:
            The first rank failure, after aborting pending collectives
        """
        def body(rank: int):
            try:
                return fn(rank)
            except BaseException:
                self.abort()
                raise

        if self.rank_count == 1:
            return [fn(0)]
        with ThreadPoolExecutor(max_workers=self.rank_count, thread_name_prefix="ark-rank") as pool:
            futures = [pool.submit(body, rank) for rank in range(self.rank_count)]
            errors = []
            results = []
            for future in futures:
                try:
                    results.append(future.result())
                except BaseException as e:
                    errors.append(e)
                    results.append(None)
        if errors:
            primary = next((e for e in errors if not isinstance(e, CommunicatorTimeout)), errors[0])
            raise primary
        return results


def _combine(a, b, op: ReduceOp):
    if op is ReduceOp.SUM:
        return a + b
    if op is ReduceOp.MAX:
        return max(a, b)
    if op is ReduceOp.MIN:
        return min(a, b)
    return bool(a) and bool(b)


class ManyVector(Vector):
    """
    Ordered collection of subvectors acting as one vector.

    Streaming operations run on each subvector in order; reductions combine
    the sub-results left to right.
    """

    def __init__(self, subvectors: Sequence[Vector]):
        if len(subvectors) < 1:
            raise ValueError("ManyVector needs at least one subvector")
        self.subvectors: List[Vector] = list(subvectors)

    @property
    def length(self) -> int:
        return sum(sub.length for sub in self.subvectors)

    def clone(self) -> "ManyVector":
        return ManyVector([sub.clone() for sub in self.subvectors])

    def destroy(self) -> None:
        for sub in self.subvectors:
            sub.destroy()

    def _combine_global(self, value, op: ReduceOp):
        return value

    def _parts(self, operand, k: int):
        if isinstance(operand, ManyVector):
            if len(operand.subvectors) != len(self.subvectors):
                raise LengthMismatch(
                    f"subvector counts differ: {len(self.subvectors)} vs {len(operand.subvectors)}"
                )
            return operand.subvectors[k]
        if isinstance(operand, Vector):
            raise TypeError(f"{type(operand).__name__} cannot be an operand of {type(self).__name__}")
        return operand

    def _each(self, method: str, *args) -> None:
        for k, sub in enumerate(self.subvectors):
            getattr(sub, method)(*[self._parts(arg, k) for arg in args])

    def _gather(self, method: str, *args) -> list:
        return [
            getattr(sub, method)(*[self._parts(arg, k) for arg in args])
            for k, sub in enumerate(self.subvectors)
        ]

    # streaming

    def const_fill(self, c: float) -> None:
        self._each("const_fill", c)

    def linear_sum(self, a: float, x: Vector, b: float, y: Vector) -> None:
        self._each("linear_sum", a, x, b, y)

    def prod(self, x: Vector, y: Vector) -> None:
        self._each("prod", x, y)

    def div(self, x: Vector, y: Vector) -> None:
        self._each("div", x, y)

    def scale(self, c: float, x: Vector) -> None:
        self._each("scale", c, x)

    def abs_val(self, x: Vector) -> None:
        self._each("abs_val", x)

    def inv(self, x: Vector) -> None:
        self._each("inv", x)

    def add_const(self, x: Vector, b: float) -> None:
        self._each("add_const", x, b)

    def compare(self, c: float, x: Vector) -> None:
        self._each("compare", c, x)

    def copy_from(self, x: Vector) -> None:
        self._each("copy_from", x)

    # reductions

    def _sum(self, parts: List[float]) -> float:
        total = parts[0]
        for part in parts[1:]:
            total = total + part
        return total

    def dot(self, y: Vector) -> float:
        return self._combine_global(self._sum(self._gather("dot", y)), ReduceOp.SUM)

    def max_norm(self) -> float:
        self._require_nonempty()
        parts = [sub.max_norm() for sub in self.subvectors if sub.length > 0]
        local = max(parts) if parts else 0.0
        return self._combine_global(local, ReduceOp.MAX)

    def min_val(self) -> float:
        self._require_nonempty()
        parts = [sub.min_val() for sub in self.subvectors if sub.length > 0]
        local = min(parts) if parts else math.inf
        return self._combine_global(local, ReduceOp.MIN)

    def l1_norm(self) -> float:
        return self._combine_global(self._sum(self._gather("l1_norm")), ReduceOp.SUM)

    def weighted_square_sum(self, w: Vector, mask: Optional[Vector] = None) -> float:
        if mask is None:
            parts = self._gather("weighted_square_sum", w)
        else:
            parts = self._gather("weighted_square_sum", w, mask)
        return self._combine_global(self._sum(parts), ReduceOp.SUM)

    def min_quotient(self, den: Vector) -> float:
        return self._combine_global(min(self._gather("min_quotient", den)), ReduceOp.MIN)

    def inv_test(self, x: Vector) -> bool:
        return self._combine_global(all(self._gather("inv_test", x)), ReduceOp.AND)

    def constr_mask(self, c: Vector, x: Vector) -> bool:
        return self._combine_global(all(self._gather("constr_mask", c, x)), ReduceOp.AND)

    # memory spaces

    def copy_to_space(self, space: MemorySpace = MemorySpace.DEVICE) -> None:
        self._each("copy_to_space", space)

    def copy_from_space(self) -> None:
        self._each("copy_from_space")

    def view(self, space: MemorySpace = MemorySpace.HOST) -> np.ndarray:
        return np.concatenate([sub.view(space) for sub in self.subvectors])

    def to_numpy(self) -> np.ndarray:
        return np.concatenate([sub.to_numpy() for sub in self.subvectors])


class DistVector(ManyVector):
    """
    Rank-local vector plus a communicator.

    Streaming operations touch only the local vector. Each reduction is the
    local reduction followed by exactly one allreduce.
    """

    def __init__(self, comm: Communicator, rank: int, local: Vector, global_length: Optional[int] = None):
        """
        Initialize DistVector.

        Args:
            comm: Communicator shared by all ranks
            rank: This rank's index
            local: Rank-private node-local vector
            global_length: Sum of local lengths; computed collectively when None
        """
        super().__init__([local])
        self.comm = comm
        self.rank = rank
        if global_length is None:
            global_length = int(comm.allreduce(rank, local.length, ReduceOp.SUM))
        self._global_length = global_length

    @property
    def local(self) -> Vector:
        return self.subvectors[0]

    @property
    def length(self) -> int:
        return self._global_length

    def clone(self) -> "DistVector":
        return DistVector(self.comm, self.rank, self.local.clone(), global_length=self._global_length)

    def _combine_global(self, value, op: ReduceOp):
        return self.comm.allreduce(self.rank, value, op)

    def max_norm(self) -> float:
        self._require_nonempty()
        local = self.local.max_norm() if self.local.length > 0 else 0.0
        return self._combine_global(local, ReduceOp.MAX)

    def min_val(self) -> float:
        self._require_nonempty()
        local = self.local.min_val() if self.local.length > 0 else math.inf
        return self._combine_global(local, ReduceOp.MIN)

    def view(self, space: MemorySpace = MemorySpace.HOST) -> np.ndarray:
        return self.local.view(space)

    def to_numpy(self) -> np.ndarray:
        """Rank-local elements; use ``gather_global`` for the full vector."""
        return self.local.to_numpy()

    def gather_global(self) -> np.ndarray:
        """Rank-ordered concatenation of all local parts (collective)."""
        return np.concatenate(self.comm.gather(self.rank, self.local.to_numpy()))


def local_array(vector: Vector) -> np.ndarray:
    """
    Writable execution-side elements of a node-local vector, or of the local
    part of a DistVector.

    Raises:
        TypeError: For composites with more than one subvector
    """
    while isinstance(vector, ManyVector):
        if len(vector.subvectors) != 1:
            raise TypeError("local_array needs a single local vector")
        vector = vector.subvectors[0]
    return vector.kernel_array()


def local_view(vector: Vector) -> np.ndarray:
    """Read-only counterpart of :func:`local_array`."""
    while isinstance(vector, ManyVector):
        if len(vector.subvectors) != 1:
            raise TypeError("local_view needs a single local vector")
        vector = vector.subvectors[0]
    return vector.kernel_view()


def make_many(subvectors: Sequence[Vector]) -> ManyVector:
    """Build a ManyVector over ``subvectors``."""
    return ManyVector(subvectors)


def make_dist(comm: Communicator, rank: int, local: Vector, global_length: Optional[int] = None) -> DistVector:
    """Wrap a rank-local vector into a DistVector (collective when global_length is None)."""
    return DistVector(comm, rank, local, global_length=global_length)
