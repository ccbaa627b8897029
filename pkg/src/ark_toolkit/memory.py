"""
Memory module for ark_toolkit.

Named memory spaces, tagged allocations and a transfer ledger. The device
space is an ordinary numpy arena behind an access guard: data living there
cannot be read from the host side without an explicit copy, which keeps the
host/device coherency discipline observable and testable.
"""

import itertools
import logging
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .errors import ConcurrentWriteError, AccessViolation, LengthMismatch, UseAfterRelease

logger = logging.getLogger(__name__)


class MemorySpace(str, Enum):
    """Memory space tags."""
    HOST = "host"
    DEVICE = "device"
    UNIFIED = "unified"
    PINNED = "pinned"

    def readable_from(self, side: "MemorySpace") -> bool:
        """
        Check whether data in this space may be accessed from ``side``.

        Args:
            side: Execution side, HOST or DEVICE

        Returns:
            True if access is allowed without a copy
        """
        if self is MemorySpace.UNIFIED:
            return True
        if side is MemorySpace.DEVICE:
            return self is MemorySpace.DEVICE
        return self in (MemorySpace.HOST, MemorySpace.PINNED)

    @property
    def is_device_side(self) -> bool:
        return self in (MemorySpace.DEVICE, MemorySpace.UNIFIED)


class ReleaseResponsibility(str, Enum):
    """Who frees a block's storage."""
    ARBITER = "arbiter"
    EXTERNAL = "external"


_WIDTH_DTYPES = {8: np.float64, 4: np.float32, 2: np.float16, 1: np.uint8}


@dataclass(eq=False)
class MemoryBlock:
    """A tagged allocation in one memory space."""
    id: int
    space: MemorySpace
    length: int
    elem_width: int
    release_responsibility: ReleaseResponsibility
    _data: np.ndarray = field(repr=False)
    released: bool = False
    write_epoch: int = 0
    _writing: bool = field(default=False, repr=False)

    @property
    def nbytes(self) -> int:
        return self.length * self.elem_width

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype


@dataclass(frozen=True)
class TransferRecord:
    """Ledger entry for one (src, dst) space pair."""
    copy_count: int = 0
    bytes_copied: int = 0
    scalar_copies: int = 0

    @property
    def array_copies(self) -> int:
        return self.copy_count - self.scalar_copies


@dataclass(frozen=True)
class TransferStats:
    """Immutable snapshot of an arbiter's transfer ledger."""
    records: Mapping[Tuple[MemorySpace, MemorySpace], TransferRecord]
    scalar_transfer_count: int = 0
    reduction_count: int = 0

    def record(self, src: MemorySpace, dst: MemorySpace) -> TransferRecord:
        return self.records.get((src, dst), TransferRecord())

    def copy_count(self, src: MemorySpace, dst: MemorySpace) -> int:
        return self.record(src, dst).copy_count

    def bytes_copied(self, src: MemorySpace, dst: MemorySpace) -> int:
        return self.record(src, dst).bytes_copied

    def array_copies(self, src: MemorySpace, dst: MemorySpace) -> int:
        return self.record(src, dst).array_copies

    def host_device_array_copies(self) -> int:
        """Array-sized copies crossing between host-side and device-side spaces."""
        return sum(
            record.array_copies
            for (src, dst), record in self.records.items()
            if src.is_device_side != dst.is_device_side
        )

    @property
    def total_copies(self) -> int:
        return sum(record.copy_count for record in self.records.values())

    def to_rows(self) -> List[Dict[str, object]]:
        """
        Flatten the snapshot into CSV-ready rows.

        Returns:
            One ``src,dst,copies,bytes`` row per space pair followed by a
            ``scalar_transfers`` row
        """
        rows: List[Dict[str, object]] = []
        for (src, dst), record in sorted(self.records.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
            rows.append({
                "src": src.value,
                "dst": dst.value,
                "copies": record.copy_count,
                "bytes": record.bytes_copied,
            })
        rows.append({"src": "scalar_transfers", "dst": "", "copies": self.scalar_transfer_count, "bytes": ""})
        return rows


class MemoryArbiter:
    """
    Owns memory spaces, tracks every allocation and every cross-space copy.

    Counter updates are synchronized; blocks may be handed between threads.
    Concurrent copies into the same destination are detected when
    ``debug`` is enabled.
    """

    def __init__(self, debug: bool = True):
        """
        Initialize MemoryArbiter.

        Args:
            debug: Enable the write-epoch check on copy destinations
        """
        self.debug = debug
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self._tables: Dict[MemorySpace, Dict[int, MemoryBlock]] = {space: {} for space in MemorySpace}
        self._alloc_count = 0
        self._release_count = 0
        self._ledger: Dict[Tuple[MemorySpace, MemorySpace], List[int]] = defaultdict(lambda: [0, 0, 0])
        self._scalar_transfers = 0
        self._reductions = 0

    @property
    def alloc_count(self) -> int:
        return self._alloc_count

    @property
    def release_count(self) -> int:
        return self._release_count

    @property
    def outstanding(self) -> int:
        return self._alloc_count - self._release_count

    def live_blocks(self, space: Optional[MemorySpace] = None) -> List[MemoryBlock]:
        """Blocks currently registered, optionally restricted to one space."""
        with self._lock:
            spaces = [space] if space is not None else list(MemorySpace)
            return [block for s in spaces for block in self._tables[s].values()]

    def alloc(self, space: MemorySpace, length: int, elem_width: int = 8, dtype=None) -> MemoryBlock:
        """
        Allocate a zero-filled block.

        Args:
            space: Target memory space
            length: Element count (>= 0)
            elem_width: Bytes per element
            dtype: Optional numpy dtype; must match elem_width

        Returns:
            New block owned by the arbiter
        """
        if length < 0:
            raise ValueError(f"length must be non-negative, got {length}")
        if dtype is None:
            if elem_width not in _WIDTH_DTYPES:
                raise ValueError(f"Unsupported element width: {elem_width}")
            dtype = _WIDTH_DTYPES[elem_width]
        dtype = np.dtype(dtype)
        if dtype.itemsize != elem_width:
            raise ValueError(f"dtype {dtype} does not have width {elem_width}")

        data = np.zeros(length, dtype=dtype)
        with self._lock:
            block = MemoryBlock(
                id=next(self._ids),
                space=MemorySpace(space),
                length=length,
                elem_width=elem_width,
                release_responsibility=ReleaseResponsibility.ARBITER,
                _data=data,
            )
            self._tables[block.space][block.id] = block
            self._alloc_count += 1
        logger.debug(f"Allocated block {block.id} in {block.space.value}: {length} x {elem_width} bytes")
        return block

    def wrap_external(self, buffer: np.ndarray, space: MemorySpace) -> MemoryBlock:
        """
        Register a user-provided buffer without taking ownership.

        Args:
            buffer: One-dimensional contiguous array
            space: Space the buffer is declared to live in

        Returns:
            Block whose release only detaches
        """
        buffer = np.asarray(buffer)
        if buffer.ndim != 1 or not buffer.flags.c_contiguous:
            raise ValueError("External buffers must be one-dimensional and contiguous")
        with self._lock:
            block = MemoryBlock(
                id=next(self._ids),
                space=MemorySpace(space),
                length=buffer.shape[0],
                elem_width=buffer.dtype.itemsize,
                release_responsibility=ReleaseResponsibility.EXTERNAL,
                _data=buffer,
            )
            self._tables[block.space][block.id] = block
        logger.debug(f"Wrapped external buffer as block {block.id} in {block.space.value}")
        return block

    def copy(self, dst: MemoryBlock, src: MemoryBlock) -> None:
        """
        Copy src's bytes into dst and record the transfer.

        Args:
            dst: Destination block
            src: Source block

        Raises:
            UseAfterRelease: If either block was released
            LengthMismatch: If lengths or element widths differ
        """
        self._check_valid(src)
        self._check_valid(dst)
        if dst.length != src.length or dst.elem_width != src.elem_width:
            raise LengthMismatch(
                f"copy {src.length}x{src.elem_width} -> {dst.length}x{dst.elem_width}"
            )

        if self.debug:
            with self._lock:
                if dst._writing:
                    raise ConcurrentWriteError(f"concurrent copies into block {dst.id}")
                dst._writing = True
        try:
            dst._data.view(np.uint8)[:] = src._data.view(np.uint8)
        finally:
            with self._lock:
                dst._writing = False
        # only completed copies reach the ledger
        with self._lock:
            dst.write_epoch += 1
            entry = self._ledger[(src.space, dst.space)]
            entry[0] += 1
            entry[1] += src.nbytes
            if src.length == 1:
                entry[2] += 1
                self._scalar_transfers += 1

    def release(self, block: MemoryBlock) -> None:
        """
        Release a block. Arbiter-owned storage is freed, external storage detached.

        Raises:
            UseAfterRelease: On double release
        """
        with self._lock:
            if block.released:
                raise UseAfterRelease(f"block {block.id} already released")
            block.released = True
            self._tables[block.space].pop(block.id, None)
            if block.release_responsibility is ReleaseResponsibility.ARBITER:
                self._release_count += 1
            block._data = np.empty(0, dtype=block._data.dtype)
        logger.debug(f"Released block {block.id} ({block.release_responsibility.value})")

    def view(self, block: MemoryBlock, side: MemorySpace, writable: bool = False) -> np.ndarray:
        """
        Access a block's elements from one execution side.

        Args:
            block: Block to access
            side: HOST or DEVICE
            writable: Return a writable view

        Returns:
            Array view over the block's storage

        Raises:
            AccessViolation: If the block is not resident on ``side``
        """
        self._check_valid(block)
        if not block.space.readable_from(MemorySpace(side)):
            raise AccessViolation(f"block {block.id} in {block.space.value} is not accessible from {side.value}")
        array = block._data.view()
        array.flags.writeable = writable
        return array

    def record_reduction(self) -> None:
        """Count one vector reduction whose result went back to the host."""
        with self._lock:
            self._reductions += 1

    def stats(self) -> TransferStats:
        """Snapshot the transfer ledger."""
        with self._lock:
            records = {
                pair: TransferRecord(copy_count=c, bytes_copied=b, scalar_copies=s)
                for pair, (c, b, s) in self._ledger.items()
            }
            return TransferStats(
                records=MappingProxyType(records),
                scalar_transfer_count=self._scalar_transfers,
                reduction_count=self._reductions,
            )

    def reset_stats(self) -> None:
        """Zero the transfer ledger and reduction count; allocation counters are untouched."""
        with self._lock:
            self._ledger.clear()
            self._scalar_transfers = 0
            self._reductions = 0

    def _check_valid(self, block: MemoryBlock) -> None:
        if block.released:
            raise UseAfterRelease(f"block {block.id} was released")


_default_arbiter: Optional[MemoryArbiter] = None
_default_lock = threading.Lock()


def get_default_arbiter() -> MemoryArbiter:
    """Process-wide arbiter used when callers do not supply one."""
    global _default_arbiter
    with _default_lock:
        if _default_arbiter is None:
            _default_arbiter = MemoryArbiter()
        return _default_arbiter
