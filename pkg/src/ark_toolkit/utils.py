"""
Utility functions for ark_toolkit.

Provides exclusive category timing, solution hashing, and formatting helpers.
"""

import hashlib
import logging
import threading
import time
from contextlib import contextmanager, nullcontext
from typing import Dict, Iterator, List, Optional

import numpy as np

logger = logging.getLogger(__name__)

CATEGORIES = ("advection", "reaction", "linear solve", "other")


class CategoryTimer:
    """
    Exclusive wall-time accounting.

    Entering a category pauses the enclosing one, so nested regions are never
    counted twice. Time outside every category is reported as "other".
    Each thread keeps its own stack.
    """

    def __init__(self, categories=CATEGORIES):
        self.categories = tuple(categories)
        self.totals: Dict[str, float] = {name: 0.0 for name in self.categories}
        self._local = threading.local()
        self._lock = threading.Lock()
        self._started: Optional[float] = None
        self.wall_time = 0.0

    def _stack(self) -> List[list]:
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = []
            self._local.stack = stack
        return stack

    def _add(self, name: str, seconds: float) -> None:
        with self._lock:
            self.totals[name] = self.totals.get(name, 0.0) + seconds

    @contextmanager
    def category(self, name: str) -> Iterator[None]:
        """Attribute the enclosed wall time to ``name``."""
        stack = self._stack()
        now = time.perf_counter()
        if stack:
            outer = stack[-1]
            self._add(outer[0], now - outer[1])
        stack.append([name, now])
        try:
            yield
        finally:
            now = time.perf_counter()
            current = stack.pop()
            self._add(current[0], now - current[1])
            if stack:
                stack[-1][1] = now

    @contextmanager
    def total(self) -> Iterator[None]:
        """Measure the overall wall time; "other" becomes the unattributed remainder."""
        start = time.perf_counter()
        try:
            yield
        finally:
            self.wall_time += time.perf_counter() - start
            attributed = sum(v for k, v in self.totals.items() if k != "other")
            self.totals["other"] = max(0.0, self.wall_time - attributed)

    def as_dict(self) -> Dict[str, float]:
        return dict(self.totals)


def timed(timer: Optional[CategoryTimer], name: str):
    """Category context of ``timer``, or a no-op when there is no timer."""
    if timer is None:
        return nullcontext()
    return timer.category(name)


def solution_checksum(values: np.ndarray, algorithm: str = "sha256") -> str:
    """
    Create hash of a solution array for reproducibility checks.

    Args:
        values: Array to hash (hashed as contiguous float64 bytes)
        algorithm: Hash algorithm to use

    Returns:
        Hexadecimal hash string
    """
    data = np.ascontiguousarray(values, dtype=np.float64).tobytes()
    if algorithm == "md5":
        return hashlib.md5(data).hexdigest()
    elif algorithm == "sha1":
        return hashlib.sha1(data).hexdigest()
    elif algorithm == "sha256":
        return hashlib.sha256(data).hexdigest()
    else:
        raise ValueError(f"Unsupported hash algorithm: {algorithm}")


def format_bytes(bytes_count: float) -> str:
    """
    Format byte count as human-readable string.

    Args:
        bytes_count: Number of bytes

    Returns:
        Formatted string (e.g., "1.5 MB")
    """
    for unit in ['B', 'KB', 'MB', 'GB', 'TB']:
        if bytes_count < 1024.0:
            return f"{bytes_count:.1f} {unit}"
        bytes_count /= 1024.0
    return f"{bytes_count:.1f} PB"


def format_seconds(seconds: float) -> str:
    """Format a duration with a unit suited to its magnitude."""
    if seconds < 1e-3:
        return f"{seconds * 1e6:.1f} us"
    if seconds < 1.0:
        return f"{seconds * 1e3:.1f} ms"
    return f"{seconds:.2f} s"
