"""
Vector benchmark module for ark_toolkit.

Times each vector operation on random data, repeated and averaged, for
every backend and length, and reports the length from which a parallel
backend overtakes the serial one.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .config import BenchConfig
from .memory import MemoryArbiter
from .nvector import Backend, ExecPolicy, NodeLocalVector, create_vector, default_workers

logger = logging.getLogger(__name__)

OpFn = Callable[[NodeLocalVector, NodeLocalVector, NodeLocalVector, NodeLocalVector, NodeLocalVector], object]

# (z, x, y, w, c) -> result; x, y and w hold values in [0.5, 1.5), c holds constraint codes
OPERATIONS: Dict[str, OpFn] = {
    "const_fill": lambda z, x, y, w, c: z.const_fill(1.0),
    "linear_sum": lambda z, x, y, w, c: z.linear_sum(1.5, x, -0.5, y),
    "prod": lambda z, x, y, w, c: z.prod(x, y),
    "div": lambda z, x, y, w, c: z.div(x, y),
    "scale": lambda z, x, y, w, c: z.scale(2.0, x),
    "abs_val": lambda z, x, y, w, c: z.abs_val(x),
    "inv": lambda z, x, y, w, c: z.inv(x),
    "add_const": lambda z, x, y, w, c: z.add_const(x, 0.5),
    "compare": lambda z, x, y, w, c: z.compare(1.0, x),
    "dot": lambda z, x, y, w, c: x.dot(y),
    "max_norm": lambda z, x, y, w, c: x.max_norm(),
    "min_val": lambda z, x, y, w, c: x.min_val(),
    "l1_norm": lambda z, x, y, w, c: x.l1_norm(),
    "wrms_norm": lambda z, x, y, w, c: x.wrms_norm(w),
    "wl2_norm": lambda z, x, y, w, c: x.wl2_norm(w),
    "min_quotient": lambda z, x, y, w, c: x.min_quotient(y),
    "inv_test": lambda z, x, y, w, c: z.inv_test(x),
    "constr_mask": lambda z, x, y, w, c: z.constr_mask(c, x),
}


@dataclass
class BenchResult:
    """Mean wall time of one operation on one backend and length."""
    op: str
    backend: str
    length: int
    mean_seconds: float

    def to_row(self) -> Dict[str, object]:
        return {"op": self.op, "backend": self.backend, "length": self.length, "mean_seconds": self.mean_seconds}


@dataclass
class BenchReport:
    """All timings plus the detected crossover lengths."""
    results: List[BenchResult] = field(default_factory=list)
    crossovers: Dict[tuple, Optional[int]] = field(default_factory=dict)

    def to_rows(self) -> List[Dict[str, object]]:
        return [result.to_row() for result in self.results]

    def crossover_rows(self) -> List[Dict[str, object]]:
        return [
            {"op": op, "backend": backend, "crossover_length": "" if length is None else length}
            for (op, backend), length in self.crossovers.items()
        ]

    def mean(self, op: str, backend: str, length: int) -> float:
        for result in self.results:
            if (result.op, result.backend, result.length) == (op, backend, length):
                return result.mean_seconds
        raise KeyError((op, backend, length))


def find_crossover(serial: Dict[int, float], parallel: Dict[int, float]) -> Optional[int]:
    """
    Smallest length from which the parallel backend is faster at every larger length.

    Args:
        serial: Mean seconds by length for the serial backend
        parallel: Mean seconds by length for the parallel backend

    Returns:
        Crossover length, or None if the parallel backend never wins for good
    """
    crossover = None
    for length in sorted(serial):
        if length not in parallel:
            continue
        if parallel[length] < serial[length]:
            if crossover is None:
                crossover = length
        else:
            crossover = None
    return crossover


class VectorBench:
    """Runs the vector benchmark protocol described by a BenchConfig."""

    def __init__(self, config: BenchConfig, arbiter: Optional[MemoryArbiter] = None):
        """
        Initialize VectorBench.

        Args:
            config: Lengths, backends, operations and repetition count
            arbiter: Memory arbiter for the benchmark vectors (a fresh one if None)
        """
        unknown = [op for op in config.ops if op not in OPERATIONS]
        if unknown:
            raise ValueError(f"Unknown benchmark operations: {', '.join(unknown)}")
        self.config = config
        self.arbiter = arbiter or MemoryArbiter(debug=False)
        self.workers = config.workers or default_workers()
        self.rng = np.random.default_rng(config.seed)

    def _make(self, backend: str, values: np.ndarray) -> NodeLocalVector:
        kwargs = {}
        if Backend(backend) is not Backend.SERIAL:
            kwargs["streaming"] = ExecPolicy.thread_direct(self.workers)
            kwargs["reduction"] = ExecPolicy.block_reduce(workers=self.workers)
        vector = create_vector(backend, values.shape[0], arbiter=self.arbiter, **kwargs)
        vector.load(values)
        return vector

    def time_op(self, op: str, vectors) -> float:
        """Mean seconds of ``op`` over the configured repetitions, after one warm-up call."""
        fn = OPERATIONS[op]
        fn(*vectors)
        total = 0.0
        for _ in range(self.config.repetitions):
            start = time.perf_counter()
            fn(*vectors)
            total += time.perf_counter() - start
        return total / self.config.repetitions

    def run(self) -> BenchReport:
        """
        Time every (op, backend, length) combination.

        Returns:
            BenchReport with one result per combination and crossover lengths
            of each parallel backend against serial
        """
        report = BenchReport()
        for length in self.config.lengths:
            data = [self.rng.uniform(0.5, 1.5, length) for _ in range(4)]
            codes = np.ones(length)
            for backend in self.config.backends:
                vectors = [self._make(backend, values) for values in data]
                vectors.append(self._make(backend, codes))
                try:
                    for op in self.config.ops:
                        mean = self.time_op(op, vectors)
                        report.results.append(BenchResult(op, backend, length, mean))
                        logger.debug(f"{op} on {backend} at n={length}: {mean * 1e6:.2f} us")
                finally:
                    for vector in vectors:
                        vector.destroy()

        if Backend.SERIAL.value in self.config.backends:
            for op in self.config.ops:
                serial = {r.length: r.mean_seconds for r in report.results if r.op == op and r.backend == "serial"}
                for backend in self.config.backends:
                    if backend == Backend.SERIAL.value:
                        continue
                    parallel = {r.length: r.mean_seconds for r in report.results if r.op == op and r.backend == backend}
                    crossover = find_crossover(serial, parallel)
                    report.crossovers[(op, backend)] = crossover
                    if crossover is not None:
                        logger.info(f"Crossover for {op}: {backend} beats serial from n={crossover}")
        return report


def bench_vectors(config: BenchConfig, arbiter: Optional[MemoryArbiter] = None) -> BenchReport:
    """Run the vector benchmark described by ``config``."""
    logger.info(
        f"Benchmarking {len(config.ops)} operations on {', '.join(config.backends)} "
        f"for lengths {config.lengths} ({config.repetitions} repetitions)"
    )
    return VectorBench(config, arbiter).run()
