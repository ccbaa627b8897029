"""
ark_toolkit - backend-pluggable adaptive IMEX Runge-Kutta toolkit

This package provides time integration built on abstract vector, matrix and
solver interfaces, with support for:
- Serial, thread-pooled and simulated-device vector backends
- A memory arbiter with a host/device transfer ledger
- Composite and rank-distributed vectors
- CSR and block-diagonal CSR matrices with batched direct solves
- GMRES, PCG, Newton and Anderson-accelerated fixed-point solvers
- An adaptive additive Runge-Kutta integrator
- A 1D advection-reaction brusselator driver and a vector benchmark
"""

__version__ = "0.1.0"
__author__ = "deliriusz"

from .errors import ArkToolkitError, CallbackError, ConfigError
from .memory import MemoryArbiter, MemoryBlock, MemorySpace, TransferStats, get_default_arbiter
from .nvector import (
    Backend,
    DeviceSimVector,
    ExecPolicy,
    PooledVector,
    SerialVector,
    Vector,
    create_vector,
    from_array,
)
from .distvec import Communicator, DistVector, ManyVector, make_dist, make_many
from .sunmatrix import BlockCsrMatrix, CsrMatrix, spmv_blockcsr, spmv_csr
from .solvers import (
    LinearOperator,
    SolveStats,
    batched_factor,
    batched_solve,
    fixed_point,
    gmres,
    newton,
    pcg,
)
from .butcher import ButcherPair, OrderReport, ark324, get_tableau, verify_tableau_order
from .integrator import ArkIntegrator, RunStats, adapt_step, ewt
from .config import RunConfig, ProblemConfig, IntegratorOptions, BenchConfig, load_config
from .brusselator import RunReport, run, run_batch, run_batch_async
from .bench import BenchReport, bench_vectors
from .report import ReportWriter, CsvReportWriter, JsonReportWriter, create_report_writer
from .cli import main

__all__ = [
    "ArkToolkitError",
    "CallbackError",
    "ConfigError",
    "MemoryArbiter",
    "MemoryBlock",
    "MemorySpace",
    "TransferStats",
    "get_default_arbiter",
    "Backend",
    "DeviceSimVector",
    "ExecPolicy",
    "PooledVector",
    "SerialVector",
    "Vector",
    "create_vector",
    "from_array",
    "Communicator",
    "DistVector",
    "ManyVector",
    "make_dist",
    "make_many",
    "BlockCsrMatrix",
    "CsrMatrix",
    "spmv_blockcsr",
    "spmv_csr",
    "LinearOperator",
    "SolveStats",
    "batched_factor",
    "batched_solve",
    "fixed_point",
    "gmres",
    "newton",
    "pcg",
    "ButcherPair",
    "OrderReport",
    "ark324",
    "get_tableau",
    "verify_tableau_order",
    "ArkIntegrator",
    "RunStats",
    "adapt_step",
    "ewt",
    "RunConfig",
    "ProblemConfig",
    "IntegratorOptions",
    "BenchConfig",
    "load_config",
    "RunReport",
    "run",
    "run_batch",
    "run_batch_async",
    "BenchReport",
    "bench_vectors",
    "ReportWriter",
    "CsvReportWriter",
    "JsonReportWriter",
    "create_report_writer",
    "main",
]
