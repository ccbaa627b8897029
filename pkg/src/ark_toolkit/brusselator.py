"""
Advection-reaction brusselator driver for ark_toolkit.

Three species (u, v, w) advected with constant speed on a periodic 1D mesh
and reacting with stiff kinetics. Advection is explicit, reactions are
implicit. The state is interleaved per cell, so every cell owns one
contiguous 3x3 block of the reaction Jacobian.

Two stage-solver configurations are provided: a task-local Newton that
solves every cell's 3x3 system directly and agrees on success with a single
collective, and the library Newton-GMRES with the per-cell solves serving as
preconditioner. ``run_batch`` integrates reaction-only cells in independent
groups, optionally several groups at a time.
"""

import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .config import IntegratorOptions, ProblemConfig
from .distvec import Communicator, local_array, make_dist
from .errors import ArkToolkitError, ConfigError, SingularBlock
from .integrator import (
    ArkIntegrator,
    BlockDirectStageSolver,
    NewtonKrylovStageSolver,
    RunStats,
    StageSolver,
)
from .memory import MemoryArbiter, MemorySpace, TransferStats
from .nvector import ReduceOp, Vector, create_vector, default_workers
from .solvers import SolveStats
from .sunmatrix import BlockCsrMatrix
from .utils import CATEGORIES, CategoryTimer, solution_checksum, timed

logger = logging.getLogger(__name__)

SPECIES = 3


def initial_condition(config: ProblemConfig, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gaussian bump on the steady state: u = A + p, v = B/A + p, w = 3 + p.

    Args:
        config: Problem parameters
        x: Cell coordinates

    Returns:
        Arrays (u, v, w)
    """
    x = np.asarray(x, dtype=np.float64)
    p = config.alpha * np.exp(-((x - config.center) ** 2) / (2.0 * config.width ** 2))
    u = config.reactant_a + p
    v = config.reactant_b / config.reactant_a + p
    w = 3.0 + p
    return u, v, w


def reaction_terms(config: ProblemConfig, cells: np.ndarray) -> np.ndarray:
    """Pointwise reaction right-hand side for an (n, 3) array of cell states."""
    u, v, w = cells[:, 0], cells[:, 1], cells[:, 2]
    out = np.empty_like(cells)
    out[:, 0] = config.reactant_a - (w + 1.0) * u + v * u * u
    out[:, 1] = w * u - v * u * u
    out[:, 2] = (config.reactant_b - w) / config.epsilon - w * u
    return out


def reaction_jacobian_blocks(config: ProblemConfig, cells: np.ndarray) -> np.ndarray:
    """Per-cell Jacobians of the reaction terms, shape (n, 3, 3)."""
    u, v, w = cells[:, 0], cells[:, 1], cells[:, 2]
    jac = np.zeros((cells.shape[0], SPECIES, SPECIES))
    jac[:, 0, 0] = -(w + 1.0) + 2.0 * u * v
    jac[:, 0, 1] = u * u
    jac[:, 0, 2] = -u
    jac[:, 1, 0] = w - 2.0 * u * v
    jac[:, 1, 1] = -u * u
    jac[:, 1, 2] = u
    jac[:, 2, 0] = -w
    jac[:, 2, 2] = -1.0 / config.epsilon - u
    return jac


def solve3x3(matrices, rhs) -> np.ndarray:
    """
    Solve many 3x3 systems by Gauss-Jordan elimination with partial pivoting.

    Args:
        matrices: Shape (3, 3) or (n, 3, 3)
        rhs: Shape (3,) or (n, 3)

    Returns:
        Solutions with the shape of ``rhs``

    Raises:
        SingularBlock: Identifying the first system with a zero pivot
    """
    single = np.ndim(matrices) == 2
    m = np.array(matrices, dtype=np.float64, ndmin=3, copy=True)
    x = np.array(rhs, dtype=np.float64, ndmin=2, copy=True)
    rows = np.arange(m.shape[0])
    for k in range(SPECIES):
        p = k + np.argmax(np.abs(m[:, k:, k]), axis=1)
        swap = m[rows, k].copy()
        m[rows, k] = m[rows, p]
        m[rows, p] = swap
        swap = x[rows, k].copy()
        x[rows, k] = x[rows, p]
        x[rows, p] = swap

        pivot = m[:, k, k].copy()
        bad = np.nonzero(pivot == 0.0)[0]
        if bad.size:
            raise SingularBlock(int(bad[0]))
        m[:, k, :] /= pivot[:, np.newaxis]
        x[:, k] /= pivot
        for i in range(SPECIES):
            if i == k:
                continue
            factor = m[:, i, k].copy()
            m[:, i, :] -= factor[:, np.newaxis] * m[:, k, :]
            x[:, i] -= factor * x[:, k]
    return x[0] if single else x


class BrusselatorProblem:
    """
    One rank's share of the mesh and the right-hand sides acting on it.
    """

    def __init__(self, config: ProblemConfig, comm: Optional[Communicator] = None, rank: int = 0,
                 timer: Optional[CategoryTimer] = None):
        """
        Initialize BrusselatorProblem.

        Args:
            config: Problem parameters
            comm: Communicator for the halo exchange (single rank if None)
            rank: This rank's index
            timer: Optional category timer
        """
        self.config = config
        self.comm = comm or Communicator(1)
        self.rank = rank
        self.timer = timer
        self.local_cells = config.nx // self.comm.rank_count
        self.advection_coef = -config.advection_speed / config.dx
        self._blocks: Optional[np.ndarray] = None

    def cell_coordinates(self) -> np.ndarray:
        first = self.rank * self.local_cells
        return (first + np.arange(self.local_cells)) * self.config.dx

    def initial_state(self) -> np.ndarray:
        """Interleaved (u, v, w) initial values of the local cells."""
        u, v, w = initial_condition(self.config, self.cell_coordinates())
        return np.column_stack([u, v, w]).reshape(-1)

    def _cells(self, y: Vector) -> np.ndarray:
        return local_array(y).reshape(-1, SPECIES)

    def advection_rhs(self, t: float, y: Vector, out: Vector) -> None:
        """First-order upwind advection; the left neighbor value comes from the halo exchange."""
        with timed(self.timer, "advection"):
            cells = self._cells(y)
            left = self.comm.halo_exchange(self.rank, cells[-1])
            upwind = np.empty_like(cells)
            upwind[0] = left
            upwind[1:] = cells[:-1]
            self._cells(out)[:] = self.advection_coef * (cells - upwind)

    def reaction_rhs(self, t: float, y: Vector, out: Vector) -> None:
        """Pointwise reaction terms; no communication."""
        with timed(self.timer, "reaction"):
            self._cells(out)[:] = reaction_terms(self.config, self._cells(y))

    def fill_jacobian(self, t: float, y: Vector, matrix: BlockCsrMatrix) -> None:
        """Write the reaction Jacobian blocks J_i into a full-pattern block matrix."""
        matrix.values[:] = reaction_jacobian_blocks(self.config, self._cells(y)).reshape(matrix.nblocks, -1)

    def reaction_jacobian(self, t: float, y: Vector, gamma: float,
                          matrix: Optional[BlockCsrMatrix] = None) -> BlockCsrMatrix:
        """
        Newton matrix blocks M_i = I - gamma J_i.

        Args:
            t: Time
            y: State
            gamma: Implicit stage coefficient
            matrix: Full-pattern block matrix to fill (allocated if None)
        """
        if matrix is None:
            matrix = BlockCsrMatrix.full_pattern(self.local_cells, SPECIES)
        self.fill_jacobian(t, y, matrix)
        matrix.scale_add_identity(-gamma)
        return matrix

    # block preconditioner for the global configuration

    def preconditioner_setup(self, t: float, z: Vector, gamma: float) -> None:
        jac = reaction_jacobian_blocks(self.config, self._cells(z))
        self._blocks = np.eye(SPECIES)[np.newaxis, :, :] - gamma * jac

    def preconditioner_solve(self, r: Vector, out: Vector) -> None:
        self._cells(out)[:] = solve3x3(self._blocks, self._cells(r))


def _wrms(values: np.ndarray, weights: np.ndarray, count: int) -> float:
    scaled = (values * weights).reshape(-1)
    return float(np.sqrt(np.cumsum(scaled * scaled)[-1] / count)) if count else 0.0


class TaskLocalNewtonSolver(StageSolver):
    """
    Newton on every local cell at once with direct 3x3 solves.

    Each rank iterates on its own cells with a rank-local WRMS test; success
    is agreed with one logical-and collective per stage solve.
    """

    def __init__(self, problem: BrusselatorProblem, max_iters: Optional[int] = None,
                 tol_coef: Optional[float] = None, crdown: float = 0.3, rdiv: float = 2.0):
        super().__init__()
        self.problem = problem
        self._max_iters = max_iters
        self._tol_coef = tol_coef
        self.crdown = crdown
        self.rdiv = rdiv
        self.update_norms: List[float] = []

    def solve(self, t: float, gamma: float, d: Vector, z: Vector, ewt: Vector) -> SolveStats:
        options = self.integrator.options
        max_iters = self._max_iters or options.max_nonlinear_iters
        tol = self._tol_coef or options.tol_coef
        config = self.problem.config
        cells = local_array(z).reshape(-1, SPECIES)
        data = local_array(d).reshape(-1, SPECIES)
        weights = local_array(ewt).reshape(-1, SPECIES)
        count = cells.size

        stats = SolveStats(solver="task-local-newton")
        self.update_norms = []
        rate = 1.0
        previous = 0.0
        converged = False
        forcing = None
        for m in range(1, max_iters + 1):
            stats.iterations = m
            if forcing is None:
                with timed(self.timer, "reaction"):
                    forcing = reaction_terms(config, cells)
                self.stats.fi_evals += 1
            residual = cells - gamma * forcing - data
            forcing = None
            with timed(self.timer, "linear solve"):
                blocks = np.eye(SPECIES)[np.newaxis, :, :] - gamma * reaction_jacobian_blocks(config, cells)
                try:
                    delta = solve3x3(blocks, -residual)
                except SingularBlock:
                    break
            self.stats.linear_setups += 1
            self.stats.linear_solves += 1
            cells += delta

            norm = _wrms(delta, weights, count)
            self.update_norms.append(norm)
            stats.residual = norm
            if m > 1:
                rate = max(self.crdown * rate, norm / previous) if previous > 0.0 else 0.0
            if norm * min(1.0, rate) < tol or norm == 0.0:
                converged = True
                break
            if m == 1:
                # no rate yet: accept on the residual at the new iterate
                with timed(self.timer, "reaction"):
                    forcing = reaction_terms(config, cells)
                self.stats.fi_evals += 1
                if _wrms(cells - gamma * forcing - data, weights, count) < tol:
                    converged = True
                    break
            if m > 1 and norm > self.rdiv * previous:
                break
            previous = norm

        comm = self.problem.comm
        agreed = bool(comm.allreduce(self.problem.rank, converged, ReduceOp.AND))
        stats.converged = agreed
        if not agreed:
            stats.failure = "max_iterations"
            stats.recoverable = True
        return stats


@dataclass
class RunReport:
    """Outcome of a brusselator run."""
    mode: str
    solver: str
    backend: str
    ranks: int
    nx: int
    tf: float
    category_seconds: Dict[str, float]
    wall_seconds: float
    stats: RunStats
    transfers: TransferStats
    solution: np.ndarray
    coordinates: np.ndarray
    step_sizes: List[float] = field(default_factory=list)

    @property
    def checksum(self) -> str:
        return solution_checksum(self.solution)

    def cells(self) -> np.ndarray:
        return self.solution.reshape(-1, SPECIES)

    def to_rows(self) -> List[Dict[str, Any]]:
        """One row per timing category, each carrying the run counters."""
        common = {
            "mode": self.mode,
            "solver": self.solver,
            "backend": self.backend,
            "ranks": self.ranks,
            "nx": self.nx,
            "wall_seconds": self.wall_seconds,
            **self.stats.to_row(),
            "checksum": self.checksum,
        }
        return [{"category": name, "seconds": seconds, **common} for name, seconds in self.category_seconds.items()]

    def solution_rows(self) -> List[Dict[str, float]]:
        cells = self.cells()
        return [
            {"x": float(x), "u": float(c[0]), "v": float(c[1]), "w": float(c[2])}
            for x, c in zip(self.coordinates, cells)
        ]


@dataclass
class _RankResult:
    solution: np.ndarray
    stats: RunStats
    timer: CategoryTimer
    step_sizes: List[float]


def _policies(config: ProblemConfig):
    if config.backend == "serial":
        return None, None
    workers = config.workers or config.policy.workers or default_workers()
    return config.policy.to_policy(workers), config.policy.reduction_policy(workers)


def _make_local(config: ProblemConfig, arbiter: MemoryArbiter, length: int, queue_id: int):
    streaming, reduction = _policies(config)
    extra = {"unified": config.unified} if config.backend == "devsim" else {}
    return create_vector(config.backend, length, arbiter=arbiter, streaming=streaming,
                         reduction=reduction, queue_id=queue_id, **extra)


def run(config: ProblemConfig, options: Optional[IntegratorOptions] = None,
        arbiter: Optional[MemoryArbiter] = None) -> RunReport:
    """
    Integrate the full problem to t_f on ``config.ranks`` in-process ranks.

    Args:
        config: Problem configuration
        options: Integrator options
        arbiter: Memory arbiter (a fresh one if None, so the ledger covers this run only)

    Returns:
        RunReport with rank 0's timing and the gathered solution
    """
    options = options or IntegratorOptions()
    arbiter = arbiter or MemoryArbiter()
    comm = Communicator(config.ranks)
    logger.info(
        f"Starting run: nx={config.nx}, ranks={config.ranks}, solver={config.solver}, "
        f"backend={config.backend}, tf={config.tf}"
    )

    def rank_body(rank: int) -> _RankResult:
        timer = CategoryTimer()
        problem = BrusselatorProblem(config, comm, rank, timer)
        local = _make_local(config, arbiter, SPECIES * problem.local_cells, queue_id=rank)
        local.load(problem.initial_state())
        y0 = make_dist(comm, rank, local, global_length=SPECIES * config.nx)

        stage_solver: Optional[StageSolver] = None
        if config.reactions:
            if config.solver == "task-local":
                stage_solver = TaskLocalNewtonSolver(problem)
            else:
                stage_solver = NewtonKrylovStageSolver(
                    psetup=problem.preconditioner_setup,
                    psolve=problem.preconditioner_solve,
                )
        integrator = ArkIntegrator(
            y0,
            t0=0.0,
            fe=problem.advection_rhs if config.advection else None,
            fi=problem.reaction_rhs if config.reactions else None,
            rtol=config.tolerances.rtol,
            atol=_atol(config),
            stage_solver=stage_solver,
            options=options,
            timer=timer,
        )
        try:
            with timer.total():
                integrator.evolve(config.tf)
            y = integrator.y
            y.copy_from_space()
            solution = np.array(y.view(MemorySpace.HOST))
            gathered = np.concatenate(comm.gather(rank, solution))
            return _RankResult(gathered, integrator.stats, timer, list(integrator.state.step_sizes))
        finally:
            integrator.destroy()
            y0.destroy()

    start = time.perf_counter()
    try:
        results = comm.run_ranks(rank_body)
    except ArkToolkitError as e:
        logger.error(f"Run failed (nx={config.nx}, ranks={config.ranks}, solver={config.solver}): {e}")
        raise
    wall = time.perf_counter() - start
    lead = results[0]
    logger.info(
        f"Run finished in {wall:.3f}s: {lead.stats.steps} steps, "
        f"{lead.stats.error_test_failures} error test failures"
    )
    return RunReport(
        mode="run",
        solver=config.solver,
        backend=config.backend,
        ranks=config.ranks,
        nx=config.nx,
        tf=config.tf,
        category_seconds={name: lead.timer.totals.get(name, 0.0) for name in CATEGORIES},
        wall_seconds=lead.timer.wall_time,
        stats=lead.stats,
        transfers=arbiter.stats(),
        solution=lead.solution,
        coordinates=np.arange(config.nx) * config.dx,
        step_sizes=lead.step_sizes,
    )


def _atol(config: ProblemConfig) -> float:
    atol = config.tolerances.atol
    if isinstance(atol, list):
        if len(set(atol)) != 1:
            raise ConfigError("per-component atol is not supported for the brusselator run")
        return float(atol[0])
    return float(atol)


@dataclass
class _GroupResult:
    cells: np.ndarray
    stats: RunStats
    timer: CategoryTimer


def integrate_group(config: ProblemConfig, options: IntegratorOptions, x: np.ndarray,
                    arbiter: MemoryArbiter, queue_id: int = 0) -> _GroupResult:
    """
    Integrate the reaction-only systems of the cells at ``x`` as one block-diagonal system.

    Uses library Newton with a batched direct solve of the block Jacobian.
    """
    timer = CategoryTimer()
    count = x.shape[0]
    problem = BrusselatorProblem(config.model_copy(update={"nx": count, "ranks": 1}), timer=timer)
    u, v, w = initial_condition(config, x)
    y0 = _make_local(config, arbiter, SPECIES * count, queue_id)
    y0.load(np.column_stack([u, v, w]).reshape(-1))
    matrix = BlockCsrMatrix.full_pattern(count, SPECIES, arbiter=arbiter)
    integrator = ArkIntegrator(
        y0,
        t0=0.0,
        fi=problem.reaction_rhs,
        rtol=config.tolerances.rtol,
        atol=_atol(config),
        stage_solver=BlockDirectStageSolver(problem.fill_jacobian, matrix),
        options=options,
        timer=timer,
    )
    try:
        with timer.total():
            integrator.evolve(config.tf)
        cells = integrator.y.to_numpy().reshape(-1, SPECIES)
        return _GroupResult(cells, integrator.stats, timer)
    finally:
        integrator.destroy()
        matrix.destroy()
        y0.destroy()


async def run_batch_async(config: ProblemConfig, options: Optional[IntegratorOptions] = None,
                          arbiter: Optional[MemoryArbiter] = None) -> RunReport:
    """
    Integrate ``config.nx`` independent reaction-only cells in groups of ``config.batch``.

    At most ``config.instances`` groups are integrated at the same time, each
    on its own thread and queue.

    Returns:
        RunReport with per-cell solutions in cell order and summed counters
    """
    options = options or IntegratorOptions()
    arbiter = arbiter or MemoryArbiter()
    x = np.arange(config.nx) * config.dx
    groups = [x[start:start + config.batch] for start in range(0, config.nx, config.batch)]
    semaphore = asyncio.Semaphore(config.instances)
    logger.info(
        f"Starting batch run: {config.nx} cells in {len(groups)} groups of {config.batch}, "
        f"{config.instances} concurrent instances"
    )

    async def run_group(index: int, coordinates: np.ndarray) -> _GroupResult:
        async with semaphore:
            logger.debug(f"Integrating group {index} ({coordinates.shape[0]} cells)")
            return await asyncio.to_thread(integrate_group, config, options, coordinates, arbiter, index)

    start = time.perf_counter()
    results = await asyncio.gather(*(run_group(i, g) for i, g in enumerate(groups)))
    wall = time.perf_counter() - start

    totals = RunStats()
    seconds = {name: 0.0 for name in CATEGORIES}
    for result in results:
        for key, value in result.stats.to_row().items():
            setattr(totals, key, getattr(totals, key) + value)
        for name in CATEGORIES:
            seconds[name] += result.timer.totals.get(name, 0.0)
    logger.info(f"Batch run finished in {wall:.3f}s: {totals.steps} steps over {len(groups)} groups")
    return RunReport(
        mode="batch",
        solver="block-direct",
        backend=config.backend,
        ranks=1,
        nx=config.nx,
        tf=config.tf,
        category_seconds=seconds,
        wall_seconds=sum(result.timer.wall_time for result in results),
        stats=totals,
        transfers=arbiter.stats(),
        solution=np.concatenate([result.cells for result in results]).reshape(-1),
        coordinates=x,
    )


def run_batch(config: ProblemConfig, options: Optional[IntegratorOptions] = None,
              arbiter: Optional[MemoryArbiter] = None) -> RunReport:
    """Synchronous wrapper of :func:`run_batch_async`."""
    return asyncio.run(run_batch_async(config, options, arbiter))
