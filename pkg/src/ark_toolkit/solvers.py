"""
Linear and nonlinear solvers for ark_toolkit.

Krylov solvers (GMRES, PCG), Newton and Anderson-accelerated fixed-point
iterations work only through the vector operation set, so they run unchanged
on every backend and on distributed vectors. The batched direct solver
factors the blocks of a BlockCsrMatrix with partial pivoting, all blocks at
once.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from .distvec import local_array, local_view
from .errors import (
    Breakdown,
    LinearSolveFailure,
    MaxIterations,
    ResidualCallbackFailure,
    SingularBlock,
    SolverError,
    DimensionMismatch,
)
from .nvector import Vector
from .sunmatrix import BlockCsrMatrix

logger = logging.getLogger(__name__)

MAX_ANDERSON_DEPTH = 5
REORTHOGONALIZE_RATIO = 1e-3

ApplyFn = Callable[[Vector, Vector], None]


@dataclass
class LinearOperator:
    """
    Matrix-free operator.

    ``apply(x, out)`` writes A x into out; ``psolve(r, out)`` writes P^-1 r.
    """
    apply: ApplyFn
    psolve: Optional[ApplyFn] = None


_FAILURES: Dict[str, type] = {
    "max_iterations": MaxIterations,
    "breakdown": Breakdown,
    "linear_solve": LinearSolveFailure,
    "residual_callback": ResidualCallbackFailure,
    "divergence": MaxIterations,
}


@dataclass
class SolveStats:
    """Outcome of one solve."""
    solver: str = ""
    iterations: int = 0
    residual: float = 0.0
    converged: bool = False
    failure: Optional[str] = None
    recoverable: bool = False
    message: str = ""

    def to_row(self) -> Dict[str, Any]:
        return {
            "solver": self.solver,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "failure": self.failure or "",
        }

    def raise_for_failure(self) -> None:
        """
        Raise the exception matching a failed solve; do nothing on success.

        Raises:
            SolverError: Subclass chosen by ``failure``
        """
        if self.converged:
            return
        error_cls = _FAILURES.get(self.failure or "", SolverError)
        raise error_cls(
            self.message or f"{self.solver} failed ({self.failure}) after {self.iterations} iterations",
            recoverable=self.recoverable,
        )


def _norm(v: Vector) -> float:
    return math.sqrt(v.dot(v))


def _callback_failure(stats: SolveStats, kind: str, error: Exception) -> SolveStats:
    stats.failure = kind
    stats.recoverable = bool(getattr(error, "recoverable", False))
    stats.message = str(error)
    return stats


class GmresSolver:
    """
    Restarted GMRES with left preconditioning.

    Modified Gram-Schmidt with one reorthogonalization pass when the new
    basis vector loses most of its norm; Givens rotations keep the residual
    estimate current.
    """

    def __init__(self, maxl: int = 5, max_restarts: int = 0):
        """
        Initialize GmresSolver.

        Args:
            maxl: Krylov subspace size per cycle (>= 1)
            max_restarts: Number of restarts after the first cycle
        """
        if maxl < 1:
            raise ValueError(f"maxl must be >= 1, got {maxl}")
        self.maxl = maxl
        self.max_restarts = max_restarts
        self._basis: List[Vector] = []
        self._work: Optional[Vector] = None
        self._template_length = -1

    def _workspace(self, template: Vector) -> None:
        if self._basis and self._template_length == template.length:
            return
        self.destroy()
        self._basis = [template.clone() for _ in range(self.maxl + 1)]
        self._work = template.clone()
        self._template_length = template.length

    def destroy(self) -> None:
        for v in self._basis:
            v.destroy()
        if self._work is not None:
            self._work.destroy()
        self._basis = []
        self._work = None

    def _residual(self, op: LinearOperator, b: Vector, x: Vector, out: Vector) -> float:
        work = self._work
        op.apply(x, work)
        work.linear_sum(1.0, b, -1.0, work)
        if op.psolve is not None:
            op.psolve(work, out)
        else:
            out.copy_from(work)
        return _norm(out)

    def solve(self, op: LinearOperator, b: Vector, x: Vector, tol: float) -> SolveStats:
        """
        Solve A x = b in place, starting from the contents of x.

        Args:
            op: Operator and optional preconditioner
            b: Right-hand side
            x: Initial guess on entry, solution on exit
            tol: Tolerance on the (preconditioned) residual 2-norm

        Returns:
            SolveStats; failure is "max_iterations", "breakdown" or "linear_solve"
        """
        self._workspace(b)
        stats = SolveStats(solver="gmres")
        V = self._basis
        try:
            for cycle in range(self.max_restarts + 1):
                beta = self._residual(op, b, x, V[0])
                stats.residual = beta
                if beta <= tol:
                    stats.converged = True
                    return stats
                V[0].scale(1.0 / beta, V[0])
                done, used = self._cycle(op, V, beta, tol, stats)
                self._update(x, V, used, stats)
                if done:
                    return stats
                if stats.failure == "breakdown":
                    return stats
                logger.debug(f"GMRES restart {cycle + 1}, residual {stats.residual:.3e}")
        except SolverError:
            raise
        except Exception as e:
            return _callback_failure(stats, "linear_solve", e)
        stats.failure = "max_iterations"
        return stats

    def _cycle(self, op: LinearOperator, V: List[Vector], beta: float, tol: float, stats: SolveStats):
        maxl = self.maxl
        H = np.zeros((maxl + 1, maxl))
        g = np.zeros(maxl + 1)
        g[0] = beta
        cs = np.zeros(maxl)
        sn = np.zeros(maxl)
        work = self._work
        self._hessenberg = H
        self._rhs = g
        for j in range(maxl):
            stats.iterations += 1
            w = V[j + 1]
            if op.psolve is not None:
                op.apply(V[j], work)
                op.psolve(work, w)
            else:
                op.apply(V[j], w)

            before = _norm(w)
            for i in range(j + 1):
                H[i, j] = w.dot(V[i])
                w.linear_sum(1.0, w, -H[i, j], V[i])
            after = _norm(w)
            if before > 0.0 and after < REORTHOGONALIZE_RATIO * before:
                for i in range(j + 1):
                    correction = w.dot(V[i])
                    H[i, j] += correction
                    w.linear_sum(1.0, w, -correction, V[i])
                after = _norm(w)
            H[j + 1, j] = after

            for i in range(j):
                upper = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = upper
            denom = math.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                stats.failure = "breakdown"
                return False, j
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            stats.residual = abs(g[j + 1])

            if stats.residual <= tol:
                stats.converged = True
                return True, j + 1
            if after == 0.0:
                stats.failure = "breakdown"
                return False, j + 1
            w.scale(1.0 / after, w)
        return False, maxl

    def _update(self, x: Vector, V: List[Vector], used: int, stats: SolveStats) -> None:
        if used == 0:
            return
        H = self._hessenberg
        y = solve_triangular(H[:used, :used], self._rhs[:used])
        for i in range(used):
            x.linear_sum(1.0, x, y[i], V[i])


class PcgSolver:
    """Preconditioned conjugate gradients for symmetric positive definite operators."""

    def __init__(self, maxl: int = 50):
        self.maxl = maxl

    def solve(self, op: LinearOperator, b: Vector, x: Vector, tol: float) -> SolveStats:
        """
        Solve A x = b in place; the residual test uses the unpreconditioned 2-norm.

        Returns:
            SolveStats; failure is "max_iterations", "breakdown" or "linear_solve"
        """
        stats = SolveStats(solver="pcg")
        r, z, p, q = (b.clone() for _ in range(4))
        try:
            op.apply(x, q)
            r.linear_sum(1.0, b, -1.0, q)
            stats.residual = _norm(r)
            if stats.residual <= tol:
                stats.converged = True
                return stats
            self._precondition(op, r, z)
            p.copy_from(z)
            rz = r.dot(z)
            for k in range(1, self.maxl + 1):
                stats.iterations = k
                op.apply(p, q)
                curvature = p.dot(q)
                if curvature == 0.0:
                    stats.failure = "breakdown"
                    return stats
                alpha = rz / curvature
                x.linear_sum(1.0, x, alpha, p)
                r.linear_sum(1.0, r, -alpha, q)
                stats.residual = _norm(r)
                if stats.residual <= tol:
                    stats.converged = True
                    return stats
                self._precondition(op, r, z)
                rz_next = r.dot(z)
                p.linear_sum(1.0, z, rz_next / rz, p)
                rz = rz_next
            stats.failure = "max_iterations"
            return stats
        except SolverError:
            raise
        except Exception as e:
            return _callback_failure(stats, "linear_solve", e)
        finally:
            for v in (r, z, p, q):
                v.destroy()

    @staticmethod
    def _precondition(op: LinearOperator, r: Vector, z: Vector) -> None:
        if op.psolve is None:
            z.copy_from(r)
        else:
            op.psolve(r, z)


@dataclass
class BatchedFactors:
    """Row-pivoted LU factors of G dense m x m blocks."""
    lu: np.ndarray
    pivots: np.ndarray

    @property
    def nblocks(self) -> int:
        return self.lu.shape[0]

    @property
    def block_dim(self) -> int:
        return self.lu.shape[1]


def factor_dense_blocks(blocks: np.ndarray) -> BatchedFactors:
    """
    LU factorization with partial pivoting of every block at once.

    Args:
        blocks: Array of shape (G, m, m)

    Returns:
        Factors; L has a unit diagonal and is stored below U

    Raises:
        SingularBlock: Identifying the first block with a zero pivot
    """
    lu = np.array(blocks, dtype=np.float64, copy=True)
    nblocks, m, _ = lu.shape
    pivots = np.tile(np.arange(m), (nblocks, 1))
    rows = np.arange(nblocks)
    for k in range(m):
        p = k + np.argmax(np.abs(lu[:, k:, k]), axis=1)
        pivot = lu[rows, p, k]
        bad = np.nonzero((pivot == 0.0) | ~np.isfinite(pivot))[0]
        if bad.size:
            raise SingularBlock(int(bad[0]))
        swap = lu[rows, k].copy()
        lu[rows, k] = lu[rows, p]
        lu[rows, p] = swap
        swap = pivots[rows, k].copy()
        pivots[rows, k] = pivots[rows, p]
        pivots[rows, p] = swap
        lu[:, k + 1:, k] /= lu[:, k, k][:, np.newaxis]
        lu[:, k + 1:, k + 1:] -= lu[:, k + 1:, k, np.newaxis] * lu[:, k, np.newaxis, k + 1:]
    return BatchedFactors(lu=lu, pivots=pivots)


def solve_factored(factors: BatchedFactors, rhs: np.ndarray) -> np.ndarray:
    """Solve every block system with previously computed factors; rhs has shape (G*m,)."""
    g, m = factors.nblocks, factors.block_dim
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (g * m,):
        raise DimensionMismatch(f"right-hand side must have {g * m} entries, got {rhs.shape}")
    lu = factors.lu
    x = np.take_along_axis(rhs.reshape(g, m), factors.pivots, axis=1)
    for i in range(1, m):
        x[:, i] -= np.einsum("gj,gj->g", lu[:, i, :i], x[:, :i])
    for i in range(m - 1, -1, -1):
        if i + 1 < m:
            x[:, i] -= np.einsum("gj,gj->g", lu[:, i, i + 1:], x[:, i + 1:])
        x[:, i] /= lu[:, i, i]
    return x.reshape(g * m)


def batched_factor(matrix: BlockCsrMatrix) -> BatchedFactors:
    """Factor every block of a shared-pattern block-diagonal matrix."""
    return factor_dense_blocks(matrix.dense_blocks())


def batched_solve(factors: BatchedFactors, b) -> np.ndarray:
    """Solve the block-diagonal system for right-hand side b (array or vector)."""
    if isinstance(b, Vector):
        b = local_view(b)
    return solve_factored(factors, b)


class BatchedDirectSolver:
    """Direct solver for block-diagonal systems; ``setup`` factors, ``solve`` reuses the factors."""

    def __init__(self):
        self.factors: Optional[BatchedFactors] = None
        self.setups = 0
        self.solves = 0

    def setup(self, matrix: BlockCsrMatrix) -> None:
        self.factors = batched_factor(matrix)
        self.setups += 1

    def solve(self, b: Vector, x: Vector) -> SolveStats:
        """Write the solution of M x = b into x."""
        if self.factors is None:
            raise LinearSolveFailure("solve called before setup")
        local_array(x)[:] = batched_solve(self.factors, b)
        self.solves += 1
        return SolveStats(solver="batched-direct", iterations=1, converged=True)


ResidualFn = Callable[[Vector, Vector], None]
SetupFn = Callable[[Vector], None]
LinearSolveFn = Callable[[Vector, Vector], None]


class NewtonSolver:
    """
    Newton iteration for F(y) = 0.

    ``lsetup(y)`` prepares the linear system at y; ``lsolve(b, x)`` writes the
    solution of M x = b. The update is M delta = -F(y), and the iteration
    stops when ``wrms(delta) * min(1, rate) < tol`` with ``rate`` the
    estimated convergence rate. The first iteration has no rate estimate, so
    it also accepts when ``wrms(F)`` at the new iterate is below tol; the
    second iteration reuses that residual.
    """

    def __init__(self, max_iters: int = 3, tol_coef: float = 0.1, jacobian_refresh: str = "per_solve",
                 crdown: float = 0.3, rdiv: float = 2.0):
        """
        Initialize NewtonSolver.

        Args:
            max_iters: Iteration budget
            tol_coef: Convergence tolerance on the weighted update norm
            jacobian_refresh: "per_solve" (modified Newton) or "per_iteration" (full Newton)
            crdown: Rate estimate damping
            rdiv: Update-growth ratio treated as divergence
        """
        if jacobian_refresh not in ("per_solve", "per_iteration"):
            raise ValueError(f"Unknown jacobian_refresh: {jacobian_refresh}")
        self.max_iters = max_iters
        self.tol_coef = tol_coef
        self.jacobian_refresh = jacobian_refresh
        self.crdown = crdown
        self.rdiv = rdiv
        self.update_norms: List[float] = []

    def solve(self, residual: ResidualFn, lsetup: SetupFn, lsolve: LinearSolveFn,
              y: Vector, ewt: Vector, tol_coef: Optional[float] = None) -> SolveStats:
        """
        Iterate in place on y.

        Args:
            residual: ``residual(y, out)`` writes F(y)
            lsetup: Linear system setup at the current iterate
            lsolve: Linear solve callback
            y: Initial guess on entry, iterate on exit
            ewt: Error weights for the convergence test
            tol_coef: Overrides the configured tolerance

        Returns:
            SolveStats; failures are recoverable when the callback said so
            or when the iteration simply did not converge
        """
        tol = self.tol_coef if tol_coef is None else tol_coef
        stats = SolveStats(solver="newton")
        F = y.clone()
        delta = y.clone()
        self.update_norms = []
        rate = 1.0
        previous = 0.0
        have_residual = False
        try:
            for m in range(1, self.max_iters + 1):
                stats.iterations = m
                if m == 1 or self.jacobian_refresh == "per_iteration":
                    try:
                        lsetup(y)
                    except Exception as e:
                        return _callback_failure(stats, "linear_solve", e)
                if not have_residual:
                    try:
                        residual(y, F)
                    except Exception as e:
                        return _callback_failure(stats, "residual_callback", e)
                have_residual = False
                F.scale(-1.0, F)
                try:
                    lsolve(F, delta)
                except Exception as e:
                    return _callback_failure(stats, "linear_solve", e)
                y.linear_sum(1.0, y, 1.0, delta)

                norm = delta.wrms_norm(ewt)
                self.update_norms.append(norm)
                stats.residual = norm
                if m > 1:
                    rate = max(self.crdown * rate, norm / previous) if previous > 0.0 else 0.0
                if norm * min(1.0, rate) < tol or norm == 0.0:
                    stats.converged = True
                    return stats
                if m == 1:
                    try:
                        residual(y, F)
                    except Exception as e:
                        return _callback_failure(stats, "residual_callback", e)
                    have_residual = True
                    if F.wrms_norm(ewt) < tol:
                        stats.converged = True
                        return stats
                if m > 1 and norm > self.rdiv * previous:
                    stats.failure = "divergence"
                    stats.recoverable = True
                    return stats
                previous = norm
            stats.failure = "max_iterations"
            stats.recoverable = True
            return stats
        finally:
            F.destroy()
            delta.destroy()


class FixedPointSolver:
    """
    Fixed-point iteration y <- g(y) with optional Anderson acceleration.

    With depth m > 0 the new iterate mixes the last m residual differences
    through a small least-squares problem, solved from a column-pivoted QR
    factorization of the residual-difference vectors themselves.

    The first iteration also evaluates g at its new iterate: when that
    plain step is already below tol it is taken and the solve ends.
    Otherwise the evaluation is reused by the second iteration.
    """

    def __init__(self, max_iters: int = 10, tol_coef: float = 0.1, depth: int = 0):
        if depth < 0:
            raise ValueError(f"Anderson depth must be >= 0, got {depth}")
        self.max_iters = max_iters
        self.tol_coef = tol_coef
        self.depth = min(depth, MAX_ANDERSON_DEPTH)

    def solve(self, g: ResidualFn, y: Vector, ewt: Vector, tol_coef: Optional[float] = None) -> SolveStats:
        """
        Iterate in place on y.

        Args:
            g: ``g(y, out)`` writes g(y)
            y: Initial guess on entry, iterate on exit
            ewt: Error weights for the convergence test
            tol_coef: Overrides the configured tolerance

        Returns:
            SolveStats with failure "max_iterations" or "residual_callback"
        """
        tol = self.tol_coef if tol_coef is None else tol_coef
        stats = SolveStats(solver="fixed-point")
        gval, fval, gprev, fprev, update = (y.clone() for _ in range(5))
        df: List[Vector] = []
        dg: List[Vector] = []
        have_g = False
        try:
            for k in range(1, self.max_iters + 1):
                stats.iterations = k
                if not have_g:
                    try:
                        g(y, gval)
                    except Exception as e:
                        return _callback_failure(stats, "residual_callback", e)
                have_g = False
                fval.linear_sum(1.0, gval, -1.0, y)

                if self.depth > 0 and k > 1:
                    self._push(df, fval, fprev)
                    self._push(dg, gval, gprev)
                gprev.copy_from(gval)
                fprev.copy_from(fval)

                # update = new iterate - y
                if df:
                    coefficients = self._least_squares(df, fval)
                    update.copy_from(fval)
                    for gamma, dgi in zip(coefficients, dg):
                        update.linear_sum(1.0, update, -gamma, dgi)
                else:
                    update.copy_from(fval)
                y.linear_sum(1.0, y, 1.0, update)

                norm = update.wrms_norm(ewt)
                stats.residual = norm
                if norm < tol:
                    stats.converged = True
                    return stats
                if k == 1:
                    try:
                        g(y, gval)
                    except Exception as e:
                        return _callback_failure(stats, "residual_callback", e)
                    have_g = True
                    update.linear_sum(1.0, gval, -1.0, y)
                    norm = update.wrms_norm(ewt)
                    if norm < tol:
                        y.copy_from(gval)
                        stats.residual = norm
                        stats.converged = True
                        return stats
            stats.failure = "max_iterations"
            stats.recoverable = True
            return stats
        finally:
            for v in (gval, fval, gprev, fprev, update, *df, *dg):
                v.destroy()

    def _push(self, history: List[Vector], current: Vector, previous: Vector) -> None:
        if len(history) == self.depth:
            diff = history.pop(0)
        else:
            diff = current.clone()
        diff.linear_sum(1.0, current, -1.0, previous)
        history.append(diff)

    @staticmethod
    def _least_squares(df: List[Vector], f: Vector, rank_tol: float = 1e-12) -> np.ndarray:
        """
        Coefficients minimizing ||f - sum gamma_i df_i||.

        Modified Gram-Schmidt on copies of the columns, taking the remaining
        column of largest norm first, gives df P = Q R; then R z = Q^T f.
        Columns whose remaining norm falls below ``rank_tol`` times the first
        pivot get a zero coefficient.
        """
        k = len(df)
        q = [column.clone() for column in df]
        try:
            for copy, column in zip(q, df):
                copy.copy_from(column)
            perm = list(range(k))
            norms = np.array([column.dot(column) for column in q])
            r = np.zeros((k, k))
            rank = 0
            first = 0.0
            for j in range(k):
                p = j + int(np.argmax(norms[j:]))
                if p != j:
                    q[j], q[p] = q[p], q[j]
                    perm[j], perm[p] = perm[p], perm[j]
                    norms[[j, p]] = norms[[p, j]]
                    r[:j, [j, p]] = r[:j, [p, j]]
                rjj = math.sqrt(max(norms[j], 0.0))
                if j == 0:
                    first = rjj
                if rjj == 0.0 or rjj <= rank_tol * first:
                    break
                r[j, j] = rjj
                q[j].scale(1.0 / rjj, q[j])
                for i in range(j + 1, k):
                    r[j, i] = q[j].dot(q[i])
                    q[i].linear_sum(1.0, q[i], -r[j, i], q[j])
                    norms[i] = q[i].dot(q[i])
                rank = j + 1

            coefficients = np.zeros(k)
            if rank:
                rhs = np.array([q[i].dot(f) for i in range(rank)])
                z = solve_triangular(r[:rank, :rank], rhs)
                coefficients[perm[:rank]] = z
            return coefficients
        finally:
            for column in q:
                column.destroy()


def gmres(op: LinearOperator, b: Vector, x0: Vector, tol: float, maxl: int = 5,
          max_restarts: int = 0) -> Tuple[Vector, SolveStats]:
    """Solve A x = b with restarted GMRES; returns a new solution vector."""
    x = x0.clone()
    x.copy_from(x0)
    solver = GmresSolver(maxl=maxl, max_restarts=max_restarts)
    try:
        stats = solver.solve(op, b, x, tol)
    finally:
        solver.destroy()
    return x, stats


def pcg(op: LinearOperator, b: Vector, x0: Vector, tol: float, maxl: int = 50) -> Tuple[Vector, SolveStats]:
    """Solve an SPD system with preconditioned CG; returns a new solution vector."""
    x = x0.clone()
    x.copy_from(x0)
    return x, PcgSolver(maxl=maxl).solve(op, b, x, tol)


def newton(residual: ResidualFn, lsetup: SetupFn, lsolve: LinearSolveFn, y0: Vector, ewt: Vector,
           tol_coef: float = 0.1, max_iters: int = 10,
           jacobian_refresh: str = "per_iteration") -> Tuple[Vector, SolveStats]:
    """
    Full Newton solve starting from y0; returns a new iterate vector.

    The integrator's stage solvers use NewtonSolver directly with its
    modified-Newton default instead.
    """
    y = y0.clone()
    y.copy_from(y0)
    solver = NewtonSolver(max_iters=max_iters, tol_coef=tol_coef, jacobian_refresh=jacobian_refresh)
    return y, solver.solve(residual, lsetup, lsolve, y, ewt)


def fixed_point(g: ResidualFn, y0: Vector, anderson_depth: int = 0, max_iters: int = 10,
                tol_coef: float = 0.1, ewt: Optional[Vector] = None) -> Tuple[Vector, SolveStats]:
    """Fixed-point solve starting from y0 (unit weights if ewt is None); returns a new iterate."""
    y = y0.clone()
    y.copy_from(y0)
    weights = ewt
    if weights is None:
        weights = y0.clone()
        weights.const_fill(1.0)
    try:
        stats = FixedPointSolver(max_iters=max_iters, tol_coef=tol_coef, depth=anderson_depth).solve(g, y, weights)
    finally:
        if ewt is None:
            weights.destroy()
    return y, stats
