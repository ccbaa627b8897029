"""
Adaptive IMEX additive Runge-Kutta integrator for ark_toolkit.

The stepper treats f_E explicitly and f_I implicitly inside shared stages.
Each implicit stage solves z - gamma f_I(t_i, z) = d_i through a pluggable
stage solver; the embedded solution drives a WRMS error test and the step
size controller. All control logic runs on the host, every vector operation
goes through the vector interface.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Union

from .butcher import ButcherPair, get_tableau
from .config import IntegratorOptions
from .errors import (
    HMinReached,
    LinearSolveFailure,
    NonlinearConvergenceFailure,
    RepeatedErrorTestFailures,
    RepeatedFailure,
    SingularBlock,
    ZeroWeightDenominator,
)
from .nvector import Vector
from .solvers import (
    BatchedDirectSolver,
    FixedPointSolver,
    GmresSolver,
    LinearOperator,
    NewtonSolver,
    SolveStats,
)
from .sunmatrix import BlockCsrMatrix
from .utils import CategoryTimer, timed

logger = logging.getLogger(__name__)

RhsFn = Callable[[float, Vector, Vector], None]


def ewt(y: Vector, rtol: float, atol: Union[float, Vector], out: Vector) -> Vector:
    """
    Error weights w_i = 1 / (rtol |y_i| + atol_i), written into ``out``.

    Raises:
        ZeroWeightDenominator: If some denominator is not positive
    """
    out.abs_val(y)
    if isinstance(atol, Vector):
        out.linear_sum(rtol, out, 1.0, atol)
    else:
        out.scale(rtol, out)
        out.add_const(out, float(atol))
    if out.length and out.min_val() <= 0.0:
        raise ZeroWeightDenominator("rtol*|y_i| + atol_i must be positive for every component")
    out.inv(out)
    return out


def adapt_step(error: float, error_prev: Optional[float], h: float, embedded_order: int,
               options: IntegratorOptions, accepted: bool = True) -> float:
    """
    New step size from the current (and previous) error norm.

    Accepted steps: h * clamp(eta_min, safety * error^(-1/(p+1)), eta_max).
    Rejected steps: h * max(eta_min_fail, min(1, safety * error^(-1/(p+1)))).
    With the PI controller and a previous error the factor becomes
    safety * error^(-k1/(p+1)) * error_prev^(k2/(p+1)).

    Raises:
        HMinReached: If the new step falls below options.h_min
    """
    k = embedded_order + 1
    if error <= 0.0:
        factor = options.eta_max
    elif options.controller == "pi" and error_prev is not None and error_prev > 0.0 and accepted:
        factor = options.safety * error ** (-options.pi_k1 / k) * error_prev ** (options.pi_k2 / k)
    else:
        factor = options.safety * error ** (-1.0 / k)
    if accepted:
        factor = min(options.eta_max, max(options.eta_min, factor))
    else:
        factor = max(options.eta_min_fail, min(1.0, factor))
    h_new = h * factor
    if options.h_max > 0.0:
        h_new = min(h_new, options.h_max)
    if h_new < options.h_min:
        raise HMinReached(f"step size {h_new:.3e} below h_min {options.h_min:.3e}")
    return h_new


@dataclass
class RunStats:
    """
    Integrator counters.

    Every call to ``step`` is one attempt, so
    ``attempts == steps + error_test_failures + convergence_failures``:
    a stage-solve failure is retried with a smaller step like a failed error test.
    """
    steps: int = 0
    attempts: int = 0
    error_test_failures: int = 0
    convergence_failures: int = 0
    nonlinear_iterations: int = 0
    fe_evals: int = 0
    fi_evals: int = 0
    linear_setups: int = 0
    linear_solves: int = 0
    linear_iterations: int = 0

    def to_row(self) -> Dict[str, Any]:
        return {
            "steps": self.steps,
            "attempts": self.attempts,
            "error_test_failures": self.error_test_failures,
            "convergence_failures": self.convergence_failures,
            "nonlinear_iterations": self.nonlinear_iterations,
            "fe_evals": self.fe_evals,
            "fi_evals": self.fi_evals,
            "linear_setups": self.linear_setups,
            "linear_solves": self.linear_solves,
            "linear_iterations": self.linear_iterations,
        }


@dataclass
class IntegratorState:
    """Host-side stepper state."""
    t: float
    h: Optional[float] = None
    gamma: float = 0.0
    error_prev: Optional[float] = None
    stats: RunStats = field(default_factory=RunStats)
    step_sizes: List[float] = field(default_factory=list)


class StageSolver(ABC):
    """
    Solver for the implicit stage equation z - gamma f_I(t, z) = d.

    ``solve`` receives the predictor in z and leaves the stage value there.
    """

    def __init__(self):
        self.integrator: Optional["ArkIntegrator"] = None

    def attach(self, integrator: "ArkIntegrator") -> None:
        self.integrator = integrator

    @property
    def timer(self) -> Optional[CategoryTimer]:
        return self.integrator.timer if self.integrator else None

    @property
    def stats(self) -> RunStats:
        return self.integrator.state.stats

    def fi(self, t: float, y: Vector, out: Vector) -> None:
        self.integrator.eval_fi(t, y, out)

    @abstractmethod
    def solve(self, t: float, gamma: float, d: Vector, z: Vector, ewt: Vector) -> SolveStats:
        """Solve one stage equation."""

    def destroy(self) -> None:
        pass


class _NewtonStageSolver(StageSolver):
    """Newton on the stage residual; subclasses provide the linear system."""

    def __init__(self, newton: Optional[NewtonSolver] = None):
        super().__init__()
        self.newton = newton
        self._t = 0.0
        self._gamma = 0.0
        self._d: Optional[Vector] = None
        self._ewt: Optional[Vector] = None

    def attach(self, integrator: "ArkIntegrator") -> None:
        super().attach(integrator)
        if self.newton is None:
            options = integrator.options
            self.newton = NewtonSolver(max_iters=options.max_nonlinear_iters, tol_coef=options.tol_coef)

    def _residual(self, z: Vector, out: Vector) -> None:
        self.fi(self._t, z, out)
        out.linear_sum(1.0, z, -self._gamma, out)
        out.linear_sum(1.0, out, -1.0, self._d)

    def solve(self, t: float, gamma: float, d: Vector, z: Vector, ewt: Vector) -> SolveStats:
        self._t, self._gamma, self._d, self._ewt = t, gamma, d, ewt
        return self.newton.solve(self._residual, self._setup, self._lsolve, z, ewt)

    def _setup(self, z: Vector) -> None:
        with timed(self.timer, "linear solve"):
            self.setup(self._t, z, self._gamma)
        self.stats.linear_setups += 1

    def _lsolve(self, b: Vector, x: Vector) -> None:
        with timed(self.timer, "linear solve"):
            self.linear_solve(b, x)
        self.stats.linear_solves += 1

    @abstractmethod
    def setup(self, t: float, z: Vector, gamma: float) -> None:
        """Prepare M = I - gamma J at z."""

    @abstractmethod
    def linear_solve(self, b: Vector, x: Vector) -> None:
        """Write the solution of M x = b into x."""


PrecSetupFn = Callable[[float, Vector, float], None]
PrecSolveFn = Callable[[Vector, Vector], None]


class NewtonKrylovStageSolver(_NewtonStageSolver):
    """
    Newton with GMRES on difference-quotient products M v = v - gamma J v.

    An optional preconditioner is set up at each linearization point and
    applied from the left.
    """

    def __init__(self, maxl: Optional[int] = None, max_restarts: Optional[int] = None,
                 psetup: Optional[PrecSetupFn] = None, psolve: Optional[PrecSolveFn] = None,
                 newton: Optional[NewtonSolver] = None):
        super().__init__(newton)
        self._maxl = maxl
        self._max_restarts = max_restarts
        self.psetup = psetup
        self.psolve = psolve
        self.gmres: Optional[GmresSolver] = None
        self._zlin: Optional[Vector] = None
        self._fz: Optional[Vector] = None
        self._work: Optional[Vector] = None
        self._ones: Optional[Vector] = None
        self.last_linear_stats: Optional[SolveStats] = None

    def attach(self, integrator: "ArkIntegrator") -> None:
        super().attach(integrator)
        options = integrator.options
        self.gmres = GmresSolver(
            maxl=self._maxl or options.maxl,
            max_restarts=options.max_restarts if self._max_restarts is None else self._max_restarts,
        )
        template = integrator.y
        self._zlin = template.clone()
        self._fz = template.clone()
        self._work = template.clone()
        self._ones = template.clone()
        self._ones.const_fill(1.0)

    def setup(self, t: float, z: Vector, gamma: float) -> None:
        self._zlin.copy_from(z)
        self.fi(t, self._zlin, self._fz)
        if self.psetup is not None:
            self.psetup(t, self._zlin, gamma)

    def _jv(self, v: Vector, out: Vector) -> None:
        """out = v - gamma (f_I(z + sigma v) - f_I(z)) / sigma with sigma = 1 / ||v||_wrms."""
        norm = v.wrms_norm(self._ewt)
        if norm == 0.0:
            out.const_fill(0.0)
            return
        sigma = 1.0 / norm
        work = self._work
        work.linear_sum(1.0, self._zlin, sigma, v)
        self.fi(self._t, work, out)
        out.linear_sum(1.0 / sigma, out, -1.0 / sigma, self._fz)
        out.linear_sum(1.0, v, -self._gamma, out)

    def linear_solve(self, b: Vector, x: Vector) -> None:
        options = self.integrator.options
        # WRMS tolerance expressed in the 2-norm GMRES works with
        weight_rms = self._ewt.wrms_norm(self._ones)
        tol = options.linear_tol_factor * self.newton.tol_coef * math.sqrt(b.length) / weight_rms
        x.const_fill(0.0)
        operator = LinearOperator(apply=self._jv, psolve=self.psolve)
        stats = self.gmres.solve(operator, b, x, tol)
        self.last_linear_stats = stats
        self.stats.linear_iterations += stats.iterations
        if not stats.converged:
            raise LinearSolveFailure(
                f"GMRES {stats.failure} after {stats.iterations} iterations (residual {stats.residual:.3e})",
                recoverable=True,
            )

    def destroy(self) -> None:
        if self.gmres is not None:
            self.gmres.destroy()
        for v in (self._zlin, self._fz, self._work, self._ones):
            if v is not None:
                v.destroy()


JacobianFn = Callable[[float, Vector, BlockCsrMatrix], None]


class BlockDirectStageSolver(_NewtonStageSolver):
    """
    Newton with a batched direct solve of a block-diagonal M = I - gamma J.

    ``jacobian(t, z, J)`` fills the block Jacobian of f_I at z.
    """

    def __init__(self, jacobian: JacobianFn, matrix: BlockCsrMatrix, newton: Optional[NewtonSolver] = None):
        super().__init__(newton)
        self.jacobian = jacobian
        self.matrix = matrix
        self.direct = BatchedDirectSolver()

    def setup(self, t: float, z: Vector, gamma: float) -> None:
        self.jacobian(t, z, self.matrix)
        self.matrix.scale_add_identity(-gamma)
        try:
            self.direct.setup(self.matrix)
        except SingularBlock as e:
            raise LinearSolveFailure(str(e), recoverable=True) from e

    def linear_solve(self, b: Vector, x: Vector) -> None:
        self.direct.solve(b, x)


class FixedPointStageSolver(StageSolver):
    """Stage solve by iterating z <- d + gamma f_I(t, z), optionally Anderson accelerated."""

    def __init__(self, depth: Optional[int] = None, max_iters: Optional[int] = None):
        super().__init__()
        self._depth = depth
        self._max_iters = max_iters
        self.solver: Optional[FixedPointSolver] = None

    def attach(self, integrator: "ArkIntegrator") -> None:
        super().attach(integrator)
        options = integrator.options
        self.solver = FixedPointSolver(
            max_iters=self._max_iters or options.max_nonlinear_iters,
            tol_coef=options.tol_coef,
            depth=options.anderson_depth if self._depth is None else self._depth,
        )

    def solve(self, t: float, gamma: float, d: Vector, z: Vector, ewt: Vector) -> SolveStats:
        def g(y: Vector, out: Vector) -> None:
            self.fi(t, y, out)
            out.linear_sum(gamma, out, 1.0, d)

        return self.solver.solve(g, z, ewt)


class ArkIntegrator:
    """
    Adaptive additive Runge-Kutta stepper.

    Either right-hand side may be None: without f_I the method is explicit
    and the stage solver is never invoked; without f_E it is purely
    diagonally implicit.

    Counters live in ``stats``; attempts count accepted steps, error-test
    failures and nonlinear convergence failures.
    """

    def __init__(
        self,
        y0: Vector,
        t0: float = 0.0,
        fe: Optional[RhsFn] = None,
        fi: Optional[RhsFn] = None,
        rtol: float = 1e-6,
        atol: Union[float, Vector] = 1e-9,
        tableau: Optional[ButcherPair] = None,
        stage_solver: Optional[StageSolver] = None,
        options: Optional[IntegratorOptions] = None,
        timer: Optional[CategoryTimer] = None,
    ):
        """
        Initialize ArkIntegrator.

        Args:
            y0: Initial state (copied)
            t0: Initial time
            fe: Explicit right-hand side ``fe(t, y, out)``
            fi: Implicit right-hand side ``fi(t, y, out)``
            rtol: Relative tolerance
            atol: Absolute tolerance, scalar or vector
            tableau: Butcher pair (options.tableau if None)
            stage_solver: Implicit stage solver (Newton-GMRES if None)
            options: Controller and solver settings
            timer: Optional category timer

        Raises:
            InvalidTableau: If the tableau is malformed
        """
        self.options = options or IntegratorOptions()
        self.tableau = tableau or get_tableau(self.options.tableau)
        self.tableau.validate()
        if y0.length and not math.isfinite(y0.max_norm()):
            raise ValueError("initial state has non-finite entries")

        self.fe = fe
        self.fi = fi
        self.rtol = rtol
        self.atol = atol
        self.timer = timer
        self.state = IntegratorState(t=t0)

        s = self.tableau.stages
        self.y = y0.clone()
        self.y.copy_from(y0)
        self._ynew = y0.clone()
        self._err = y0.clone()
        self._ewt = y0.clone()
        self._d = y0.clone()
        self._z = y0.clone()
        self._fe = [y0.clone() for _ in range(s)] if fe is not None else []
        self._fi = [y0.clone() for _ in range(s)] if fi is not None else []

        self.stage_solver = None
        if fi is not None:
            self.stage_solver = stage_solver or NewtonKrylovStageSolver()
            self.stage_solver.attach(self)

    @property
    def t(self) -> float:
        return self.state.t

    @property
    def stats(self) -> RunStats:
        return self.state.stats

    def eval_fe(self, t: float, y: Vector, out: Vector) -> None:
        self.state.stats.fe_evals += 1
        self.fe(t, y, out)

    def eval_fi(self, t: float, y: Vector, out: Vector) -> None:
        self.state.stats.fi_evals += 1
        self.fi(t, y, out)

    def compute_ewt(self, y: Vector) -> Vector:
        return ewt(y, self.rtol, self.atol, self._ewt)

    def initial_step(self, t_out: float) -> float:
        """h0 = min(1e-3 |t_out - t0|, 0.5 / ||f(t0, y0)||_wrms)."""
        span = abs(t_out - self.state.t)
        h0 = 1e-3 * span
        weights = self.compute_ewt(self.y)
        f = self._ynew
        f.const_fill(0.0)
        if self.fe is not None:
            self.eval_fe(self.state.t, self.y, self._err)
            f.linear_sum(1.0, f, 1.0, self._err)
        if self.fi is not None:
            self.eval_fi(self.state.t, self.y, self._err)
            f.linear_sum(1.0, f, 1.0, self._err)
        norm = f.wrms_norm(weights) if f.length else 0.0
        if norm > 0.0:
            h0 = min(h0, 0.5 / norm)
        if self.options.h_max > 0.0:
            h0 = min(h0, self.options.h_max)
        h0 = max(h0, self.options.h_min)
        logger.debug(f"Initial step {h0:.3e} (||f||_wrms = {norm:.3e})")
        return h0

    def attempt_step(self, h: float) -> float:
        """
        Compute one step of size h from (t, y) into the internal candidate.

        Returns:
            Error estimate ||y_new - y_hat||_wrms

        Raises:
            NonlinearConvergenceFailure: If a stage solve failed recoverably
        """
        tab = self.tableau
        tn = self.state.t
        weights = self.compute_ewt(self.y)
        d, z = self._d, self._z
        for i in range(tab.stages):
            d.copy_from(self.y)
            for j in range(i):
                if self.fe is not None and tab.explicit[i, j] != 0.0:
                    d.linear_sum(1.0, d, h * tab.explicit[i, j], self._fe[j])
                if self.fi is not None and tab.implicit[i, j] != 0.0:
                    d.linear_sum(1.0, d, h * tab.implicit[i, j], self._fi[j])

            if self.fi is not None and tab.implicit[i, i] != 0.0:
                gamma = h * tab.implicit[i, i]
                self.state.gamma = gamma
                z.copy_from(self.y)
                stats = self.stage_solver.solve(tn + tab.c_implicit[i] * h, gamma, d, z, weights)
                self.state.stats.nonlinear_iterations += stats.iterations
                if not stats.converged:
                    if stats.recoverable:
                        raise NonlinearConvergenceFailure(
                            f"stage {i} solve failed ({stats.failure}) at t={tn:.6e}, h={h:.3e}"
                        )
                    stats.raise_for_failure()
                stage = z
            else:
                stage = d

            if self.fe is not None:
                self.eval_fe(tn + tab.c_explicit[i] * h, stage, self._fe[i])
            if self.fi is not None:
                self.eval_fi(tn + tab.c_implicit[i] * h, stage, self._fi[i])

        ynew, err = self._ynew, self._err
        ynew.copy_from(self.y)
        err.const_fill(0.0)
        for i in range(tab.stages):
            weight = h * tab.b[i]
            difference = h * (tab.b[i] - tab.bhat[i])
            for forcing in (self._fe, self._fi):
                if forcing:
                    ynew.linear_sum(1.0, ynew, weight, forcing[i])
                    if difference != 0.0:
                        err.linear_sum(1.0, err, difference, forcing[i])
        return err.wrms_norm(weights) if err.length else 0.0

    def step(self, h: float) -> bool:
        """
        Attempt one step of size h and accept or reject it.

        Returns:
            True if accepted (t and y advanced); the next step size is in state.h

        Raises:
            NonlinearConvergenceFailure: Recoverable stage failure (state.h already reduced)
        """
        state = self.state
        state.stats.attempts += 1
        try:
            error = self.attempt_step(h)
        except NonlinearConvergenceFailure:
            state.stats.convergence_failures += 1
            state.h = h * self.options.eta_conv_fail
            if state.h < self.options.h_min:
                raise HMinReached(f"step size {state.h:.3e} below h_min after convergence failure")
            raise

        fixed = self.options.fixed_step is not None
        if error <= 1.0 or fixed:
            self.y.copy_from(self._ynew)
            state.t = state.t + h
            state.stats.steps += 1
            state.step_sizes.append(h)
            if not fixed:
                state.h = adapt_step(error, state.error_prev, h, self.tableau.embedded_order, self.options)
            state.error_prev = max(error, 1e-10)
            logger.debug(f"Accepted step t={state.t:.6e} h={h:.3e} err={error:.3e}")
            return True

        state.stats.error_test_failures += 1
        state.h = adapt_step(error, state.error_prev, h, self.tableau.embedded_order, self.options, accepted=False)
        logger.debug(f"Rejected step t={state.t:.6e} h={h:.3e} err={error:.3e}")
        return False

    def evolve(self, t_out: float) -> Vector:
        """
        Advance to exactly t_out.

        Returns:
            The integrator's solution vector (owned by the integrator)

        Raises:
            RepeatedErrorTestFailures: More than max_error_test_failures consecutive rejections
            RepeatedFailure: Too many consecutive nonlinear convergence failures
            HMinReached: Step size below h_min
        """
        state = self.state
        if t_out == state.t:
            return self.y
        if t_out < state.t:
            raise ValueError(f"t_out={t_out} is before the current time {state.t}")

        options = self.options
        if options.fixed_step is not None:
            state.h = options.fixed_step
        elif state.h is None:
            state.h = self.initial_step(t_out)

        error_failures = 0
        conv_failures = 0
        steps_taken = 0
        while state.t < t_out:
            h = state.h
            remaining = t_out - state.t
            landing = h >= remaining or remaining - h <= 1e-12 * max(1.0, abs(t_out))
            if landing:
                h = remaining
            if state.t + h == state.t:
                raise HMinReached(f"step size {h:.3e} does not advance t={state.t:.6e}")

            try:
                accepted = self.step(h)
            except NonlinearConvergenceFailure as e:
                conv_failures += 1
                logger.warning(f"Nonlinear convergence failure, reducing step to {state.h:.3e}: {e}")
                if conv_failures >= options.max_conv_failures or options.fixed_step is not None:
                    raise RepeatedFailure(
                        f"{conv_failures} consecutive nonlinear convergence failures at t={state.t:.6e}"
                    ) from e
                continue

            if not accepted:
                error_failures += 1
                if error_failures > options.max_error_test_failures:
                    raise RepeatedErrorTestFailures(
                        f"{error_failures} consecutive error test failures at t={state.t:.6e}"
                    )
                if error_failures >= 3:
                    logger.warning(f"{error_failures} consecutive error test failures at t={state.t:.6e}")
                continue

            error_failures = 0
            conv_failures = 0
            steps_taken += 1
            if landing:
                state.t = t_out
            if steps_taken >= options.max_steps and state.t < t_out:
                raise RepeatedFailure(f"more than {options.max_steps} steps needed to reach t={t_out}")
            if options.fixed_step is not None:
                state.h = options.fixed_step
        return self.y

    def destroy(self) -> None:
        if self.stage_solver is not None:
            self.stage_solver.destroy()
        for v in (self.y, self._ynew, self._err, self._ewt, self._d, self._z, *self._fe, *self._fi):
            v.destroy()
