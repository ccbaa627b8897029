import numpy as np
import pytest

from ark_toolkit.brusselator import (
    BrusselatorProblem,
    TaskLocalNewtonSolver,
    initial_condition,
    integrate_group,
    reaction_jacobian_blocks,
    reaction_terms,
    run,
    run_batch,
    run_batch_async,
    solve3x3,
)
from ark_toolkit.config import IntegratorOptions, ProblemConfig, Tolerances
from ark_toolkit.distvec import Communicator
from ark_toolkit.errors import ConfigError, RepeatedFailure, SingularBlock
from ark_toolkit.integrator import ArkIntegrator, BlockDirectStageSolver
from ark_toolkit.memory import MemoryArbiter
from ark_toolkit.nvector import from_array
from ark_toolkit.solvers import NewtonSolver
from ark_toolkit.sunmatrix import BlockCsrMatrix
from ark_toolkit.utils import CATEGORIES


def small_config(**overrides):
    values = {"nx": 16, "tf": 0.05}
    values.update(overrides)
    return ProblemConfig(**values)


class TestReactionKernels:
    """Test suite for the pointwise reaction model."""

    def test_initial_condition_peak(self):
        """The bump sits on the steady state and peaks at the domain center."""
        u, v, w = initial_condition(ProblemConfig(), [0.5])
        assert u[0] == pytest.approx(1.1)
        assert v[0] == pytest.approx(3.6)
        assert w[0] == pytest.approx(3.1)

    def test_custom_bump(self):
        """Center and width follow mu and sigma."""
        config = ProblemConfig(mu=0.2, sigma=0.1, alpha=1.0)
        u, _, _ = initial_condition(config, [0.2, 0.3])
        assert u[0] == pytest.approx(2.0)
        assert u[1] == pytest.approx(1.0 + np.exp(-0.5))

    def test_steady_state_of_first_two_species(self):
        """u = A and v = B/A balance the first two reactions for any w = B."""
        config = ProblemConfig(A=0.6, B=2.0)
        cells = np.array([[0.6, 2.0 / 0.6, 2.0]])
        forcing = reaction_terms(config, cells)
        assert forcing[0, 0] == pytest.approx(0.0, abs=1e-14)
        assert forcing[0, 1] == pytest.approx(0.0, abs=1e-14)

    def test_jacobian_matches_finite_differences(self):
        """Analytic Jacobian blocks agree with central differences."""
        config = ProblemConfig(epsilon=1e-2)
        rng = np.random.default_rng(31)
        cells = rng.uniform(0.5, 3.0, size=(100, 3))
        jac = reaction_jacobian_blocks(config, cells)
        step = 1e-6
        for k in range(3):
            shift = np.zeros(3)
            shift[k] = step
            column = (reaction_terms(config, cells + shift) - reaction_terms(config, cells - shift)) / (2 * step)
            np.testing.assert_allclose(jac[:, :, k], column, rtol=1e-6, atol=1e-6)

    def test_solve3x3_batched(self):
        """Batched Gauss-Jordan agrees with numpy on a thousand systems."""
        rng = np.random.default_rng(32)
        matrices = rng.standard_normal((1000, 3, 3)) + 3.0 * np.eye(3)
        rhs = rng.standard_normal((1000, 3))
        solution = solve3x3(matrices, rhs)
        expected = np.linalg.solve(matrices, rhs[:, :, np.newaxis])[:, :, 0]
        np.testing.assert_allclose(np.einsum("gij,gj->gi", matrices, solution), rhs, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(solution, expected, rtol=1e-8, atol=1e-10)

    def test_solve3x3_single_needs_pivoting(self):
        """A single system with a zero leading entry."""
        matrix = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
        np.testing.assert_allclose(solve3x3(matrix, [1.0, 2.0, 4.0]), [2.0, 1.0, 2.0])

    def test_solve3x3_singular(self):
        """The first singular system is named."""
        matrices = np.tile(np.eye(3), (5, 1, 1))
        matrices[3, 2, 2] = 0.0
        with pytest.raises(SingularBlock) as excinfo:
            solve3x3(matrices, np.ones((5, 3)))
        assert excinfo.value.block == 3


class TestBrusselatorProblem:
    """Test suite for the right-hand sides and linear algebra on one rank's cells."""

    def test_upwind_advection_is_periodic(self):
        """The first cell's upwind neighbor is the last cell."""
        config = small_config(nx=8)
        problem = BrusselatorProblem(config)
        values = np.random.default_rng(33).uniform(size=24)
        y = from_array("serial", values, arbiter=MemoryArbiter())
        out = y.clone()
        problem.advection_rhs(0.0, y, out)
        cells = values.reshape(-1, 3)
        expected = -config.advection_speed / config.dx * (cells - np.roll(cells, 1, axis=0))
        np.testing.assert_allclose(out.to_numpy().reshape(-1, 3), expected, rtol=1e-15)

    def test_advection_split_over_ranks(self):
        """Advection over two ranks reproduces the single-rank result."""
        config = small_config(nx=8, ranks=2)
        values = np.random.default_rng(34).uniform(size=24)
        single = BrusselatorProblem(small_config(nx=8))
        y = from_array("serial", values, arbiter=MemoryArbiter())
        expected = y.clone()
        single.advection_rhs(0.0, y, expected)

        comm = Communicator(2)

        def body(rank):
            problem = BrusselatorProblem(config, comm, rank)
            part = from_array("serial", values[12 * rank:12 * (rank + 1)], arbiter=MemoryArbiter())
            out = part.clone()
            problem.advection_rhs(0.0, part, out)
            return out.to_numpy()

        np.testing.assert_array_equal(np.concatenate(comm.run_ranks(body)), expected.to_numpy())
        assert comm.message_count == 2

    def test_flat_initial_state_has_no_advection(self):
        """Without a bump the state is (A, B/A, 3) everywhere and upwind advection is exactly zero."""
        config = small_config(nx=8, ranks=1, alpha=0.0)
        problem = BrusselatorProblem(config)
        state = problem.initial_state()
        np.testing.assert_array_equal(state.reshape(-1, 3), np.tile([1.0, 3.5, 3.0], (8, 1)))

        y = from_array("serial", state, arbiter=MemoryArbiter())
        out = y.clone()
        out.const_fill(1.0)
        problem.advection_rhs(0.0, y, out)
        np.testing.assert_array_equal(out.to_numpy(), np.zeros(24))

    def test_flat_state_is_kept_by_advection_only_run(self):
        """An advection-only run from a flat state returns that state unchanged."""
        config = small_config(alpha=0.0, reactions=False, ranks=2)
        report = run(config)
        np.testing.assert_array_equal(report.cells(), np.tile([1.0, 3.5, 3.0], (16, 1)))

    def test_cell_coordinates(self):
        """Each rank owns a contiguous slice of the mesh."""
        config = small_config(nx=8, ranks=2)
        problem = BrusselatorProblem(config, Communicator(2), rank=1)
        np.testing.assert_allclose(problem.cell_coordinates(), np.arange(4, 8) / 8.0)
        assert problem.initial_state().shape == (12,)

    def test_reaction_jacobian_matrix(self):
        """reaction_jacobian returns the blocks I - gamma J."""
        config = small_config(nx=4)
        problem = BrusselatorProblem(config)
        y = from_array("serial", problem.initial_state(), arbiter=MemoryArbiter())
        matrix = problem.reaction_jacobian(0.0, y, 0.01, BlockCsrMatrix.full_pattern(4, 3, arbiter=y.arbiter))
        expected = np.eye(3) - 0.01 * reaction_jacobian_blocks(config, problem.initial_state().reshape(-1, 3))
        np.testing.assert_allclose(matrix.dense_blocks(), expected, rtol=1e-15)

    def test_preconditioner_inverts_blocks(self):
        """The block preconditioner solves (I - gamma J_i) x_i = r_i."""
        config = small_config(nx=4)
        problem = BrusselatorProblem(config)
        state = problem.initial_state()
        arbiter = MemoryArbiter()
        z = from_array("serial", state, arbiter=arbiter)
        r = from_array("serial", np.arange(12.0), arbiter=arbiter)
        out = r.clone()
        problem.preconditioner_setup(0.0, z, 1e-3)
        problem.preconditioner_solve(r, out)
        blocks = np.eye(3) - 1e-3 * reaction_jacobian_blocks(config, state.reshape(-1, 3))
        product = np.einsum("gij,gj->gi", blocks, out.to_numpy().reshape(-1, 3))
        np.testing.assert_allclose(product.reshape(-1), np.arange(12.0), rtol=1e-10, atol=1e-10)


class TestTaskLocalNewton:
    """Test suite for the per-cell Newton stage solver."""

    def test_matches_library_newton_with_direct_solves(self):
        """On one cell it tracks full Newton with a batched direct solve."""
        config = ProblemConfig(nx=1, tf=0.02)
        options = IntegratorOptions()

        def integrate(make_solver):
            problem = BrusselatorProblem(config)
            arbiter = MemoryArbiter()
            y0 = from_array("serial", problem.initial_state(), arbiter=arbiter)
            integrator = ArkIntegrator(y0, fi=problem.reaction_rhs, rtol=1e-6, atol=1e-9,
                                       stage_solver=make_solver(problem, arbiter), options=options)
            return integrator.evolve(config.tf).to_numpy(), integrator.stats

        task_local, task_stats = integrate(lambda problem, arbiter: TaskLocalNewtonSolver(problem))
        library, library_stats = integrate(lambda problem, arbiter: BlockDirectStageSolver(
            problem.fill_jacobian,
            BlockCsrMatrix.full_pattern(1, 3, arbiter=arbiter),
            NewtonSolver(max_iters=options.max_nonlinear_iters, tol_coef=options.tol_coef,
                         jacobian_refresh="per_iteration"),
        ))
        np.testing.assert_allclose(task_local, library, rtol=1e-9)
        assert task_stats.steps == library_stats.steps
        assert task_stats.nonlinear_iterations == library_stats.nonlinear_iterations

    def test_one_allreduce_per_stage_solve(self):
        """Success is agreed with a single collective per stage solve."""
        config = small_config(nx=4)
        comm = Communicator(1)
        problem = BrusselatorProblem(config, comm)
        arbiter = MemoryArbiter()
        y0 = from_array("serial", problem.initial_state(), arbiter=arbiter)
        solver = TaskLocalNewtonSolver(problem)
        integrator = ArkIntegrator(y0, fi=problem.reaction_rhs, stage_solver=solver)
        before = comm.allreduce_count
        d = y0.clone()
        d.copy_from(y0)
        z = y0.clone()
        z.copy_from(y0)
        weights = integrator.compute_ewt(y0)
        stats = solver.solve(0.0, 1e-4, d, z, weights)
        assert stats.converged
        assert comm.allreduce_count - before == 1
        assert len(solver.update_norms) == stats.iterations

    def test_failure_is_recoverable(self):
        """A budget of one iteration on a hard stage fails recoverably."""
        config = small_config(nx=4)
        problem = BrusselatorProblem(config)
        y0 = from_array("serial", problem.initial_state(), arbiter=MemoryArbiter())
        solver = TaskLocalNewtonSolver(problem, max_iters=1, tol_coef=1e-12)
        integrator = ArkIntegrator(y0, fi=problem.reaction_rhs, stage_solver=solver)
        z = y0.clone()
        z.copy_from(y0)
        stats = solver.solve(0.0, 1.0, y0, z, integrator.compute_ewt(y0))
        assert not stats.converged
        assert stats.failure == "max_iterations"
        assert stats.recoverable


class TestRun:
    """Test suite for full advection-reaction runs."""

    def test_report_layout(self):
        """Reports carry one row per timing category and the solution."""
        report = run(small_config())
        assert report.mode == "run"
        assert report.solution.shape == (48,)
        rows = report.to_rows()
        assert [row["category"] for row in rows] == list(CATEGORIES)
        assert all(row["checksum"] == report.checksum for row in rows)
        assert len(report.solution_rows()) == 16
        assert report.category_seconds["reaction"] > 0.0
        assert report.category_seconds["advection"] > 0.0
        stats = report.stats
        assert stats.attempts == stats.steps + stats.error_test_failures + stats.convergence_failures
        assert sum(report.step_sizes) == pytest.approx(0.05, rel=1e-12)

    def test_deterministic(self):
        """Identical configurations give identical checksums."""
        assert run(small_config()).checksum == run(small_config()).checksum

    def test_ranks_agree(self):
        """Splitting the mesh over ranks changes the result only within tolerance."""
        one = run(small_config(ranks=1))
        two = run(small_config(ranks=2))
        four = run(small_config(ranks=4))
        np.testing.assert_allclose(two.solution, one.solution, rtol=1e-5)
        np.testing.assert_allclose(four.solution, one.solution, rtol=1e-5)

    def test_global_newton_gmres_agrees(self):
        """Newton-GMRES with the block preconditioner agrees with the task-local solver."""
        task_local = run(small_config(solver="task-local"))
        global_solver = run(small_config(solver="global", ranks=2))
        np.testing.assert_allclose(global_solver.solution, task_local.solution, rtol=1e-4)
        assert global_solver.stats.linear_iterations > 0

    def test_single_rank_matches_node_local_integration(self):
        """One rank wrapped as a distributed vector takes exactly the node-local steps."""
        config = small_config()
        report = run(config)

        problem = BrusselatorProblem(config)
        y0 = from_array("serial", problem.initial_state(), arbiter=MemoryArbiter())
        integrator = ArkIntegrator(y0, fe=problem.advection_rhs, fi=problem.reaction_rhs,
                                   rtol=config.tolerances.rtol, atol=config.tolerances.atol,
                                   stage_solver=TaskLocalNewtonSolver(problem), options=IntegratorOptions())
        y = integrator.evolve(config.tf)

        assert report.step_sizes == list(integrator.state.step_sizes)
        np.testing.assert_array_equal(report.solution, y.to_numpy())

    def test_full_mesh_solvers_agree(self):
        """On the full 256-cell mesh to t = 1 both solver configurations agree within 100 rtol."""
        config = ProblemConfig(nx=256, tf=1.0)
        task_local = run(config.model_copy(update={"solver": "task-local"}))
        global_solver = run(config.model_copy(update={"solver": "global"}))
        rtol = config.tolerances.rtol
        np.testing.assert_allclose(global_solver.solution, task_local.solution, rtol=100 * rtol)

    @pytest.mark.parametrize("backend", ["pooled", "devsim"])
    def test_backends_agree(self, backend):
        """Parallel backends reproduce the serial result."""
        serial = run(small_config())
        other = run(small_config(backend=backend, workers=2))
        np.testing.assert_allclose(other.solution, serial.solution, rtol=1e-8)

    def test_devsim_transfers(self):
        """A device run copies each rank's state once in each direction."""
        report = run(small_config(backend="devsim", ranks=2, workers=2))
        assert report.transfers.host_device_array_copies() == 4
        assert report.transfers.scalar_transfer_count == report.transfers.reduction_count > 0

    def test_unified_memory_has_no_array_copies(self):
        """Unified storage needs no explicit array copies."""
        report = run(small_config(backend="devsim", unified=True, workers=2))
        assert report.transfers.host_device_array_copies() == 0

    def test_advection_only_conserves_mass(self):
        """Upwind advection on a periodic mesh conserves every species' total."""
        config = small_config(reactions=False, tf=1.0)
        report = run(config)
        initial = BrusselatorProblem(config).initial_state().reshape(-1, 3)
        np.testing.assert_allclose(report.cells().sum(axis=0), initial.sum(axis=0), rtol=1e-12)
        assert report.stats.fi_evals == 0

    def test_per_component_atol_rejected(self):
        """Distinct per-component tolerances are a configuration error."""
        config = small_config(tolerances=Tolerances(atol=[1e-9, 1e-8]))
        with pytest.raises(ConfigError):
            run(config)

    def test_failure_propagates(self):
        """Integrator failures surface from the run."""
        with pytest.raises(RepeatedFailure):
            run(small_config(), IntegratorOptions(max_steps=1))


class TestBatchRun:
    """Test suite for independent reaction-only cell groups."""

    def test_group_matches_reaction_only_run(self):
        """Integrating cells in groups agrees with the reaction-only full run."""
        config = small_config(nx=8, advection=False)
        full = run(config)
        batched = run_batch(config.model_copy(update={"batch": 3, "instances": 2}))
        assert batched.mode == "batch"
        assert batched.solver == "block-direct"
        np.testing.assert_allclose(batched.solution, full.solution, rtol=1e-4)

    def test_grouping_does_not_change_cells(self):
        """Group size and concurrency only change the schedule."""
        config = small_config(nx=6)
        together = run_batch(config.model_copy(update={"batch": 6}))
        apart = run_batch(config.model_copy(update={"batch": 1, "instances": 3}))
        np.testing.assert_allclose(apart.solution, together.solution, rtol=1e-4)
        assert apart.stats.steps >= together.stats.steps

    def test_groups_of_one_match_standalone_cells(self):
        """With one cell per group every cell is bit-identical to integrating it alone."""
        config = small_config(nx=4, advection=False)
        batched = run_batch(config.model_copy(update={"batch": 1, "instances": 2}))

        for j, x in enumerate(np.arange(config.nx) * config.dx):
            arbiter = MemoryArbiter()
            problem = BrusselatorProblem(config.model_copy(update={"nx": 1}))
            u, v, w = initial_condition(config, [x])
            y0 = from_array("serial", np.array([u[0], v[0], w[0]]), arbiter=arbiter)
            solver = BlockDirectStageSolver(problem.fill_jacobian, BlockCsrMatrix.full_pattern(1, 3, arbiter=arbiter))
            integrator = ArkIntegrator(y0, fi=problem.reaction_rhs, rtol=config.tolerances.rtol,
                                       atol=config.tolerances.atol, stage_solver=solver,
                                       options=IntegratorOptions())
            np.testing.assert_array_equal(batched.cells()[j], integrator.evolve(config.tf).to_numpy())

    def test_integrate_group(self):
        """A single group returns one row per cell."""
        config = small_config(nx=4)
        result = integrate_group(config, IntegratorOptions(), np.array([0.25, 0.5]), MemoryArbiter())
        assert result.cells.shape == (2, 3)
        assert result.stats.linear_setups > 0

    @pytest.mark.asyncio
    async def test_async_entry_point(self):
        """The coroutine form can be awaited directly."""
        report = await run_batch_async(small_config(nx=4, batch=2, instances=2))
        assert report.solution.shape == (12,)
        assert report.stats.steps > 0
