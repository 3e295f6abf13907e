import numpy as np
import pytest

from app.internal.exceptions import (
    DimensionError,
    DivergenceError,
    DomainError,
    NotApplicableError,
)
from app.services.fields import Ball, Grid2D, ScalarField2D
from app.services.problems import get_problem
from app.services.viscous import (
    ViscousRunConfig,
    coons_interpolant,
    continuation_study,
    lipschitz_bound_check,
    lipschitz_family,
    residual_field,
    sharp_lipschitz_ratio,
    solve_viscous,
)

SCHEDULE = [0.5, 0.25, 0.125]


@pytest.fixture(scope="module")
def sharp_problem_33():
    problem = get_problem("sharp-w")
    grid = problem.grid(33)
    return problem.f_field(grid), problem.g_field(grid)


@pytest.fixture(scope="module")
def sharp_solution_33(sharp_problem_33):
    f, g = sharp_problem_33
    return solve_viscous(
        f, g, ViscousRunConfig(eps_schedule=SCHEDULE, residual_tol=1e-5)
    )


@pytest.fixture
def unit_load_17():
    """f = 1 and zero boundary data on 17 x 17 nodes."""
    grid = Grid2D.square(17)
    return ScalarField2D.constant(grid, 1.0), ScalarField2D.constant(
        grid, 0.0
    )


class TestViscousRunConfig:
    """Run parameters and eps schedules."""

    def test_geometric_schedule(self):
        """Test halving from 1/2 down to the stop value."""
        schedule = ViscousRunConfig.geometric_schedule(0.5, 1e-3)
        assert schedule[0] == 0.5
        assert schedule[-1] == 1e-3
        assert len(schedule) == 10
        assert all(b < a for a, b in zip(schedule, schedule[1:]))

    def test_schedule_stop_equals_start(self):
        """Test a single-stage schedule."""
        assert ViscousRunConfig.geometric_schedule(0.1, 0.1) == [0.1]

    def test_repeated_eps_rejected(self):
        """Test that a stage may not repeat the previous eps."""
        with pytest.raises(DomainError, match="strictly decreasing"):
            ViscousRunConfig(eps_schedule=[0.5, 0.5, 0.25])

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"eps_schedule": []},
            {"eps_schedule": [0.25, 0.5]},
            {"eps_schedule": [0.5, 0.0]},
            {"eps_schedule": [float("nan")]},
            {"eps_schedule": [0.5], "dt_safety": 1.5},
            {"eps_schedule": [0.5], "mollify_eps": -0.1},
            {"eps_schedule": [0.5], "max_iters": 0},
            {"eps_schedule": [0.5], "residual_tol": 0.0},
            {"eps_schedule": [0.5], "stepping": "newton"},
        ],
    )
    def test_invalid(self, kwargs):
        """Test that malformed run parameters are rejected."""
        with pytest.raises(DomainError):
            ViscousRunConfig(**kwargs)


class TestCoonsInterpolant:
    """Initial guess from boundary data."""

    def test_bilinear_is_reproduced(self):
        """Test that a bilinear function is recovered everywhere."""
        grid = Grid2D.square(9)
        X, Y = grid.mesh()
        g = 1.0 + X + 2.0 * Y + 3.0 * X * Y
        assert np.allclose(coons_interpolant(g), g)

    def test_boundary_copied(self, rng):
        """Test that boundary nodes keep the data."""
        g = rng.standard_normal((7, 9))
        u = coons_interpolant(g)
        assert np.array_equal(u[0, :], g[0, :])
        assert np.array_equal(u[:, -1], g[:, -1])


class TestResidualField:
    """Δ∞u + εΔu + f."""

    def test_vanishes_on_linear_function(self, grid_65):
        """Test that affine functions solve the homogeneous equation."""
        u = ScalarField2D.from_function(grid_65, lambda X, Y: 2.0 * X - Y)
        f = ScalarField2D.constant(grid_65, 0.0)
        residual = residual_field(u, f, eps=0.3)
        assert np.max(np.abs(residual.values)) < 1e-10
        assert not residual.valid[0, 0]

    def test_vanishes_on_exact_quadratic(self, grid_65):
        """
        Test a quadratic with its own right-hand side; the flux errors of
        the two axes cancel because ``u_xx = -u_yy``.
        """
        u = ScalarField2D.from_function(
            grid_65, lambda X, Y: X**2 + 3.0 * X * Y - Y**2
        )
        X, Y = grid_65.mesh()
        gx, gy = 2 * X + 3 * Y, 3 * X - 2 * Y
        f = ScalarField2D(
            grid_65, -(2.0 * gx**2 + 6.0 * gx * gy - 2.0 * gy**2)
        )
        residual = residual_field(u, f, eps=0.3)
        assert np.max(np.abs(residual.values)) < 1e-8

    def test_axis_quadratic_has_second_order_error(self):
        """Test that u = x² is consistent with error h² (2³)/12."""
        errors = []
        for n in (33, 65):
            grid = Grid2D.square(n)
            u = ScalarField2D.from_function(grid, lambda X, Y: X**2)
            X, _ = grid.mesh()
            f = ScalarField2D(grid, -(2.0 * X) ** 2 * 2.0)
            residual = residual_field(u, f, eps=0.0)
            errors.append(np.max(np.abs(residual.values)))
            assert errors[-1] == pytest.approx(grid.hx**2 * 8.0 / 12.0)
        assert errors[1] == pytest.approx(errors[0] / 4.0)

    def test_kink_costs_bounded_residual(self):
        """Test that the ridge of -|x| gives -2/(3h), not a blow-up."""
        grid = Grid2D.square(33)
        u = ScalarField2D.from_function(grid, lambda X, Y: -np.abs(X))
        f = ScalarField2D.constant(grid, 0.0)
        residual = residual_field(u, f, eps=0.0)
        ridge = grid.shape[0] // 2
        assert residual.values[ridge, 1:-1] == pytest.approx(
            -2.0 / (3.0 * grid.hx)
        )
        off_ridge = np.delete(residual.values[1:-1, 1:-1], ridge - 1, 0)
        assert np.max(np.abs(off_ridge)) < 1e-10

    def test_grid_mismatch(self, grid_65):
        """Test that u and f must share a grid."""
        with pytest.raises(DimensionError):
            residual_field(
                ScalarField2D.constant(grid_65, 0.0),
                ScalarField2D.constant(Grid2D.square(33), 1.0),
                0.1,
            )


class TestSolveViscous:
    """Pseudo-time relaxation with eps continuation."""

    @pytest.mark.slow
    def test_converges_on_sharp_example(self, sharp_solution_33):
        """Test that every stage reaches the residual tolerance."""
        solution = sharp_solution_33
        assert solution.converged
        assert solution.residual_max <= 1e-5
        assert solution.eps_final == 0.125
        assert len(solution.stages) == 3
        assert solution.stages_frame().height == 3

    @pytest.mark.slow
    def test_boundary_data_kept(self, sharp_solution_33, sharp_problem_33):
        """Test that the Dirichlet data is never relaxed."""
        _, g = sharp_problem_33
        boundary = g.grid.boundary_mask()
        assert np.array_equal(
            sharp_solution_33.u_eps.values[boundary], g.values[boundary]
        )

    @pytest.mark.slow
    def test_warm_start_needs_no_sweeps(
        self, sharp_solution_33, sharp_problem_33
    ):
        """Test that a converged init stays put."""
        f, g = sharp_problem_33
        again = solve_viscous(
            f,
            g,
            ViscousRunConfig(eps_schedule=[0.125], residual_tol=1e-5),
            init=sharp_solution_33.u_eps,
        )
        assert again.iters_used == [0]

    def test_negative_f_flips_solution(self):
        """Test that -f and -g give -u."""
        grid = Grid2D.square(9)
        f = ScalarField2D.constant(grid, 1.0)
        g = ScalarField2D.constant(grid, 0.0)
        config = ViscousRunConfig(eps_schedule=[0.5], residual_tol=1e-8)
        positive = solve_viscous(f, g, config)
        negative = solve_viscous(f.with_values(-f.values), g, config)
        assert np.allclose(negative.u_eps.values, -positive.u_eps.values)
        assert positive.u_eps.values[4, 4] > 0

    def test_square_symmetries_preserved(self, unit_load_17):
        """Test mirror and diagonal symmetry for symmetric data."""
        f, g = unit_load_17
        u = solve_viscous(
            f,
            g,
            ViscousRunConfig(eps_schedule=[0.5, 0.25], residual_tol=1e-8),
        ).u_eps.values
        assert np.max(np.abs(u - u[::-1, :])) <= 1e-13
        assert np.max(np.abs(u - u[:, ::-1])) <= 1e-13
        assert np.max(np.abs(u - u.T)) <= 1e-13

    def test_constant_shift(self, unit_load_17):
        """Test that g + 1 shifts the solution by exactly 1."""
        f, g = unit_load_17
        config = ViscousRunConfig(
            eps_schedule=[0.5, 0.25],
            residual_tol=1e-12,
            stepping="implicit",
        )
        base = solve_viscous(f, g, config)
        shifted = solve_viscous(f, g.with_values(g.values + 1.0), config)
        assert shifted.converged and base.converged
        assert np.max(
            np.abs(shifted.u_eps.values - 1.0 - base.u_eps.values)
        ) <= 1e-10

    def test_initial_guess_does_not_matter(self):
        """Test zero and Coons starts against ten times the tolerance."""
        problem = get_problem("sharp-w")
        grid = problem.grid(17)
        f, g = problem.f_field(grid), problem.g_field(grid)
        tol = 1e-6
        config = ViscousRunConfig(eps_schedule=[0.25], residual_tol=tol)
        coons = solve_viscous(f, g, config)
        zero = solve_viscous(
            f, g, config, init=ScalarField2D.constant(grid, 0.0)
        )
        assert coons.converged and zero.converged
        assert np.max(
            np.abs(coons.u_eps.values - zero.u_eps.values)
        ) <= 10 * tol

    def test_unstable_relaxation_raises(self, unit_load_17):
        """Test that a blowing-up iteration stops with diagnostics."""
        f, g = unit_load_17
        i, j = np.indices(f.grid.shape)
        checkerboard = np.where((i + j) % 2 == 0, 1.0, -1.0)
        with pytest.raises(DivergenceError) as excinfo:
            solve_viscous(
                f,
                g,
                ViscousRunConfig(eps_schedule=[0.5], dt_safety=1.0),
                init=ScalarField2D(f.grid, checkerboard),
            )
        diagnostics = excinfo.value.diagnostics
        assert diagnostics["eps"] == 0.5
        assert diagnostics["sweep"] > 0

    def test_implicit_matches_explicit(self, unit_load_17):
        """Test that both steppings reach the same discrete solution."""
        f, g = unit_load_17
        solutions = {
            stepping: solve_viscous(
                f,
                g,
                ViscousRunConfig(
                    eps_schedule=[0.5, 0.25],
                    residual_tol=1e-9,
                    stepping=stepping,
                ),
            )
            for stepping in ("explicit", "implicit")
        }
        explicit, implicit = solutions["explicit"], solutions["implicit"]
        assert implicit.converged and explicit.converged
        assert sum(implicit.iters_used) < sum(explicit.iters_used)
        assert np.max(
            np.abs(implicit.u_eps.values - explicit.u_eps.values)
        ) <= 1e-7
        assert "rejected" in implicit.stages_frame().columns

    def test_sign_change_rejected(self):
        """Test that f must have one strict sign."""
        grid = Grid2D.square(9)
        f = ScalarField2D.from_function(grid, lambda X, Y: X)
        with pytest.raises(DomainError, match="strictly"):
            solve_viscous(
                f,
                ScalarField2D.constant(grid, 0.0),
                ViscousRunConfig(eps_schedule=[0.5]),
            )

    def test_grid_mismatch(self):
        """Test that f and g must share a grid."""
        with pytest.raises(DimensionError):
            solve_viscous(
                ScalarField2D.constant(Grid2D.square(9), 1.0),
                ScalarField2D.constant(Grid2D.square(17), 0.0),
                ViscousRunConfig(eps_schedule=[0.5]),
            )

    def test_mollified_rhs(self):
        """Test that f is smoothed before solving."""
        grid = Grid2D.square(33)
        f = ScalarField2D.from_function(
            grid, lambda X, Y: 1.0 + 0.5 * (X > 0)
        )
        config = ViscousRunConfig(
            eps_schedule=[0.5], mollify_eps=0.25, residual_tol=1e-4
        )
        solution = solve_viscous(f, ScalarField2D.constant(grid, 0.0), config)
        assert not np.array_equal(solution.f_used.values, f.values)
        assert solution.f_used.values.max() <= 1.5


class TestContinuation:
    """Distances between consecutive eps stages."""

    @pytest.mark.slow
    def test_distances_decrease(self, sharp_problem_33):
        """Test the continuation sequence on the sharp example."""
        f, g = sharp_problem_33
        exact = get_problem("sharp-w").exact_field(f.grid)
        report = continuation_study(
            f,
            g,
            ViscousRunConfig(eps_schedule=SCHEDULE, residual_tol=1e-5),
            exact=exact,
        )
        assert report.eps == [0.25, 0.125]
        assert report.is_decreasing
        assert report.exact_errors is not None
        assert report.exact_errors[1] < report.exact_errors[0]
        assert report.to_frame().columns == [
            "eps",
            "sup_distance",
            "rms_distance",
            "exact_error",
        ]

    @pytest.mark.slow
    def test_small_eps_keeps_decreasing(self, sharp_problem_33):
        """Test eps down to 1e-2 on a coarse mesh with explicit sweeps."""
        f, g = sharp_problem_33
        exact = get_problem("sharp-w").exact_field(f.grid)
        report = continuation_study(
            f,
            g,
            ViscousRunConfig(
                eps_schedule=ViscousRunConfig.geometric_schedule(0.5, 1e-2),
                residual_tol=1e-6,
            ),
            exact=exact,
        )
        assert report.solution.converged
        assert report.is_decreasing
        assert report.exact_errors is not None
        errors = report.exact_errors
        assert all(b < a for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 0.03

    @pytest.mark.slow
    def test_fine_mesh_reaches_small_eps(self):
        """Test 129² down to eps = 1e-3 against the exact solution."""
        problem = get_problem("sharp-w")
        grid = problem.grid(129)
        report = continuation_study(
            problem.f_field(grid),
            problem.g_field(grid),
            ViscousRunConfig(
                eps_schedule=ViscousRunConfig.geometric_schedule(0.5, 1e-3),
                residual_tol=1e-6,
                stepping="implicit",
            ),
            exact=problem.exact_field(grid),
        )
        assert report.solution.converged
        assert report.eps[-1] == 1e-3
        assert report.is_decreasing
        assert report.exact_errors is not None
        assert report.exact_errors[-1] <= 5e-3

    def test_needs_three_stages(self, sharp_problem_33):
        """Test that two stages give no sequence to judge."""
        f, g = sharp_problem_33
        with pytest.raises(NotApplicableError):
            continuation_study(f, g, ViscousRunConfig(eps_schedule=[0.5, 0.1]))


class TestLipschitzBound:
    """Interior Lipschitz estimate on balls."""

    def test_sharp_example(self):
        """Test the ratio for w on the ball of radius 1/4."""
        problem = get_problem("sharp-w")
        grid = problem.grid(257)
        report = lipschitz_bound_check(
            problem.g_field(grid), problem.f_field(grid), Ball((0, 0), 0.25)
        )
        expected = (4 / 3) / (2 ** (4 / 3) + 4 / 3 ** (4 / 3))
        assert sharp_lipschitz_ratio() == pytest.approx(expected)
        assert report.ratio == pytest.approx(expected, rel=0.05)
        assert report.ratio < 1.0

    def test_sharp_example_is_scale_free(self):
        """Test that shrinking the ball keeps the ratio of w."""
        problem = get_problem("sharp-w")
        grid = problem.grid(257)
        reports = lipschitz_family(
            problem.g_field(grid),
            problem.f_field(grid),
            (0.0, 0.0),
            [0.4, 0.2, 0.1, 0.05],
        )
        assert [r.ball.radius for r in reports] == [0.4, 0.2, 0.1, 0.05]
        for report in reports:
            assert report.ratio == pytest.approx(
                sharp_lipschitz_ratio(), rel=0.1
            )

    def test_family_skips_unresolved_balls(self):
        """Test that balls under two mesh widths are dropped."""
        problem = get_problem("sharp-w")
        grid = problem.grid(33)
        u, f = problem.g_field(grid), problem.f_field(grid)
        reports = lipschitz_family(u, f, (0.0, 0.0), [0.4, 0.05])
        assert [r.ball.radius for r in reports] == [0.4]
        with pytest.raises(NotApplicableError):
            lipschitz_family(u, f, (0.0, 0.0), [0.05, 0.6])

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["sharp-w", "const-f-zero-g"])
    def test_solver_output_stays_near_scale_free_ratio(self, name):
        """Test the rescaled balls on converged viscous solutions."""
        problem = get_problem(name)
        grid = problem.grid(65)
        f = problem.f_field(grid)
        solution = solve_viscous(
            f,
            problem.g_field(grid),
            ViscousRunConfig(
                eps_schedule=ViscousRunConfig.geometric_schedule(0.5, 1e-2),
                residual_tol=1e-6,
                stepping="implicit",
            ),
        )
        assert solution.converged
        reports = lipschitz_family(
            solution.u_eps, f, (0.0, 0.0), [0.4, 0.2, 0.1]
        )
        assert len(reports) == 3
        baseline = sharp_lipschitz_ratio()
        for report in reports:
            assert baseline / 10 <= report.ratio <= 10 * baseline

    def test_sign_change_not_applicable(self, grid_65):
        """Test that f must keep one sign on the doubled ball."""
        u = ScalarField2D.constant(grid_65, 0.0)
        f = ScalarField2D.from_function(grid_65, lambda X, Y: X)
        with pytest.raises(NotApplicableError):
            lipschitz_bound_check(u, f, Ball((0.0, 0.0), 0.25))
