"""
Batch experiments, one per command. Every method writes its artifacts
through an :class:`~app.writers.ArtifactWriter` and returns the gated checks
that decide the exit status of the run.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Callable

import numpy as np
import polars as pl

from app.internal.config import (
    MIN_EXACT_LEVEL,
    ExperimentConfig,
    IdentitySettings,
)
from app.internal.constants import ENERGY_ALPHA_THRESHOLD
from app.internal.exceptions import ConfigError, NotApplicableError
from app.readers import read_field_pair
from app.services.analyzer import (
    SobolevScanReport,
    analytic_power_verdict,
    analytic_verdict,
    classification_table,
    energy_inequality_report,
    gehring_probe,
    negative_power_scan,
    sobolev_scan,
)
from app.services.fields import Ball, Grid2D, ScalarField2D
from app.services.identities import (
    check_chain_identity,
    check_degeneracy_bound,
    check_determinant_identity,
    check_pointwise_identity,
)
from app.services.mollify import sup_norm_control
from app.services.oned import (
    degenerate_limit_check,
    derivative_identity_1d,
    inverse_gradient_profile,
    oned_regularity_profile,
    residual_1d,
    solve_1d,
)
from app.services.problems import (
    Problem2D,
    get_oned_spec,
    get_problem,
    random_polynomial,
)
from app.services.viscous import (
    ViscousSolution,
    continuation_study,
    lipschitz_family,
    sharp_lipschitz_ratio,
    solve_viscous,
)
from app.utils.metrics import sup_distance
from app.utils.plots import continuation_plot, field_plot, oned_plot, scan_plot
from app.writers import ArtifactWriter

logger = logging.getLogger(__name__)

EXACT_1D_TOLERANCE = 1e-4
DEGENERATE_LIMIT_TOLERANCE = 0.02
ENERGY_SPREAD = 2.0
DOMAIN_HALF_WIDTH = 1.0

# rescaled balls of the interior Lipschitz estimate
LIPSCHITZ_CENTER = (0.0, 0.0)
LIPSCHITZ_RADII = (0.4, 0.2, 0.1, 0.05, 0.025)
LIPSCHITZ_DECADES = 1.0

EXACT_ENERGY_BALL = Ball((0.25, 0.25), 0.25)
# keeps B off the diagonal ridges of the square problems
SOLVER_ENERGY_BALL = Ball((0.5, 0.0), 0.2)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float

    def to_record(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "value": self.value,
            "threshold": self.threshold,
        }


def _logged(check: CheckResult) -> CheckResult:
    log = logger.info if check.passed else logger.warning
    log(
        "Check %s: %.6g (threshold %.6g) %s",
        check.name,
        check.value,
        check.threshold,
        "passed" if check.passed else "FAILED",
    )
    return check


def _at_most(name: str, value: float, threshold: float) -> CheckResult:
    passed = bool(value <= threshold)
    return _logged(CheckResult(name, passed, value, threshold))


def _below(name: str, value: float, threshold: float) -> CheckResult:
    passed = bool(value < threshold)
    return _logged(CheckResult(name, passed, value, threshold))


def _mesh_sequence(
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray | float],
    levels: list[int],
) -> list[ScalarField2D]:
    """Samples of ``fn`` on ``[-1, 1]²`` with spacings ``2^{-k}``."""
    w = DOMAIN_HALF_WIDTH
    return [
        ScalarField2D.from_function(
            Grid2D.with_spacing(2.0**-k, -w, w, -w, w), fn
        )
        for k in sorted(levels)
    ]


def _refinement_ratio(
    frame: pl.DataFrame, column: str, coarse: int, fine: int
) -> float:
    """Worst ``fine / coarse`` ratio of ``column`` over matching rows."""
    keys = ["alpha", "tau"]
    at = {
        n: frame.filter(pl.col("n") == n).sort(keys)[column].to_numpy()
        for n in (coarse, fine)
    }
    floor = np.finfo(np.float64).tiny
    return float(np.max(at[fine] / np.maximum(at[coarse], floor)))


class ExperimentManager:
    def __init__(self, config: ExperimentConfig, writer: ArtifactWriter):
        self.config = config
        self.writer = writer

    @property
    def plots(self) -> bool:
        return self.config.postprocessing.plots

    def run(self) -> list[CheckResult]:
        commands: dict[str, Callable[[], list[CheckResult]]] = {
            "solve1d": self.solve1d,
            "solve2d": self.solve2d,
            "verify-identities": self.verify_identities,
            "regularity-scan": self.regularity_scan,
            "convergence-study": self.convergence_study,
            "gehring-probe": self.gehring_probe,
        }
        logger.info("Running '%s'", self.config.command)
        return commands[self.config.command]()

    # Problem lookup

    def _problem_2d(self) -> Problem2D:
        return get_problem(self.config.problem_name)

    def _problem_fields(
        self,
    ) -> tuple[ScalarField2D, ScalarField2D, ScalarField2D | None]:
        """``f``, ``g`` and the exact solution if one is known."""
        if self.config.f_file is not None and self.config.g_file is not None:
            f, g = read_field_pair(self.config.f_file, self.config.g_file)
            return f, g, None
        problem = self._problem_2d()
        grid = problem.grid(self.config.viscous.n)
        return (
            problem.f_field(grid),
            problem.g_field(grid),
            problem.exact_field(grid),
        )

    def _init_field(self, g: ScalarField2D) -> ScalarField2D | None:
        if self.config.viscous.init == "zero":
            return ScalarField2D.constant(g.grid, 0.0)
        return None

    def _solve_named(self, problem: Problem2D, n: int) -> ViscousSolution:
        """Viscous solution of a named problem with the run's settings."""
        grid = problem.grid(n)
        g = problem.g_field(grid)
        logger.info("Solving '%s' on %d x %d nodes", problem.name, n, n)
        return solve_viscous(
            problem.f_field(grid),
            g,
            self.config.viscous.run_config(grid),
            self._init_field(g),
        )

    # Commands

    def solve1d(self) -> list[CheckResult]:
        settings = self.config.oned
        spec = get_oned_spec(self.config.problem_name)
        solution = solve_1d(
            spec.build(settings.n), settings.tol, settings.quadrature
        )
        self.writer.oned_solution(solution, "solution_1d.csv")
        checks: list[CheckResult] = []
        summary: dict[str, Any] = {
            "problem": spec.name,
            **solution.summary(),
            "residual": residual_1d(solution).to_record(),
        }

        exact = None
        if spec.exact is not None:
            exact = np.asarray(spec.exact(solution.nodes))
            error = float(np.max(np.abs(solution.u - exact)))
            summary["max_error"] = error
            checks.append(_at_most("exact_error", error, EXACT_1D_TOLERANCE))

        try:
            limit = degenerate_limit_check(solution)
        except NotApplicableError as e:
            logger.info("Degenerate limit check skipped: %s", e)
        else:
            summary["degenerate_limit"] = limit.to_record()
            checks.append(
                _at_most(
                    "degenerate_limit",
                    limit.relative_deviation,
                    DEGENERATE_LIMIT_TOLERANCE,
                )
            )

        profiles = [
            oned_regularity_profile(solution, alpha, settings.p)
            for alpha in settings.alphas
        ] + [inverse_gradient_profile(solution, p) for p in settings.inverse_p]
        self.writer.frame(
            pl.concat(
                [
                    profile.to_frame().with_columns(
                        pl.lit(profile.quantity).alias("quantity"),
                        pl.lit(profile.alpha, dtype=pl.Float64).alias("alpha"),
                        pl.lit(profile.p).alias("p"),
                    )
                    for profile in profiles
                ]
            ),
            "profiles_1d.csv",
        )
        summary["profiles"] = [profile.to_record() for profile in profiles]
        summary["derivative_identity"] = [
            {
                "alpha": alpha,
                **derivative_identity_1d(solution, alpha).to_record(),
            }
            for alpha in settings.alphas
        ]
        self.writer.record(summary, "summary_1d.json")
        if self.plots:
            name = "solution_1d.html"
            oned_plot(
                solution,
                self.writer.storage,
                self.writer.storage.join_path(self.writer.plots_dir(), name),
                exact,
            )
            self.writer.register_plot(name)
        return checks

    def solve2d(self) -> list[CheckResult]:
        f, g, exact = self._problem_fields()
        config = self.config.viscous.run_config(f.grid)
        solution = solve_viscous(f, g, config, self._init_field(g))
        self.writer.field(solution.u_eps, "u_eps.csv")
        self.writer.frame(solution.stages_frame(), "stages.csv")
        summary: dict[str, Any] = {
            "problem": self.config.problem_name,
            "grid": f.grid.to_record(),
            **solution.summary(),
        }
        checks = [
            _at_most(
                "final_residual", solution.residual_max, config.residual_tol
            )
        ]
        if exact is not None:
            summary["exact_sup_error"] = sup_distance(
                solution.u_eps.values, exact.values
            )
        if config.mollify_eps > 0:
            summary["mollifier"] = sup_norm_control(
                f, config.mollify_eps
            ).to_record()
        try:
            family = lipschitz_family(
                solution.u_eps, f, LIPSCHITZ_CENTER, LIPSCHITZ_RADII
            )
        except NotApplicableError as e:
            logger.info("Lipschitz check skipped: %s", e)
        else:
            baseline = sharp_lipschitz_ratio()
            summary["lipschitz"] = [r.to_record() for r in family]
            summary["lipschitz_baseline"] = baseline
            self.writer.frame(
                pl.DataFrame([r.to_record() for r in family]),
                "lipschitz.csv",
            )
            # decades between each ratio and the scale-free one of w
            decades = max(
                abs(math.log10(r.ratio / baseline))
                if r.ratio > 0
                else math.inf
                for r in family
            )
            checks.append(
                _at_most("lipschitz_family", decades, LIPSCHITZ_DECADES)
            )
        self.writer.record(summary, "summary_2d.json")
        if self.plots:
            name = "u_eps.html"
            field_plot(
                solution.u_eps,
                self.writer.storage,
                self.writer.storage.join_path(self.writer.plots_dir(), name),
                title=f"u_eps (eps = {solution.eps_final:g})",
            )
            self.writer.register_plot(name)
        return checks

    def verify_identities(self) -> list[CheckResult]:
        settings = self.config.identities
        rng = np.random.default_rng(self.config.seed)
        grid = Grid2D.square(settings.n, DOMAIN_HALF_WIDTH)
        rows = []
        for index in range(settings.polynomials):
            polynomial = random_polynomial(rng)
            report = check_determinant_identity(
                ScalarField2D.from_function(grid, polynomial)
            )
            rows.append(
                {
                    "polynomial": index,
                    "degree": polynomial.degree,
                    **report.to_record(),
                }
            )
        determinant = pl.DataFrame(rows)
        self.writer.frame(determinant, "determinant_identity.csv")
        worst = float(determinant["max_rel_error"].max())  # type: ignore
        checks = [_at_most("determinant_identity", worst, settings.tolerance)]

        problem = get_problem("sharp-w")
        identity_rows, bound_rows = [], []
        for level in range(MIN_EXACT_LEVEL, settings.exact_level + 1):
            w = _mesh_sequence(problem.g, [level])[0]
            mesh = {"h": w.grid.h}
            rows, bounds = self._identity_rows(
                w, problem.f_field(w.grid), settings
            )
            identity_rows += [{**mesh, **row} for row in rows]
            bound_rows += [{**mesh, **row} for row in bounds]
        exact_frame = pl.DataFrame(identity_rows)
        self.writer.frame(exact_frame, "exact_identities.csv")
        if bound_rows:
            self.writer.frame(pl.DataFrame(bound_rows), "degeneracy_bound.csv")

        finest = exact_frame.filter(pl.col("h") == pl.col("h").min())
        for name in ("pointwise_pw", "chain"):
            errors = finest.filter(pl.col("identity") == name)["max_rel_error"]
            worst = float(errors.max())  # type: ignore[arg-type]
            checks.append(_at_most(name, worst, settings.pw_tolerance))
        if settings.solver_sizes:
            checks += self._solver_identities(settings)
        return checks

    def _identity_rows(
        self, u: ScalarField2D, f: ScalarField2D, settings: IdentitySettings
    ) -> tuple[list[dict[str, Any]], list[dict[str, Any]]]:
        identity_rows, bound_rows = [], []
        for alpha in settings.alphas:
            report = check_pointwise_identity(
                u, f, alpha, settings.mask_threshold
            )
            identity_rows.append(
                {"alpha": alpha, "tau": 0.0, **report.to_record()}
            )
            if alpha > ENERGY_ALPHA_THRESHOLD:
                bound = check_degeneracy_bound(
                    u, f, alpha, settings.mask_threshold
                )
                bound_rows.append(bound.to_record())
        for alpha, tau in settings.chain_pairs:
            report = check_chain_identity(
                u, alpha, tau, settings.mask_threshold
            )
            identity_rows.append(
                {"alpha": alpha, "tau": tau, **report.to_record()}
            )
        return identity_rows, bound_rows

    def _solver_identities(
        self, settings: IdentitySettings
    ) -> list[CheckResult]:
        """
        The pointwise, chain and bound checks on converged viscous
        solutions. Mean relative errors must drop from the coarsest to the
        finest mesh; maxima sit on the gradient kinks and do not.
        """
        checks = []
        identity_rows, bound_rows = [], []
        for name in settings.solver_problems:
            problem = get_problem(name)
            residuals = []
            for n in settings.solver_sizes:
                solution = self._solve_named(problem, n)
                residuals.append(solution.residual_max)
                mesh = {"problem": name, "n": n, "h": problem.grid(n).h}
                rows, bounds = self._identity_rows(
                    solution.u_eps, solution.f_used, settings
                )
                identity_rows += [{**mesh, **row} for row in rows]
                bound_rows += [{**mesh, **row} for row in bounds]
            checks.append(
                _at_most(
                    f"solver_residual[{name}]",
                    max(residuals),
                    self.config.viscous.residual_tol,
                )
            )
        identities = pl.DataFrame(identity_rows)
        self.writer.frame(identities, "solver_identities.csv")
        bounds_frame = pl.DataFrame(bound_rows) if bound_rows else None
        if bounds_frame is not None:
            self.writer.frame(bounds_frame, "solver_bound.csv")

        coarse, fine = settings.solver_sizes[0], settings.solver_sizes[-1]
        for name in settings.solver_problems:
            rows = identities.filter(pl.col("problem") == name)
            for identity in ("pointwise_pw", "chain"):
                ratio = _refinement_ratio(
                    rows.filter(pl.col("identity") == identity),
                    "mean_rel_error",
                    coarse,
                    fine,
                )
                checks.append(_below(f"solver_{identity}[{name}]", ratio, 1.0))
            if bounds_frame is not None:
                finest = bounds_frame.filter(
                    (pl.col("problem") == name) & (pl.col("n") == fine)
                )
                worst = float(finest["mean_ratio"].max())  # type: ignore
                checks.append(_at_most(f"solver_bound[{name}]", worst, 1.0))
        return checks

    def _scan_fields(self) -> tuple[Problem2D, list[ScalarField2D]]:
        problem = self._problem_2d()
        if problem.exact is None:
            raise ConfigError(
                f"Problem '{problem.name}' has no known solution to scan"
            )
        return problem, _mesh_sequence(problem.exact, self.config.scan.levels)

    def _write_scan(self, report: SobolevScanReport, stem: str):
        self.writer.frame(report.to_frame(), f"{stem}.csv")
        self.writer.record(report.to_record(), f"{stem}.json")
        self.writer.curve(
            report.mesh_sequence, report.norms, f"{stem}.dat", ("h", "norm")
        )

    def regularity_scan(self) -> list[CheckResult]:
        settings = self.config.scan
        problem, fields = self._scan_fields()
        region = settings.region.build()
        exact_known = problem.name == "sharp-w"
        checks = []

        if settings.s is not None:
            report = negative_power_scan(
                fields, settings.s, region, problem.ridge
            )
            expected = analytic_power_verdict(settings.s)
        else:
            report = sobolev_scan(
                fields,
                settings.alpha,
                settings.p,
                region,
                settings.kappa,
                problem.ridge,
            )
            expected = analytic_verdict(settings.alpha, settings.p)
        self._write_scan(report, "scan")
        if exact_known and settings.kappa == 0:
            checks.append(
                CheckResult(
                    "scan_verdict",
                    report.verdict == expected.verdict,
                    float(report.verdict == expected.verdict),
                    1.0,
                )
            )

        if settings.table:
            table = classification_table(
                fields, settings.alphas, settings.ps, region, problem.ridge
            )
            self.writer.frame(table.to_frame(), "classification_table.csv")
            if exact_known:
                checks.append(
                    CheckResult(
                        "classification_agreement",
                        table.agreement == 1.0,
                        table.agreement,
                        1.0,
                    )
                )
        if self.plots:
            name = "scan.html"
            scan_plot(
                [report],
                self.writer.storage,
                self.writer.storage.join_path(self.writer.plots_dir(), name),
            )
            self.writer.register_plot(name)
        return checks


    def convergence_study(self) -> list[CheckResult]:
        f, g, exact = self._problem_fields()
        config = self.config.viscous.run_config(f.grid)
        report = continuation_study(f, g, config, exact)
        self.writer.frame(report.to_frame(), "continuation.csv")
        self.writer.field(report.solution.u_eps, "u_eps.csv")
        checks = [
            CheckResult(
                "sup_distances_decreasing",
                report.is_decreasing,
                float(report.is_decreasing),
                1.0,
            )
        ]

        # a zero start and a shifted boundary must reproduce the solution
        final = replace(config, eps_schedule=[config.eps_schedule[-1]])
        reference = report.solution.u_eps
        tolerance = 10.0 * config.residual_tol
        interior = (slice(1, -1), slice(1, -1))
        flat = solve_viscous(f, g, final, ScalarField2D.constant(g.grid, 0.0))
        agreement = sup_distance(
            flat.u_eps.values[interior], reference.values[interior]
        )
        checks.append(_at_most("init_independence", agreement, tolerance))
        shifted = solve_viscous(f, g.with_values(g.values + 1.0), config)
        shift = sup_distance(shifted.u_eps.values - 1.0, reference.values)
        checks.append(_at_most("constant_shift", shift, tolerance))
        self.writer.record(
            {
                "problem": self.config.problem_name,
                "eps_schedule": config.eps_schedule,
                "stepping": config.stepping,
                "init_agreement": agreement,
                "shift_error": shift,
                **report.solution.summary(),
            },
            "continuation.json",
        )
        if self.plots:
            name = "continuation.html"
            continuation_plot(
                report,
                self.writer.storage,
                self.writer.storage.join_path(self.writer.plots_dir(), name),
            )
            self.writer.register_plot(name)
        return checks

    def gehring_probe(self) -> list[CheckResult]:
        settings = self.config.gehring
        problem, fields = self._scan_fields()
        region = self.config.scan.region.build()
        report = gehring_probe(
            fields, settings.alpha, region, settings.q, problem.ridge
        )
        self.writer.frame(report.to_frame(), "gehring.csv")

        assert problem.exact is not None
        rows = []
        for field in _mesh_sequence(problem.exact, settings.energy_levels):
            rows += self._energy_rows(
                f"exact:{problem.name}",
                field,
                problem.f_field(field.grid),
                EXACT_ENERGY_BALL,
                problem.ridge_mask(field.grid),
            )
        for name in settings.energy_problems:
            solver_problem = get_problem(name)
            for n in settings.energy_sizes:
                solution = self._solve_named(solver_problem, n)
                rows += self._energy_rows(
                    f"viscous:{name}",
                    solution.u_eps,
                    solution.f_used,
                    SOLVER_ENERGY_BALL,
                    solver_problem.ridge_mask(solution.u_eps.grid),
                )
        energies = pl.DataFrame(rows)
        self.writer.frame(energies, "energy.csv")

        spreads = (
            energies.group_by(["source", "alpha"], maintain_order=True)
            .agg(
                (pl.col("ratio").max() / pl.col("ratio").min()).alias(
                    "spread"
                )
            )
            .sort(["source", "alpha"])
        )
        self.writer.frame(spreads, "energy_spread.csv")
        return [
            _at_most(
                f"energy_spread[{row['source']}, alpha={row['alpha']:g}]",
                float(row["spread"]),
                ENERGY_SPREAD,
            )
            for row in spreads.iter_rows(named=True)
        ]

    def _energy_rows(
        self,
        source: str,
        u: ScalarField2D,
        f: ScalarField2D,
        ball: Ball,
        exclude: np.ndarray | None,
    ) -> list[dict[str, Any]]:
        return [
            {
                "source": source,
                "h": u.grid.h,
                **energy_inequality_report(
                    u, f, alpha, ball, exclude
                ).to_record(),
            }
            for alpha in self.config.gehring.energy_alphas
        ]
