import numpy as np
import pytest

from app.internal.exceptions import DomainError
from app.services.analyzer import (
    analytic_power_verdict,
    analytic_verdict,
    bv_norm,
    classification_table,
    energy_inequality_report,
    gehring_probe,
    negative_power_scan,
    sobolev_scan,
)
from app.services.fields import Ball, Rectangle, ScalarField2D
from app.services.problems import get_problem, ridge_mask
from app.utils.fitting import Verdict

SQUARE = Rectangle(-0.5, 0.5, -0.5, 0.5)


class TestAnalyticVerdict:
    """Closed-form integrability near the ridge of w."""

    @pytest.mark.parametrize(
        "alpha,p,verdict",
        [
            (1.5, 2.0, Verdict.LOG_DIVERGENT),
            (1.0, 1.5, Verdict.LOG_DIVERGENT),
            (2.0, 2.0, Verdict.CONVERGENT),
            (0.5, 2.0, Verdict.POWER_DIVERGENT),
            (2.0, 3.0, Verdict.LOG_DIVERGENT),
        ],
    )
    def test_threshold(self, alpha, p, verdict):
        """Test the sign of (3 - α)p/3 - 1."""
        assert analytic_verdict(alpha, p).verdict == verdict

    def test_power_rate(self):
        """Test that α = 1/2, p = 2 diverges like h^{-2/3}."""
        result = analytic_verdict(0.5, 2.0)
        assert result.rate == pytest.approx(2.0 / 3.0)

    def test_negative_power(self):
        """Test that |Dw|^{-3} sits on the threshold."""
        assert analytic_power_verdict(-3.0).verdict == Verdict.LOG_DIVERGENT
        assert analytic_power_verdict(-2.0).verdict == Verdict.CONVERGENT


class TestSobolevScan:
    """Refinement scans of ‖D|Du|^α‖_p on the sharp example."""

    def test_threshold_is_logarithmic(self, sharp_w_sequence):
        """Test α = 3/2, p = 2 against the slope 32/27."""
        report = sobolev_scan(
            sharp_w_sequence, 1.5, 2.0, SQUARE, ridge=ridge_mask
        )
        assert report.verdict == Verdict.LOG_DIVERGENT
        assert report.fit.log_slope == pytest.approx(32.0 / 27.0, rel=0.1)
        assert report.mesh_sequence[0] > report.mesh_sequence[-1]

    def test_two_dimensional_threshold(self, sharp_w_sequence):
        """Test α = 1, p = 3/2 against the slope 16/27."""
        report = sobolev_scan(
            sharp_w_sequence, 1.0, 1.5, SQUARE, ridge=ridge_mask
        )
        assert report.verdict == Verdict.LOG_DIVERGENT
        assert report.fit.log_slope == pytest.approx(16.0 / 27.0, rel=0.1)

    def test_convergent(self, sharp_w_sequence):
        """Test that α = 2, p = 2 stays bounded."""
        report = sobolev_scan(
            sharp_w_sequence, 2.0, 2.0, SQUARE, ridge=ridge_mask
        )
        assert report.verdict == Verdict.CONVERGENT

    def test_power_divergent(self, sharp_w_sequence):
        """Test that α = 1/2, p = 2 blows up like h^{-2/3}."""
        report = sobolev_scan(
            sharp_w_sequence, 0.5, 2.0, SQUARE, ridge=ridge_mask
        )
        assert report.verdict == Verdict.POWER_DIVERGENT
        assert report.fitted_rate == pytest.approx(2.0 / 3.0, rel=0.15)
        low, high = report.rate_ci
        assert low <= report.fit.slope <= high

    def test_regularized_gradient_converges(self, sharp_w_sequence):
        """Test that κ > 0 removes the threshold divergence."""
        report = sobolev_scan(
            sharp_w_sequence, 1.5, 2.0, SQUARE, kappa=0.01, ridge=ridge_mask
        )
        assert report.verdict == Verdict.CONVERGENT

    def test_frame(self, sharp_w_sequence):
        """Test one row per mesh."""
        report = sobolev_scan(
            sharp_w_sequence, 2.0, 2.0, SQUARE, ridge=ridge_mask
        )
        frame = report.to_frame()
        assert frame.height == len(sharp_w_sequence)
        assert report.to_record()["alpha"] == 2.0

    @pytest.mark.parametrize(
        "alpha,p,kappa", [(0.0, 2.0, 0.0), (1.0, 0.5, 0.0), (1.0, 2.0, -1.0)]
    )
    def test_invalid_parameters(self, sharp_w_sequence, alpha, p, kappa):
        """Test the parameter ranges."""
        with pytest.raises(DomainError):
            sobolev_scan(sharp_w_sequence, alpha, p, SQUARE, kappa=kappa)


class TestNegativePowerScan:
    """∫ |Du|^s on the sharp example."""

    def test_threshold(self, sharp_w_sequence):
        """Test that s = -3 diverges like (27/32) log(1/h)."""
        report = negative_power_scan(
            sharp_w_sequence, -3.0, SQUARE, ridge=ridge_mask
        )
        assert report.verdict == Verdict.LOG_DIVERGENT
        assert report.fit.log_slope == pytest.approx(54.0 / 64.0, rel=0.1)
        assert report.s == -3.0

    def test_zero_power_is_area(self, sharp_w_sequence):
        """Test that s = 0 integrates one over the unit square."""
        report = negative_power_scan(sharp_w_sequence, 0.0, SQUARE)
        h = report.mesh_sequence
        assert report.verdict == Verdict.CONVERGENT
        assert all(
            norm == pytest.approx(1.0, abs=3 * step)
            for norm, step in zip(report.norms, h)
        )
        assert report.fit.limit == pytest.approx(1.0, abs=4 * h[-1])

    def test_mild_power_converges(self, sharp_w_sequence):
        """Test that s = -3/2 stays bounded."""
        report = negative_power_scan(
            sharp_w_sequence, -1.5, SQUARE, ridge=ridge_mask
        )
        assert report.verdict == Verdict.CONVERGENT


class TestBVNorm:
    """Anisotropic discrete total variation."""

    def test_plane(self, grid_65):
        """Test that f = x has variation h·(edges) over the grid."""
        f = ScalarField2D.from_function(grid_65, lambda X, Y: X)
        assert bv_norm(f) == pytest.approx(4.0 * 65 / 64)

    def test_constant(self, grid_65):
        """Test that constants have no variation."""
        f = ScalarField2D.constant(grid_65, 2.0)
        assert bv_norm(f, Ball((0.0, 0.0), 0.5)) == 0.0

    def test_step(self, grid_65):
        """Test that a jump across x = 0.3 costs jump times length."""
        f = ScalarField2D.from_function(
            grid_65, lambda X, Y: np.where(X > 0.3, 3.0, 0.0)
        )
        # one crossing per row of 65 nodes, each row weighted by hy
        assert bv_norm(f) == pytest.approx(3.0 * 2.0 * 65 / 64)

    def test_shift_and_scale(self, grid_65, rng):
        """Test that constants drop out and factors come out in modulus."""
        f = ScalarField2D(grid_65, rng.standard_normal(grid_65.shape))
        ball = Ball((0.0, 0.0), 0.5)
        assert bv_norm(f.with_values(f.values + 7.0), ball) == pytest.approx(
            bv_norm(f, ball)
        )
        assert bv_norm(f.with_values(-2.5 * f.values)) == pytest.approx(
            2.5 * bv_norm(f)
        )


class TestEnergyInequality:
    """The interior energy estimate for α > 3/2."""

    @pytest.fixture
    def sharp_257(self):
        problem = get_problem("sharp-w")
        grid = problem.grid(257)
        return problem.g_field(grid), problem.f_field(grid), ridge_mask(grid)

    def test_ratio_is_finite(self, sharp_257):
        """Test that the ratio is bounded for the sharp example."""
        w, f, ridge = sharp_257
        report = energy_inequality_report(
            w, f, 2.0, Ball((0.25, 0.25), 0.25), ridge
        )
        assert report.bv == 0.0
        assert report.bv_term == 0.0
        assert 0.0 < report.ratio < np.inf

    def test_shift_invariance(self, sharp_257):
        """Test that adding a constant leaves the ratio unchanged."""
        w, f, ridge = sharp_257
        ball = Ball((0.25, 0.25), 0.25)
        shifted = w.with_values(w.values + 1.0)
        assert energy_inequality_report(
            shifted, f, 2.5, ball, ridge
        ).ratio == pytest.approx(
            energy_inequality_report(w, f, 2.5, ball, ridge).ratio
        )

    def test_alpha_threshold(self, sharp_257):
        """Test that α must exceed 3/2."""
        w, f, _ = sharp_257
        with pytest.raises(DomainError):
            energy_inequality_report(w, f, 1.5, Ball((0.25, 0.25), 0.25))


class TestGehringProbe:
    """Exponents q in [2, 3]."""

    def test_rows_per_exponent(self, sharp_w_sequence):
        """Test that every q gets a scan and an analytic answer."""
        report = gehring_probe(
            sharp_w_sequence, 2.0, SQUARE, [2.0, 3.0], ridge=ridge_mask
        )
        frame = report.to_frame()
        assert frame["q"].to_list() == [2.0, 3.0]
        assert report.scans[0].verdict == Verdict.CONVERGENT
        assert report.analytic[1].verdict == Verdict.LOG_DIVERGENT

    def test_exponent_range(self, sharp_w_sequence):
        """Test that q must lie in [2, 3]."""
        with pytest.raises(DomainError):
            gehring_probe(sharp_w_sequence, 2.0, SQUARE, [3.5])

    def test_alpha_threshold(self, sharp_w_sequence):
        """Test that α must exceed 3/2."""
        with pytest.raises(DomainError):
            gehring_probe(sharp_w_sequence, 1.0, SQUARE, [2.0])


class TestClassificationTable:
    """Numerical against analytic verdicts over (α, p)."""

    def test_agreement(self, sharp_w_sequence):
        """Test a small table on the sharp example."""
        table = classification_table(
            sharp_w_sequence, [1.5, 2.0], [2.0], SQUARE, ridge=ridge_mask
        )
        assert table.agreement == 1.0
        frame = table.to_frame()
        assert frame.height == 2
        assert frame["agrees"].to_list() == [True, True]

    @pytest.mark.slow
    def test_full_lattice(self, sharp_w_sequence):
        """Test 100% agreement on the whole (α, p) lattice."""
        table = classification_table(
            sharp_w_sequence,
            [0.5, 1.0, 1.5, 2.0, 2.25, 2.9],
            [1.0, 1.5, 2.0, 2.5],
            SQUARE,
            ridge=ridge_mask,
        )
        frame = table.to_frame()
        assert frame.height == 24
        assert frame.filter(~frame["agrees"]).height == 0
        assert table.agreement == 1.0
