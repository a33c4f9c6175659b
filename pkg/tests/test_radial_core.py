"""
Tests for grids, radial functions, cutoffs and weighted norms.
"""
import numpy as np
import pytest
from scipy.integrate import quad

from lab.radial_core import (
    ModeParams,
    Profiles,
    RadialFunction,
    RadialGrid,
    WeightSpec,
    bump_cutoff,
    from_mode,
    make_grid,
    origin_grid,
    restrict,
    smooth_step,
    smooth_step_derivatives,
    step_cutoff,
    to_mode_source,
    trapezoid_weights,
    weighted_norm,
)
from lab.report_writer import rows_to_csv


class TestRadialGrid:
    """Test cases for grid construction."""

    def test_three_point_grid(self):
        """Test the smallest hand-checkable grid."""
        grid = make_grid(1.0, 2.0, 3, min_points=3)
        np.testing.assert_allclose(grid.r, [1.0, 1.5, 2.0])
        assert grid.h == pytest.approx(0.5)
        assert len(grid) == 3

    @pytest.mark.parametrize("r_min,r_max,N", [
        (0.0, 1.0, 10),
        (-1.0, 1.0, 32),
        (2.0, 1.0, 32),
        (1.0, 2.0, 4),
    ])
    def test_invalid_grid(self, r_min: float, r_max: float, N: int):
        """Test that non-positive starts, reversed bounds and tiny grids are rejected."""
        with pytest.raises(ValueError):
            make_grid(r_min, r_max, N)

    def test_large_grid_is_uniform(self):
        """Test that a fine grid passes the uniform-spacing check."""
        grid = make_grid(0.01, 2000.0, 2 ** 18)
        assert grid.r_min == pytest.approx(0.01)
        assert grid.r_max == pytest.approx(2000.0)

    def test_non_uniform_rejected(self):
        """Test that uneven spacing is rejected."""
        with pytest.raises(ValueError):
            RadialGrid(r=np.array([1.0, 1.5, 2.2]), h=0.5)

    def test_grid_is_read_only(self):
        """Test that grid radii cannot be mutated."""
        grid = make_grid(1.0, 2.0, 16)
        with pytest.raises(ValueError):
            grid.r[0] = 5.0

    def test_origin_grid(self):
        """Test the grid starting one spacing from the origin."""
        grid = origin_grid(100.0, 1000)
        assert grid.h == pytest.approx(0.1)
        assert grid.r_min == pytest.approx(0.1)

    def test_trapezoid_weights_sum(self):
        """Test that the quadrature weights integrate constants exactly."""
        grid = make_grid(1.0, 3.0, 64)
        assert trapezoid_weights(grid).sum() == pytest.approx(2.0)


class TestModeParams:
    """Test cases for mode parameters."""

    @pytest.mark.parametrize("n,l", [(3, 0), (3, 1), (4, 2), (7, 5)])
    def test_centrifugal_identity(self, n: int, l: int):
        """Test L(L-1) = l(l+n-2) + (n-1)(n-3)/4."""
        mode = ModeParams(n, l)
        assert mode.centrifugal == pytest.approx(mode.angular + (n - 1) * (n - 3) / 4.0)

    def test_three_dimensions_first_mode(self):
        """Test the n=3, l=1 coefficient."""
        assert ModeParams(3, 1).centrifugal == pytest.approx(2.0)

    @pytest.mark.parametrize("n,l", [(2, 0), (3, -1), (3.5, 0)])
    def test_invalid_mode(self, n, l):
        """Test that low dimensions and negative orders are rejected."""
        with pytest.raises(ValueError):
            ModeParams(n, l)


class TestRadialFunction:
    """Test cases for sampled radial profiles."""

    def test_scalar_broadcast(self):
        """Test that a scalar value fills the grid."""
        grid = make_grid(1.0, 2.0, 16)
        f = RadialFunction(grid, 2.0)
        assert np.all(f.values == 2.0)

    def test_wrong_length(self):
        """Test that mismatched sample counts are rejected."""
        grid = make_grid(1.0, 2.0, 16)
        with pytest.raises(ValueError):
            RadialFunction(grid, np.ones(5))

    def test_arithmetic_grid_check(self):
        """Test that functions on different grids cannot be combined."""
        a = RadialFunction.zeros(make_grid(1.0, 2.0, 16))
        b = RadialFunction.zeros(make_grid(1.0, 3.0, 16))
        with pytest.raises(ValueError):
            _ = a + b

    def test_derivative_second_order(self):
        """Test the centred derivative on a quadratic."""
        grid = make_grid(1.0, 3.0, 33)
        f = RadialFunction.from_callable(grid, lambda r: r ** 2)
        np.testing.assert_allclose(f.derivative().real, 2.0 * grid.r, rtol=1e-10)

    def test_mode_reduction_inverse(self):
        """Test that from_mode undoes to_mode_source."""
        grid = make_grid(0.5, 4.0, 64)
        mode = ModeParams(5, 2)
        f = RadialFunction.from_callable(grid, lambda r: np.exp(-r) + 1j * r)
        np.testing.assert_allclose(from_mode(to_mode_source(f, mode), mode).values, f.values)

    def test_csv_rows(self):
        """Test the r,re,im layout and that full precision survives the CSV text."""
        grid = make_grid(0.1, 1.0, 16)
        f = RadialFunction.from_callable(grid, lambda r: np.exp(1j * r) / 3.0)
        lines = rows_to_csv(f.to_rows()).splitlines()
        assert lines[0] == "r,re,im"
        assert len(lines) == len(grid) + 1
        parsed = np.array([[float(x) for x in line.split(",")] for line in lines[1:]])
        np.testing.assert_array_equal(parsed[:, 0], grid.r)
        np.testing.assert_array_equal(parsed[:, 1] + 1j * parsed[:, 2], f.values)


class TestProfiles:
    """Test cases for potentials and curvature profiles."""

    def test_complex_potential_rejected(self):
        """Test that an absorbing potential is refused."""
        grid = make_grid(1.0, 2.0, 16)
        with pytest.raises(ValueError):
            Profiles(RadialFunction(grid, 1j), RadialFunction.zeros(grid))

    def test_decay_certificate(self):
        """Test the pointwise decay bound for a Coulomb-free short-range potential."""
        grid = make_grid(1.0, 50.0, 256)
        profiles = Profiles.from_callables(grid, V=lambda r: 0.5 * r ** -4, sigma0=1.0)
        assert profiles.decay_certificate(1.0)
        loud = Profiles.from_callables(grid, V=lambda r: 5.0 / r, sigma0=1.0)
        assert not loud.decay_certificate(1.0)


class TestSmoothStep:
    """Test cases for the smooth step and cutoffs."""

    @pytest.mark.parametrize("t,expected", [(-1.0, 0.0), (0.0, 0.0), (1.0, 1.0), (2.0, 1.0), (0.5, 0.5)])
    def test_values(self, t: float, expected: float):
        """Test the plateaus and the midpoint."""
        assert smooth_step(t) == pytest.approx(expected)

    def test_matches_exponential_form(self):
        """Test agreement with the ratio of exp(-1/t) terms."""
        t = np.linspace(0.05, 0.95, 19)
        direct = np.exp(-1.0 / t) / (np.exp(-1.0 / t) + np.exp(-1.0 / (1.0 - t)))
        np.testing.assert_allclose(smooth_step(t), direct, rtol=1e-12)

    def test_symmetry(self):
        """Test eta(t) + eta(1-t) = 1."""
        t = np.linspace(-0.5, 1.5, 81)
        np.testing.assert_allclose(smooth_step(t) + smooth_step(1.0 - t), 1.0, atol=1e-14)

    def test_derivatives_match_differences(self):
        """Test the closed-form derivatives against centred differences."""
        t = np.linspace(-0.2, 1.2, 14001)
        eta, d1, d2 = smooth_step_derivatives(t)
        dt = t[1] - t[0]
        np.testing.assert_allclose(np.gradient(eta, dt)[1:-1], d1[1:-1], atol=1e-5)
        np.testing.assert_allclose(np.gradient(d1, dt)[1:-1], d2[1:-1], atol=1e-3)

    def test_bump_cutoff_plateau(self):
        """Test that the bump is one on its plateau and zero outside."""
        r = np.linspace(0.1, 70.0, 2000)
        chi = bump_cutoff(r, (1.0, 3.0), (40.0, 60.0))
        np.testing.assert_allclose(chi.value[(r >= 3.0) & (r <= 40.0)], 1.0)
        assert np.all(chi.value[(r <= 1.0) | (r >= 60.0)] == 0.0)

    def test_falling_step(self):
        """Test that reversed endpoints give a falling cutoff."""
        r = np.linspace(0.0, 4.0, 401)
        chi = step_cutoff(r, 3.0, 1.0)
        assert chi.value[0] == 1.0
        assert chi.value[-1] == 0.0

    def test_overlapping_bump_rejected(self):
        """Test that overlapping transitions are refused."""
        with pytest.raises(ValueError):
            bump_cutoff(np.linspace(0.0, 1.0, 11), (0.0, 0.6), (0.5, 1.0))


class TestWeightedNorm:
    """Test cases for the mode-reduced weighted norms."""

    def test_zero_function(self, small_grid):
        """Test that the zero profile has zero norm."""
        assert weighted_norm(RadialFunction.zeros(small_grid), WeightSpec(1, -0.75), ModeParams(3, 2)) == 0.0

    def test_constant_unweighted(self):
        """Test that a constant has norm |c| sqrt(length)."""
        grid = make_grid(1.0, 5.0, 64)
        norm = weighted_norm(RadialFunction(grid, 3.0), WeightSpec(0, 0.0), ModeParams(3, 0))
        assert norm == pytest.approx(3.0 * 2.0)

    def test_gaussian_against_quadrature(self):
        """Test a weighted Gaussian against adaptive quadrature."""
        grid = make_grid(0.01, 20.0, 4001)
        v = RadialFunction.from_callable(grid, lambda r: np.exp(-(r - 5.0) ** 2))
        expected, _ = quad(lambda r: (1 + r * r) ** -0.75 * np.exp(-2 * (r - 5.0) ** 2), 0.01, 20.0)
        norm = weighted_norm(v, WeightSpec(0, -0.75), ModeParams(3, 0))
        assert norm == pytest.approx(np.sqrt(expected), rel=1e-6)

    def test_homogeneity(self):
        """Test ||c v|| = |c| ||v||."""
        grid = make_grid(1.0, 8.0, 256)
        v = RadialFunction.from_callable(grid, lambda r: np.sin(r) / r)
        weight = WeightSpec(1, -0.75)
        mode = ModeParams(4, 1)
        assert weighted_norm((2.0 - 1.5j) * v, weight, mode) == pytest.approx(2.5 * weighted_norm(v, weight, mode))

    def test_second_order_convergence(self):
        """Test that refining the grid cuts the quadrature error by about four."""
        exact = np.sqrt(
            -np.exp(-6.0) * (4.5 + 1.5 + 0.25) + np.exp(-2.0) * (0.5 + 0.5 + 0.25)
        )
        errors = []
        for N in (33, 65, 129):
            grid = make_grid(1.0, 3.0, N)
            v = RadialFunction.from_callable(grid, lambda r: np.exp(-r))
            errors.append(abs(weighted_norm(v, WeightSpec(0, 1.0, bracket=False), ModeParams(3, 0)) - exact))
        assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.05)
        assert errors[1] / errors[2] == pytest.approx(4.0, rel=0.05)

    def test_weight_monotone_in_exponent(self):
        """Test that a larger weight exponent gives a larger norm."""
        grid = make_grid(1.0, 20.0, 512)
        v = RadialFunction.from_callable(grid, lambda r: np.exp(-0.1 * r))
        mode = ModeParams(3, 0)
        norms = [weighted_norm(v, WeightSpec(0, m), mode) for m in (-1.0, -0.5, 0.0, 0.5)]
        assert norms == sorted(norms)

    def test_derivative_term_adds(self):
        """Test that the s=1 norm dominates the s=0 norm."""
        grid = make_grid(1.0, 20.0, 512)
        v = RadialFunction.from_callable(grid, lambda r: np.sin(r))
        mode = ModeParams(3, 1)
        assert weighted_norm(v, WeightSpec(1, -0.75), mode) > weighted_norm(v, WeightSpec(0, -0.75), mode)

    def test_restrict_matches_window(self):
        """Test that restricting a profile gives the same norm as a windowed norm."""
        grid = make_grid(1.0, 20.0, 512)
        v = RadialFunction.from_callable(grid, lambda r: np.exp(-0.2 * r))
        mode = ModeParams(3, 0)
        weight = WeightSpec(0, -0.5)
        part = restrict(v, 5.0, 12.0)
        assert part.r[0] >= 5.0 and part.r[-1] <= 12.0
        assert weighted_norm(part, weight, mode) == pytest.approx(weighted_norm(v, weight, mode, window=(5.0, 12.0)))

    def test_nan_rejected(self):
        """Test that NaN samples are reported."""
        grid = make_grid(1.0, 2.0, 16)
        values = np.ones(16)
        values[3] = np.nan
        with pytest.raises(ValueError):
            weighted_norm(RadialFunction(grid, values), WeightSpec(0, 0.0), ModeParams(3, 0))

    def test_narrow_window_rejected(self):
        """Test that windows holding fewer than two nodes are reported."""
        grid = make_grid(1.0, 2.0, 16)
        with pytest.raises(ValueError):
            weighted_norm(RadialFunction(grid, 1.0), WeightSpec(0, 0.0), ModeParams(3, 0), window=(5.0, 6.0))
