"""
Tests for the Bessel-matching resonance, the blowup probe and the sectorial quasimode.
"""
import numpy as np
import pytest

from lab.counterexamples import (
    analytic_profile,
    bessel_sweep,
    build_bessel_matching,
    low_energy,
    perturb_and_probe,
    perturbed_resonance,
    potential_bound,
    quasimode_profile,
    quasimode_sweep,
    spectral_sanity,
)
from lab.radial_core import origin_grid


@pytest.fixture(scope="module")
def small_mode():
    """l=4, n=3 resonance on the default grid."""
    return build_bessel_matching(4, 3)


@pytest.fixture(scope="module")
def sweep_mode():
    """l=20, n=3 resonance used by the blowup probes."""
    return build_bessel_matching(20, 3)


class TestBuildBesselMatching:
    """Test cases for the glued zero-energy state."""

    def test_piece_formulas(self, small_mode):
        """Test v = r^5 inside and r^-4 outside for l=4, n=3."""
        v, _, _ = analytic_profile(small_mode, np.array([0.25, 2.0]))
        assert v[0] == pytest.approx(2.0 ** -10, rel=1e-12)
        assert v[1] == pytest.approx(0.0625, rel=1e-12)

    def test_sampled_profile_matches_pieces(self, small_mode):
        """Test the sampled profile against r^L and r^{1-L} off the blend."""
        r = small_mode.grid.r
        L = small_mode.mode.L
        v = small_mode.v.real
        inside, outside = r <= 0.5, r >= 1.0
        np.testing.assert_allclose(v[inside], r[inside] ** L, rtol=1e-12)
        np.testing.assert_allclose(v[outside], r[outside] ** (1 - L), rtol=1e-12)

    def test_potential_support(self, small_mode):
        """Test that both potentials vanish off [1/2, 1]."""
        r = small_mode.grid.r
        off = (r < 0.5) | (r > 1.0)
        assert np.max(np.abs(small_mode.V.values[off])) <= 1e-12
        assert np.max(np.abs(small_mode.V_h.values[off])) <= 1e-12
        assert np.max(np.abs(small_mode.V.values)) > 1.0

    def test_potential_against_finite_differences(self, small_mode):
        """Test sup|V| against second differences of the analytic profile at fine spacing."""
        r = np.linspace(0.5, 1.0, 20001)
        h = r[1] - r[0]
        v, _, d2v = analytic_profile(small_mode, r)
        c = small_mode.mode.centrifugal
        exact = d2v / v - c / r ** 2
        numeric = (v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2 / v[1:-1] - c / r[1:-1] ** 2
        assert np.max(np.abs(numeric)) == pytest.approx(np.max(np.abs(exact)), rel=1e-4)

    def test_discrete_kernel_exact(self, small_mode):
        """Test that the grid-consistent potential annihilates the discrete profile."""
        assert small_mode.kernel_residual(discrete=True) <= 1e-8

    def test_analytic_kernel_second_order(self):
        """Test that the analytic relation converges at h^2 under grid doubling."""
        coarse = build_bessel_matching(4, 3, grid=origin_grid(8.0, 1024))
        fine = build_bessel_matching(4, 3, grid=origin_grid(8.0, 2048))
        ratio = coarse.kernel_residual(discrete=False) / fine.kernel_residual(discrete=False)
        assert ratio == pytest.approx(4.0, rel=0.25)

    def test_cached_norm(self, small_mode):
        """Test that the profile norm is cached per sigma."""
        first = small_mode.u_norm(0.25)
        assert small_mode.u_norm_data[0.25] == first
        assert small_mode.u_norm(0.25) == first > 0

    @pytest.mark.parametrize("kwargs", [
        {"l": 5, "n": 3},
        {"l": 2, "n": 3},
        {"l": 4, "n": 3, "blend": (0.4, 1.0)},
        {"l": 4, "n": 3, "blend": (0.6, 1.2)},
        {"l": 4, "n": 3, "blend": (0.8, 0.7)},
    ])
    def test_invalid_parameters(self, kwargs):
        """Test that odd or small l and blends leaving [1/2, 1] are rejected."""
        with pytest.raises(ValueError):
            build_bessel_matching(**kwargs)


class TestPerturbAndProbe:
    """Test cases for the cut-off resonance at low energy."""

    def test_low_energy(self):
        """Test lambda_m = m^{-l/10} at m=4, l=20."""
        assert low_energy(4, 20) == pytest.approx(0.0625)

    def test_forcing_supported_in_annulus(self, sweep_mode):
        """Test that f_m vanishes off m <= r <= 2m."""
        pair = perturbed_resonance(sweep_mode, 4)
        r = pair.u.r
        h = pair.u.grid.h
        f = np.abs(pair.f.values)
        off = (r < 4 * (1 - 2 * h)) | (r > 8 * (1 + 2 * h))
        assert np.max(f[off]) <= 1e-10 * np.max(f)

    def test_probe_recovers_profile(self, sweep_mode):
        """Test that the resolvent solve reproduces u_m at m=2."""
        report = perturb_and_probe(sweep_mode, 2)
        assert report.recovery_error < 0.01
        assert report.flags == ()
        assert report.ratio == pytest.approx(report.u_norm / report.f_norm)
        assert report.eps_m == pytest.approx(0.01 * report.lambda_m)
        assert list(report.to_row()) == ["m", "l", "lambda_m", "eps_m", "f_norm", "u_norm", "ratio"]

    def test_invalid_scale(self, sweep_mode):
        """Test that m below 2 is rejected."""
        with pytest.raises(ValueError):
            perturb_and_probe(sweep_mode, 1)

    def test_short_grid(self, sweep_mode):
        """Test that a grid shorter than 8m is rejected."""
        with pytest.raises(ValueError, match="r_max"):
            perturb_and_probe(sweep_mode, 4, grid=origin_grid(16.0, 2048))

    def test_eps_not_below_lambda(self, sweep_mode):
        """Test that eps_m >= lambda_m is rejected."""
        with pytest.raises(ValueError, match="eps_m"):
            perturb_and_probe(sweep_mode, 2, eps_ratio=1.0)

    def test_potential_bound_family(self, sweep_mode):
        """Test that the weighted potential bound does not grow with m."""
        bounds = [potential_bound(sweep_mode, m) for m in (4, 8)]
        assert bounds[1] <= bounds[0] * (1 + 1e-9)

    @pytest.mark.slow
    def test_sweep_blows_up(self):
        """Test that the norm ratio grows like a negative power of lambda_m."""
        sweep = bessel_sweep(20, (2, 4, 8, 16))
        assert sweep.fitted_exponent <= -1
        assert sweep.monotone
        assert all(rep.fitted_exponent == sweep.fitted_exponent for rep in sweep.reports)
        assert all(rep.recovery_error < 0.01 for rep in sweep.reports)
        sups = [rep.potential_sup for rep in sweep.reports[1:]]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(sups, sups[1:]))


class TestSpectralSanity:
    """Test cases for Sturm counts around zero energy."""

    @pytest.mark.slow
    def test_perturbation_clears_zero(self, sweep_mode):
        """Test that V_m has no eigenvalue near zero while V keeps its zero-energy state."""
        report = spectral_sanity(sweep_mode, 8)
        assert report.zero_window_count == 0
        assert report.base_zero_count >= 1
        assert report.negative_count_stability


class TestQuasimodeProfile:
    """Test cases for the sectorial quasimode."""

    def test_eigenvalue_and_equator(self):
        """Test lambda_l = (l+1)(l+n) and the exact zero at the equator."""
        profile = quasimode_profile(10, 3)
        assert profile.lambda_l == 143
        middle = len(profile.theta_grid) // 2
        assert profile.theta_grid[middle] == pytest.approx(np.pi / 2)
        assert profile.U[middle] == 0.0

    def test_mass_split(self):
        """Test that the near and tail masses add up to the normalised total."""
        profile = quasimode_profile(12, 4)
        assert profile.normalization ** 2 * profile.total_mass == pytest.approx(1.0, rel=1e-10)
        assert profile.near_equator_mass > profile.tail_mass > 0

    def test_eigen_check_second_order(self):
        """Test that the discrete eigen-residual falls by four when the spacing halves."""
        coarse = quasimode_profile(10, 3, N=2047)
        fine = quasimode_profile(10, 3, N=4095)
        assert coarse.eigen_residual / fine.eigen_residual == pytest.approx(4.0, rel=0.1)

    def test_cutoff_residual_small(self):
        """Test that the cutoff quasimode is nearly an eigenfunction for large l."""
        assert quasimode_profile(64, 3).quasimode_ratio < 1e-3

    @pytest.mark.parametrize("kwargs", [
        {"l": 2, "n": 3},
        {"l": 8, "n": 3, "cutoff": (0.0, 0.5)},
        {"l": 8, "n": 3, "cutoff": (np.pi / 4, np.pi / 3)},
        {"l": 8, "n": 3, "cutoff": (0.2, 2.0)},
        {"l": 8, "n": 3, "N": 4096},
    ])
    def test_invalid_parameters(self, kwargs):
        """Test that small l, bad cutoffs and even sample counts are rejected."""
        with pytest.raises(ValueError):
            quasimode_profile(**kwargs)

    def test_sweep(self):
        """Test the concentration and residual rates across l."""
        sweep = quasimode_sweep((8, 16, 32, 64), 3)
        assert sweep.mass_slope == pytest.approx(-0.75, abs=0.1)
        assert sweep.ratio_slope < 0
        assert sweep.ratio_r2 >= 0.98
