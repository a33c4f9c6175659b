"""
Tests for the Schrodinger and wave evolutions and the time-domain observables.
"""
import numpy as np
import pytest

from lab.evolution import (
    CFLViolation,
    Trajectory,
    calibrate_absorber,
    evolve_schrodinger,
    evolve_wave,
    limiting_amplitude_experiment,
    local_observables,
    local_smoothing_integral,
    morawetz_energy,
    morawetz_spec,
    pointwise_decay_fit,
    reference_evolution,
    smoothing_data_norm,
    spatial_generator,
    time_reversal_error,
    trajectory_summary,
)
from lab.radial_core import ModeParams, Profiles, RadialFunction, origin_grid
from lab.resolvent_solver import ModeProblem


def free_problem(grid, n=3, l=0):
    return ModeProblem(ModeParams(n, l), Profiles.free(grid), 0.0)


def gaussian(grid, center=15.0, width=3.0, momentum=0.0):
    """Gaussian packet exp(-(r-c)^2 / (2 w^2) + i k r)."""
    return RadialFunction.from_callable(
        grid, lambda r: np.exp(-((r - center) ** 2) / (2 * width ** 2) + 1j * momentum * r)
    )


def bump(s):
    """exp(-1/(1-(s/5)^2)) on |s| < 5, zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 5.0
    out[inside] = np.exp(-1.0 / (1.0 - (s[inside] / 5.0) ** 2))
    return out


def bump_profile(grid):
    """v = r bump(r), so u = bump on the physical side."""
    return RadialFunction(grid, grid.r * bump(grid.r))


def rel_error(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def wave_run():
    """Free n=3, l=0 wave from the bump at rest, T=30."""
    grid = origin_grid(60.0, 8192)
    problem = free_problem(grid)
    return evolve_wave(problem, bump_profile(grid), RadialFunction.zeros(grid), 0.5 * grid.h, 30.0)


class TestSchrodinger:
    """Test cases for the Crank-Nicolson scheme."""

    def test_matches_reference(self):
        """Test agreement with exact exponentiation of the same generator."""
        grid = origin_grid(60.0, 1024)
        problem = free_problem(grid)
        v0 = gaussian(grid)
        traj = evolve_schrodinger(problem, v0, 0.01, 10.0)
        exact = reference_evolution(problem, v0, traj.times[-1:])
        assert rel_error(traj.states[-1].values, exact.states[0].values) <= 1e-4

    def test_unitary(self):
        """Test that the discrete L2 norm is conserved to roundoff."""
        grid = origin_grid(60.0, 1024)
        traj = evolve_schrodinger(free_problem(grid, l=2), gaussian(grid, momentum=0.5), 0.01, 5.0)
        drift = np.max(np.abs(traj.conserved_log - traj.conserved_log[0]))
        assert drift <= 1e-8 * traj.conserved_log[0]

    def test_store_every(self):
        """Test the stored times for an explicit stride."""
        grid = origin_grid(60.0, 1024)
        traj = evolve_schrodinger(free_problem(grid), gaussian(grid), 0.1, 2.0, store_every=5)
        np.testing.assert_allclose(traj.times, [0.0, 0.5, 1.0, 1.5, 2.0])
        assert traj.scheme == "crank_nicolson"

    def test_time_reversal(self):
        """Test that stepping back with -dt recovers the data."""
        grid = origin_grid(60.0, 1024)
        error = time_reversal_error(free_problem(grid), gaussian(grid, momentum=1.0), 0.01, 5.0)
        assert error <= 1e-6

    def test_reflection_risk_flag(self):
        """Test that a fast packet on a short grid is flagged and refused by the smoothing integral."""
        grid = origin_grid(60.0, 1024)
        traj = evolve_schrodinger(free_problem(grid), gaussian(grid, momentum=2.0), 0.02, 40.0)
        assert "reflection_risk" in traj.flags
        with pytest.raises(ValueError, match="reflections"):
            local_smoothing_integral(traj)

    def test_zero_data(self):
        """Test that zero data stays zero and its decay fit is flagged as vanishing."""
        grid = origin_grid(60.0, 1024)
        traj = evolve_schrodinger(free_problem(grid), RadialFunction.zeros(grid), 0.1, 5.0, store_every=1)
        assert all(np.all(v.values == 0) for v in traj.states)
        fit = pointwise_decay_fit(traj, (1.0, 5.0))
        assert fit.flags == ("vanishing",)
        assert fit.fitted_exponent == float("-inf")
        series = local_smoothing_integral(traj)
        assert np.all(series.ratio == 0)

    @pytest.mark.parametrize("dt,T", [(0.0, 1.0), (-0.1, 1.0), (0.1, 0.0)])
    def test_invalid_step(self, dt, T):
        """Test that non-positive steps and final times are rejected."""
        grid = origin_grid(60.0, 1024)
        with pytest.raises(ValueError):
            evolve_schrodinger(free_problem(grid), gaussian(grid), dt, T)

    def test_needs_real_energy(self):
        """Test that a regularised problem cannot be evolved."""
        grid = origin_grid(60.0, 1024)
        with pytest.raises(ValueError, match="epsilon"):
            spatial_generator(free_problem(grid).with_epsilon(0.1))


class TestAbsorber:
    """Test cases for the sponge layer."""

    def test_calibration(self):
        """Test that the calibrated sponge reflects little and is cached."""
        grid = origin_grid(60.0, 1024)
        first = calibrate_absorber(grid, 0.01)
        assert first.strength > 0
        assert first.reflection < 1e-3
        assert calibrate_absorber(grid, 0.01) is first

    def test_outgoing_packet_absorbed(self):
        """Test that the norm decays monotonically as the packet enters the sponge."""
        grid = origin_grid(60.0, 1024)
        traj = evolve_schrodinger(free_problem(grid), gaussian(grid, momentum=2.0), 0.01, 30.0, absorber=True)
        norms = traj.conserved_log
        assert np.all(np.diff(norms) <= 1e-12 * norms[0])
        assert norms[-1] < 1e-2 * norms[0]
        assert traj.flags == ()

    @pytest.mark.slow
    def test_local_smoothing_plateau(self):
        """Test that the local smoothing integral levels off and stays bounded by the data norm."""
        grid = origin_grid(80.0, 2048)
        problem = free_problem(grid, l=1)
        traj = evolve_schrodinger(problem, gaussian(grid, momentum=1.0), 0.02, 40.0, absorber=True)
        series = local_smoothing_integral(traj, sigma=0.25)
        assert np.all(np.diff(series.integral) >= 0)
        assert series.plateau_ratio(20.0) < 1.5
        assert series.ratio[-1] < 10.0


class TestSmoothingDataNorm:
    """Test cases for the data normalisation <(1 + A)^{1/2} v0, v0>."""

    def test_matches_eigendecomposition(self):
        """Test the resolvent integral against the spectral sum on a small grid."""
        grid = origin_grid(30.0, 512)
        problem = free_problem(grid, l=1)
        v0 = gaussian(grid, center=10.0, width=2.0, momentum=1.0)
        gen = spatial_generator(problem)
        lam, Q = gen.eigendecomposition()
        c = Q.T @ gen.to_symmetric(v0.values)
        expected = gen.h * np.sum(np.sqrt(1.0 + lam) * np.abs(c) ** 2)
        assert smoothing_data_norm(problem, v0) == pytest.approx(expected, rel=1e-7)

    def test_zero_data(self):
        """Test that zero data has zero norm."""
        grid = origin_grid(30.0, 512)
        assert smoothing_data_norm(free_problem(grid), RadialFunction.zeros(grid)) == 0.0

    def test_default_resolution(self):
        """Test that 2^14 points stay within the mass and energy bounds and agree with 2^13."""
        values = []
        for N in (2 ** 13, 2 ** 14):
            grid = origin_grid(200.0, N)
            problem = free_problem(grid)
            v0 = gaussian(grid, momentum=1.0)
            gen = spatial_generator(problem)
            w = gen.to_symmetric(v0.values)
            mass = gen.h * float(np.vdot(w, w).real)
            energy = gen.h * float(np.vdot(w, gen.apply(w)).real)
            value = smoothing_data_norm(problem, v0)
            # sqrt(1 + x) lies between 1 and 1 + x / 2
            assert mass <= value <= mass + 0.5 * energy
            values.append(value)
        assert values[1] == pytest.approx(values[0], rel=1e-3)


class TestWave:
    """Test cases for the leapfrog scheme."""

    def test_dalembert(self):
        """Test the n=3, l=0 solution against the odd-extension d'Alembert formula."""
        grid = origin_grid(60.0, 2 ** 14)
        profile = lambda s: np.exp(-((s - 20.0) ** 2) / 4.0) - np.exp(-((s + 20.0) ** 2) / 4.0)
        v0 = RadialFunction.from_callable(grid, profile)
        traj = evolve_wave(free_problem(grid), v0, RadialFunction.zeros(grid), 0.5 * grid.h, 10.0)
        t = traj.times[-1]
        exact = 0.5 * (profile(grid.r - t) + profile(grid.r + t))
        error = np.max(np.abs(traj.states[-1].values - exact))
        assert error <= 1e-3 * np.max(np.abs(exact))

    def test_energy_conserved(self, wave_run):
        """Test that the discrete energy stays within 1e-6 of its initial value."""
        energies = wave_run.conserved_log
        assert np.max(np.abs(energies - energies[0])) <= 1e-6 * energies[0]
        assert wave_run.scheme == "leapfrog"
        assert len(wave_run.velocities) == len(wave_run.states)

    def test_huygens(self, wave_run):
        """Test that the local energy in r <= 10 vanishes once the shell has passed."""
        observables = local_observables(wave_run, 10.0)
        late = observables.times >= 16.0
        assert np.max(observables.local_energy[late]) <= 1e-8 * observables.local_energy[0]

    def test_pointwise_decay(self, wave_run):
        """Test the fitted rate against the exact outgoing shell u = phi(r-t) / (2r)."""
        fit = pointwise_decay_fit(wave_run, (10.0, 30.0))
        grid = wave_run.grid
        r = grid.r[grid.r >= 5 * grid.h]
        times = wave_run.times[(wave_run.times >= 10.0) & (wave_run.times <= 30.0)]
        exact = [np.max(0.5 * np.abs((r - t) * bump(r - t)) / r) for t in times]
        slope = np.polyfit(np.log(times), np.log(exact), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.4)
        assert fit.fitted_exponent == pytest.approx(slope, abs=0.02)
        assert fit.fit_residual > 0.98
        assert fit.flags == ()

    def test_decay_window(self, wave_run):
        """Test that windows starting before t=1 are rejected."""
        with pytest.raises(ValueError):
            pointwise_decay_fit(wave_run, (0.5, 10.0))

    def test_local_radius(self, wave_run):
        """Test that r_K must stay below r_max / 2."""
        with pytest.raises(ValueError, match="r_K"):
            local_observables(wave_run, 40.0)

    def test_cfl_violation(self):
        """Test that dt = h exceeds the admissible Courant number."""
        grid = origin_grid(60.0, 1024)
        with pytest.raises(CFLViolation):
            evolve_wave(free_problem(grid), bump_profile(grid), RadialFunction.zeros(grid), grid.h, 1.0)

    def test_time_reversal(self):
        """Test that swapping the last two levels runs the scheme back to the data."""
        grid = origin_grid(60.0, 2048)
        error = time_reversal_error(free_problem(grid), bump_profile(grid), 0.5 * grid.h, 5.0, scheme="leapfrog")
        assert error <= 1e-6

    def test_reference_energy(self):
        """Test that the exact wave propagator conserves its energy."""
        grid = origin_grid(60.0, 1024)
        traj = reference_evolution(
            free_problem(grid, l=1), bump_profile(grid), np.linspace(0.0, 10.0, 11), equation="wave"
        )
        np.testing.assert_allclose(traj.conserved_log, traj.conserved_log[0], rtol=1e-10)

    def test_summary_rows(self, wave_run):
        """Test the summary columns with and without the conformal energy."""
        grid = wave_run.grid
        rows = trajectory_summary(wave_run, 10.0, morawetz_spec(grid, 1.0))
        assert list(rows[0]) == ["t", "l2_norm", "local_mass", "local_energy", "sup_u", "E_K", "flag"]
        assert all(np.isfinite(row["E_K"]) for row in rows)

        small = origin_grid(60.0, 1024)
        traj = evolve_schrodinger(free_problem(small), gaussian(small), 0.1, 1.0)
        plain = trajectory_summary(traj, 10.0)
        assert all(np.isnan(row["E_K"]) and row["flag"] == "no_conformal_energy" for row in plain)

    @pytest.mark.slow
    def test_conformal_energy_bounded(self, wave_run):
        """Test that E_K stays within a factor ten over the run."""
        spec = morawetz_spec(wave_run.grid, 1.0)
        values = [morawetz_energy(wave_run, t, spec) for t in wave_run.times if t >= 2.0]
        assert max(values) <= 10.0 * min(values)

    def test_conformal_energy_needs_velocities(self):
        """Test that a Schrodinger trajectory has no conformal energy."""
        grid = origin_grid(60.0, 1024)
        traj = evolve_schrodinger(free_problem(grid), gaussian(grid), 0.1, 1.0)
        with pytest.raises(ValueError, match="velocities"):
            morawetz_energy(traj, 1.0, morawetz_spec(grid, 1.0))


class TestTrajectory:
    """Test cases for the trajectory container."""

    def test_unknown_scheme(self):
        """Test that unknown scheme names are rejected."""
        grid = origin_grid(60.0, 1024)
        with pytest.raises(ValueError, match="scheme"):
            Trajectory(np.zeros(1), [RadialFunction.zeros(grid)], "euler", 0.1, np.zeros(1), free_problem(grid))

    def test_missing_time(self):
        """Test that a time between stored samples is not returned."""
        grid = origin_grid(60.0, 1024)
        traj = evolve_schrodinger(free_problem(grid), gaussian(grid), 0.1, 2.0, store_every=10)
        assert traj.index(1.0) == 1
        with pytest.raises(ValueError):
            traj.index(0.5)


class TestLimitingAmplitude:
    """Test cases for the time-periodic forcing experiment."""

    @pytest.mark.slow
    def test_converges_to_radiating_solution(self):
        """Test that u e^{-i mu t} approaches the radiating solution and not the other branch."""
        grid = origin_grid(60.0, 4096)
        f = RadialFunction(grid, bump(grid.r))
        report = limiting_amplitude_experiment(free_problem(grid), f, 1.0, 60.0)
        assert report.final <= 0.05
        assert report.opposite_discrepancy >= 0.5
        assert report.flags == ()

    def test_short_grid(self):
        """Test that reflections reaching the window before T are refused."""
        grid = origin_grid(30.0, 1024)
        f = RadialFunction(grid, bump(grid.r))
        with pytest.raises(ValueError, match="r_max"):
            limiting_amplitude_experiment(free_problem(grid), f, 1.0, 60.0)

    def test_frequency_positive(self):
        """Test that mu <= 0 is rejected."""
        grid = origin_grid(60.0, 1024)
        f = RadialFunction(grid, bump(grid.r))
        with pytest.raises(ValueError, match="mu"):
            limiting_amplitude_experiment(free_problem(grid), f, 0.0, 10.0)
