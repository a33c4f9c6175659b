"""
Time-dependent experiments per radial mode.

Schrodinger (i v_t = A v) is stepped by Crank-Nicolson, the wave equation
(v_tt + A v = F) by leapfrog, both on the symmetrised form S = D A D^{-1} of the
Dirichlet mode operator without the energy term. Norms and energies are the
h-weighted Euclidean ones of w = D v.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad, trapezoid
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal, solve_banded
from scipy.sparse import diags, identity
from scipy.sparse.linalg import splu
from scipy.stats import linregress

from lab.radial_core import (
    Cutoff,
    NumericalError,
    Profiles,
    RadialFunction,
    RadialGrid,
    WeightSpec,
    ModeParams,
    radial_gradient,
    smooth_step,
    step_cutoff,
    to_mode_source,
    weighted_norm,
)
from lab.resolvent_solver import (
    ModeProblem,
    SingularSystemError,
    TridiagonalOperator,
    assemble_mode_operator,
    solve_resolvent_mode,
    symmetrize,
)
from settings import settings

logger = logging.getLogger(__name__)

SCHEMES = ("crank_nicolson", "leapfrog", "reference")
MAX_STORED = 400
NORM_TOLERANCE = 1e-6
ENERGY_TOLERANCE = 1e-6


class InstabilityError(NumericalError):
    """Norm or energy growth in a scheme that should conserve it."""


class CFLViolation(NumericalError):
    """Time step too large for the explicit wave scheme."""


@dataclass(frozen=True, eq=False)
class SpatialGenerator:
    """Symmetrised Dirichlet mode operator and the similarity that produced it."""

    problem: ModeProblem
    operator: TridiagonalOperator
    diag: np.ndarray
    offdiag: np.ndarray
    scale: np.ndarray

    @property
    def grid(self) -> RadialGrid:
        return self.problem.grid

    @property
    def h(self) -> float:
        return self.grid.h

    def matrix(self, absorber: Optional[np.ndarray] = None):
        diagonal = self.diag.astype(complex) if absorber is None else self.diag - 1j * absorber
        return diags([self.offdiag, diagonal, self.offdiag], [-1, 0, 1], format="csc")

    def to_symmetric(self, v: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(v, dtype=complex)

    def from_symmetric(self, w: np.ndarray) -> np.ndarray:
        return w / self.scale

    def norm(self, w: np.ndarray) -> float:
        return float(np.sqrt(self.h) * np.linalg.norm(w))

    def apply(self, w: np.ndarray) -> np.ndarray:
        return self.matrix() @ w

    def smallest_eigenvalue(self) -> float:
        return float(eigvalsh_tridiagonal(self.diag, self.offdiag, select="i", select_range=(0, 0))[0])

    def largest_eigenvalue(self) -> float:
        N = len(self.diag)
        return float(eigvalsh_tridiagonal(self.diag, self.offdiag, select="i", select_range=(N - 1, N - 1))[0])

    def eigendecomposition(self) -> tuple[np.ndarray, np.ndarray]:
        return eigh_tridiagonal(self.diag, self.offdiag)


def spatial_generator(problem: ModeProblem) -> SpatialGenerator:
    """
    Build the symmetrised generator of a mode problem.

    Raises:
        ValueError: epsilon > 0 or a complex potential
    """
    if problem.epsilon != 0:
        raise ValueError(f"Evolution needs epsilon = 0, got {problem.epsilon}")
    op = assemble_mode_operator(problem, "dirichlet", include_energy=False)
    sym = symmetrize(op)
    return SpatialGenerator(problem, op, sym.diag, sym.offdiag, sym.scale)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored states of one evolution; conserved_log holds the L2 norm or the discrete energy."""

    times: np.ndarray
    states: list
    scheme: str
    dt: float
    conserved_log: np.ndarray
    problem: ModeProblem
    velocities: Optional[list] = None
    absorber: bool = False
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"Unknown scheme '{self.scheme}', expected one of {SCHEMES}")
        if len(self.times) != len(self.states):
            raise ValueError("Trajectory needs one state per stored time")

    @property
    def grid(self) -> RadialGrid:
        return self.problem.grid

    def index(self, t: float) -> int:
        """Index of the stored time t (within half a step)."""
        k = int(np.argmin(np.abs(self.times - t)))
        tolerance = 0.5 * self.dt if self.dt > 0 else 1e-12
        if abs(self.times[k] - t) > tolerance * (1 + 1e-9):
            raise ValueError(f"Time {t} is not stored in the trajectory")
        return k


def _store_stride(steps: int, store_every: Optional[int]) -> int:
    if store_every is None:
        return max(1, steps // MAX_STORED)
    if store_every < 1:
        raise ValueError(f"store_every must be >= 1, got {store_every}")
    return store_every


def _check_step(dt: float, T: float) -> int:
    if not dt > 0:
        raise ValueError(f"Time step dt must be positive, got {dt}")
    if not T > 0:
        raise ValueError(f"Final time T must be positive, got {T}")
    return int(round(T / dt))


def _check_data(v: RadialFunction, problem: ModeProblem, name: str) -> None:
    if len(v.grid) != len(problem.grid) or not np.array_equal(v.r, problem.grid.r):
        raise ValueError(f"Initial data {name} is not sampled on the problem grid")


def absorber_profile(grid: RadialGrid, strength: float, fraction: Optional[float] = None) -> np.ndarray:
    """Sponge W(r) rising smoothly from 0 to strength over the outer fraction of the grid."""
    fraction = settings.absorber_fraction if fraction is None else fraction
    if not 0 < fraction < 1:
        raise ValueError(f"Absorber fraction must lie in (0, 1), got {fraction}")
    width = fraction * (grid.r_max - grid.r_min)
    start = grid.r_max - width
    return strength * smooth_step((grid.r - start) / width) ** 2


def _crank_nicolson(gen: SpatialGenerator, w: np.ndarray, dt: float, steps: int, absorber=None):
    """Yield w after each Crank-Nicolson step."""
    H = gen.matrix(absorber)
    eye = identity(len(w), dtype=complex, format="csc")
    lu = splu((eye + 0.5j * dt * H).tocsc())
    explicit = (eye - 0.5j * dt * H).tocsr()
    for _ in range(steps):
        w = lu.solve(explicit @ w)
        yield w


@dataclass(frozen=True)
class AbsorberCalibration:
    strength: float
    reflection: float


@lru_cache(maxsize=32)
def _calibrate(r_min: float, r_max: float, N: int, dt: float, fraction: float, momentum: float, target: float):
    grid = RadialGrid(np.linspace(r_min, r_max, N), (r_max - r_min) / (N - 1))
    gen = spatial_generator(ModeProblem(ModeParams(3, 0), Profiles.free(grid), 0.0))
    start = r_max - fraction * (r_max - r_min)
    center = 0.5 * start
    width = max(5.0, 10.0 * grid.h)
    packet = np.exp(-((grid.r - center) ** 2) / (2 * width ** 2) + 1j * momentum * grid.r)
    w0 = gen.to_symmetric(packet)
    interior = grid.r < start
    initial = gen.norm(w0)
    # components below momentum - 4.5/width carry a negligible share of the mass
    slowest = max(2.0 * (momentum - 4.5 / width), 0.5)
    steps = int(np.ceil(2.0 * (r_max - center) / slowest / dt))

    best = AbsorberCalibration(float("nan"), float("inf"))
    for strength in np.geomspace(0.5, 50.0, 9):
        w = w0
        for w in _crank_nicolson(gen, w0, dt, steps, absorber_profile(grid, strength, fraction)):
            pass
        reflection = gen.norm(np.where(interior, w, 0.0)) / initial
        logger.debug(f"Absorber strength {strength:.3g}: reflected fraction {reflection:.3e}")
        if reflection < best.reflection:
            best = AbsorberCalibration(float(strength), float(reflection))
        if reflection < target:
            break
    if best.reflection >= target:
        logger.warning(f"Absorber calibration reached only {best.reflection:.2e} reflection (target {target:.0e})")
    return best


def calibrate_absorber(grid: RadialGrid, dt: float) -> AbsorberCalibration:
    """
    Choose the sponge strength for a grid and time step.

    A packet with momentum settings.absorber_reference_momentum is sent into the
    sponge; the first strength reflecting less than the target fraction in L2 is
    kept (or the best one found). Results are cached per grid and time step.
    """
    return _calibrate(
        float(grid.r_min), float(grid.r_max), len(grid), float(dt),
        settings.absorber_fraction, settings.absorber_reference_momentum, settings.absorber_reflection_target,
    )


def _group_speed(gen: SpatialGenerator, w0: np.ndarray) -> float:
    """Energy-based bound 2 sqrt(<S w, w> / <w, w>) times the safety margin."""
    mass = float(np.vdot(w0, w0).real)
    if mass == 0:
        return 0.0
    energy = float(np.vdot(w0, gen.matrix() @ w0).real) / mass
    return 2.0 * np.sqrt(max(energy, 0.0)) * settings.group_speed_margin


def evolve_schrodinger(
    problem: ModeProblem,
    v0: RadialFunction,
    dt: float,
    T: float,
    absorber: bool = False,
    store_every: Optional[int] = None,
    absorber_strength: Optional[float] = None,
) -> Trajectory:
    """
    Crank-Nicolson evolution of i v_t = A v with Dirichlet or sponge far boundary.

    Args:
        problem: Mode problem with epsilon = 0
        v0: Initial mode profile
        dt: Time step
        T: Final time
        absorber: Enable the -iW sponge on the outer part of the grid
        store_every: Store every k-th step (default keeps at most a few hundred states)
        absorber_strength: Sponge strength (calibrated when omitted)

    Returns:
        Trajectory: conserved_log holds the L2 norm at each stored time

    Raises:
        ValueError: Bad step, final time or data
        InstabilityError: Norm growth above 1e-6 per step without sponge, any growth with it
    """
    steps = _check_step(dt, T)
    _check_data(v0, problem, "v0")
    gen = spatial_generator(problem)
    stride = _store_stride(steps, store_every)
    w = gen.to_symmetric(v0.values)

    flags: tuple[str, ...] = ()
    W = None
    if absorber:
        strength = calibrate_absorber(gen.grid, dt).strength if absorber_strength is None else absorber_strength
        W = absorber_profile(gen.grid, strength)
    elif T * _group_speed(gen, w) > gen.grid.r_max:
        flags = ("reflection_risk",)
        logger.warning(f"Schrodinger run to T={T} may reflect off r_max={gen.grid.r_max}; enable the absorber")

    norm = gen.norm(w)
    times, states, norms = [0.0], [v0], [norm]
    for k, w in enumerate(_crank_nicolson(gen, w, dt, steps, W), start=1):
        current = gen.norm(w)
        growth = current - norm
        if norm > 0 and (growth > (1e-12 if absorber else NORM_TOLERANCE) * norm):
            raise InstabilityError(f"Norm grew by {growth / norm:.3e} at step {k}")
        norm = current
        if k % stride == 0 or k == steps:
            times.append(k * dt)
            states.append(RadialFunction(gen.grid, gen.from_symmetric(w)))
            norms.append(current)
    logger.debug(f"Schrodinger run: {steps} steps, final norm {norm:.6e}")
    return Trajectory(
        times=np.array(times),
        states=states,
        scheme="crank_nicolson",
        dt=dt,
        conserved_log=np.array(norms),
        problem=problem,
        absorber=absorber,
        flags=flags,
    )


def _wave_energy(gen: SpatialGenerator, S, w_next: np.ndarray, w_curr: np.ndarray, dt: float) -> float:
    kinetic = np.linalg.norm((w_next - w_curr) / dt) ** 2
    potential = np.vdot(w_next, S @ w_curr).real
    return float(0.5 * gen.h * (kinetic + potential))


def check_cfl(gen: SpatialGenerator, dt: float) -> float:
    """
    Raise CFLViolation unless dt <= cfl h and dt^2 lambda_max <= 4; returns lambda_max.
    """
    if dt > settings.cfl_number * gen.h:
        raise CFLViolation(f"dt={dt} exceeds {settings.cfl_number} h = {settings.cfl_number * gen.h}")
    lam_max = gen.largest_eigenvalue()
    if dt ** 2 * lam_max > 4.0:
        raise CFLViolation(f"dt^2 lambda_max = {dt ** 2 * lam_max:.4f} exceeds 4")
    return lam_max


def _leapfrog(gen, w0, w1, dt, steps, stride, source=None, check_energy=True):
    S = gen.matrix()
    if source is None:
        force = lambda t: 0.0
    else:
        g, mu = source
        force = lambda t: np.exp(1j * mu * t) * g

    w_prev = w0
    w_curr = w0 + dt * w1 + 0.5 * dt ** 2 * (force(0.0) - S @ w0)
    energy0 = _wave_energy(gen, S, w_curr, w_prev, dt)
    times, states, velocities, energies = [0.0], [w0], [w1], [energy0]
    for k in range(1, steps + 1):
        w_next = 2.0 * w_curr - w_prev + dt ** 2 * (force(k * dt) - S @ w_curr)
        if k % stride == 0 or k == steps:
            energy = _wave_energy(gen, S, w_next, w_curr, dt)
            if check_energy and abs(energy - energy0) > ENERGY_TOLERANCE * energy0:
                raise InstabilityError(f"Wave energy drifted by {(energy - energy0) / energy0:.3e} at step {k}")
            times.append(k * dt)
            states.append(w_curr)
            velocities.append((w_next - w_prev) / (2.0 * dt))
            energies.append(energy)
        w_prev, w_curr = w_curr, w_next
    return times, states, velocities, energies


def evolve_wave(
    problem: ModeProblem,
    v0: RadialFunction,
    v1: RadialFunction,
    dt: float,
    T: float,
    store_every: Optional[int] = None,
) -> Trajectory:
    """
    Leapfrog evolution of v_tt + A v = 0 from (v, v_t) = (v0, v1), Dirichlet at r_max.

    conserved_log holds the discrete energy
    E = h/2 (||(w^{k+1} - w^k)/dt||^2 + <w^{k+1}, S w^k>), exactly conserved by the scheme.

    Raises:
        ValueError: Bad step, final time or data
        CFLViolation: dt > cfl h or dt^2 lambda_max > 4
        InstabilityError: Energy drift above 1e-6 relative
    """
    steps = _check_step(dt, T)
    _check_data(v0, problem, "v0")
    _check_data(v1, problem, "v1")
    gen = spatial_generator(problem)
    check_cfl(gen, dt)
    stride = _store_stride(steps, store_every)
    times, states, velocities, energies = _leapfrog(
        gen, gen.to_symmetric(v0.values), gen.to_symmetric(v1.values), dt, steps, stride
    )
    logger.debug(f"Wave run: {steps} steps, energy {energies[0]:.6e} -> {energies[-1]:.6e}")
    return Trajectory(
        times=np.array(times),
        states=[RadialFunction(gen.grid, gen.from_symmetric(w)) for w in states],
        scheme="leapfrog",
        dt=dt,
        conserved_log=np.array(energies),
        problem=problem,
        velocities=[RadialFunction(gen.grid, gen.from_symmetric(w)) for w in velocities],
    )


def reference_evolution(
    problem: ModeProblem,
    v0: RadialFunction,
    times: np.ndarray,
    v1: Optional[RadialFunction] = None,
    equation: str = "schrodinger",
) -> Trajectory:
    """
    Exact exponentiation of the symmetrised generator by dense eigendecomposition.

    Schrodinger: w(t) = Q exp(-i Lambda t) Q^T w0. Wave: w(t) = Q (cos(omega t) c0 + sin(omega t)/omega c1)
    with omega = sqrt(Lambda).

    Raises:
        ValueError: Unknown equation, or negative eigenvalues for the wave equation
    """
    if equation not in ("schrodinger", "wave"):
        raise ValueError(f"Unknown equation '{equation}', expected 'schrodinger' or 'wave'")
    _check_data(v0, problem, "v0")
    gen = spatial_generator(problem)
    lam, Q = gen.eigendecomposition()
    c0 = Q.T @ gen.to_symmetric(v0.values)
    times = np.asarray(times, dtype=float)

    states, velocities, conserved = [], [], []
    if equation == "schrodinger":
        for t in times:
            w = Q @ (np.exp(-1j * lam * t) * c0)
            states.append(RadialFunction(gen.grid, gen.from_symmetric(w)))
            conserved.append(gen.norm(w))
    else:
        if lam[0] < 0:
            raise ValueError(f"Wave reference needs a non-negative generator, lowest eigenvalue {lam[0]:.3e}")
        c1 = Q.T @ gen.to_symmetric(v1.values if v1 is not None else np.zeros(len(lam)))
        omega = np.sqrt(lam)
        safe = np.where(omega > 0, omega, 1.0)
        for t in times:
            sine = np.where(omega > 0, np.sin(omega * t) / safe, t)
            coeff = np.cos(omega * t) * c0 + sine * c1
            rate = -omega * np.sin(omega * t) * c0 + np.cos(omega * t) * c1
            states.append(RadialFunction(gen.grid, gen.from_symmetric(Q @ coeff)))
            velocities.append(RadialFunction(gen.grid, gen.from_symmetric(Q @ rate)))
            conserved.append(0.5 * gen.h * float(np.sum(np.abs(rate) ** 2 + lam * np.abs(coeff) ** 2)))
    return Trajectory(
        times=times,
        states=states,
        scheme="reference",
        dt=float(np.min(np.diff(times))) if len(times) > 1 else 0.0,
        conserved_log=np.array(conserved),
        problem=problem,
        velocities=velocities or None,
    )


def time_reversal_error(
    problem: ModeProblem,
    v0: RadialFunction,
    dt: float,
    T: float,
    scheme: str = "crank_nicolson",
    v1: Optional[RadialFunction] = None,
) -> float:
    """Relative L2 error after evolving to T and back with the negated step."""
    steps = _check_step(dt, T)
    _check_data(v0, problem, "v0")
    gen = spatial_generator(problem)
    w0 = gen.to_symmetric(v0.values)
    reference = gen.norm(w0)
    if reference == 0:
        return 0.0

    if scheme == "crank_nicolson":
        w = w0
        for w in _crank_nicolson(gen, w0, dt, steps):
            pass
        back = w
        for back in _crank_nicolson(gen, w, -dt, steps):
            pass
    elif scheme == "leapfrog":
        check_cfl(gen, dt)
        S = gen.matrix()
        w1 = gen.to_symmetric(v1.values) if v1 is not None else np.zeros_like(w0)
        prev, curr = w0, w0 + dt * w1 - 0.5 * dt ** 2 * (S @ w0)
        for _ in range(steps - 1):
            prev, curr = curr, 2.0 * curr - prev - dt ** 2 * (S @ curr)
        prev, curr = curr, prev
        for _ in range(steps - 1):
            prev, curr = curr, 2.0 * curr - prev - dt ** 2 * (S @ curr)
        back = curr
    else:
        raise ValueError(f"Unknown scheme '{scheme}', expected 'crank_nicolson' or 'leapfrog'")
    return gen.norm(back - w0) / reference


def smoothing_data_norm(problem: ModeProblem, v0: RadialFunction) -> float:
    """
    <(1 + A)^{1/2} v0, v0> without forming eigenvectors.

    Uses (1 + A)^{1/2} = (2/pi) int_0^inf (1 + A)(1 + A + s^2)^{-1} ds, so each
    quadrature node costs one banded solve and memory stays O(N).

    Raises:
        ValueError: Data on another grid, or 1 + A not positive definite
    """
    _check_data(v0, problem, "v0")
    gen = spatial_generator(problem)
    w = gen.to_symmetric(v0.values)
    if not np.any(w):
        return 0.0
    lowest = gen.smallest_eigenvalue()
    if 1.0 + lowest <= 0:
        raise ValueError(f"Data norm needs 1 + A > 0, lowest eigenvalue {lowest:.3e}")
    shifted = w + gen.apply(w)
    bands = np.zeros((3, len(w)))
    bands[0, 1:] = gen.offdiag
    bands[2, :-1] = gen.offdiag

    def integrand(s: float) -> float:
        bands[1] = 1.0 + gen.diag + s * s
        y = solve_banded((1, 1), bands, w, check_finite=False)
        # R(s) and 1 + A commute, so this is <R(s)(1 + A) w, w> without cancellation
        return float(np.vdot(y, shifted).real)

    value, _ = quad(integrand, 0.0, np.inf, epsrel=1e-9, limit=200)
    return float(gen.h * 2.0 / np.pi * value)


@dataclass(frozen=True, eq=False)
class SmoothingSeries:
    """Running integral of the local smoothing norm and its data normalisation."""

    times: np.ndarray
    integral: np.ndarray
    data_norm: float

    @property
    def ratio(self) -> np.ndarray:
        if self.data_norm == 0:
            return np.zeros_like(self.integral)
        return self.integral / self.data_norm

    def at(self, T: float) -> float:
        return float(np.interp(T, self.times, self.integral))

    def plateau_ratio(self, T: float) -> float:
        """I(2T) / I(T)."""
        if 2 * T > self.times[-1]:
            raise ValueError(f"Series ends at {self.times[-1]}, cannot evaluate I({2 * T})")
        base = self.at(T)
        return self.at(2 * T) / base if base > 0 else float("nan")


def local_smoothing_integral(
    traj: Trajectory,
    sigma: Optional[float] = None,
    up_to_T: Optional[float] = None,
) -> SmoothingSeries:
    """
    I(T) = int_0^T ||u(t)||^2_{H^{1,-1/2-sigma}} dt by the trapezoid rule over stored times.

    Raises:
        ValueError: sigma <= 0, or a run flagged for boundary reflections
    """
    sigma = settings.default_sigma if sigma is None else sigma
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if "reflection_risk" in traj.flags:
        raise ValueError("Trajectory may contain boundary reflections; rerun with the absorber enabled")
    mode = traj.problem.mode
    mask = np.ones(len(traj.times), dtype=bool) if up_to_T is None else traj.times <= up_to_T + 1e-12
    times = traj.times[mask]
    weight = WeightSpec(1, -0.5 - sigma)
    density = np.array([weighted_norm(v, weight, mode) ** 2 for v, keep in zip(traj.states, mask) if keep])
    integral = cumulative_trapezoid(density, times, initial=0.0)
    return SmoothingSeries(times, integral, smoothing_data_norm(traj.problem, traj.states[0]))


@dataclass(frozen=True, eq=False)
class LocalObservables:
    times: np.ndarray
    local_mass: np.ndarray
    local_energy: np.ndarray


def _energy_density(traj: Trajectory, k: int, op: TridiagonalOperator) -> tuple[np.ndarray, np.ndarray]:
    """(|v_t|^2 or 0) and the gradient density |v_r - (n-1)v/(2r)|^2 + l(l+n-2)|v|^2/r^2."""
    mode = traj.problem.mode
    v = traj.states[k]
    grad = radial_gradient(v, mode, op.derivative(v.values))
    gradient = np.abs(grad) ** 2 + mode.angular * np.abs(v.values) ** 2 / v.r ** 2
    kinetic = np.abs(traj.velocities[k].values) ** 2 if traj.velocities is not None else np.zeros_like(gradient)
    return kinetic, gradient


def local_observables(traj: Trajectory, r_K: float) -> LocalObservables:
    """
    Local mass and local energy in r <= r_K at every stored time.

    Raises:
        ValueError: r_K not below r_max / 2
    """
    grid = traj.grid
    if not 0 < r_K < grid.r_max / 2:
        raise ValueError(f"r_K must lie in (0, r_max/2 = {grid.r_max / 2}), got {r_K}")
    mask = grid.mask(-np.inf, r_K)
    r = grid.r[mask]
    op = assemble_mode_operator(traj.problem, "dirichlet", include_energy=False)
    masses, energies = [], []
    for k, v in enumerate(traj.states):
        kinetic, gradient = _energy_density(traj, k, op)
        masses.append(trapezoid(np.abs(v.values[mask]) ** 2, r))
        energies.append(trapezoid((kinetic + gradient)[mask], r))
    return LocalObservables(traj.times.copy(), np.array(masses), np.array(energies))


@dataclass(frozen=True)
class DecayFit:
    """Least-squares slope of log sup|u| against log t."""

    window: tuple[float, float]
    fitted_exponent: float
    fit_residual: float
    samples: int
    flags: tuple[str, ...] = ()


def sup_profile(traj: Trajectory, r_floor: Optional[float] = None, r_hi: float = np.inf) -> np.ndarray:
    """sup over r_floor <= r <= r_hi of |u| = r^{-(n-1)/2}|v| at each stored time."""
    grid = traj.grid
    r_floor = 5.0 * grid.h if r_floor is None else r_floor
    mask = grid.mask(r_floor, r_hi)
    if not np.any(mask):
        raise ValueError(f"No grid points in [{r_floor}, {r_hi}]")
    factor = grid.r[mask] ** (-traj.problem.mode.half_dim)
    return np.array([np.max(np.abs(v.values[mask]) * factor) for v in traj.states])


def pointwise_decay_fit(
    traj: Trajectory,
    t_window: tuple[float, float],
    r_floor: Optional[float] = None,
    r_hi: float = np.inf,
) -> DecayFit:
    """
    Fit sup|u(t)| ~ t^p on the window; a sup falling below the vanishing threshold is flagged.

    Raises:
        ValueError: t_lo < 1 or fewer than 8 stored times in the window
    """
    t_lo, t_hi = t_window
    if t_lo < 1 or not t_lo < t_hi:
        raise ValueError(f"Decay window must satisfy 1 <= t_lo < t_hi, got {t_window}")
    sups = sup_profile(traj, r_floor, r_hi)
    mask = (traj.times >= t_lo) & (traj.times <= t_hi)
    samples = int(np.count_nonzero(mask))
    if samples < 8:
        raise ValueError(f"Decay window {t_window} holds {samples} stored times, need at least 8")

    threshold = settings.vanishing_threshold * sups[0]
    if np.any(sups[mask] <= threshold):
        logger.info(f"sup|u| vanished below {threshold:.2e} inside {t_window}")
        return DecayFit((t_lo, t_hi), float("-inf"), float("nan"), samples, ("vanishing",))
    fit = linregress(np.log(traj.times[mask]), np.log(sups[mask]))
    return DecayFit((t_lo, t_hi), float(fit.slope), float(fit.rvalue ** 2), samples)


@dataclass(frozen=True, eq=False)
class MorawetzSpec:
    """Cutoff chi (0 for r <= r0, 1 for r >= 2r0) of the conformal multiplier."""

    r0: float
    chi: Cutoff

    @property
    def split_radius(self) -> float:
        return 4.0 * self.r0

    def vectorfield(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients (t^2 + chi r^2, 2 t r chi) of d/dt and d/dr."""
        r = self.chi.r
        return t ** 2 + self.chi.value * r ** 2, 2.0 * t * r * self.chi.value

    def b(self, t: float, n: int, theta: Optional[np.ndarray] = None) -> np.ndarray:
        """Lower-order coefficient (n-1) t + 2 t chi r theta."""
        theta = np.zeros_like(self.chi.r) if theta is None else theta
        return (n - 1) * t + 2.0 * t * self.chi.value * self.chi.r * theta


def morawetz_spec(grid: RadialGrid, r0: float) -> MorawetzSpec:
    if r0 <= 0 or 4.0 * r0 >= grid.r_max:
        raise ValueError(f"r0 must lie in (0, r_max/4), got {r0}")
    return MorawetzSpec(r0, step_cutoff(grid.r, r0, 2.0 * r0))


def morawetz_energy(traj: Trajectory, t: float, spec: MorawetzSpec) -> float:
    """
    Conformal energy E_K(t) in the radial reduction.

    Interior (r <= 4r0): t^2 int (|u_t|^2 + |grad u|^2 + |u|^2).
    Exterior: int (t+r)^2 |(d_t + d_r)u|^2 + (t-r)^2 |(d_t - d_r)u|^2
        + (t^2 + r^2) l(l+n-2) r^{-2} |u|^2 + (1 + t^2 r^{-2}) |u|^2.

    Raises:
        ValueError: Trajectory without velocities, or t not stored
    """
    if traj.velocities is None:
        raise ValueError("E_K needs a wave trajectory with stored velocities")
    k = traj.index(t)
    t = float(traj.times[k])
    mode = traj.problem.mode
    r = traj.grid.r
    op = assemble_mode_operator(traj.problem, "dirichlet", include_energy=False)
    v = traj.states[k].values
    vt = traj.velocities[k].values
    grad = radial_gradient(traj.states[k], mode, op.derivative(v))
    q = np.abs(v) ** 2

    inner = r <= spec.split_radius
    interior = t ** 2 * (np.abs(vt) ** 2 + np.abs(grad) ** 2 + mode.angular * q / r ** 2 + q)
    exterior = (
        (t + r) ** 2 * np.abs(vt + grad) ** 2
        + (t - r) ** 2 * np.abs(vt - grad) ** 2
        + (t ** 2 + r ** 2) * mode.angular * q / r ** 2
        + (1.0 + t ** 2 / r ** 2) * q
    )
    density = np.where(inner, interior, exterior)
    return float(trapezoid(density, r))


def trajectory_summary(traj: Trajectory, r_K: float, spec: Optional[MorawetzSpec] = None) -> list[dict]:
    """Rows t, l2_norm, local_mass, local_energy, sup_u, E_K (NaN with a flag when not defined)."""
    observables = local_observables(traj, r_K)
    sups = sup_profile(traj)
    rows = []
    for k, t in enumerate(traj.times):
        row = {
            "t": float(t),
            "l2_norm": float(np.sqrt(trapezoid(np.abs(traj.states[k].values) ** 2, traj.grid.r))),
            "local_mass": float(observables.local_mass[k]),
            "local_energy": float(observables.local_energy[k]),
            "sup_u": float(sups[k]),
            "E_K": float("nan"),
            "flag": "",
        }
        if spec is not None and traj.velocities is not None:
            row["E_K"] = morawetz_energy(traj, t, spec)
        else:
            row["flag"] = "no_conformal_energy"
        rows.append(row)
    return rows


@dataclass(frozen=True, eq=False)
class LimitingAmplitudeReport:
    """Discrepancy of u(t) e^{-i mu t} from the time-harmonic solution on the window."""

    times: np.ndarray
    discrepancy: np.ndarray
    reference_norm: float
    opposite_discrepancy: float
    flags: tuple[str, ...] = ()

    @property
    def final(self) -> float:
        return float(self.discrepancy[-1])

    @property
    def final_to_early(self) -> float:
        early = self.discrepancy[len(self.discrepancy) // 4]
        return float(self.final / early) if early > 0 else float("nan")


def limiting_amplitude_experiment(
    problem: ModeProblem,
    f: RadialFunction,
    mu: float,
    T: float,
    K_window: tuple[float, float] = (0.0, 10.0),
    dt: Optional[float] = None,
) -> LimitingAmplitudeReport:
    """
    Drive the wave equation with e^{i mu t} f from rest and compare with the radiating Helmholtz solution.

    With e^{i mu t} forcing the radiating solution solves (A - mu^2) w = g with
    w_r = -i mu w at r_max (lower branch). The discrepancy is relative to
    ||w||_{L2(K)}; the same comparison against the other branch is reported.

    Raises:
        ValueError: mu <= 0, a window outside the grid, or r_max too short for T
        CFLViolation: From the wave scheme
    """
    if mu <= 0:
        raise ValueError(f"Frequency mu must be positive, got {mu}")
    grid = problem.grid
    k_lo, k_hi = K_window
    if not 0 <= k_lo < k_hi < grid.r_max:
        raise ValueError(f"Window {K_window} must lie inside [0, {grid.r_max})")
    if grid.r_max < 0.5 * (T + k_hi) + 10.0:
        raise ValueError(f"r_max={grid.r_max} lets reflections reach the window before T={T}")
    _check_data(f, problem, "f")
    dt = 0.5 * grid.h if dt is None else dt
    steps = _check_step(dt, T)

    g = to_mode_source(f, problem.mode)
    window = grid.mask(k_lo, k_hi)
    r_win = grid.r[window]
    flags: list[str] = []
    references = {}
    for bc_kind, branch in (("incoming", -1), ("outgoing", 1)):
        helmholtz = ModeProblem(problem.mode, problem.profiles, mu ** 2, epsilon=0.0, branch=branch)
        try:
            references[bc_kind] = solve_resolvent_mode(helmholtz, g, bc_kind).v.values
        except SingularSystemError as e:
            logger.warning(f"Helmholtz solve at mu={mu} near a discrete resonance: {e}")
            flags.append("near_resonance")
            references[bc_kind] = None

    gen = spatial_generator(problem)
    check_cfl(gen, dt)
    zero = np.zeros(len(grid), dtype=complex)
    times, states, _, _ = _leapfrog(
        gen, zero, zero, dt, steps, _store_stride(steps, None),
        source=(gen.to_symmetric(g.values), mu), check_energy=False,
    )

    def discrepancy(v: np.ndarray, t: float, reference: Optional[np.ndarray]) -> float:
        if reference is None:
            return float("nan")
        diff = v * np.exp(-1j * mu * t) - reference
        return float(np.sqrt(trapezoid(np.abs(diff[window]) ** 2, r_win)))

    primary = references["incoming"]
    ref_norm = float(np.sqrt(trapezoid(np.abs(primary[window]) ** 2, r_win))) if primary is not None else float("nan")
    scale = ref_norm if ref_norm > 0 else 1.0
    series = np.array([
        discrepancy(gen.from_symmetric(w), t, primary) / scale for w, t in zip(states, times)
    ])
    opposite = discrepancy(gen.from_symmetric(states[-1]), times[-1], references["outgoing"]) / scale
    if ref_norm == 0:
        flags.append("zero_reference")
    logger.info(f"Limiting amplitude mu={mu}: final discrepancy {series[-1]:.3e}, other branch {opposite:.3e}")
    return LimitingAmplitudeReport(np.array(times), series, ref_norm, float(opposite), tuple(flags))
