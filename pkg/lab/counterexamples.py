"""
Constructive counterexamples: a low-energy resonance built by gluing Bessel
profiles, and a sectorial quasimode concentrated at the equator of a sphere.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.stats import linregress

from lab.radial_core import (
    ModeParams,
    Profiles,
    RadialFunction,
    RadialGrid,
    WeightSpec,
    bump_cutoff,
    origin_grid,
    smooth_step_derivatives,
    step_cutoff,
    weighted_norm,
)
from lab.resolvent_solver import (
    ModeProblem,
    assemble_mode_operator,
    solve_resolvent_mode,
    sturm_eigencount,
)
from settings import settings

logger = logging.getLogger(__name__)

RECOVERY_TOLERANCE = 0.01


def _exponent_blend(r: np.ndarray, L: float, blend: tuple[float, float]):
    """Exponent e(r) = L - (2L-1) eta and its first two derivatives."""
    a, b = blend
    width = b - a
    eta, d1, d2 = smooth_step_derivatives((r - a) / width)
    jump = 2.0 * L - 1.0
    return eta, L - jump * eta, -jump * d1 / width, -jump * d2 / width ** 2


def _log_profile(r: np.ndarray, L: float, blend: tuple[float, float]):
    """log v = e(r) log r with its first two derivatives."""
    eta, e, e1, e2 = _exponent_blend(r, L, blend)
    log_r = np.log(r)
    a0 = e * log_r
    a1 = e1 * log_r + e / r
    a2 = e2 * log_r + 2.0 * e1 / r - e / r ** 2
    return eta, a0, a1, a2


@dataclass(frozen=True, eq=False)
class MatchedMode:
    """
    Zero-energy state glued from r^L (inside) and r^{1-L} (outside).

    v and V are the analytic profile and potential sampled on the grid; v_h and
    V_h are their grid-consistent counterparts, for which the discrete mode
    operator annihilates v_h on every row.
    """

    mode: ModeParams
    blend: tuple[float, float]
    v: RadialFunction
    V: RadialFunction
    v_h: RadialFunction
    V_h: RadialFunction
    u_norm_data: dict = field(default_factory=dict)

    @property
    def grid(self) -> RadialGrid:
        return self.v.grid

    def profiles(self, extra: Optional[np.ndarray] = None) -> Profiles:
        values = self.V_h.real if extra is None else self.V_h.real + extra
        return Profiles(RadialFunction(self.grid, values), RadialFunction.zeros(self.grid))

    def u_norm(self, sigma: float) -> float:
        """H^{0,-1/2-sigma} norm of the discrete profile, cached per sigma."""
        if sigma not in self.u_norm_data:
            self.u_norm_data[sigma] = weighted_norm(self.v_h, WeightSpec(0, -0.5 - sigma), self.mode)
        return self.u_norm_data[sigma]

    def kernel_residual(self, discrete: bool = True) -> float:
        """
        Relative interior residual of the zero-energy relation.

        discrete=True applies the operator with V_h to v_h; discrete=False
        applies it with the analytic V to the analytic v, which converges at h^2.
        """
        profiles = self.profiles() if discrete else Profiles(self.V, RadialFunction.zeros(self.grid))
        op = assemble_mode_operator(ModeProblem(self.mode, profiles, 0.0), "dirichlet", include_energy=False)
        v = (self.v_h if discrete else self.v).values
        defect = op.apply(v)[1:-1]
        r = self.grid.r[1:-1]
        scale = np.max(np.abs(self.mode.centrifugal * v[1:-1] / r ** 2))
        return float(np.max(np.abs(defect)) / scale)

    def regrid(self, grid: RadialGrid) -> "MatchedMode":
        return build_bessel_matching(self.mode.l, self.mode.n, self.blend, grid)


def _discrete_kernel(
    grid: RadialGrid,
    mode: ModeParams,
    eta: np.ndarray,
    v: np.ndarray,
    blend: tuple[float, float],
) -> tuple[np.ndarray, np.ndarray]:
    """Regular and decaying discrete solutions of the free recurrence, blended like v."""
    op = assemble_mode_operator(ModeProblem(mode, Profiles.free(grid), 0.0), "dirichlet", include_energy=False)
    lower, diag, upper = op.lower.real, op.diag.real, op.upper.real
    r = grid.r
    N = len(r)
    L = mode.L
    i_out = min(int(np.searchsorted(r, blend[1])) + 1, N - 1)
    i_in = max(int(np.searchsorted(r, blend[0])) - 1, 0)

    regular = np.zeros(N)
    regular[0] = 1.0
    regular[1] = -diag[0] * regular[0] / upper[0]
    for i in range(1, i_out):
        regular[i + 1] = -(lower[i - 1] * regular[i - 1] + diag[i] * regular[i]) / upper[i]
    regular *= r[i_in] ** L / regular[i_in]

    decaying = np.zeros(N)
    decaying[-1] = r[-1] ** (1.0 - L)
    decaying[-2] = r[-2] ** (1.0 - L)
    for i in range(N - 2, i_in, -1):
        decaying[i - 1] = -(diag[i] * decaying[i] + upper[i] * decaying[i + 1]) / lower[i - 1]
    decaying *= r[i_out] ** (1.0 - L) / decaying[i_out]

    inside = (eta > 0.0) & (eta < 1.0)
    v_h = np.where(eta <= 0.0, regular, decaying)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr_in = regular / r ** L
        corr_out = decaying / r ** (1.0 - L)
    v_h[inside] = v[inside] * ((1.0 - eta[inside]) * corr_in[inside] + eta[inside] * corr_out[inside])

    defect = op.apply(v_h.astype(complex)).real
    touched = inside.copy()
    touched[1:] |= inside[:-1]
    touched[:-1] |= inside[1:]
    V_h = np.zeros(N)
    V_h[touched] = -defect[touched] / v_h[touched]
    return v_h, V_h


def build_bessel_matching(
    l: int,
    n: int,
    blend: tuple[float, float] = (0.5, 1.0),
    grid: Optional[RadialGrid] = None,
) -> MatchedMode:
    """
    Glue r^L to r^{1-L} through the exponent blend and return the potential that makes it a zero-energy state.

    Args:
        l: Even angular order, at least 4
        n: Dimension
        blend: Transition interval inside [1/2, 1]
        grid: Sampling grid (defaults to r in [h, 8] with h = settings.bessel_spacing)

    Raises:
        ValueError: Odd or small l, or a blend leaving [1/2, 1]
    """
    if l < 4 or l % 2:
        raise ValueError(f"Angular order l must be even and >= 4, got {l}")
    a, b = blend
    if not 0.5 <= a < b <= 1.0:
        raise ValueError(f"Blend interval must satisfy 1/2 <= a < b <= 1, got {blend}")
    mode = ModeParams(n, l)
    if grid is None:
        h = settings.bessel_spacing
        grid = origin_grid(8.0, int(round(8.0 / h)))

    r = grid.r
    L = mode.L
    eta, a0, a1, a2 = _log_profile(r, L, blend)
    v = np.exp(a0)
    in_blend = (r >= a) & (r <= b)
    V = np.where(in_blend, a2 + a1 ** 2 - mode.centrifugal / r ** 2, 0.0)
    v_h, V_h = _discrete_kernel(grid, mode, eta, v, blend)
    logger.debug(f"Matched mode l={l}, n={n}: sup|V|={np.max(np.abs(V)):.4e}, N={len(grid)}")
    return MatchedMode(
        mode=mode,
        blend=(a, b),
        v=RadialFunction(grid, v.astype(complex)),
        V=RadialFunction(grid, V.astype(complex)),
        v_h=RadialFunction(grid, v_h.astype(complex)),
        V_h=RadialFunction(grid, V_h.astype(complex)),
    )


def analytic_profile(base: MatchedMode, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic (v, v', v'') at arbitrary radii."""
    _, a0, a1, a2 = _log_profile(np.asarray(r, dtype=float), base.mode.L, base.blend)
    v = np.exp(a0)
    return v, v * a1, v * (a2 + a1 ** 2)


def low_energy(m: int, l: int) -> float:
    """lambda_m = m^{-l/10}."""
    return float(m ** (-l / 10.0))


@dataclass(frozen=True)
class BlowupReport:
    """Norm ratio of one perturbed resonance."""

    m: int
    l: int
    lambda_m: float
    eps_m: float
    f_norm: float
    u_norm: float
    ratio: float
    recovery_error: float
    potential_sup: float
    fitted_exponent: Optional[float] = None
    flags: tuple[str, ...] = ()

    def to_row(self) -> dict:
        return {
            "m": self.m,
            "l": self.l,
            "lambda_m": self.lambda_m,
            "eps_m": self.eps_m,
            "f_norm": self.f_norm,
            "u_norm": self.u_norm,
            "ratio": self.ratio,
        }


def _cutoff_m(r: np.ndarray, m: int) -> np.ndarray:
    return step_cutoff(r, 2.0 * m, float(m)).value


def potential_bound(base: MatchedMode, m: int, sigma0: float = 1.0) -> float:
    """sup_r (1+r)^{1+sigma0} |V + lambda_m chi_m| on the base grid (analytic V)."""
    r = base.grid.r
    V_m = base.V.real + low_energy(m, base.mode.l) * _cutoff_m(r, m)
    return float(np.max((1.0 + r) ** (1.0 + sigma0) * np.abs(V_m)))


def _probe_grid(base: MatchedMode, m: int, grid: Optional[RadialGrid]) -> MatchedMode:
    if grid is None:
        h = settings.bessel_spacing
        grid = origin_grid(8.0 * m, int(round(8.0 * m / h)))
    if grid.r_max < 8.0 * m:
        raise ValueError(f"Grid reaches r={grid.r_max}, the probe at m={m} needs r_max >= {8 * m}")
    if len(grid) == len(base.grid) and np.array_equal(grid.r, base.grid.r):
        return base
    return base.regrid(grid)


@dataclass(frozen=True, eq=False)
class PerturbedResonance:
    """Cut-off resonance u_m, its real forcing f_m and the grid they live on."""

    base: MatchedMode
    m: int
    lambda_m: float
    chi: np.ndarray
    u: RadialFunction
    f: RadialFunction


def perturbed_resonance(base: MatchedMode, m: int, grid: Optional[RadialGrid] = None) -> PerturbedResonance:
    """
    Cut the resonance off at r ~ m and form f_m = (-Delta_mode + V_m - lambda_m) u_m.

    The forcing is assembled in commutator form, so it vanishes identically off
    the annulus m <= r <= 2m.

    Raises:
        ValueError: m < 2 or a grid shorter than 8m
    """
    if m < 2:
        raise ValueError(f"Cutoff scale m must be >= 2, got {m}")
    local = _probe_grid(base, m, grid)
    lam = low_energy(m, base.mode.l)
    chi = _cutoff_m(local.grid.r, m)
    v = local.v_h.real

    op = assemble_mode_operator(ModeProblem(base.mode, local.profiles(), 0.0), "dirichlet", include_energy=False)
    lower, upper = op.lower.real, op.upper.real
    f = lam * (chi - 1.0) * chi * v
    f[:-1] += upper * (chi[1:] - chi[:-1]) * v[1:]
    f[1:] += lower * (chi[:-1] - chi[1:]) * v[:-1]
    return PerturbedResonance(
        base=local,
        m=m,
        lambda_m=lam,
        chi=chi,
        u=RadialFunction(local.grid, chi * v),
        f=RadialFunction(local.grid, f),
    )


def perturb_and_probe(
    base: MatchedMode,
    m: int,
    sigma: Optional[float] = None,
    eps_ratio: Optional[float] = None,
    grid: Optional[RadialGrid] = None,
    branch: int = 1,
) -> BlowupReport:
    """
    Measure ||u_m|| / ||f_m|| for the resonance perturbed to energy lambda_m.

    The resolvent solve with (V_m, lambda_m, eps_m) and source f_m -+ i eps_m u_m
    must recover u_m; a miss above 1% is flagged.

    Raises:
        ValueError: m < 2, grid too short, or eps_m >= lambda_m
        SingularSystemError: From the cross-validation solve
    """
    sigma = settings.default_sigma if sigma is None else sigma
    eps_ratio = settings.eps_ratio if eps_ratio is None else eps_ratio
    mode = base.mode
    lam = low_energy(m, mode.l)
    eps = eps_ratio * lam
    if not 0 < eps < lam:
        raise ValueError(f"eps_m = {eps} must lie in (0, lambda_m = {lam})")

    pair = perturbed_resonance(base, m, grid)
    local = pair.base
    f_norm = weighted_norm(pair.f, WeightSpec(0, 0.5 + sigma), mode)
    u_norm = weighted_norm(pair.u, WeightSpec(0, -0.5 - sigma), mode)
    ratio = u_norm / f_norm if f_norm > 0 else float("nan")

    problem = ModeProblem(mode, local.profiles(lam * pair.chi), lam, epsilon=eps, branch=branch)
    source = pair.f - pair.u * (1j * branch * eps)
    sol = solve_resolvent_mode(problem, source, "outgoing")
    recovery = weighted_norm(sol.v - pair.u, WeightSpec(0, -0.5 - sigma), mode) / u_norm

    flags: tuple[str, ...] = ()
    if recovery > RECOVERY_TOLERANCE:
        flags = ("recovery_mismatch",)
        logger.warning(f"Resolvent solve misses u_m at m={m}: relative error {recovery:.3e}")
    logger.info(f"Blowup probe m={m}, l={mode.l}: lambda_m={lam:.4e}, ratio={ratio:.4e}")
    return BlowupReport(
        m=m,
        l=mode.l,
        lambda_m=lam,
        eps_m=eps,
        f_norm=f_norm,
        u_norm=u_norm,
        ratio=ratio,
        recovery_error=recovery,
        potential_sup=potential_bound(local, m),
        flags=flags,
    )


@dataclass(frozen=True)
class SpectralSanity:
    """Sturm counts around zero for the base and perturbed potentials."""

    negative_count_base: int
    negative_count_perturbed: int
    zero_window_count: int
    base_zero_count: int

    @property
    def negative_count_stability(self) -> bool:
        return self.negative_count_base == self.negative_count_perturbed


def spectral_sanity(
    base: MatchedMode,
    m: int,
    grid: Optional[RadialGrid] = None,
    zero_width: float = 1e-8,
) -> SpectralSanity:
    """Check that V_m has no eigenvalue within lambda_m/2 of zero while V keeps its zero-energy state."""
    local = _probe_grid(base, m, grid)
    lam = low_energy(m, base.mode.l)
    chi = _cutoff_m(local.grid.r, m)
    unperturbed = ModeProblem(base.mode, local.profiles(), 0.0)
    perturbed = ModeProblem(base.mode, local.profiles(lam * chi), 0.0)
    report = SpectralSanity(
        negative_count_base=sturm_eigencount(unperturbed, (-np.inf, -lam)),
        negative_count_perturbed=sturm_eigencount(perturbed, (-np.inf, -lam)),
        zero_window_count=sturm_eigencount(perturbed, (-lam / 2.0, lam / 2.0)),
        base_zero_count=sturm_eigencount(unperturbed, (-zero_width, zero_width)),
    )
    if report.zero_window_count:
        logger.warning(f"Perturbed potential at m={m} keeps {report.zero_window_count} eigenvalue(s) near zero")
    return report


@dataclass(frozen=True, eq=False)
class BesselSweep:
    reports: list
    fitted_exponent: float
    monotone: bool


def bessel_sweep(
    l: int = 20,
    ms: tuple[int, ...] = (2, 4, 8, 16),
    sigma: Optional[float] = None,
    n: int = 3,
) -> BesselSweep:
    """Probe each m and fit the slope of log(ratio) against log(lambda_m)."""
    if len(ms) < 2:
        raise ValueError("A sweep needs at least two values of m")
    base = build_bessel_matching(l, n)
    reports = [perturb_and_probe(base, m, sigma) for m in ms]
    fit = linregress(np.log([rep.lambda_m for rep in reports]), np.log([rep.ratio for rep in reports]))
    exponent = float(fit.slope)
    ratios = [rep.ratio for rep in reports]
    monotone = all(b > a for a, b in zip(ratios, ratios[1:]))
    return BesselSweep([replace(rep, fitted_exponent=exponent) for rep in reports], exponent, monotone)


@dataclass(frozen=True, eq=False)
class QuasimodeProfile:
    """Sectorial factor sin^l(theta) cos(theta) on the sphere S^n."""

    theta_grid: np.ndarray
    U: np.ndarray
    l: int
    n: int
    lambda_l: int
    chi: np.ndarray
    near_equator_mass: float
    tail_mass: float
    residual_norm: float
    cutoff_norm: float
    normalization: float
    eigen_residual: float

    @property
    def total_mass(self) -> float:
        return self.near_equator_mass + self.tail_mass

    @property
    def quasimode_ratio(self) -> float:
        return self.residual_norm / self.cutoff_norm

    def to_row(self) -> dict:
        return {
            "l": self.l,
            "n": self.n,
            "lambda_l": self.lambda_l,
            "near_mass": self.near_equator_mass,
            "tail_mass": self.tail_mass,
            "residual_norm": self.residual_norm,
            "quasimode_ratio": self.quasimode_ratio,
        }


def quasimode_profile(
    l: int,
    n: int,
    cutoff: tuple[float, float] = (np.pi / 8, np.pi / 4),
    N: int = 4095,
) -> QuasimodeProfile:
    """
    Sample the sectorial quasimode and measure its concentration and residual.

    The residual of chi U is taken from the exact commutator
    [A_l, chi] U = -chi'' U - 2 chi' U' - (n-1) cot(theta) chi' U, since U is an
    exact eigenfunction. The discrete eigen-check applies centred differences on
    [pi/3, 2pi/3] and is reported separately.

    Args:
        l: Angular order, at least 4
        n: Sphere dimension
        cutoff: Rise interval (theta_lo, theta_hi) of the symmetric cutoff
        N: Interior samples theta_j = j pi / (N+1)

    Raises:
        ValueError: Small l or a cutoff outside (0, pi/2]
    """
    if l < 4:
        raise ValueError(f"Angular order l must be >= 4, got {l}")
    if n < 2:
        raise ValueError(f"Sphere dimension n must be >= 2, got {n}")
    lo, hi = cutoff
    if not (0 < lo < np.pi / 4 and lo < hi <= np.pi / 2):
        raise ValueError(f"Cutoff must satisfy 0 < theta_lo < pi/4 and theta_lo < theta_hi <= pi/2, got {cutoff}")
    if N % 2 == 0:
        raise ValueError(f"Sample count N must be odd so the equator is a node, got {N}")

    h = np.pi / (N + 1)
    theta = h * np.arange(1, N + 1)
    s = np.sin(theta)
    c = np.sin(np.pi / 2 - theta)
    U = s ** l * c
    dU = l * s ** (l - 1) * c ** 2 - s ** (l + 1)
    weight = s ** (n - 1) * h
    lambda_l = (l + 1) * (l + n)

    density = U ** 2 * weight
    near = np.abs(theta - np.pi / 2) < np.pi / 4
    near_mass = float(np.sum(density[near]))
    tail_mass = float(np.sum(density[~near]))
    normalization = 1.0 / np.sqrt(near_mass + tail_mass)

    chi = bump_cutoff(theta, (lo, hi), (np.pi - hi, np.pi - lo))
    cot = c / s
    commutator = -chi.d2 * U - 2.0 * chi.d1 * dU - (n - 1) * cot * chi.d1 * U
    residual_norm = float(np.sqrt(np.sum(commutator ** 2 * weight)))
    cutoff_norm = float(np.sqrt(np.sum((chi.value * U) ** 2 * weight)))

    d1 = (U[2:] - U[:-2]) / (2.0 * h)
    d2 = (U[2:] - 2.0 * U[1:-1] + U[:-2]) / h ** 2
    inner = slice(1, -1)
    applied = -d2 - (n - 1) * cot[inner] * d1 + l * (l + n - 2) * U[inner] / s[inner] ** 2 - lambda_l * U[inner]
    window = np.abs(theta[inner] - np.pi / 2) <= np.pi / 6
    eigen_residual = float(np.sqrt(np.sum(applied[window] ** 2 * weight[inner][window]) / np.sum(density)))

    return QuasimodeProfile(
        theta_grid=theta,
        U=U,
        l=l,
        n=n,
        lambda_l=lambda_l,
        chi=chi.value,
        near_equator_mass=near_mass,
        tail_mass=tail_mass,
        residual_norm=residual_norm,
        cutoff_norm=cutoff_norm,
        normalization=float(normalization),
        eigen_residual=eigen_residual,
    )


@dataclass(frozen=True, eq=False)
class QuasimodeSweep:
    profiles: list
    mass_slope: float
    ratio_slope: float
    ratio_r2: float


def quasimode_sweep(ls: tuple[int, ...] = (8, 16, 32, 64), n: int = 3) -> QuasimodeSweep:
    """Fit log(near mass) against log(lambda_l) and log(quasimode ratio) against sqrt(lambda_l)."""
    if len(ls) < 2:
        raise ValueError("A sweep needs at least two values of l")
    profiles = [quasimode_profile(l, n) for l in ls]
    lams = np.array([p.lambda_l for p in profiles], dtype=float)
    mass_fit = linregress(np.log(lams), np.log([p.near_equator_mass for p in profiles]))
    ratio_fit = linregress(np.sqrt(lams), np.log([p.quasimode_ratio for p in profiles]))
    logger.info(f"Quasimode sweep n={n}: mass slope {mass_fit.slope:.3f}, ratio slope {ratio_fit.slope:.3f}")
    return QuasimodeSweep(profiles, float(mass_fit.slope), float(ratio_fit.slope), float(ratio_fit.rvalue ** 2))
