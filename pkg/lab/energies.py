"""
Spherical energies of a mode solution, their equations of motion, the
dimensionless (mu, alpha, beta) system, the Pohozaev flux bound and the
growth/boundedness dichotomy.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import linprog

from lab.radial_core import ModeParams, RadialFunction, WeightSpec, to_mode_source, weighted_norm
from lab.resolvent_solver import ModeProblem, ModeSolution
from settings import settings

logger = logging.getLogger(__name__)

MOTION_EQUATIONS = ("mass", "flux", "pohozaev", "null")


@dataclass(frozen=True, eq=False)
class SphericalEnergySeries:
    """
    Pointwise spherical energies of one mode.

    M = |v|^2, R = |v_r|^2, A = L(L-1)|v|^2/r^2, F = Re(conj(v) v_r),
    N = |v_r -+ izv|^2, Z = v_r conj(v), G = forcing term.
    """

    r: np.ndarray
    M: np.ndarray
    R: np.ndarray
    A: np.ndarray
    F: np.ndarray
    N: np.ndarray
    Z: np.ndarray
    G: np.ndarray
    mode: ModeParams
    lam: float
    z: complex
    sign: int
    v: np.ndarray
    dv: np.ndarray
    g: np.ndarray

    @property
    def h(self) -> float:
        return float(self.r[1] - self.r[0])

    def scaled(self, factor: float) -> "SphericalEnergySeries":
        """Series of the solution multiplied by sqrt(factor) (data scaled alike)."""
        if factor < 0:
            raise ValueError(f"Scale factor must be non-negative, got {factor}")
        root = np.sqrt(factor)
        return replace(
            self,
            M=factor * self.M, R=factor * self.R, A=factor * self.A, F=factor * self.F,
            N=factor * self.N, Z=factor * self.Z, G=factor * self.G,
            v=root * self.v, dv=root * self.dv, g=root * self.g,
        )

    def to_rows(self) -> list[dict]:
        return [
            {"r": r, "M": m, "R": rr, "A": a, "F": f, "N": n, "Re_Z": z.real, "Im_Z": z.imag, "G": g}
            for r, m, rr, a, f, n, z, g in zip(
                self.r, self.M, self.R, self.A, self.F, self.N, self.Z, self.G
            )
        ]


def _forcing_term(
    r: np.ndarray,
    v: np.ndarray,
    dv: np.ndarray,
    g: np.ndarray,
    mode: ModeParams,
    lam: float,
    epsilon: float,
    variant: str,
) -> np.ndarray:
    scale = 1.0 / r + np.sqrt(max(lam, 0.0))
    if variant == "mode":
        return (np.abs(v) + np.abs(dv) / scale) * (np.abs(g) + epsilon * np.abs(v))
    if variant == "volume":
        # same quantities on u = r^{-(n-1)/2} v, f = r^{-(n-1)/2} g, against the volume r^{n-1}
        power = r ** -mode.half_dim
        u = v * power
        du = (dv - mode.half_dim * v / r) * power
        f = g * power
        return r ** (mode.n - 1) * (np.abs(u) + np.abs(du) / scale) * (np.abs(f) + epsilon * np.abs(u))
    raise ValueError(f"Unknown forcing term variant '{variant}', expected 'mode' or 'volume'")


def spherical_energies_from_profile(
    r: np.ndarray,
    v: np.ndarray,
    dv: np.ndarray,
    mode: ModeParams,
    lam: float,
    z: complex,
    g: Optional[np.ndarray] = None,
    sign: int = 1,
    epsilon: float = 0.0,
    variant: Optional[str] = None,
) -> SphericalEnergySeries:
    """
    Build the energy series from samples of v and v_r.

    Args:
        r: Radii
        v: Mode profile samples
        dv: Samples of v_r
        mode: Mode parameters
        lam: Energy lambda
        z: Spectral root used by the null energy
        g: Mode-reduced data (zero if omitted)
        sign: +1 for the outgoing null direction, -1 for incoming
        epsilon: Absorption entering the forcing term
        variant: Forcing term normalisation (defaults to settings.forcing_term_variant)
    """
    variant = settings.forcing_term_variant if variant is None else variant
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=complex)
    dv = np.asarray(dv, dtype=complex)
    g = np.zeros_like(v) if g is None else np.asarray(g, dtype=complex)
    if not (v.shape == dv.shape == g.shape == r.shape):
        raise ValueError("Profile, derivative, data and radii must have the same shape")

    M = np.abs(v) ** 2
    R = np.abs(dv) ** 2
    A = mode.centrifugal * M / r ** 2
    Z = dv * np.conj(v)
    null = np.abs(dv - sign * 1j * z * v) ** 2
    G = _forcing_term(r, v, dv, g, mode, lam, epsilon, variant)
    return SphericalEnergySeries(
        r=r, M=M, R=R, A=A, F=Z.real.copy(), N=null, Z=Z, G=G,
        mode=mode, lam=lam, z=complex(z), sign=sign, v=v, dv=dv, g=g,
    )


def spherical_energies(sol: ModeSolution, f: RadialFunction) -> SphericalEnergySeries:
    """
    Spherical energies of a solution with physical data f.

    Raises:
        ValueError: If f lives on another grid
    """
    if not np.array_equal(f.r, sol.grid.r):
        raise ValueError("Data and solution live on different grids")
    problem = sol.problem
    g = to_mode_source(f, problem.mode).values
    return spherical_energies_from_profile(
        sol.grid.r,
        sol.v.values,
        sol.derivative().values,
        problem.mode,
        problem.lam,
        problem.z,
        g=g,
        sign=sol.radiation_sign,
        epsilon=problem.epsilon,
    )


@dataclass(frozen=True, eq=False)
class MotionResiduals:
    """Residual curves of the equations of motion and the envelopes of their lower-order terms."""

    r: np.ndarray
    residuals: dict[str, np.ndarray]
    envelopes: dict[str, np.ndarray]

    def max_residual(self, equation: str) -> float:
        return float(np.max(self.residuals[equation], initial=0.0))

    def excess(self, equation: str) -> np.ndarray:
        """Residual left over after subtracting the envelope; O(h^2) when the equation holds."""
        return np.maximum(self.residuals[equation] - self.envelopes[equation], 0.0)


def motion_residuals(series: SphericalEnergySeries, problem: ModeProblem) -> MotionResiduals:
    """
    Compare centred derivatives of the energies with the equations of motion.

    Evaluated equations:
        mass:     M' = 2F
        flux:     F' = R + A - Re(z^2) M
        pohozaev: (R + lam M - A)' = 2A/r
        null:     (N - A)' = 2A/r + 2 sign Im z (N + A)

    Residuals are reported on interior nodes; envelopes bound the terms
    involving V, theta and the data using the profile constants A, sigma0.
    """
    r = series.r
    h = series.h
    if len(r) != len(problem.grid) or not np.allclose(r, problem.grid.r):
        raise ValueError("Series and problem live on different grids")

    def d(values: np.ndarray) -> np.ndarray:
        return np.gradient(values, h, edge_order=2)

    z = series.z
    z2 = z * z
    M, R, A, F, N = series.M, series.R, series.A, series.F, series.N
    n = series.mode.n

    raw = {
        "mass": np.abs(d(M) - 2.0 * F),
        "flux": np.abs(d(F) - (R + A - z2.real * M)),
        "pohozaev": np.abs(d(R + series.lam * M - A) - 2.0 * A / r),
        "null": np.abs(d(N - A) - 2.0 * A / r - 2.0 * series.sign * z.imag * (N + A)),
    }

    pot = problem.profiles.potential_envelope(series.lam)
    curv = problem.profiles.curvature_envelope()
    abs_v = np.abs(series.v)
    abs_dv = np.abs(series.dv)
    abs_g = np.abs(series.g)
    lower_order = pot * abs_v + curv * (abs_dv + (n - 1) * abs_v / r) + abs_g
    raw_env = {
        "mass": np.zeros_like(r),
        "flux": abs_v * lower_order,
        "pohozaev": 2.0 * abs_dv * lower_order + 2.0 * abs(z2.imag) * abs_v * abs_dv,
        "null": 2.0 * np.sqrt(N) * lower_order,
    }
    interior = slice(1, -1)
    return MotionResiduals(
        r=r[interior],
        residuals={key: value[interior] for key, value in raw.items()},
        envelopes={key: value[interior] for key, value in raw_env.items()},
    )


def _tail_integral(values: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Trapezoid integral from each r to r_max."""
    cumulative = cumulative_trapezoid(values, r, initial=0.0)
    return cumulative[-1] - cumulative


@dataclass(frozen=True, eq=False)
class DimensionlessSeries:
    """mu = r delta / M, alpha = -r F*/M, beta = -r^2 P*/M with corrected fluxes."""

    r: np.ndarray
    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    delta: float
    F_star: np.ndarray
    P_star: np.ndarray
    correction: float
    valid: np.ndarray
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_rows(self) -> list[dict]:
        return [
            {"r": r, "mu": mu, "alpha": a, "beta": b}
            for r, mu, a, b in zip(self.r[self.valid], self.mu[self.valid],
                                   self.alpha[self.valid], self.beta[self.valid])
        ]


def pohozaev_flux(series: SphericalEnergySeries, lam: Optional[float] = None) -> np.ndarray:
    """P = lam M + R - A."""
    lam = series.lam if lam is None else lam
    return lam * series.M + series.R - series.A


def dimensionless(
    series: SphericalEnergySeries,
    delta: float,
    lam: float,
    C_corr: Optional[float] = None,
) -> DimensionlessSeries:
    """
    Dimensionless co-ordinates of a solution.

    Points with M = 0 are excluded (NaN) and the result carries the flag zero_mass.

    Raises:
        ValueError: Negative delta or correction constant
    """
    C_corr = settings.flux_correction if C_corr is None else C_corr
    if delta < 0:
        raise ValueError(f"Data size delta must be non-negative, got {delta}")
    if C_corr < 0:
        raise ValueError(f"Correction constant C_corr must be non-negative, got {C_corr}")

    r = series.r
    abs_G = np.abs(series.G)
    F_star = series.F - C_corr * _tail_integral(abs_G, r)
    P_star = pohozaev_flux(series, lam) - C_corr * _tail_integral((1.0 / r + np.sqrt(max(lam, 0.0))) * abs_G, r)

    valid = series.M > 0
    flags: tuple[str, ...] = () if np.all(valid) else ("zero_mass",)
    with np.errstate(divide="ignore", invalid="ignore"):
        M = np.where(valid, series.M, np.nan)
        mu = r * delta / M
        alpha = -r * F_star / M
        beta = -(r ** 2) * P_star / M
    return DimensionlessSeries(
        r=r, mu=mu, alpha=alpha, beta=beta, delta=delta,
        F_star=F_star, P_star=P_star, correction=C_corr, valid=valid, flags=flags,
    )


@dataclass(frozen=True, eq=False)
class DichotomyVerdict:
    """
    Outcome of the dichotomy test.

    kind is one of Bounded, ExponentialGrowth or Indeterminate. For Bounded,
    r0 and bound are the radius and fitted constant; measured_rate is the rate
    exceeded on the required fraction of the window.
    """

    kind: str
    measured_rate: float
    threshold: float
    r0: Optional[float] = None
    bound: Optional[float] = None
    rate_r: np.ndarray = field(default_factory=lambda: np.empty(0))
    rate: np.ndarray = field(default_factory=lambda: np.empty(0))


def dichotomy_normalization(
    sol: ModeSolution,
    f: RadialFunction,
    C1: Optional[float] = None,
    sigma: Optional[float] = None,
) -> tuple[float, float]:
    """
    Scale making ||u||_{H^{0,-1/2-sigma}(r >= C1/2)} = 1, and the matching data size.

    Returns:
        tuple: (mass_scale, delta) with mass_scale the factor for quadratic series

    Raises:
        ValueError: If the solution vanishes on r >= C1/2
    """
    C1 = settings.dichotomy_c1 if C1 is None else C1
    sigma = settings.default_sigma if sigma is None else sigma
    mode = sol.problem.mode
    u_norm = weighted_norm(sol.v, WeightSpec(0, -0.5 - sigma), mode, window=(C1 / 2.0, np.inf))
    if u_norm == 0:
        raise ValueError(f"Solution vanishes on r >= {C1 / 2.0}; cannot normalise")
    f_norm = weighted_norm(to_mode_source(f, mode), WeightSpec(0, 0.5 + sigma), mode)
    return 1.0 / u_norm ** 2, f_norm / u_norm


def classify_dichotomy(
    series: SphericalEnergySeries,
    lam: float,
    delta: float,
    C1: Optional[float] = None,
    C2: Optional[float] = None,
    r_cap: Optional[float] = None,
    C: Optional[float] = None,
) -> DichotomyVerdict:
    """
    Decide between exponential decay of the mass and a bound by the data.

    The growth rate -r M'/M is tested on [C1, min(10 C1, r_cap)]; when it
    exceeds C2 (1 + sqrt(lam)) on the required fraction of samples the verdict
    is ExponentialGrowth. Otherwise the constant
    K = min over r0 of max over [r0/2, 4 r0] of M / ((lam^-C + 1) delta)
    is fitted and the verdict is Bounded when K stays below the configured cap.

    Raises:
        ValueError: Window outside the grid or invalid constants
    """
    C1 = settings.dichotomy_c1 if C1 is None else C1
    C2 = settings.dichotomy_c2 if C2 is None else C2
    C = settings.gauge_c if C is None else C
    r = series.r
    r_cap = r[-1] if r_cap is None else r_cap

    if C2 <= 0:
        raise ValueError(f"Growth constant C2 must be positive, got {C2}")
    if not r[0] < C1:
        raise ValueError(f"Dichotomy radius C1={C1} must exceed the grid start {r[0]}")
    r_hi = min(10.0 * C1, r_cap)
    if r_hi > r[-1] or r_hi <= C1:
        raise ValueError(f"Dichotomy window [{C1}, {r_hi}] exceeds the grid [{r[0]}, {r[-1]}]")

    window = (r >= C1) & (r <= r_hi)
    M = series.M
    dM = np.gradient(M, series.h, edge_order=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate_all = np.where(M > 0, -r * dM / M, 0.0)
    rate = rate_all[window]
    threshold = C2 * (1.0 + np.sqrt(max(lam, 0.0)))
    measured = float(np.quantile(rate, 1.0 - settings.dichotomy_fraction, method="higher"))

    if measured >= threshold:
        return DichotomyVerdict(
            kind="ExponentialGrowth",
            measured_rate=measured,
            threshold=threshold,
            rate_r=r[window],
            rate=rate,
        )

    denominator = (lam ** -C + 1.0) * delta if lam > 0 else np.inf
    best_r0: Optional[float] = None
    best_bound = np.inf
    for r0 in r[(r >= C1) & (r <= min(r_cap, r[-1] / 4.0))]:
        peak = float(np.max(M[(r >= r0 / 2.0) & (r <= 4.0 * r0)]))
        if peak == 0.0:
            bound = 0.0
        elif denominator == 0.0 or not np.isfinite(denominator):
            bound = np.inf
        else:
            bound = peak / denominator
        if bound < best_bound:
            best_bound, best_r0 = bound, float(r0)

    if best_bound <= settings.dichotomy_bound_cap:
        return DichotomyVerdict(
            kind="Bounded",
            measured_rate=measured,
            threshold=threshold,
            r0=best_r0,
            bound=best_bound,
            rate_r=r[window],
            rate=rate,
        )

    logger.warning(
        f"Indeterminate dichotomy: rate {measured:.3g} below {threshold:.3g}, "
        f"fitted bound {best_bound:.3g} above cap"
    )
    return DichotomyVerdict(
        kind="Indeterminate",
        measured_rate=measured,
        threshold=threshold,
        r0=best_r0,
        bound=best_bound,
        rate_r=r[window],
        rate=rate,
    )


@dataclass(frozen=True, eq=False)
class PohozaevReport:
    """Fitted constants of the Pohozaev flux bound and the resulting margin."""

    r: np.ndarray
    P: np.ndarray
    margin: np.ndarray
    K1: float
    K2: float
    flags: tuple[str, ...] = field(default_factory=tuple)


def pohozaev_bound_check(
    series: SphericalEnergySeries,
    lam: float,
    delta: float,
    A: float = 1.0,
    sigma0: float = 1.0,
    sigma: Optional[float] = None,
) -> PohozaevReport:
    """
    Fit the smallest K1, K2 >= 0 with P <= K1 (1/r + sqrt(lam)) delta + K2 A r^{-2-2s} M.

    The exponent s is min(sigma, sigma0). The fit is a two-variable linear
    program minimising K1 + K2; only points with P > 0 constrain it.
    """
    sigma = settings.default_sigma if sigma is None else sigma
    r = series.r
    P = pohozaev_flux(series, lam)
    a = (1.0 / r + np.sqrt(max(lam, 0.0))) * delta
    b = A * r ** (-2.0 - 2.0 * min(sigma, sigma0)) * series.M

    flags: tuple[str, ...] = ()
    active = P > 0
    if not np.any(active):
        K1 = K2 = 0.0
    else:
        result = linprog(
            c=[1.0, 1.0],
            A_ub=-np.column_stack([a[active], b[active]]),
            b_ub=-P[active],
            bounds=[(0, None), (0, None)],
            method="highs",
        )
        if result.status != 0:
            logger.warning(f"Pohozaev fit infeasible: {result.message}")
            K1 = K2 = np.inf
            flags = ("infeasible",)
        else:
            K1, K2 = (float(k) for k in result.x)
    if K2 > settings.pohozaev_constant_cap:
        flags = flags + ("tail_dominated",)

    margin = K1 * a + K2 * b - P if np.isfinite(K1) and np.isfinite(K2) else np.full_like(P, np.inf)
    return PohozaevReport(r=r, P=P, margin=margin, K1=float(K1), K2=float(K2), flags=flags)
