"""
Conservation laws and weighted identities checked as quadrature residuals.

Every identity is evaluated in its per-mode reduction. With phi = r^{-(n-1)/2} v
the profile of u and omega = r^{n-1} the volume factor, the equation reads

    -phi'' - (n-1) phi'/r + k phi / r^2 - z^2 phi = F,
    F = r^{-(n-1)/2} (g - V v + theta v_r - (n-1) theta v / r),

with k = l(l+n-2). Products such as omega |phi'|^2 are evaluated directly on v,
since omega |phi'|^2 = |v_r - (n-1) v/(2r)|^2 and omega |phi|^2 = |v|^2.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import trapezoid

from lab.radial_core import (
    Cutoff,
    ModeParams,
    RadialFunction,
    radial_gradient,
    to_mode_source,
    trapezoid_weights,
)
from lab.resolvent_solver import ModeSolution, sommerfeld_norm
from settings import settings

logger = logging.getLogger(__name__)

WEIGHT_KINDS = ("morawetz_default", "carleman", "custom")


@dataclass(frozen=True)
class IdentityResidualReport:
    """One identity evaluated on one input; components hold the individual quadratures."""

    identity_id: str
    n: int
    l: int
    lam: float
    epsilon: float
    N: int
    lhs: float
    rhs: float
    residual: float
    relative_residual: float
    components: dict = field(default_factory=dict)

    def to_row(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "n": self.n,
            "l": self.l,
            "lambda": self.lam,
            "epsilon": self.epsilon,
            "N": self.N,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residual": self.residual,
            "relative_residual": self.relative_residual,
        }


def _report(
    identity_id: str,
    mode: ModeParams,
    lam: float,
    epsilon: float,
    N: int,
    lhs: float,
    rhs: float,
    **components: float,
) -> IdentityResidualReport:
    residual = abs(lhs - rhs)
    relative = residual / (abs(lhs) + abs(rhs) + settings.residual_floor)
    logger.debug(f"{identity_id}: lhs={lhs:.6e} rhs={rhs:.6e} relative={relative:.2e}")
    return IdentityResidualReport(
        identity_id=identity_id,
        n=mode.n,
        l=mode.l,
        lam=lam,
        epsilon=epsilon,
        N=N,
        lhs=float(lhs),
        rhs=float(rhs),
        residual=float(residual),
        relative_residual=float(min(relative, 1.0)),
        components={key: float(value) for key, value in components.items()},
    )


def _solution_report(identity_id: str, sol: ModeSolution, lhs: float, rhs: float, **components: float):
    problem = sol.problem
    return _report(identity_id, problem.mode, problem.lam, problem.epsilon, len(sol.grid), lhs, rhs, **components)


def _mode_data(sol: ModeSolution, f: RadialFunction) -> np.ndarray:
    if not np.array_equal(f.r, sol.grid.r):
        raise ValueError("Data and solution live on different grids")
    return to_mode_source(f, sol.problem.mode).values


def _check_cutoff(chi: Cutoff, r: np.ndarray) -> None:
    if chi.r.shape != r.shape or not np.allclose(chi.r, r):
        raise ValueError("Cutoff is not sampled on the solution grid")
    ends = (chi.value[0], chi.value[-1], chi.d1[0], chi.d1[-1], chi.d2[0], chi.d2[-1])
    if any(value != 0.0 for value in ends):
        raise ValueError("Cutoff support touches the grid boundary")


def _forcing_density(sol: ModeSolution, g: np.ndarray, dv: np.ndarray) -> np.ndarray:
    """r^{(n-1)/2} F: data plus the potential and curvature terms moved to the right."""
    problem = sol.problem
    v = sol.v.values
    r = sol.grid.r
    V = problem.profiles.potential
    theta = problem.profiles.curvature
    return g - V * v + theta * dv - (problem.mode.n - 1) * theta * v / r


def charge_residual(sol: ModeSolution, f: RadialFunction) -> IdentityResidualReport:
    """
    Charge identity with trapezoid weights and ghost-consistent end fluxes.

        Im(z^2) sum |v|^2 + Im sum conj(v) g
            = Im(conj(v) v_r)|r_min - Im(conj(v) v_r)|r_max - sum theta Im(conj(v) v_r)

    The discrete operator satisfies this exactly, so the residual measures the
    solve. components["boundary_flux"] is the net flux carried out of the box.
    """
    g = _mode_data(sol, f)
    v = sol.v.values
    dv = sol.derivative().values
    w = trapezoid_weights(sol.grid)
    z = sol.problem.z

    absorption = (z * z).imag * float(np.sum(w * np.abs(v) ** 2))
    source = float(np.sum(w * np.imag(np.conj(v) * g)))
    current = np.imag(np.conj(v) * dv)
    flux_left, flux_right = float(current[0]), float(current[-1])
    curvature = float(np.sum(w * sol.problem.profiles.curvature * current))

    lhs = absorption + source
    rhs = flux_left - flux_right - curvature
    return _solution_report(
        "charge", sol, lhs, rhs,
        absorption=absorption, source=source, boundary_flux=flux_right - flux_left, curvature=curvature,
    )


def _lagrangean_bulk(sol: ModeSolution, g: np.ndarray, chi: Cutoff) -> tuple[float, np.ndarray, np.ndarray]:
    mode = sol.problem.mode
    r = sol.grid.r
    v = sol.v.values
    dv = sol.derivative().values
    grad = radial_gradient(sol.v, mode, dv)
    q = np.abs(v) ** 2
    e = np.abs(grad) ** 2 + mode.angular * q / r ** 2
    pairing = np.real(np.conj(v) * _forcing_density(sol, g, dv))
    bulk = trapezoid((e - sol.problem.lam * q - pairing) * chi.value, r)
    return float(bulk), q, grad


def lagrangean_residual(sol: ModeSolution, f: RadialFunction, chi: Cutoff) -> IdentityResidualReport:
    """
    Lagrangean identity: int (e - lam q - Re conj(phi) F) chi omega = 1/2 int q (Laplacian chi) omega.

    Raises:
        ValueError: Cutoff on another grid or touching the boundary
    """
    g = _mode_data(sol, f)
    r = sol.grid.r
    _check_cutoff(chi, r)
    lhs, q, _ = _lagrangean_bulk(sol, g, chi)
    rhs = 0.5 * trapezoid(q * chi.laplacian(sol.problem.mode.n), r)
    return _solution_report("lagrangean", sol, lhs, float(rhs))


def charge_gradient_residual(sol: ModeSolution, f: RadialFunction, chi: Cutoff) -> IdentityResidualReport:
    """
    Real part of the multiplier identity before the last integration by parts:
    int (e - lam q - Re conj(phi) F) chi omega = -int Re(conj(phi) phi') chi' omega.
    """
    g = _mode_data(sol, f)
    r = sol.grid.r
    _check_cutoff(chi, r)
    lhs, _, grad = _lagrangean_bulk(sol, g, chi)
    current = np.real(np.conj(sol.v.values) * grad)
    rhs = -trapezoid(current * chi.d1, r)
    return _solution_report("charge_gradient", sol, lhs, float(rhs))


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Radial weight W with derivatives up to fourth order."""

    r: np.ndarray
    W: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    d4: np.ndarray
    kind: str
    sigma: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"Unknown weight kind '{self.kind}', expected one of {WEIGHT_KINDS}")

    def laplacian(self, n: int) -> np.ndarray:
        return self.d2 + (n - 1) * self.d1 / self.r

    def laplacian_derivative(self, n: int) -> np.ndarray:
        r = self.r
        return self.d3 + (n - 1) * (self.d2 / r - self.d1 / r ** 2)

    def bilaplacian(self, n: int) -> np.ndarray:
        r = self.r
        second = self.d4 + (n - 1) * (self.d3 / r - 2.0 * self.d2 / r ** 2 + 2.0 * self.d1 / r ** 3)
        return second + (n - 1) * self.laplacian_derivative(n) / r


def morawetz_weight(r: np.ndarray, sigma: Optional[float] = None) -> WeightFunction:
    """W = r - (1+r)^{1-2 sigma} with closed-form derivatives."""
    sigma = settings.default_sigma if sigma is None else sigma
    if not 0 < sigma < 0.5:
        raise ValueError(f"Morawetz weight needs 0 < sigma < 1/2, got {sigma}")
    r = np.asarray(r, dtype=float)
    p = 1.0 - 2.0 * sigma
    s = 1.0 + r
    c1 = p
    c2 = p * (p - 1.0)
    c3 = c2 * (p - 2.0)
    c4 = c3 * (p - 3.0)
    return WeightFunction(
        r=r,
        W=r - s ** p,
        d1=1.0 - c1 * s ** (p - 1.0),
        d2=-c2 * s ** (p - 2.0),
        d3=-c3 * s ** (p - 3.0),
        d4=-c4 * s ** (p - 4.0),
        kind="morawetz_default",
        sigma=sigma,
    )


def carleman_weight(r: np.ndarray, kind: str = "bracket") -> WeightFunction:
    """
    Convex base weights for the Carleman identity.

    bracket: w = (1+r^2)^{1/2}; linear: w = r.
    """
    r = np.asarray(r, dtype=float)
    if kind == "bracket":
        s2 = 1.0 + r ** 2
        s = np.sqrt(s2)
        return WeightFunction(
            r=r,
            W=s,
            d1=r / s,
            d2=s2 ** -1.5,
            d3=-3.0 * r * s2 ** -2.5,
            d4=-3.0 * s2 ** -2.5 + 15.0 * r ** 2 * s2 ** -3.5,
            kind="carleman",
        )
    if kind == "linear":
        zero = np.zeros_like(r)
        return WeightFunction(r=r, W=r.copy(), d1=np.ones_like(r), d2=zero, d3=zero, d4=zero, kind="carleman")
    raise ValueError(f"Unknown Carleman weight '{kind}', expected 'bracket' or 'linear'")


Sampled = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def custom_weight(
    r: np.ndarray,
    W: Sampled,
    d1: Sampled,
    d2: Sampled,
    d3: Optional[Sampled] = None,
    d4: Optional[Sampled] = None,
) -> WeightFunction:
    """User weight; missing third and fourth derivatives are taken by centred differences."""
    r = np.asarray(r, dtype=float)

    def sample(values: Sampled) -> np.ndarray:
        out = values(r) if callable(values) else np.asarray(values, dtype=float)
        if out.shape != r.shape:
            raise ValueError(f"Weight samples must have shape {r.shape}, got {out.shape}")
        return out

    h = float(r[1] - r[0])
    w2 = sample(d2)
    w3 = sample(d3) if d3 is not None else np.gradient(w2, h, edge_order=2)
    w4 = sample(d4) if d4 is not None else np.gradient(w3, h, edge_order=2)
    return WeightFunction(r=r, W=sample(W), d1=sample(d1), d2=w2, d3=w3, d4=w4, kind="custom")


def morawetz_residual(
    sol: ModeSolution,
    f: RadialFunction,
    W: WeightFunction,
    chi: Cutoff,
) -> IdentityResidualReport:
    """
    Pohozaev-Morawetz identity for the multiplier W' d/dr + (1/2) Laplacian(W).

    Left side (bulk, weighted by chi omega):
        W''|phi'|^2 + k W' q / r^3 - (1/4) Bilaplacian(W) q - Im(z^2) W' Im(conj(phi) phi')
    Right side:
        Re conj(W' phi' + (1/2) Laplacian(W) phi) F chi omega minus the chi' and Laplacian(chi) flux terms
        (1/2) W' chi' (|phi'|^2 - k q/r^2 + Re(z^2) q) - (1/2) Laplacian(W)' chi' q - (1/4) Laplacian(W) Laplacian(chi) q.

    components carries the hessian and bilaplacian quadratures separately.

    Raises:
        ValueError: Weight on another grid, cutoff touching the boundary
    """
    g = _mode_data(sol, f)
    r = sol.grid.r
    _check_cutoff(chi, r)
    if W.r.shape != r.shape or not np.allclose(W.r, r):
        raise ValueError("Weight is not sampled on the solution grid")

    mode = sol.problem.mode
    n, k = mode.n, mode.angular
    z2 = sol.problem.z ** 2
    v = sol.v.values
    dv = sol.derivative().values
    grad = radial_gradient(sol.v, mode, dv)
    q = np.abs(v) ** 2
    grad2 = np.abs(grad) ** 2
    current = np.imag(np.conj(v) * dv)
    lap_W = W.laplacian(n)

    hessian = trapezoid((W.d2 * grad2 + k * W.d1 * q / r ** 3) * chi.value, r)
    bilaplacian = trapezoid(-0.25 * W.bilaplacian(n) * q * chi.value, r)
    absorption = -z2.imag * trapezoid(W.d1 * current * chi.value, r)
    lhs = hessian + bilaplacian + absorption

    multiplier = W.d1 * grad + 0.5 * lap_W * v
    forcing = trapezoid(np.real(np.conj(multiplier) * _forcing_density(sol, g, dv)) * chi.value, r)
    flux = trapezoid(
        0.5 * W.d1 * chi.d1 * (grad2 - k * q / r ** 2 + z2.real * q)
        - 0.5 * W.laplacian_derivative(n) * chi.d1 * q
        - 0.25 * lap_W * chi.laplacian(n) * q,
        r,
    )
    rhs = forcing - flux
    return _solution_report(
        "morawetz", sol, float(lhs), float(rhs),
        hessian=hessian, bilaplacian=bilaplacian, absorption=absorption, forcing=forcing, flux=flux,
    )


@dataclass(frozen=True)
class MorawetzSignCheck:
    """Fitted constants c with W'' >= c (1+r)^{-1-2 sigma} and -Bilaplacian(W) >= c (1+r)^{-3-2 sigma}."""

    hessian_constant: float
    bilaplacian_constant: float
    window: tuple[float, float]

    @property
    def positive(self) -> bool:
        return self.hessian_constant > 0 and self.bilaplacian_constant > 0


def morawetz_sign_check(
    W: WeightFunction,
    n: int = 3,
    r_window: tuple[float, float] = (1.0, 100.0),
    sigma: Optional[float] = None,
) -> MorawetzSignCheck:
    """Fit the constants of the two positivity properties of the weight on a window."""
    sigma = W.sigma if sigma is None else sigma
    if sigma is None:
        sigma = settings.default_sigma
    mask = (W.r >= r_window[0]) & (W.r <= r_window[1])
    if np.count_nonzero(mask) == 0:
        raise ValueError(f"Window {r_window} contains no weight samples")
    s = 1.0 + W.r[mask]
    hessian = float(np.min(W.d2[mask] * s ** (1.0 + 2.0 * sigma)))
    bilaplacian = float(np.min(-W.bilaplacian(n)[mask] * s ** (3.0 + 2.0 * sigma)))
    return MorawetzSignCheck(hessian, bilaplacian, r_window)


def carleman_identity_residual(
    u_c: RadialFunction,
    w: WeightFunction,
    t: float,
    lam: float,
    mode: ModeParams,
    G_src: Optional[RadialFunction] = None,
) -> IdentityResidualReport:
    """
    Carleman identity for the conjugated operator with weight t w.

    With psi = e^{tw} u and U = (2 t w' u' + (2 t^2 w'^2 + t Laplacian(w)) u) e^{tw}:

        ||U||^2 + 2 int t w'' |psi'|^2 + 2 k int t w' |psi|^2 / r^3 + 2 int t^3 w'' w'^2 |psi|^2
            = (1/2) int t Bilaplacian(w) |psi|^2 + Re int e^{tw} G conj(U)

    all integrals against omega, G = (-Laplacian - lam) u_c by centred differences
    unless supplied. The exponential is normalised on the support; both sides
    scale alike.

    Raises:
        ValueError: u_c not vanishing near both grid ends, negative t, or weight on another grid
    """
    if t < 0:
        raise ValueError(f"Carleman parameter t must be non-negative, got {t}")
    r = u_c.r
    h = u_c.grid.h
    if w.r.shape != r.shape or not np.allclose(w.r, r):
        raise ValueError("Weight is not sampled on the function grid")
    phi = u_c.values
    if np.any(phi[:2] != 0) or np.any(phi[-2:] != 0):
        raise ValueError("Carleman test function must vanish at both grid ends")

    n, k = mode.n, mode.angular
    d1 = np.zeros_like(phi)
    d2 = np.zeros_like(phi)
    d1[1:-1] = (phi[2:] - phi[:-2]) / (2.0 * h)
    d2[1:-1] = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / h ** 2
    if G_src is None:
        G = -(d2 + (n - 1) * d1 / r - k * phi / r ** 2) - lam * phi
    else:
        G = G_src.values

    w0 = t * w.W
    w1 = t * w.d1
    w2 = t * w.d2
    support = phi != 0
    shift = float(np.max(w0[support])) if np.any(support) else 0.0
    E = np.where(support, np.exp(np.where(support, w0 - shift, 0.0)), 0.0)
    omega = r ** (n - 1)

    psi = E * phi
    dpsi = E * (d1 + w1 * phi)
    U = (2.0 * w1 * d1 + (2.0 * w1 ** 2 + t * w.laplacian(n)) * phi) * E
    abs_psi = np.abs(psi) ** 2

    conjugate = trapezoid(np.abs(U) ** 2 * omega, r)
    gradient = 2.0 * trapezoid(w2 * np.abs(dpsi) ** 2 * omega, r)
    angular = 2.0 * k * trapezoid(w1 * abs_psi * omega / r ** 3, r)
    convexity = 2.0 * trapezoid(w2 * w1 ** 2 * abs_psi * omega, r)
    bilaplacian = 0.5 * trapezoid(t * w.bilaplacian(n) * abs_psi * omega, r)
    pairing = trapezoid(np.real(E * G * np.conj(U)) * omega, r)

    lhs = conjugate + gradient + angular + convexity
    rhs = bilaplacian + pairing
    return _report(
        "carleman", mode, lam, 0.0, len(r), float(lhs), float(rhs),
        conjugate=conjugate, gradient=gradient, angular=angular, convexity=convexity,
        bilaplacian=bilaplacian, pairing=pairing,
    )


@dataclass(frozen=True, eq=False)
class SommerfeldGauge:
    """Sommerfeld gauge on r >= 2 r0 with the growth exponent of its dyadic shells."""

    gauge_value: float
    tail_growth_exponent: float
    shell_radii: np.ndarray
    shell_values: np.ndarray


def sommerfeld_gauge(
    sol: ModeSolution,
    sigma_prime: float,
    sigma: Optional[float] = None,
    sign: Optional[int] = None,
    r0: Optional[float] = None,
    reduced: bool = False,
) -> SommerfeldGauge:
    """
    Measure the radiation condition in H^{0,-1/2+sigma'} on r >= 2 r0.

    The growth exponent is the fitted slope of log(squared gauge on [R, 2R])
    against log R over dyadic shells: about 2 sigma' when the tested direction
    is wrong, negative for a genuinely radiating solution.

    Args:
        sol: Mode solution
        sigma_prime: Exponent sigma' in (0, sigma)
        sigma: Upper bound for sigma' (defaults to settings.default_sigma)
        sign: +1 tests (d/dr - iz), -1 tests (d/dr + iz); defaults to the solution's direction
        r0: Inner radius (defaults to settings.sommerfeld_r0)
        reduced: Apply the combination to v instead of r^{(n-1)/2} u

    Raises:
        ValueError: sigma' outside (0, sigma) or fewer than two shells fit in the grid
    """
    sigma = settings.default_sigma if sigma is None else sigma
    r0 = settings.sommerfeld_r0 if r0 is None else r0
    if not 0 < sigma_prime < sigma:
        raise ValueError(f"sigma_prime must lie in (0, {sigma}), got {sigma_prime}")
    exponent = -0.5 + sigma_prime
    value = sommerfeld_norm(sol, exponent, 2.0 * r0, sign=sign, reduced=reduced)

    r_max = sol.grid.r_max
    radii = []
    R = 2.0 * r0
    while 2.0 * R <= r_max:
        radii.append(R)
        R *= 2.0
    if len(radii) < 2:
        raise ValueError(f"Grid up to {r_max} holds fewer than two dyadic shells beyond {2.0 * r0}")
    shells = np.array([
        sommerfeld_norm(sol, exponent, R, 2.0 * R, sign=sign, reduced=reduced) ** 2 for R in radii
    ])
    radii = np.array(radii)
    floor = np.finfo(float).tiny
    slope = float(np.polyfit(np.log(radii), np.log(np.maximum(shells, floor)), 1)[0])
    if np.all(shells <= floor):
        slope = 0.0
    return SommerfeldGauge(value, slope, radii, shells)
