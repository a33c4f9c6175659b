"""
Radial grids, radial functions, smooth cutoffs and the per-mode weighted norms.

A solution u = r^{-(n-1)/2} v Y_l of the Helmholtz problem is represented by its
radial profile v sampled on a uniform grid that starts one spacing away from the
origin. All norms below are the mode reductions of the weighted Sobolev norms,
so they act on v directly.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import expit

from settings import settings

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class NumericalError(RuntimeError):
    """Base class for numerical failures (singular solves, unstable schemes)."""


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Uniform radial grid r[0] = r_min > 0, ..., r[N-1] = r_max."""

    r: np.ndarray
    h: float

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 1 or r.size < 2:
            raise ValueError(f"Grid must be a 1-D array with at least 2 points, got shape {r.shape}")
        if r[0] <= 0:
            raise ValueError(f"Grid must start at r_min > 0, got {r[0]}")
        steps = np.diff(r)
        if np.any(steps <= 0):
            raise ValueError("Grid radii must be strictly increasing")
        # rounding of r itself bounds how uniform the spacing can be
        tolerance = 1e-12 * self.h + 8.0 * np.finfo(float).eps * r[-1]
        if np.max(np.abs(steps - self.h)) > tolerance:
            raise ValueError(f"Grid is not uniform with spacing h={self.h}")
        r.flags.writeable = False
        object.__setattr__(self, "r", r)

    def __len__(self) -> int:
        return self.r.size

    @property
    def r_min(self) -> float:
        return float(self.r[0])

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    def mask(self, r_lo: float = -np.inf, r_hi: float = np.inf) -> np.ndarray:
        """Boolean mask of the nodes with r_lo <= r <= r_hi."""
        return (self.r >= r_lo) & (self.r <= r_hi)


def make_grid(r_min: float, r_max: float, N: int, min_points: Optional[int] = None) -> RadialGrid:
    """
    Build a uniform radial grid.

    Args:
        r_min: First radius, must be positive
        r_max: Last radius
        N: Number of points
        min_points: Smallest admissible N (defaults to settings.min_grid_points)

    Returns:
        RadialGrid: Grid with spacing (r_max - r_min) / (N - 1)

    Raises:
        ValueError: If r_min is not positive, r_min >= r_max or N is too small
    """
    min_points = settings.min_grid_points if min_points is None else min_points
    if not r_min > 0:
        raise ValueError(f"r_min must be positive, got {r_min}")
    if r_min >= r_max:
        raise ValueError(f"r_min must be smaller than r_max, got r_min={r_min}, r_max={r_max}")
    if N < max(min_points, 2):
        raise ValueError(f"Grid needs at least {max(min_points, 2)} points, got N={N}")
    h = (r_max - r_min) / (N - 1)
    return RadialGrid(r=np.linspace(r_min, r_max, N), h=h)


def origin_grid(r_max: float, N: int, min_points: Optional[int] = None) -> RadialGrid:
    """Grid on [h, r_max] with h = r_max / N, one spacing away from the origin."""
    return make_grid(r_max / N, r_max, N, min_points=min_points)


def trapezoid_weights(grid: RadialGrid) -> np.ndarray:
    """Trapezoid quadrature weights of a uniform grid."""
    w = np.full(len(grid), grid.h)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """Complex samples of a radial profile on a grid."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=complex)
        if values.ndim == 0:
            values = np.full(len(self.grid), values)
        if values.shape != (len(self.grid),):
            raise ValueError(
                f"RadialFunction needs {len(self.grid)} samples, got shape {values.shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid: RadialGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "RadialFunction":
        return cls(grid, fn(grid.r))

    @classmethod
    def zeros(cls, grid: RadialGrid) -> "RadialFunction":
        return cls(grid, np.zeros(len(grid), dtype=complex))

    @property
    def r(self) -> np.ndarray:
        return self.grid.r

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    def derivative(self) -> "RadialFunction":
        """Second-order centred derivative, one-sided second order at the ends."""
        return RadialFunction(self.grid, np.gradient(self.values, self.grid.h, edge_order=2))

    def conj(self) -> "RadialFunction":
        return RadialFunction(self.grid, np.conj(self.values))

    def to_rows(self) -> list[dict]:
        """One row per grid point with columns r, re, im."""
        return [
            {"r": float(r), "re": float(z.real), "im": float(z.imag)}
            for r, z in zip(self.grid.r, self.values)
        ]

    def _check_grid(self, other: "RadialFunction") -> None:
        if other.grid is not self.grid and not np.array_equal(other.grid.r, self.grid.r):
            raise ValueError("Radial functions live on different grids")

    def __add__(self, other: "RadialFunction") -> "RadialFunction":
        self._check_grid(other)
        return RadialFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "RadialFunction") -> "RadialFunction":
        self._check_grid(other)
        return RadialFunction(self.grid, self.values - other.values)

    def __mul__(self, factor: Union[complex, np.ndarray]) -> "RadialFunction":
        return RadialFunction(self.grid, self.values * factor)

    __rmul__ = __mul__


@dataclass(frozen=True)
class ModeParams:
    """Spatial dimension n and angular order l of one spherical-harmonic mode."""

    n: int
    l: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"Dimension n must be an integer >= 3, got {self.n}")
        if int(self.l) != self.l or self.l < 0:
            raise ValueError(f"Angular order l must be a non-negative integer, got {self.l}")

    @property
    def L(self) -> float:
        return self.l + (self.n - 1) / 2.0

    @property
    def centrifugal(self) -> float:
        """L(L-1), the coefficient of r^-2 in the mode equation."""
        return self.L * (self.L - 1.0)

    @property
    def angular(self) -> float:
        """l(l+n-2), the eigenvalue of the sphere Laplacian."""
        return float(self.l * (self.l + self.n - 2))

    @property
    def half_dim(self) -> float:
        return (self.n - 1) / 2.0


@dataclass(frozen=True)
class WeightSpec:
    """
    Weight of the H^{s,m} norm.

    With bracket=True the squared weight is (1+r^2)^m, otherwise r^{2m}.
    """

    s: int
    m: float
    bracket: bool = True

    def __post_init__(self) -> None:
        if self.s not in (0, 1):
            raise ValueError(f"Derivative count s must be 0 or 1, got {self.s}")

    def squared(self, r: np.ndarray) -> np.ndarray:
        if self.bracket:
            return (1.0 + r ** 2) ** self.m
        return r ** (2.0 * self.m)


@dataclass(frozen=True, eq=False)
class Profiles:
    """
    Potential V(r) and mean-curvature perturbation theta(r) of a mode problem.

    A and sigma0 are the constants of the pointwise decay bounds.
    """

    V: RadialFunction
    theta: RadialFunction
    A: float = 1.0
    sigma0: float = 1.0

    def __post_init__(self) -> None:
        if np.max(np.abs(self.V.imag), initial=0.0) != 0.0:
            raise ValueError("Potential V must be real")
        if np.max(np.abs(self.theta.imag), initial=0.0) != 0.0:
            raise ValueError("Mean curvature theta must be real")
        if not np.array_equal(self.V.r, self.theta.r):
            raise ValueError("V and theta must be sampled on the same grid")
        if self.sigma0 <= 0:
            raise ValueError(f"Decay exponent sigma0 must be positive, got {self.sigma0}")

    @classmethod
    def free(cls, grid: RadialGrid, A: float = 1.0, sigma0: float = 1.0) -> "Profiles":
        return cls(RadialFunction.zeros(grid), RadialFunction.zeros(grid), A=A, sigma0=sigma0)

    @classmethod
    def from_callables(
        cls,
        grid: RadialGrid,
        V: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        theta: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        A: float = 1.0,
        sigma0: float = 1.0,
    ) -> "Profiles":
        zero = RadialFunction.zeros(grid)
        return cls(
            RadialFunction.from_callable(grid, V) if V is not None else zero,
            RadialFunction.from_callable(grid, theta) if theta is not None else zero,
            A=A,
            sigma0=sigma0,
        )

    @property
    def grid(self) -> RadialGrid:
        return self.V.grid

    @property
    def potential(self) -> np.ndarray:
        return self.V.real

    @property
    def curvature(self) -> np.ndarray:
        return self.theta.real

    def potential_envelope(self, lam: float) -> np.ndarray:
        r = self.grid.r
        return self.A * (r ** (-2.0 - 2.0 * self.sigma0) + np.sqrt(max(lam, 0.0)) * r ** (-1.0 - 2.0 * self.sigma0))

    def curvature_envelope(self) -> np.ndarray:
        return self.A * self.grid.r ** (-1.0 - 2.0 * self.sigma0)

    def decay_certificate(self, lam: float) -> bool:
        """True when |V| stays below its decay envelope at energy lam."""
        return bool(np.all(np.abs(self.potential) <= self.potential_envelope(lam)))

    def curvature_certificate(self) -> bool:
        """True when |theta| stays below A r^{-1-2 sigma0}."""
        return bool(np.all(np.abs(self.curvature) <= self.curvature_envelope()))


def smooth_step(t: ArrayLike) -> ArrayLike:
    """
    C-infinity step: 0 for t <= 0, 1 for t >= 1.

    Evaluated as expit(1/(1-t) - 1/t), which equals exp(-1/t) / (exp(-1/t) + exp(-1/(1-t))).
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.where(t >= 1.0, 1.0, 0.0)
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    out[inside] = expit(1.0 / (1.0 - ti) - 1.0 / ti)
    return float(out[0]) if scalar else out


def smooth_step_derivatives(t: ArrayLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (eta, eta', eta'') of the smooth step, derivatives in closed form."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    eta = smooth_step(t)
    d1 = np.zeros_like(t)
    d2 = np.zeros_like(t)
    w = eta * (1.0 - eta)
    live = w > 0.0
    ti = t[live]
    psi1 = 1.0 / (1.0 - ti) ** 2 + 1.0 / ti ** 2
    psi2 = 2.0 / (1.0 - ti) ** 3 - 2.0 / ti ** 3
    d1[live] = w[live] * psi1
    d2[live] = w[live] * (psi2 + (1.0 - 2.0 * eta[live]) * psi1 ** 2)
    return eta, d1, d2


@dataclass(frozen=True, eq=False)
class Cutoff:
    """Sampled cutoff chi with its first two radial derivatives."""

    r: np.ndarray
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    def laplacian(self, n: int) -> np.ndarray:
        """Radial Laplacian chi'' + (n-1) chi' / r."""
        return self.d2 + (n - 1) * self.d1 / self.r


def step_cutoff(r: np.ndarray, start: float, end: float) -> Cutoff:
    """Rising cutoff, 0 for r <= start and 1 for r >= end (falling when end < start)."""
    if start == end:
        raise ValueError("Cutoff transition must have positive width")
    width = end - start
    eta, d1, d2 = smooth_step_derivatives((r - start) / width)
    return Cutoff(r, eta, d1 / width, d2 / width ** 2)


def bump_cutoff(r: np.ndarray, rise: tuple[float, float], fall: tuple[float, float]) -> Cutoff:
    """
    Plateau cutoff rising on [rise[0], rise[1]] and falling on [fall[0], fall[1]].

    Raises:
        ValueError: If the transitions overlap or are not ordered
    """
    a, b = rise
    c, d = fall
    if not a < b <= c < d:
        raise ValueError(f"Cutoff transitions must satisfy a < b <= c < d, got {rise}, {fall}")
    up = step_cutoff(r, a, b)
    down = step_cutoff(r, d, c)
    return Cutoff(
        r,
        up.value * down.value,
        up.d1 * down.value + up.value * down.d1,
        up.d2 * down.value + 2.0 * up.d1 * down.d1 + up.value * down.d2,
    )


def to_mode_source(f: RadialFunction, mode: ModeParams) -> RadialFunction:
    """Mode-reduced data g = r^{(n-1)/2} f."""
    return RadialFunction(f.grid, f.values * f.r ** mode.half_dim)


def from_mode(v: RadialFunction, mode: ModeParams) -> RadialFunction:
    """Physical profile u = r^{-(n-1)/2} v."""
    return RadialFunction(v.grid, v.values * v.r ** (-mode.half_dim))


def restrict(v: RadialFunction, r_lo: float, r_hi: float) -> RadialFunction:
    """Samples of v on the nodes with r_lo <= r <= r_hi."""
    mask = v.grid.mask(r_lo, r_hi)
    if np.count_nonzero(mask) < 2:
        raise ValueError(f"Window [{r_lo}, {r_hi}] contains fewer than 2 grid points")
    return RadialFunction(RadialGrid(r=v.r[mask], h=v.grid.h), v.values[mask])


def radial_gradient(v: RadialFunction, mode: ModeParams, derivative: Optional[np.ndarray] = None) -> np.ndarray:
    """r^{(n-1)/2} d/dr of u, i.e. v_r - (n-1) v / (2r)."""
    dv = v.derivative().values if derivative is None else derivative
    return dv - mode.half_dim * v.values / v.r


def weighted_norm(
    v: RadialFunction,
    w: WeightSpec,
    mode: ModeParams,
    window: Optional[tuple[float, float]] = None,
    derivative: Optional[np.ndarray] = None,
) -> float:
    """
    Mode reduction of the H^{s,m} norm of u = r^{-(n-1)/2} v Y_l.

    Args:
        v: Radial profile
        w: Weight specification (s in {0, 1}, exponent m)
        mode: Mode parameters
        window: Optional (r_lo, r_hi) restricting the integral
        derivative: Optional samples of v_r replacing the centred differences

    Returns:
        float: Trapezoid value of the norm

    Raises:
        ValueError: If v is empty, contains NaN, or the window holds fewer than 2 nodes
    """
    values = v.values
    if values.size == 0:
        raise ValueError("Cannot take the norm of an empty function")
    if np.any(np.isnan(values)):
        raise ValueError("Radial function contains NaN samples")

    r = v.r
    weight = w.squared(r)
    density = np.abs(values) ** 2
    if w.s == 1:
        grad = radial_gradient(v, mode, derivative)
        density = density + np.abs(grad) ** 2 + mode.angular * np.abs(values) ** 2 / r ** 2

    mask = v.grid.mask(*window) if window is not None else slice(None)
    r_win = r[mask]
    if r_win.size < 2:
        raise ValueError(f"Norm window {window} contains fewer than 2 grid points")
    return float(np.sqrt(trapezoid(weight[mask] * density[mask], r_win)))
