"""
Config-driven experiment runner.

Parameter tuples of one experiment run concurrently in a thread pool; their rows
are sorted by parameter tuple before a single writer emits the report, so the
output does not depend on the degree of parallelism.
"""
import asyncio
import itertools
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.stats import linregress

from lab.counterexamples import build_bessel_matching, perturb_and_probe, quasimode_profile
from lab.energies import (
    classify_dichotomy,
    dichotomy_normalization,
    pohozaev_bound_check,
    spherical_energies,
)
from lab.evolution import (
    evolve_schrodinger,
    evolve_wave,
    limiting_amplitude_experiment,
    local_observables,
    local_smoothing_integral,
    morawetz_spec,
    pointwise_decay_fit,
    sup_profile,
    trajectory_summary,
)
from lab.identities import (
    carleman_identity_residual,
    carleman_weight,
    charge_gradient_residual,
    charge_residual,
    lagrangean_residual,
    morawetz_residual,
    morawetz_weight,
)
from lab.radial_core import (
    ModeParams,
    NumericalError,
    Profiles,
    RadialFunction,
    RadialGrid,
    bump_cutoff,
    origin_grid,
    to_mode_source,
)
from lab.report_writer import ReportWriter
from lab.resolvent_solver import GAUGE_CATALOG, ModeProblem, estimate_gauge, solve_resolvent_mode
from logging_config import log_experiment_result, log_performance_metrics
from settings import settings

logger = logging.getLogger(__name__)

EXPERIMENTS = (
    "lap_scan",
    "dichotomy",
    "identities",
    "counterexample_bessel",
    "counterexample_quasimode",
    "smoothing",
    "wave_decay",
    "limiting_amplitude",
    "rage",
)

POTENTIALS: Dict[str, Optional[Callable[[np.ndarray], np.ndarray]]] = {
    "free": None,
    "short_range": lambda r: (1.0 + r) ** -3,
}

METRICS: Dict[str, Optional[Callable[[np.ndarray], np.ndarray]]] = {
    "flat": None,
    "perturbed": lambda r: 0.2 * (1.0 + r) ** -2,
}

SCHRODINGER_DT = 0.01
DATA_RADIUS = 5.0


class ExperimentConfig(BaseModel):
    """One sweep: an experiment and the parameter grids it runs over."""

    model_config = ConfigDict(extra="forbid")

    experiment: Literal[EXPERIMENTS]
    n_grid: List[int] = [3]
    l_grid: List[int] = [0]
    lambda_grid: List[float] = [1.0]
    epsilon_grid: List[float] = [0.0]
    sigma_grid: List[float] = Field(default_factory=lambda: [settings.default_sigma])
    m_grid: List[int] = [2, 4, 8, 16]
    potential: Literal["free", "short_range"] = "free"
    metric: Literal["flat", "perturbed"] = "flat"
    resolution: int = Field(default_factory=lambda: settings.resolution)
    r_max: float = 200.0
    T: float = 50.0
    dt: Optional[float] = None
    r_K: float = 10.0
    decay_window: Optional[Tuple[float, float]] = None
    packet_momentum: float = 1.0
    output_dir: str = Field(default_factory=lambda: settings.output_dir)
    threads: int = Field(default_factory=lambda: settings.threads)

    @field_validator("n_grid", "l_grid", "lambda_grid", "epsilon_grid", "sigma_grid", "m_grid")
    @classmethod
    def grid_not_empty(cls, value: list, info) -> list:
        if not value:
            raise ValueError(f"{info.field_name} must not be empty")
        return value

    @field_validator("n_grid")
    @classmethod
    def dimensions(cls, value: List[int]) -> List[int]:
        if any(n < 3 for n in value):
            raise ValueError(f"n_grid entries must be >= 3, got {value}")
        return value

    @field_validator("l_grid")
    @classmethod
    def angular_orders(cls, value: List[int]) -> List[int]:
        if any(l < 0 for l in value):
            raise ValueError(f"l_grid entries must be >= 0, got {value}")
        return value

    @field_validator("lambda_grid")
    @classmethod
    def energies(cls, value: List[float]) -> List[float]:
        if any(not lam > 0 for lam in value):
            raise ValueError(f"lambda_grid entries must be positive, got {value}")
        return value

    @field_validator("epsilon_grid")
    @classmethod
    def regularisations(cls, value: List[float]) -> List[float]:
        if any(not eps >= 0 for eps in value):
            raise ValueError(f"epsilon_grid entries must be non-negative, got {value}")
        return value

    @field_validator("sigma_grid")
    @classmethod
    def weight_exponents(cls, value: List[float]) -> List[float]:
        if any(not 0 < s < 0.5 for s in value):
            raise ValueError(f"sigma_grid entries must lie in (0, 1/2), got {value}")
        return value

    @field_validator("m_grid")
    @classmethod
    def scales(cls, value: List[int]) -> List[int]:
        if any(m < 2 for m in value):
            raise ValueError(f"m_grid entries must be >= 2, got {value}")
        return value

    @field_validator("resolution")
    @classmethod
    def power_of_two(cls, value: int) -> int:
        if value < 2 ** 10 or value > 2 ** 18 or value & (value - 1):
            raise ValueError(f"resolution must be a power of two in [2^10, 2^18], got {value}")
        return value

    @field_validator("threads")
    @classmethod
    def positive_threads(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"threads must be >= 1, got {value}")
        return value

    @field_validator("r_max", "T", "r_K", "packet_momentum")
    @classmethod
    def positive(cls, value: float, info) -> float:
        if not value > 0:
            raise ValueError(f"{info.field_name} must be positive, got {value}")
        return value

    @field_validator("dt")
    @classmethod
    def positive_step(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not value > 0:
            raise ValueError(f"dt must be positive, got {value}")
        return value

    @model_validator(mode="after")
    def radii(self) -> "ExperimentConfig":
        if self.r_max < 4.0 * DATA_RADIUS:
            raise ValueError(f"r_max must be at least {4.0 * DATA_RADIUS}, got {self.r_max}")
        if self.r_K >= self.r_max / 2:
            raise ValueError(f"r_K must lie below r_max / 2, got {self.r_K}")
        return self

    def parameter_tuples(self) -> List[Tuple]:
        """Sorted parameter tuples of the experiment."""
        if self.experiment in ("lap_scan", "dichotomy", "identities"):
            grids = (self.n_grid, self.l_grid, self.lambda_grid, self.epsilon_grid, self.sigma_grid)
        elif self.experiment == "counterexample_bessel":
            grids = (self.n_grid, self.l_grid, self.m_grid, self.sigma_grid)
        elif self.experiment == "smoothing":
            grids = (self.n_grid, self.l_grid, self.sigma_grid)
        elif self.experiment == "limiting_amplitude":
            grids = (self.n_grid, self.l_grid, self.lambda_grid)
        else:
            grids = (self.n_grid, self.l_grid)
        return sorted(set(itertools.product(*grids)))


@dataclass
class RunResult:
    """Outcome of one experiment run."""

    exit_code: int
    rows: List[Dict[str, Any]] = field(default_factory=list)
    manifest: Dict[str, Any] = field(default_factory=dict)
    csv_path: Optional[str] = None
    manifest_path: Optional[str] = None


def fit_exponent(
    rows: Sequence[Dict[str, Any]],
    x_col: str,
    y_col: str,
    window: Optional[Tuple[float, float]] = None,
) -> Dict[str, float]:
    """
    Least-squares fit of log y against log x.

    Args:
        rows: Report rows
        x_col: Column of the abscissa
        y_col: Column of the ordinate
        window: Optional (lo, hi) range of x

    Returns:
        Dict with 'slope', 'intercept', 'r2' keys

    Raises:
        ValueError: Fewer than 4 rows in the window, or non-positive values
    """
    lo, hi = window if window is not None else (-np.inf, np.inf)
    points = [(float(row[x_col]), float(row[y_col])) for row in rows if lo <= float(row[x_col]) <= hi]
    if len(points) < 4:
        raise ValueError(f"fit_exponent needs at least 4 rows in the window, got {len(points)}")
    x, y = np.array(points).T
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError(f"fit_exponent needs positive {x_col} and {y_col}")
    fit = linregress(np.log(x), np.log(y))
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "r2": float(fit.rvalue ** 2)}


def _compact_bump(r: np.ndarray) -> np.ndarray:
    """exp(-1/(1-(r/5)^2)) on r < 5."""
    out = np.zeros_like(r)
    inside = r < DATA_RADIUS
    out[inside] = np.exp(-1.0 / (1.0 - (r[inside] / DATA_RADIUS) ** 2))
    return out


def _grid(config: ExperimentConfig) -> RadialGrid:
    return origin_grid(config.r_max, config.resolution)


def _profiles(config: ExperimentConfig, grid: RadialGrid) -> Profiles:
    return Profiles.from_callables(grid, V=POTENTIALS[config.potential], theta=METRICS[config.metric])


def _stationary_data(grid: RadialGrid) -> RadialFunction:
    """Fixed physical data: a plateau bump on [1, 2]."""
    return RadialFunction(grid, bump_cutoff(grid.r, (0.5, 1.0), (2.0, 3.0)).value)


def _join(flags: Sequence[str]) -> str:
    return ";".join(dict.fromkeys(flags))


def _solve(config: ExperimentConfig, n: int, l: int, lam: float, eps: float):
    grid = _grid(config)
    problem = ModeProblem(ModeParams(n, l), _profiles(config, grid), lam, epsilon=eps)
    f = _stationary_data(grid)
    return solve_resolvent_mode(problem, to_mode_source(f, problem.mode), "outgoing"), f


def _lap_scan(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    n, l, lam, eps, sigma = params
    sol, f = _solve(config, n, l, lam, eps)
    rows = [
        {**report.to_row(), "flag": _join(report.flags)}
        for report in (estimate_gauge(sol, f, estimate_id, sigma=sigma) for estimate_id in GAUGE_CATALOG)
    ]
    return {"rows": rows}


def _dichotomy(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    n, l, lam, eps, sigma = params
    sol, f = _solve(config, n, l, lam, eps)
    series = spherical_energies(sol, f)
    mass_scale, delta = dichotomy_normalization(sol, f, sigma=sigma)
    scaled = series.scaled(mass_scale)
    verdict = classify_dichotomy(scaled, lam, delta)
    profiles = sol.problem.profiles
    pohozaev = pohozaev_bound_check(scaled, lam, delta, A=profiles.A, sigma0=profiles.sigma0, sigma=sigma)

    flags = list(sol.flags) + list(pohozaev.flags)
    if verdict.kind == "Indeterminate":
        flags.append("indeterminate")
    if verdict.r0 is None:
        flags.append("not_applicable")
    row = {
        "n": n, "l": l, "lambda": lam, "epsilon": eps, "sigma": sigma,
        "kind": verdict.kind,
        "measured_rate": verdict.measured_rate,
        "threshold": verdict.threshold,
        "r0": verdict.r0 if verdict.r0 is not None else float("nan"),
        "bound": verdict.bound if verdict.bound is not None else float("nan"),
        "K1": pohozaev.K1,
        "K2": pohozaev.K2,
        "flag": _join(flags),
    }
    return {"rows": [row]}


def _identities(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    n, l, lam, eps, sigma = params
    sol, f = _solve(config, n, l, lam, eps)
    r = sol.grid.r
    chi = bump_cutoff(r, (1.0, 2.0), (0.25 * config.r_max, 0.5 * config.r_max))
    reports = [
        charge_residual(sol, f),
        lagrangean_residual(sol, f, chi),
        charge_gradient_residual(sol, f, chi),
        morawetz_residual(sol, f, morawetz_weight(r, sigma), chi),
        carleman_identity_residual(
            RadialFunction(sol.grid, chi.value * sol.v.values), carleman_weight(r), 1.0, lam, sol.problem.mode
        ),
    ]
    rows = [{**report.to_row(), "sigma": sigma, "flag": _join(sol.flags)} for report in reports]
    return {"rows": rows}


@lru_cache(maxsize=16)
def _matched_mode(l: int, n: int):
    return build_bessel_matching(l, n)


def _counterexample_bessel(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    n, l, m, sigma = params
    report = perturb_and_probe(_matched_mode(l, n), m, sigma=sigma)
    row = {
        "n": n, **report.to_row(), "sigma": sigma,
        "recovery_error": report.recovery_error,
        "potential_sup": report.potential_sup,
        "flag": _join(report.flags),
    }
    return {"rows": [row]}


def _counterexample_quasimode(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    n, l = params
    profile = quasimode_profile(l, n)
    return {"rows": [{**profile.to_row(), "flag": ""}]}


def _schrodinger_run(config: ExperimentConfig, n: int, l: int):
    grid = _grid(config)
    problem = ModeProblem(ModeParams(n, l), _profiles(config, grid), 0.0)
    k = config.packet_momentum
    v0 = RadialFunction.from_callable(grid, lambda r: np.exp(-((r - 15.0) ** 2) / 18.0 + 1j * k * r))
    dt = config.dt or SCHRODINGER_DT
    return evolve_schrodinger(problem, v0, dt, config.T, absorber=True)


def _decay_fit(config: ExperimentConfig, traj, params: Tuple) -> Dict[str, Any]:
    window = config.decay_window or (5.0, config.T)
    entry: Dict[str, Any] = {"experiment": config.experiment, "params": list(params), "window": list(window)}
    try:
        fit = pointwise_decay_fit(traj, window)
        entry.update(fitted_exponent=fit.fitted_exponent, r2=fit.fit_residual, flags=list(fit.flags))
    except ValueError as e:
        entry.update(error=str(e))
    return entry


def _smoothing(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    n, l, sigma = params
    traj = _schrodinger_run(config, n, l)
    series = local_smoothing_integral(traj, sigma=sigma)
    observables = local_observables(traj, config.r_K)
    rows = [
        {
            "n": n, "l": l, "sigma": sigma, "t": float(t),
            "integral": float(integral), "ratio": float(ratio), "local_mass": float(mass),
            "flag": _join(traj.flags),
        }
        for t, integral, ratio, mass in zip(series.times, series.integral, series.ratio, observables.local_mass)
    ]
    return {"rows": rows}


def _rage(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    n, l = params
    traj = _schrodinger_run(config, n, l)
    observables = local_observables(traj, config.r_K)
    sups = sup_profile(traj)
    rows = [
        {
            "n": n, "l": l, "t": float(t),
            "local_mass": float(mass), "local_energy": float(energy), "sup_u": float(sup),
            "flag": _join(traj.flags),
        }
        for t, mass, energy, sup in zip(traj.times, observables.local_mass, observables.local_energy, sups)
    ]
    return {"rows": rows, "fits": [_decay_fit(config, traj, params)]}


def _wave_decay(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    n, l = params
    grid = _grid(config)
    mode = ModeParams(n, l)
    problem = ModeProblem(mode, _profiles(config, grid), 0.0)
    v0 = RadialFunction(grid, grid.r ** mode.L * _compact_bump(grid.r))
    dt = config.dt or 0.5 * grid.h
    traj = evolve_wave(problem, v0, RadialFunction.zeros(grid), dt, config.T)
    rows = [
        {"n": n, "l": l, **row}
        for row in trajectory_summary(traj, config.r_K, morawetz_spec(grid, 1.0))
    ]
    return {"rows": rows, "fits": [_decay_fit(config, traj, params)]}


def _limiting_amplitude(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    n, l, lam = params
    grid = _grid(config)
    problem = ModeProblem(ModeParams(n, l), _profiles(config, grid), 0.0)
    f = RadialFunction(grid, _compact_bump(grid.r))
    mu = float(np.sqrt(lam))
    report = limiting_amplitude_experiment(problem, f, mu, config.T, (0.0, config.r_K), dt=config.dt)
    rows = [
        {
            "n": n, "l": l, "mu": mu, "t": float(t), "discrepancy": float(d),
            "opposite_discrepancy": report.opposite_discrepancy,
            "flag": _join(report.flags),
        }
        for t, d in zip(report.times, report.discrepancy)
    ]
    return {"rows": rows}


TASKS: Dict[str, Callable[[ExperimentConfig, Tuple], Dict[str, Any]]] = {
    "lap_scan": _lap_scan,
    "dichotomy": _dichotomy,
    "identities": _identities,
    "counterexample_bessel": _counterexample_bessel,
    "counterexample_quasimode": _counterexample_quasimode,
    "smoothing": _smoothing,
    "wave_decay": _wave_decay,
    "limiting_amplitude": _limiting_amplitude,
    "rage": _rage,
}


_NUMERICAL_ERRORS = (NumericalError, MemoryError, np.linalg.LinAlgError, FloatingPointError)


def _error_kind(exc: BaseException) -> str:
    """Failure class of a sub-run: numerical, validation (bad parameters) or internal."""
    if isinstance(exc, _NUMERICAL_ERRORS):
        return "numerical"
    if isinstance(exc, ValueError):
        return "validation"
    return "internal"


def run_task(config: ExperimentConfig, params: Tuple) -> Dict[str, Any]:
    """
    Run one parameter tuple; never raises.

    Returns:
        Dict with 'params', 'success', 'rows', 'fits', 'flags', 'error', 'error_kind' keys
    """
    result: Dict[str, Any] = {
        "params": params, "success": True, "rows": [], "fits": [], "flags": [], "error": None, "error_kind": None,
    }
    try:
        output = TASKS[config.experiment](config, params)
        result["rows"] = output["rows"]
        result["fits"] = output.get("fits", [])
        result["flags"] = sorted({
            flag for row in result["rows"] for flag in (row.get("flag") or "").split(";") if flag
        })
    except Exception as e:
        result.update(success=False, error=str(e), error_kind=_error_kind(e))
    log_experiment_result(config.experiment, str(params), result["success"], result["error"], result["flags"])
    return result


def _versions() -> Dict[str, str]:
    return {
        "labp": settings.app_version,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


async def run_experiment(config: ExperimentConfig, executor: Optional[ThreadPoolExecutor] = None) -> RunResult:
    """
    Run every parameter tuple of an experiment and write its report.

    Args:
        config: Validated experiment configuration
        executor: Thread pool to use (a pool of config.threads workers is created when omitted)

    Returns:
        RunResult: exit code 0 on success, 1 when a sub-run rejected its parameters
        or the report could not be written, 2 when a sub-run failed numerically
    """
    start_time = time.time()
    params_list = config.parameter_tuples()
    own_executor = executor is None
    if own_executor:
        executor = ThreadPoolExecutor(max_workers=config.threads, thread_name_prefix="labp_worker")
    semaphore = asyncio.Semaphore(config.threads)
    loop = asyncio.get_running_loop()

    async def run_with_semaphore(params: Tuple) -> Dict[str, Any]:
        async with semaphore:
            return await loop.run_in_executor(executor, run_task, config, params)

    try:
        logger.info(f"Running {config.experiment} over {len(params_list)} parameter tuples")
        results = await asyncio.gather(*[run_with_semaphore(p) for p in params_list], return_exceptions=True)
    finally:
        if own_executor:
            executor.shutdown(wait=True)

    processed = []
    for params, result in zip(params_list, results):
        if isinstance(result, Exception):
            result = {
                "params": params, "success": False, "rows": [], "fits": [], "flags": [],
                "error": str(result), "error_kind": _error_kind(result),
            }
        processed.append(result)
    processed.sort(key=lambda item: item["params"])

    rows = [row for item in processed for row in item["rows"]]
    failures = [
        {"params": list(item["params"]), "error": item["error"], "kind": item["error_kind"]}
        for item in processed if not item["success"]
    ]
    flags = sorted({flag for item in processed for flag in item["flags"]})
    warnings = sum(1 for item in processed if item["flags"]) + len(failures)
    wall_seconds = time.time() - start_time

    manifest = {
        "experiment": config.experiment,
        "config": config.model_dump(mode="json"),
        "versions": _versions(),
        "flags": flags,
        "warnings": warnings,
        "failures": failures,
        "fits": [fit for item in processed for fit in item["fits"]],
        "wall_seconds": wall_seconds,
    }
    if config.experiment == "counterexample_bessel":
        manifest["fits"].extend(_blowup_fits(rows))

    written = await ReportWriter(config.output_dir).write_report(config.experiment, rows, manifest)
    log_performance_metrics(config.experiment, wall_seconds, len(params_list))

    if any(f["kind"] == "numerical" for f in failures):
        exit_code = 2
    elif failures or not written["success"]:
        exit_code = 1
    else:
        exit_code = 0
    return RunResult(
        exit_code=exit_code,
        rows=rows,
        manifest=manifest,
        csv_path=written["csv_path"],
        manifest_path=written["manifest_path"],
    )


def _blowup_fits(rows: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Slope of log ratio against log lambda_m per (n, l, sigma)."""
    fits = []
    by_tuple = lambda row: (row["n"], row["l"], row["sigma"])
    for key, group in itertools.groupby(sorted(rows, key=by_tuple), key=by_tuple):
        group = list(group)
        entry: Dict[str, Any] = {"experiment": "counterexample_bessel", "params": list(key), "x": "lambda_m", "y": "ratio"}
        try:
            entry.update(fit_exponent(group, "lambda_m", "ratio"))
        except ValueError as e:
            entry.update(error=str(e))
        fits.append(entry)
    return fits
