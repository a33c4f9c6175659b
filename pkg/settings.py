"""
Laboratory settings and configuration management.
"""
from typing import Literal, Optional
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Laboratory settings with environment variable support.

    All settings can be overridden using environment variables with LABP_ prefix.
    For example: LABP_THREADS=8, LABP_RESOLUTION=4096, LABP_GAUGE_C=3, etc.
    """

    # Resolvent solver
    lambda_floor: float = Field(
        default=1e-3,
        description="Energy floor used by the boundary-dominated radius rule"
    )
    solve_tolerance: float = Field(
        default=1e-10,
        description="Maximum relative discrete residual accepted from a linear solve"
    )
    cauchy_factor: float = Field(
        default=1.5,
        description="Minimum decrease factor per rung for an epsilon ladder to count as converged"
    )
    min_grid_points: int = Field(default=16, description="Smallest admissible radial grid")

    # Gauges
    default_sigma: float = Field(default=0.25, description="Default weight exponent sigma")
    gauge_c: float = Field(
        default=2.0,
        description="Constant C in the lambda^-C factors of the gauge catalog and the dichotomy bound"
    )
    black_box_radius: float = Field(
        default=2.0,
        description="Radius outside which the near-infinity gauges are measured"
    )
    sommerfeld_r0: float = Field(default=5.0, description="Inner radius r0 of the Sommerfeld gauge")

    # Spherical energies and dichotomy
    forcing_term_variant: Literal["mode", "volume"] = Field(
        default="mode",
        description="Normalisation of the forcing term G: mode-reduced (v) or volume (u) quantities"
    )
    flux_correction: float = Field(default=1.0, description="Constant C_corr in the corrected fluxes")
    dichotomy_c1: float = Field(default=16.0, description="Dichotomy radius constant C1")
    dichotomy_c2: float = Field(default=8.0, description="Dichotomy growth-rate constant C2")
    dichotomy_fraction: float = Field(
        default=0.95,
        description="Fraction of window samples that must satisfy the growth rate"
    )
    dichotomy_bound_cap: float = Field(
        default=1e3,
        description="Largest fitted boundedness constant accepted as a Bounded verdict"
    )
    pohozaev_constant_cap: float = Field(
        default=1e3,
        description="Fitted K2 above which the Pohozaev check is flagged tail-dominated"
    )

    # Identities
    residual_floor: float = Field(default=1e-30, description="Floor in relative identity residuals")

    # Counterexamples
    eps_ratio: float = Field(default=0.01, description="Ratio eps_m / lambda_m in the blowup sweep")
    bessel_spacing: float = Field(default=1.0 / 128.0, description="Grid spacing of the blowup sweep")

    # Evolution
    absorber_fraction: float = Field(
        default=0.2,
        description="Fraction of the grid covered by the Schrodinger sponge"
    )
    absorber_reference_momentum: float = Field(
        default=2.0,
        description="Momentum of the reference packet used to calibrate the sponge"
    )
    absorber_reflection_target: float = Field(
        default=1e-4,
        description="Target reflected L2 fraction of the reference packet"
    )
    cfl_number: float = Field(default=0.9, description="Largest dt/h accepted by the leapfrog scheme")
    vanishing_threshold: float = Field(
        default=1e-8,
        description="Relative level below which a decaying sup-norm is reported as vanished"
    )
    group_speed_margin: float = Field(
        default=3.0,
        description="Safety factor applied to the energy-based group speed estimate"
    )

    # Runner
    threads: int = Field(default=4, description="Maximum number of parameter tuples run concurrently")
    resolution: int = Field(default=2 ** 14, description="Default number of radial grid points")
    output_dir: str = Field(default="reports", description="Default report directory")
    app_version: str = Field(default="0.1.0", description="Laboratory version")

    # Logging configuration
    log_level: str = Field(default="INFO", description="Logging level")
    log_file: Optional[str] = Field(default=None, description="Optional log file path")
    log_max_bytes: int = Field(default=10 * 1024 * 1024, description="Size at which the log file rotates")
    log_backup_count: int = Field(default=5, description="Rotated log files kept")
    log_format: str = Field(
        default="%(asctime)s - %(threadName)s - %(name)s - %(levelname)s - %(message)s",
        description="Log message format"
    )
    log_date_format: str = Field(
        default="%Y-%m-%d %H:%M:%S",
        description="Log timestamp format"
    )

    # Development settings
    debug: bool = Field(default=False, description="Log at DEBUG level regardless of log_level")

    model_config = SettingsConfigDict(
        env_prefix="LABP_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


# Global settings instance
settings = Settings()
