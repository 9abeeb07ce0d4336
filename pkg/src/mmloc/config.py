from __future__ import annotations

import functools
import math

from pydantic_settings import BaseSettings, SettingsConfigDict


class AppSettings(BaseSettings):
    model_config = SettingsConfigDict(env_file=(".env",), env_prefix="MMLOC_", extra="ignore")

    log_level: str = "INFO"
    output_dir: str = "runs"

    # Channel estimation
    delay_grid_size: int = 2048
    max_paths: int = 4
    min_rel_power_db: float = -15.0
    aoa_el_variance: float = 1.0e4  # rad^2, effectively uninformative

    # Diagonal noise floors used when assembling R for estimated paths
    toa_std_floor_s: float = 1.0e-9
    aoa_az_std_floor_rad: float = math.radians(1.0)
    aod_az_std_floor_rad: float = math.radians(1.0)
    aod_el_std_floor_rad: float = math.radians(1.0)

    # Lower bounds applied to synthetic covariances so R stays invertible
    toa_variance_floor: float = 1.0e-30
    angle_variance_floor: float = 1.0e-18

    # Path selection
    los_tie_window_s: float = 1.0e-9

    # Positioning
    degenerate_line_threshold: float = 1.0e-3
    max_condition_number: float = 1.0e8
    grazing_ray_epsilon: float = 1.0e-6
    los_ls_max_iterations: int = 100
    los_ls_gtol: float = 1.0e-10

    # Calibration
    calibration_max_iterations: int = 200
    calibration_tolerance: float = 1.0e-12
    calibration_halfwidth_m: float = 5.0
    calibration_halfwidth_deg: float = 10.0
    finite_difference_step: float = 1.0e-7

    # Mapping
    ip_max_iterations: int = 200
    ip_cost_tolerance: float = 1.0e-12
    parallel_ray_threshold: float = 1.0e-6
    unscented_lambda: float | None = None  # defaults to 3 - n

    # Monitoring & Observability
    otel_endpoint: str | None = None
    service_name: str = "mmloc"


@functools.lru_cache(maxsize=1)
def get_settings() -> AppSettings:
    return AppSettings()
