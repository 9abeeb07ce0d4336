from __future__ import annotations

import math
from enum import Enum
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from mmloc.geometry import BSState, IncidencePoint, MeasurementVector, UEState

SCHEMA_VERSION = "1.0"

Vector3 = tuple[float, float, float]

# Average GNSS/INS pose uncertainties (roll, pitch, yaw in degrees; x, y, z in meters)
DEFAULT_POSITION_STD_M: Vector3 = (0.194, 0.187, 0.245)
DEFAULT_ORIENTATION_STD_DEG: Vector3 = (0.060, 0.052, 1.136)


def _check_covariance(matrix: list[list[float]], size: int) -> list[list[float]]:
    cov = np.asarray(matrix, dtype=float)
    if cov.shape != (size, size):
        raise ValueError(f"covariance must be {size}x{size}, got {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance must be finite")
    scale = max(float(np.max(np.abs(cov))), 1e-300)
    if not np.allclose(cov, cov.T, rtol=1e-9, atol=1e-12 * scale):
        raise ValueError("covariance must be symmetric")
    if float(np.min(np.linalg.eigvalsh(cov))) < -1e-9 * scale:
        raise ValueError("covariance must be positive semidefinite")
    return matrix


class PathKind(str, Enum):
    LOS = "los"
    NLOS = "nlos"


class SolverMode(str, Enum):
    """Positioning modes selectable from the CLI and the service."""

    AOD_HEIGHT = "aod-height"
    RTT_AOD = "rtt-aod"
    RTT_AOD_AOA = "rtt-aod-aoa"
    MULTIPATH_RTT = "multipath-rtt"
    MULTIPATH_TDOA = "multipath-tdoa"

    @property
    def uses_rtt(self) -> bool:
        return self is not SolverMode.MULTIPATH_TDOA


class Versioned(BaseModel):
    schema_version: str = SCHEMA_VERSION

    @field_validator("schema_version")
    @classmethod
    def _known_version(cls, value: str) -> str:
        if value.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
            raise ValueError(f"unsupported schema_version {value!r}")
        return value


# --- scenario -----------------------------------------------------------------


class Surface(BaseModel):
    """Planar reflector: a rectangle around ``anchor`` with unit ``normal``."""

    model_config = ConfigDict(frozen=True)

    anchor: Vector3
    normal: Vector3
    half_widths: tuple[float, float] = (1.0e3, 1.0e3)
    name: str = ""

    @field_validator("normal")
    @classmethod
    def _unit_normal(cls, value: Vector3) -> Vector3:
        n = np.asarray(value, dtype=float)
        norm = float(np.linalg.norm(n))
        if not norm > 0.0 or not math.isfinite(norm):
            raise ValueError("surface normal must be a nonzero finite vector")
        return tuple(float(c) for c in n / norm)

    @field_validator("half_widths")
    @classmethod
    def _positive_extent(cls, value: tuple[float, float]) -> tuple[float, float]:
        if min(value) <= 0.0:
            raise ValueError("surface extents must be positive")
        return value

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.normal, dtype=float)

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.anchor, dtype=float)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """In-plane axes: ``u`` horizontal where possible, ``v = n x u``."""
        n = self.n
        u = np.cross([0.0, 0.0, 1.0], n)
        if np.linalg.norm(u) < 1e-9:
            u = np.array([1.0, 0.0, 0.0])
        u = u / np.linalg.norm(u)
        return u, np.cross(n, u)

    def signed_distance(self, point: np.ndarray) -> float:
        return float(np.dot(np.asarray(point, dtype=float) - self.a, self.n))

    def mirror(self, point: np.ndarray) -> np.ndarray:
        point = np.asarray(point, dtype=float)
        return point - 2.0 * self.signed_distance(point) * self.n

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        """True if ``point`` (assumed on the plane) lies inside the extents."""
        u, v = self.axes()
        offset = np.asarray(point, dtype=float) - self.a
        return (
            abs(float(offset @ u)) <= self.half_widths[0] + tol
            and abs(float(offset @ v)) <= self.half_widths[1] + tol
        )


class SimPath(BaseModel):
    kind: PathKind
    ip: IncidencePoint | None = None
    gain_re: float = 0.0
    gain_im: float = 0.0
    true_measurement: MeasurementVector
    strength: float = Field(ge=0.0)
    surface_index: int | None = None

    @model_validator(mode="after")
    def _los_iff_no_ip(self) -> SimPath:
        if (self.kind is PathKind.LOS) != (self.ip is None):
            raise ValueError("LOS paths carry no incidence point; NLOS paths require one")
        return self

    @property
    def gain(self) -> complex:
        return complex(self.gain_re, self.gain_im)


class SignalConfig(BaseModel):
    carrier_hz: float = 27.2e9
    subcarrier_spacing_hz: float = 120.0e3
    # every fourth of 4 x 198 subcarriers
    active_subcarrier_indices: list[int] = Field(default_factory=lambda: list(range(0, 792, 4)))
    n_bs_el_beams: int = Field(default=4, gt=0)
    n_bs_az_beams: int = Field(default=34, gt=0)
    n_ue_beams: int = Field(default=15, gt=0)
    noise_power: float = Field(default=0.0, ge=0.0)

    @field_validator("active_subcarrier_indices")
    @classmethod
    def _strictly_increasing(cls, value: list[int]) -> list[int]:
        if any(b <= a for a, b in zip(value, value[1:], strict=False)):
            raise ValueError("subcarrier indices must be strictly increasing")
        return value

    @property
    def subcarriers(self) -> np.ndarray:
        return np.asarray(self.active_subcarrier_indices, dtype=float)


class BeamCodebook(BaseModel):
    """Beam grid (elevation x azimuth centers, local frame) with a parabolic-dB main lobe."""

    azimuths: list[float]
    elevations: list[float] = Field(default_factory=lambda: [0.0])
    beamwidth_az: float = Field(gt=0.0)
    beamwidth_el: float = Field(gt=0.0)
    max_attenuation_db: float = Field(default=30.0, gt=0.0)
    labels: list[int] | None = None

    @model_validator(mode="after")
    def _labels_match(self) -> BeamCodebook:
        if self.labels is not None and len(self.labels) != self.n_beams:
            raise ValueError("one label per beam required")
        return self

    @property
    def n_beams(self) -> int:
        return len(self.azimuths) * len(self.elevations)


class CodebookPair(BaseModel):
    ue: BeamCodebook
    bs: BeamCodebook


class NoiseModel(BaseModel):
    """Per-component measurement noise standard deviations (diagonal R)."""

    toa_std_s: float = Field(default=0.0, ge=0.0)
    aoa_az_std_rad: float = Field(default=0.0, ge=0.0)
    aoa_el_std_rad: float = Field(default=0.0, ge=0.0)
    aod_az_std_rad: float = Field(default=0.0, ge=0.0)
    aod_el_std_rad: float = Field(default=0.0, ge=0.0)
    report_aoa_elevation: bool = True

    def stds(self) -> np.ndarray:
        return np.array(
            [
                self.toa_std_s,
                self.aoa_az_std_rad,
                self.aoa_el_std_rad,
                self.aod_az_std_rad,
                self.aod_el_std_rad,
            ]
        )

    def scaled(self, factor: float) -> NoiseModel:
        return NoiseModel(
            toa_std_s=self.toa_std_s * factor,
            aoa_az_std_rad=self.aoa_az_std_rad * factor,
            aoa_el_std_rad=self.aoa_el_std_rad * factor,
            aod_az_std_rad=self.aod_az_std_rad * factor,
            aod_el_std_rad=self.aod_el_std_rad * factor,
            report_aoa_elevation=self.report_aoa_elevation,
        )


class ClockBiasModel(BaseModel):
    kind: Literal["constant", "gaussian"] = "constant"
    mean_s: float = 0.0
    std_s: float = Field(default=0.0, ge=0.0)

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return self.mean_s
        return float(rng.normal(self.mean_s, self.std_s))


class PathStrengthModel(BaseModel):
    """Free-space ``1/d^2`` power with a multiplicative loss per reflection."""

    reference_power: float = Field(default=1.0, gt=0.0)
    reflection_loss: float = Field(default=1.0, gt=0.0)

    def strength(self, distance_m: float, bounces: int) -> float:
        return self.reference_power * self.reflection_loss**bounces / distance_m**2


class DriveSpec(BaseModel):
    """Straight-segment drive through ``waypoints`` at constant speed."""

    waypoints: list[Vector3] = Field(min_length=2)
    speed_mps: float = Field(gt=0.0)
    orientation_mode: Literal["travel", "face_bs"] = "travel"
    start_time: float = 0.0


class ScenarioConfig(BaseModel):
    bs: BSState
    bs_prior: BSState | None = None
    trajectory: list[UEState] = Field(default_factory=list)
    drive: DriveSpec | None = None
    frame_period: float = Field(default=0.1, gt=0.0)
    surfaces: list[Surface] = Field(default_factory=list)
    measurement_noise: NoiseModel = Field(default_factory=NoiseModel)
    clock_bias_model: ClockBiasModel = Field(default_factory=ClockBiasModel)
    path_strength: PathStrengthModel = Field(default_factory=PathStrengthModel)
    signal: SignalConfig = Field(default_factory=SignalConfig)
    codebooks: CodebookPair | None = None
    rng_seed: int = 0

    @model_validator(mode="after")
    def _has_trajectory(self) -> ScenarioConfig:
        if not self.trajectory and self.drive is None:
            raise ValueError("scenario needs a non-empty trajectory or a drive")
        return self


# --- measurements -----------------------------------------------------------


class PathMeasurement(BaseModel):
    measurement: MeasurementVector
    strength: float = Field(default=1.0, ge=0.0)
    covariance: list[list[float]]

    @field_validator("covariance")
    @classmethod
    def _psd(cls, value: list[list[float]]) -> list[list[float]]:
        return _check_covariance(value, 5)

    @property
    def z(self) -> np.ndarray:
        return self.measurement.as_array()

    @property
    def cov(self) -> np.ndarray:
        return np.asarray(self.covariance, dtype=float)

    @classmethod
    def from_arrays(cls, z: np.ndarray, cov: np.ndarray, strength: float) -> PathMeasurement:
        return cls(
            measurement=MeasurementVector.from_array(z),
            strength=strength,
            covariance=np.asarray(cov, dtype=float).tolist(),
        )

    def with_toa(self, toa: float) -> PathMeasurement:
        measurement = self.measurement.model_copy(update={"toa": toa})
        return self.model_copy(update={"measurement": measurement})


class FrameTruth(BaseModel):
    """Ground-truth association recorded by the simulator for oracle checks."""

    ue: UEState
    clock_bias: float
    kinds: list[PathKind]
    ips: list[Vector3 | None]
    surface_indices: list[int | None] = Field(default_factory=list)


class MeasurementFrame(BaseModel):
    index: int = 0
    timestamp: float = 0.0
    paths: list[PathMeasurement] = Field(default_factory=list)
    truth: FrameTruth | None = None


class FrameBundle(Versioned):
    frames: list[MeasurementFrame]


# --- calibration ------------------------------------------------------------


class PoseUncertainty(BaseModel):
    position_std_m: Vector3 = DEFAULT_POSITION_STD_M
    orientation_std_rad: Vector3 = tuple(math.radians(d) for d in DEFAULT_ORIENTATION_STD_DEG)

    @field_validator("position_std_m", "orientation_std_rad")
    @classmethod
    def _nonnegative(cls, value: Vector3) -> Vector3:
        if min(value) < 0.0:
            raise ValueError("standard deviations must be nonnegative")
        return value


class CalibrationSample(BaseModel):
    ue_pose: UEState
    pose_uncertainty: PoseUncertainty | None = None
    los_angles: tuple[float, float, float, float]  # aoa_az, aoa_el, aod_az, aod_el
    covariance: list[list[float]]

    @field_validator("covariance")
    @classmethod
    def _psd(cls, value: list[list[float]]) -> list[list[float]]:
        return _check_covariance(value, 4)

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.los_angles, dtype=float)

    @property
    def cov(self) -> np.ndarray:
        return np.asarray(self.covariance, dtype=float)


class CalibrationSampleBundle(Versioned):
    samples: list[CalibrationSample]
    prior_center: BSState | None = None


class CalibrationResult(Versioned):
    bs_estimate: BSState
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    n_samples: int


# --- positioning and mapping -------------------------------------------------


class PositionFix(BaseModel):
    position: list[float] = Field(min_length=2, max_length=3)
    clock_bias: float | None = None
    mode: SolverMode
    residual_cost: float = 0.0
    n_paths_used: int = 1
    converged: bool = True
    frame_index: int = 0
    timestamp: float = 0.0

    @model_validator(mode="after")
    def _consistent(self) -> PositionFix:
        if not all(math.isfinite(v) for v in self.position):
            raise ValueError("position must be finite")
        if (self.clock_bias is not None) != (self.mode is SolverMode.MULTIPATH_TDOA):
            raise ValueError("clock_bias is reported by the multipath-tdoa mode only")
        if self.mode is SolverMode.AOD_HEIGHT and len(self.position) != 2:
            raise ValueError("aod-height fixes are 2D")
        return self

    @property
    def xy(self) -> np.ndarray:
        return np.asarray(self.position[:2], dtype=float)


class FixBundle(Versioned):
    mode: SolverMode
    fixes: list[PositionFix]


class IPEstimate(BaseModel):
    position: Vector3
    residual_cost: float
    frame_index: int = 0
    path_index: int = 0
    converged: bool = True
    n_sigma_converged: int = 0

    @field_validator("position")
    @classmethod
    def _finite(cls, value: Vector3) -> Vector3:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("incidence point must be finite")
        return value


class IPBundle(Versioned):
    estimates: list[IPEstimate]


# --- evaluation ---------------------------------------------------------------


class ErrorReport(Versioned):
    metric: Literal["xy", "range"] = "xy"
    errors: list[float]
    cdf: list[tuple[float, float]]
    mae: float
    percentiles: dict[str, float]
    fraction_below: dict[str, float]


class ReportComparison(BaseModel):
    median_delta: float
    p90_delta: float
    left_fraction: float
    dominates: bool


class RunConfig(BaseModel):
    scenario_path: str | None = None
    scenario: ScenarioConfig | None = None
    mode: SolverMode = SolverMode.RTT_AOD
    synthetic_range_std_m: float | None = Field(default=None, ge=0.0)
    noise_scale: float = Field(default=1.0, ge=0.0)
    signal_level: bool = False
    calibrate: bool = False
    map_incidence_points: bool = False
    bs_position_offset_m: Vector3 = (0.0, 0.0, 0.0)
    bs_orientation_offset_deg: Vector3 = (0.0, 0.0, 0.0)
    uniform_weights: bool = False
    skip_failed_frames: bool = False
    output_dir: str = "runs"
    seed: int | None = None

    @model_validator(mode="after")
    def _scenario_source(self) -> RunConfig:
        if self.scenario is None and self.scenario_path is None:
            raise ValueError("either scenario or scenario_path is required")
        if self.scenario is None and not Path(self.scenario_path).is_file():
            raise ValueError(f"scenario file not found: {self.scenario_path}")
        return self


class RunSummary(Versioned):
    report: ErrorReport
    range_report: ErrorReport | None = None
    calibration: CalibrationResult | None = None
    n_frames: int
    n_failed_frames: int = 0
    artifacts: dict[str, str] = Field(default_factory=dict)


# --- service bodies -------------------------------------------------------------


class LocalizeRequest(BaseModel):
    frames: list[MeasurementFrame] = Field(min_length=1)
    bs: BSState
    ue_poses: list[UEState] | None = None

    @model_validator(mode="after")
    def _poses_available(self) -> LocalizeRequest:
        if self.ue_poses is not None:
            if len(self.ue_poses) != len(self.frames):
                raise ValueError("one UE pose per frame required")
        elif any(f.truth is None for f in self.frames):
            raise ValueError("ue_poses required for frames without truth")
        return self


class MapRequest(LocalizeRequest):
    fixes: list[PositionFix] = Field(min_length=1)


class EvaluateRequest(BaseModel):
    fixes: list[PositionFix] = Field(min_length=1)
    truth: list[UEState] = Field(min_length=1)
