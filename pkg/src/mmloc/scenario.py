"""Synthetic ground truth: image-source paths, noisy measurement frames and drives."""

from __future__ import annotations

import logging
import math

import numpy as np

from mmloc.beamspace import RawBeamspace, synthesize_beamspace
from mmloc.codebook import default_codebooks
from mmloc.config import AppSettings, get_settings
from mmloc.geometry import (
    AOA_AZ,
    AOA_EL,
    AOD_AZ,
    AOD_EL,
    SPEED_OF_LIGHT,
    TOA,
    BSState,
    IncidencePoint,
    UEState,
    measurement_function,
    wrap_angle,
)
from mmloc.schemas import (
    ClockBiasModel,
    FrameTruth,
    MeasurementFrame,
    NoiseModel,
    PathKind,
    PathMeasurement,
    PathStrengthModel,
    ScenarioConfig,
    SimPath,
    Surface,
)

logger = logging.getLogger(__name__)

_SIDE_TOL_M = 1e-9


def _path_gain(strength: float, distance: float, carrier_hz: float | None) -> complex:
    if carrier_hz is None:
        return complex(math.sqrt(strength), 0.0)
    return math.sqrt(strength) * np.exp(-2j * np.pi * carrier_hz * distance / SPEED_OF_LIGHT)


def _segment_blocked(surface: Surface, start: np.ndarray, end: np.ndarray) -> bool:
    s0 = surface.signed_distance(start)
    s1 = surface.signed_distance(end)
    if s0 * s1 >= 0.0:
        return False
    t = s0 / (s0 - s1)
    return surface.contains(start + t * (end - start), tol=0.0)


def reflect_point(surface: Surface, bs: np.ndarray, ue: np.ndarray) -> np.ndarray | None:
    """Specular point on ``surface`` between ``bs`` and ``ue`` by the image-source method."""
    d_bs = surface.signed_distance(bs)
    d_ue = surface.signed_distance(ue)
    if d_bs <= _SIDE_TOL_M or d_ue <= _SIDE_TOL_M:
        return None
    image = surface.mirror(bs)
    # image sits at -d_bs, the UE at +d_ue: the crossing is at t = d_bs / (d_bs + d_ue)
    t = d_bs / (d_bs + d_ue)
    point = image + t * (ue - image)
    if not surface.contains(point):
        return None
    return point


def generate_paths(
    bs: BSState,
    ue: UEState,
    surfaces: list[Surface],
    strength_model: PathStrengthModel | None = None,
    carrier_hz: float | None = None,
) -> list[SimPath]:
    """LOS path plus one specular NLOS path per visible, unoccluded surface."""
    strength_model = strength_model or PathStrengthModel()
    p_bs, p_ue = bs.p, ue.p

    los_distance = float(np.linalg.norm(p_ue - p_bs))
    los_strength = strength_model.strength(los_distance, 0)
    los_gain = _path_gain(los_strength, los_distance, carrier_hz)
    paths = [
        SimPath(
            kind=PathKind.LOS,
            true_measurement=measurement_function(ue, bs),
            strength=los_strength,
            gain_re=los_gain.real,
            gain_im=los_gain.imag,
        )
    ]

    for index, surface in enumerate(surfaces):
        point = reflect_point(surface, p_bs, p_ue)
        if point is None:
            continue
        others = [s for j, s in enumerate(surfaces) if j != index]
        if any(
            _segment_blocked(s, p_bs, point) or _segment_blocked(s, point, p_ue) for s in others
        ):
            continue
        ip = IncidencePoint(position=tuple(point))
        distance = float(np.linalg.norm(point - p_bs) + np.linalg.norm(p_ue - point))
        strength = strength_model.strength(distance, 1)
        gain = _path_gain(strength, distance, carrier_hz)
        paths.append(
            SimPath(
                kind=PathKind.NLOS,
                ip=ip,
                true_measurement=measurement_function(ue, bs, ip),
                strength=strength,
                gain_re=gain.real,
                gain_im=gain.imag,
                surface_index=index,
            )
        )
    return paths


def measurement_covariance(
    noise: NoiseModel, settings: AppSettings | None = None
) -> np.ndarray:
    """Diagonal ``R`` from the noise model, floored so it stays invertible."""
    settings = settings or get_settings()
    variances = noise.stds() ** 2
    floors = np.full(5, settings.angle_variance_floor)
    floors[TOA] = settings.toa_variance_floor
    variances = np.maximum(variances, floors)
    if not noise.report_aoa_elevation:
        variances[AOA_EL] = settings.aoa_el_variance
    return np.diag(variances)


def synthesize_measurements(
    paths: list[SimPath],
    noise: NoiseModel,
    bias_model: ClockBiasModel,
    rng: np.random.Generator,
    *,
    ue: UEState | None = None,
    index: int = 0,
    timestamp: float = 0.0,
    settings: AppSettings | None = None,
) -> MeasurementFrame:
    """Perturb the true measurements with Gaussian noise and one frame-wide clock bias."""
    bias = bias_model.sample(rng)
    stds = noise.stds()
    cov = measurement_covariance(noise, settings)

    measurements = []
    for path in paths:
        z = path.true_measurement.as_array() + stds * rng.standard_normal(5)
        z[TOA] += bias
        z[[AOA_AZ, AOD_AZ]] = wrap_angle(z[[AOA_AZ, AOD_AZ]])
        z[[AOA_EL, AOD_EL]] = np.clip(z[[AOA_EL, AOD_EL]], -np.pi / 2, np.pi / 2)
        if not noise.report_aoa_elevation:
            z[AOA_EL] = 0.0
        measurements.append(PathMeasurement.from_arrays(z, cov, path.strength))

    truth = None
    if ue is not None:
        truth = FrameTruth(
            ue=ue,
            clock_bias=ue.clock_bias + bias,
            kinds=[p.kind for p in paths],
            ips=[None if p.ip is None else p.ip.position for p in paths],
            surface_indices=[p.surface_index for p in paths],
        )
    return MeasurementFrame(index=index, timestamp=timestamp, paths=measurements, truth=truth)


def generate_trajectory(config: ScenarioConfig) -> list[UEState]:
    """Explicit trajectory if given, else the drive sampled every ``frame_period`` seconds.

    Explicit states without strictly increasing timestamps are restamped at
    ``k * frame_period``.
    """
    if config.trajectory:
        states = list(config.trajectory)
        times = [s.timestamp for s in states]
        if any(b <= a for a, b in zip(times, times[1:], strict=False)):
            states = [
                s.model_copy(update={"timestamp": k * config.frame_period})
                for k, s in enumerate(states)
            ]
        return states
    drive = config.drive
    waypoints = np.asarray(drive.waypoints, dtype=float)
    legs = np.diff(waypoints, axis=0)
    lengths = np.linalg.norm(legs, axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    total = float(cumulative[-1])
    step = drive.speed_mps * config.frame_period
    n_frames = int(math.floor(total / step + 1e-9)) + 1

    states = []
    for k in range(n_frames):
        s = min(k * step, total)
        leg = int(np.clip(np.searchsorted(cumulative, s, side="right") - 1, 0, len(legs) - 1))
        frac = 0.0 if lengths[leg] == 0.0 else (s - cumulative[leg]) / lengths[leg]
        position = waypoints[leg] + frac * legs[leg]
        if drive.orientation_mode == "face_bs":
            heading = config.bs.p - position
        else:
            heading = legs[leg]
        # local = R @ global, so boresight along heading needs yaw = -azimuth
        yaw = -math.atan2(heading[1], heading[0])
        states.append(
            UEState(
                position=tuple(position),
                orientation=(0.0, 0.0, yaw),
                timestamp=drive.start_time + k * config.frame_period,
            )
        )
    return states


def frame_rngs(seed: int, n_frames: int) -> list[np.random.Generator]:
    """Independent per-frame generators spawned from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_frames)]


def simulate_frames(
    config: ScenarioConfig, settings: AppSettings | None = None
) -> list[MeasurementFrame]:
    states = generate_trajectory(config)
    carrier = config.signal.carrier_hz
    rngs = frame_rngs(config.rng_seed, len(states))
    frames = []
    for k, (ue, rng) in enumerate(zip(states, rngs, strict=True)):
        paths = generate_paths(config.bs, ue, config.surfaces, config.path_strength, carrier)
        frames.append(
            synthesize_measurements(
                paths,
                config.measurement_noise,
                config.clock_bias_model,
                rng,
                ue=ue,
                index=k,
                timestamp=ue.timestamp,
                settings=settings,
            )
        )
    logger.info("frames_simulated", extra={"n_frames": len(frames), "seed": config.rng_seed})
    return frames


def simulate_signal(config: ScenarioConfig) -> list[tuple[FrameTruth, RawBeamspace]]:
    """Signal-level counterpart of ``simulate_frames``: raw beam-sweep symbols per frame."""
    states = generate_trajectory(config)
    codebooks = config.codebooks or default_codebooks(config.signal)
    carrier = config.signal.carrier_hz
    out = []
    for ue, rng in zip(states, frame_rngs(config.rng_seed, len(states)), strict=True):
        paths = generate_paths(config.bs, ue, config.surfaces, config.path_strength, carrier)
        bias = config.clock_bias_model.sample(rng)
        raw = synthesize_beamspace(
            paths, codebooks, config.signal, rng, clock_bias=bias
        )
        truth = FrameTruth(
            ue=ue,
            clock_bias=ue.clock_bias + bias,
            kinds=[p.kind for p in paths],
            ips=[None if p.ip is None else p.ip.position for p in paths],
            surface_indices=[p.surface_index for p in paths],
        )
        out.append((truth, raw))
    logger.info("signal_simulated", extra={"n_frames": len(out), "seed": config.rng_seed})
    return out


