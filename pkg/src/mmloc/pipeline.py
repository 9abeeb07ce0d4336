"""End-to-end run: simulate, estimate, calibrate, localize, map and evaluate.

Each stage runs inside a ``pipeline.<stage>`` span and any toolkit error raised
inside it is re-raised as :class:`StageError` tagged with the stage name. Every
intermediate artifact is written under ``RunConfig.output_dir``.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mmloc import storage
from mmloc.beamspace import RawBeamspace
from mmloc.calibration import calibrate_bs, samples_from_frames
from mmloc.channel_estimator import estimate_frame
from mmloc.codebook import check_codebooks, default_codebooks
from mmloc.config import AppSettings, get_settings
from mmloc.errors import ConfigurationError, MmlocError, StageError
from mmloc.evaluation import align_by_timestamp, compute_error_cdf, range_error_report
from mmloc.geometry import BSState, UEState
from mmloc.mapping import map_frame
from mmloc.positioning import emulate_rtt, substitute_synthetic_range
from mmloc.scenario import simulate_frames, simulate_signal
from mmloc.schemas import (
    CodebookPair,
    FixBundle,
    FrameTruth,
    IPBundle,
    IPEstimate,
    MeasurementFrame,
    PositionFix,
    RunConfig,
    RunSummary,
    ScenarioConfig,
    SolverMode,
)
from mmloc.solvers import get_solver
from mmloc.telemetry import get_tracer, pipeline_metrics

logger = logging.getLogger(__name__)

# Offset mixed into the scenario seed for the synthetic-range stream
_RANGE_STREAM = 1


@contextmanager
def stage(name: str, n_frames: int | None = None) -> Iterator[None]:
    tracer = get_tracer(__name__)
    started = time.perf_counter()
    with tracer.start_as_current_span(f"pipeline.{name}") as span:
        if n_frames is not None:
            span.set_attribute("pipeline.n_frames", n_frames)
        try:
            yield
        except StageError:
            raise
        except MmlocError as exc:
            logger.error("stage_failed", extra={"stage": name, "error": str(exc)})
            raise StageError(name, exc) from exc
        finally:
            duration_ms = (time.perf_counter() - started) * 1000
            pipeline_metrics()["duration"].record(duration_ms, {"stage": name})
            logger.info(
                "stage_finished", extra={"stage": name, "duration_ms": round(duration_ms, 2)}
            )


def load_scenario(config: RunConfig) -> ScenarioConfig:
    """Scenario with the run's seed and noise scale applied."""
    scenario = config.scenario
    if scenario is None:
        scenario = storage.load_model(Path(config.scenario_path), ScenarioConfig)
    update = {}
    if config.seed is not None:
        update["rng_seed"] = config.seed
    if config.noise_scale != 1.0:
        update["measurement_noise"] = scenario.measurement_noise.scaled(config.noise_scale)
    return scenario.model_copy(update=update) if update else scenario


def believed_bs(
    scenario: ScenarioConfig,
    position_offset_m: tuple[float, float, float] = (0.0, 0.0, 0.0),
    orientation_offset_deg: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> BSState:
    """BS pose the solvers are given: the prior (or truth) shifted by the run offsets."""
    base = scenario.bs_prior or scenario.bs
    return BSState(
        position=tuple(np.asarray(base.position) + np.asarray(position_offset_m)),
        orientation=tuple(
            np.asarray(base.orientation) + np.radians(np.asarray(orientation_offset_deg))
        ),
    )


def scenario_codebooks(scenario: ScenarioConfig) -> CodebookPair:
    codebooks = scenario.codebooks or default_codebooks(scenario.signal)
    check_codebooks(codebooks, scenario.signal)
    return codebooks


def estimate_frames(
    items: list[tuple[FrameTruth | None, RawBeamspace]],
    codebooks: CodebookPair,
    timestamps: list[float],
    settings: AppSettings | None = None,
) -> list[MeasurementFrame]:
    """Channel-estimated frames; truth keeps the UE state but not the path association."""
    frames = []
    for k, ((truth, raw), timestamp) in enumerate(zip(items, timestamps, strict=True)):
        frame = estimate_frame(raw, codebooks, settings, index=k, timestamp=timestamp)
        if truth is not None:
            # detected paths are not ordered like the simulated ones
            stripped = truth.model_copy(update={"kinds": [], "ips": [], "surface_indices": []})
            frame = frame.model_copy(update={"truth": stripped})
        frames.append(frame)
    return frames


def frame_poses(
    frames: list[MeasurementFrame], ue_poses: list[UEState] | None = None
) -> list[UEState]:
    """UE poses per frame, from ``ue_poses`` or else from the frames' ground truth."""
    if ue_poses is not None:
        if len(ue_poses) != len(frames):
            raise ConfigurationError(f"{len(ue_poses)} UE poses for {len(frames)} frames")
        return list(ue_poses)
    if any(frame.truth is None for frame in frames):
        raise ConfigurationError("UE poses are required for frames without ground truth")
    return [frame.truth.ue for frame in frames]


@dataclass
class Localization:
    fixes: list[PositionFix] = field(default_factory=list)
    # frames as handed to the solver, aligned with ``fixes``
    frames: list[MeasurementFrame] = field(default_factory=list)
    poses: list[UEState] = field(default_factory=list)
    n_failed: int = 0


def localize_frames(
    frames: list[MeasurementFrame],
    bs: BSState,
    mode: SolverMode,
    poses: list[UEState],
    *,
    bias_offset: float = 0.0,
    synthetic_range_std_m: float | None = None,
    true_bs: BSState | None = None,
    rng: np.random.Generator | None = None,
    uniform_weights: bool = False,
    skip_failed_frames: bool = False,
    settings: AppSettings | None = None,
) -> Localization:
    """Run one solver over every frame.

    RTT modes first remove ``pose.clock_bias + bias_offset`` from all delays. With
    ``synthetic_range_std_m`` the LOS delay is then replaced by the true range to
    ``true_bs`` plus Gaussian noise.
    """
    solver = get_solver(mode, settings, uniform_weights)
    if synthetic_range_std_m is not None and rng is None:
        rng = np.random.default_rng()
    counters = pipeline_metrics()
    out = Localization()
    for frame, pose in zip(frames, poses, strict=True):
        try:
            if mode.uses_rtt:
                frame = emulate_rtt(frame, pose.clock_bias + bias_offset)
                if synthetic_range_std_m is not None and frame.paths:
                    frame = substitute_synthetic_range(
                        frame, pose, true_bs or bs, synthetic_range_std_m, rng
                    )
            fix = solver.locate(frame, bs, pose.orientation, 0.0, pose.position[2])
        except MmlocError as exc:
            if not skip_failed_frames:
                raise
            out.n_failed += 1
            counters["failures"].add(1, {"mode": mode.value})
            logger.warning(
                "frame_skipped", extra={"frame": frame.index, "mode": mode.value, "error": str(exc)}
            )
            continue
        out.fixes.append(fix)
        out.frames.append(frame)
        out.poses.append(pose)
    counters["frames"].add(len(out.fixes), {"stage": "localize"})
    logger.info(
        "frames_localized",
        extra={"mode": mode.value, "n_fixes": len(out.fixes), "n_failed": out.n_failed},
    )
    return out


def fix_position_3d(fix: PositionFix, pose: UEState) -> np.ndarray:
    """3D UE position of a fix; 2D fixes take the height from ``pose``."""
    if len(fix.position) == 3:
        return np.asarray(fix.position, dtype=float)
    return np.array([*fix.position, pose.position[2]], dtype=float)


def map_fixes(
    localization: Localization, bs: BSState, settings: AppSettings | None = None
) -> list[IPEstimate]:
    """IP estimates for every NLOS path of every localized frame."""
    estimates = []
    for fix, frame, pose in zip(
        localization.fixes, localization.frames, localization.poses, strict=True
    ):
        # RTT frames were already bias-corrected; TDOA fixes carry their own bias
        bias = fix.clock_bias if fix.clock_bias is not None else 0.0
        estimates.extend(
            map_frame(frame, fix_position_3d(fix, pose), bs, pose.orientation, bias, settings)
        )
    return estimates


def error_rows(fixes: list[PositionFix], errors: list[float]) -> list[dict[str, float | int]]:
    return [
        {"frame_index": fix.frame_index, "timestamp": fix.timestamp, "error_m": error}
        for fix, error in zip(fixes, errors, strict=True)
    ]


def run_pipeline(config: RunConfig, settings: AppSettings | None = None) -> RunSummary:
    settings = settings or get_settings()
    out = Path(config.output_dir)
    artifacts: dict[str, str] = {}

    def persist(key: str, path: Path) -> None:
        artifacts[key] = path.relative_to(out).as_posix()

    with stage("simulate"):
        scenario = load_scenario(config)
        if config.signal_level:
            items = simulate_signal(scenario)
            persist("beamspace", storage.save_beamspace_run(out / "beamspace", items))
        else:
            frames = simulate_frames(scenario, settings)
    n_frames = len(items) if config.signal_level else len(frames)
    logger.info("run_started", extra={"mode": config.mode.value, "n_frames": n_frames})

    if config.signal_level:
        with stage("estimate-channel", n_frames):
            frames = estimate_frames(
                items,
                scenario_codebooks(scenario),
                [truth.ue.timestamp for truth, _ in items],
                settings,
            )
    persist("frames", storage.save_frames(out / "frames.json", frames))

    bs = believed_bs(scenario, config.bs_position_offset_m, config.bs_orientation_offset_deg)
    calibration = None
    if config.calibrate:
        with stage("calibrate", n_frames):
            samples = samples_from_frames(frames, settings=settings)
            calibration = calibrate_bs(samples, bs, settings=settings)
            bs = calibration.bs_estimate
            persist("calibration", storage.save_model(out / "calibration.json", calibration))

    with stage("localize", n_frames):
        localization = localize_frames(
            frames,
            bs,
            config.mode,
            frame_poses(frames),
            bias_offset=scenario.clock_bias_model.mean_s,
            synthetic_range_std_m=config.synthetic_range_std_m,
            true_bs=scenario.bs,
            rng=np.random.default_rng([scenario.rng_seed, _RANGE_STREAM]),
            uniform_weights=config.uniform_weights,
            skip_failed_frames=config.skip_failed_frames,
            settings=settings,
        )
        fixes = FixBundle(mode=config.mode, fixes=localization.fixes)
        persist("fixes", storage.save_model(out / "fixes.json", fixes))

    if config.map_incidence_points:
        with stage("map", len(localization.fixes)):
            estimates = map_fixes(localization, bs, settings)
            persist("ips", storage.save_model(out / "ips.json", IPBundle(estimates=estimates)))

    with stage("evaluate", len(localization.fixes)):
        paired, truths = align_by_timestamp(localization.fixes, localization.poses)
        report = compute_error_cdf(paired, truths)
        range_report = None
        if config.mode.uses_rtt:
            range_report = range_error_report(localization.frames, localization.poses, scenario.bs)
            persist("range_report", storage.save_model(out / "range_report.json", range_report))
        persist("report", storage.save_model(out / "report.json", report))
        persist("cdf", storage.write_cdf_csv(out / "cdf.csv", report))
        persist(
            "errors",
            storage.write_error_table(out / "errors.csv", error_rows(paired, report.errors)),
        )

    summary = RunSummary(
        report=report,
        range_report=range_report,
        calibration=calibration,
        n_frames=n_frames,
        n_failed_frames=localization.n_failed,
        artifacts=artifacts,
    )
    storage.save_model(out / "summary.json", summary)
    logger.info(
        "run_finished",
        extra={
            "mode": config.mode.value,
            "mae_m": round(report.mae, 6),
            "p90_m": round(report.percentiles["p90"], 6),
            "n_failed": localization.n_failed,
        },
    )
    return summary

