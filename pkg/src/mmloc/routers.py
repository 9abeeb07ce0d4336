"""HTTP endpoints over the positioning, calibration, mapping and evaluation stages.

Bodies are the same pydantic models the CLI reads and writes. Handlers are plain
``def`` so the numerical work runs in FastAPI's threadpool.
"""

from __future__ import annotations

from fastapi import APIRouter, Query

from mmloc.calibration import calibrate_bs, default_halfwidths
from mmloc.config import get_settings
from mmloc.errors import ConfigurationError
from mmloc.evaluation import align_by_timestamp, compute_error_cdf
from mmloc.pipeline import Localization, frame_poses, localize_frames, map_fixes
from mmloc.positioning import emulate_rtt
from mmloc.schemas import (
    CalibrationResult,
    CalibrationSampleBundle,
    ErrorReport,
    EvaluateRequest,
    FixBundle,
    IPBundle,
    LocalizeRequest,
    MapRequest,
    SolverMode,
)

router = APIRouter()


@router.post("/localize", response_model=FixBundle)
def localize(
    body: LocalizeRequest,
    mode: SolverMode = Query(SolverMode.RTT_AOD),
    bias_offset: float = Query(0.0, description="RTT clock bias to remove, seconds"),
    uniform_weights: bool = Query(False),
    skip_failed: bool = Query(False),
) -> FixBundle:
    localization = localize_frames(
        body.frames,
        body.bs,
        mode,
        frame_poses(body.frames, body.ue_poses),
        bias_offset=bias_offset,
        uniform_weights=uniform_weights,
        skip_failed_frames=skip_failed,
        settings=get_settings(),
    )
    return FixBundle(mode=mode, fixes=localization.fixes)


@router.post("/calibrate", response_model=CalibrationResult)
def calibrate(body: CalibrationSampleBundle) -> CalibrationResult:
    if body.prior_center is None:
        raise ConfigurationError("calibration needs prior_center")
    settings = get_settings()
    return calibrate_bs(body.samples, body.prior_center, default_halfwidths(settings), settings)


@router.post("/map", response_model=IPBundle)
def map_incidence_points(
    body: MapRequest, bias_offset: float = Query(0.0)
) -> IPBundle:
    poses = frame_poses(body.frames, body.ue_poses)
    by_index = {frame.index: (frame, pose) for frame, pose in zip(body.frames, poses, strict=True)}
    localization = Localization()
    for fix in body.fixes:
        if fix.frame_index not in by_index:
            raise ConfigurationError(f"no frame with index {fix.frame_index}")
        frame, pose = by_index[fix.frame_index]
        if fix.mode.uses_rtt:
            frame = emulate_rtt(frame, pose.clock_bias + bias_offset)
        localization.fixes.append(fix)
        localization.frames.append(frame)
        localization.poses.append(pose)
    return IPBundle(estimates=map_fixes(localization, body.bs, get_settings()))


@router.post("/evaluate", response_model=ErrorReport)
def evaluate(body: EvaluateRequest) -> ErrorReport:
    fixes, truths = align_by_timestamp(body.fixes, body.truth)
    return compute_error_cdf(fixes, truths)
