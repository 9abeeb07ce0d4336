"""BS pose calibration from LOS angle measurements taken at known UE poses."""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.optimize import least_squares

from mmloc.config import AppSettings, get_settings
from mmloc.errors import EstimationError, SolverError
from mmloc.geometry import (
    ANGLE_SLICE,
    BSState,
    UEState,
    euler_to_rotation,
    predict_measurement,
    wrap_angle,
)
from mmloc.optim import central_difference_jacobian, jacobian_for, whitening_matrix
from mmloc.schemas import (
    CalibrationResult,
    CalibrationSample,
    MeasurementFrame,
    PoseUncertainty,
)

logger = logging.getLogger(__name__)

_COLLINEAR_RTOL = 1e-6


def select_los(frame: MeasurementFrame, tie_window_s: float | None = None) -> int:
    """Index of the earliest path; within ``tie_window_s`` of it the strongest wins."""
    if not frame.paths:
        raise EstimationError("no paths")
    if tie_window_s is None:
        tie_window_s = get_settings().los_tie_window_s
    toas = np.array([p.measurement.toa for p in frame.paths])
    strengths = np.array([p.strength for p in frame.paths])
    earliest = float(toas.min())
    tied = np.flatnonzero(toas - earliest < tie_window_s)
    return int(tied[np.argmax(strengths[tied])])


def _predicted_angles(ue: UEState, p_bs: np.ndarray, r_bs: np.ndarray) -> np.ndarray:
    return predict_measurement(ue.p, ue.rotation, 0.0, p_bs, r_bs)[ANGLE_SLICE]


def inflate_covariance(
    sample: CalibrationSample, bs_guess: BSState, settings: AppSettings | None = None
) -> np.ndarray:
    """Angle covariance plus the UE pose uncertainty propagated to first order."""
    settings = settings or get_settings()
    uncertainty = sample.pose_uncertainty or PoseUncertainty()
    ue = sample.ue_pose
    p_bs, r_bs = bs_guess.p, bs_guess.rotation
    base = _predicted_angles(ue, p_bs, r_bs)

    def angles_of(x: np.ndarray) -> np.ndarray:
        moved = predict_measurement(x[:3], euler_to_rotation(x[3:]), 0.0, p_bs, r_bs)
        return wrap_angle(moved[ANGLE_SLICE] - base)

    x0 = np.concatenate([ue.p, np.asarray(ue.orientation)])
    jac = central_difference_jacobian(angles_of, x0, settings.finite_difference_step)
    pose_cov = np.diag(
        np.concatenate([uncertainty.position_std_m, uncertainty.orientation_std_rad]) ** 2
    )
    return sample.cov + jac @ pose_cov @ jac.T


def samples_from_frames(
    frames: list[MeasurementFrame],
    ue_poses: list[UEState] | None = None,
    pose_uncertainty: PoseUncertainty | None = None,
    bs_guess: BSState | None = None,
    settings: AppSettings | None = None,
) -> list[CalibrationSample]:
    """LOS angular measurements per frame, optionally with pose-inflated covariances."""
    settings = settings or get_settings()
    samples = []
    for i, frame in enumerate(frames):
        if not frame.paths:
            continue
        pose = ue_poses[i] if ue_poses is not None else frame.truth.ue if frame.truth else None
        if pose is None:
            raise EstimationError(f"frame {frame.index} has no UE pose")
        los = frame.paths[select_los(frame, settings.los_tie_window_s)]
        sample = CalibrationSample(
            ue_pose=pose,
            pose_uncertainty=pose_uncertainty,
            los_angles=tuple(los.z[ANGLE_SLICE]),
            covariance=los.cov[ANGLE_SLICE, ANGLE_SLICE].tolist(),
        )
        if bs_guess is not None and pose_uncertainty is not None:
            inflated = inflate_covariance(sample, bs_guess, settings)
            sample = sample.model_copy(update={"covariance": inflated.tolist()})
        samples.append(sample)
    return samples


def _check_diversity(samples: list[CalibrationSample]) -> None:
    if len(samples) < 3:
        raise SolverError("underdetermined calibration")
    positions = np.array([s.ue_pose.position for s in samples])
    singular = np.linalg.svd(positions - positions.mean(axis=0), compute_uv=False)
    if singular[1] <= _COLLINEAR_RTOL * max(singular[0], 1.0):
        raise SolverError("underdetermined calibration")


def default_halfwidths(settings: AppSettings | None = None) -> np.ndarray:
    settings = settings or get_settings()
    angle = math.radians(settings.calibration_halfwidth_deg)
    return np.array([settings.calibration_halfwidth_m] * 3 + [angle] * 3)


def calibration_cost(samples: list[CalibrationSample], bs: BSState) -> float:
    """Summed Mahalanobis norm of the wrapped angle residuals at ``bs``."""
    total = 0.0
    for s in samples:
        r = wrap_angle(_predicted_angles(s.ue_pose, bs.p, bs.rotation) - s.z)
        total += float(r @ np.linalg.solve(s.cov, r))
    return total


def calibrate_bs(
    samples: list[CalibrationSample],
    prior_center: BSState,
    prior_halfwidths: np.ndarray | None = None,
    settings: AppSettings | None = None,
) -> CalibrationResult:
    """Box-constrained weighted least squares over the 6-dim BS pose.

    Starts from ``prior_center`` and keeps the pose inside ``center +/- halfwidths``
    (meters for position, radians for roll/pitch/yaw).
    """
    settings = settings or get_settings()
    _check_diversity(samples)
    halfwidths = (
        default_halfwidths(settings) if prior_halfwidths is None else np.asarray(prior_halfwidths)
    )
    x0 = prior_center.as_vector()
    whiteners = [whitening_matrix(s.cov) for s in samples]

    def residuals(x: np.ndarray) -> np.ndarray:
        r_bs = euler_to_rotation(x[3:])
        parts = [
            w @ wrap_angle(_predicted_angles(s.ue_pose, x[:3], r_bs) - s.z)
            for s, w in zip(samples, whiteners, strict=True)
        ]
        return np.concatenate(parts)

    initial_cost = float(np.sum(residuals(x0) ** 2))
    tol = settings.calibration_tolerance
    result = least_squares(
        residuals,
        x0,
        jac=jacobian_for(residuals, settings.finite_difference_step),
        bounds=(x0 - halfwidths, x0 + halfwidths),
        method="trf",
        max_nfev=settings.calibration_max_iterations,
        ftol=tol,
        xtol=tol,
        gtol=tol,
    )
    final_cost = 2.0 * float(result.cost)
    x = result.x
    if final_cost > initial_cost:
        x, final_cost = x0, initial_cost
    iterations = max(int(result.njev or result.nfev) - 1, 0)
    calibration = CalibrationResult(
        bs_estimate=BSState.from_vector(x),
        initial_cost=initial_cost,
        final_cost=final_cost,
        iterations=iterations,
        converged=bool(result.status > 0),
        n_samples=len(samples),
    )
    logger.info(
        "calibration_finished",
        extra={
            "n_samples": len(samples),
            "iterations": iterations,
            "initial_cost": round(initial_cost, 6),
            "final_cost": final_cost,
            "converged": calibration.converged,
        },
    )
    return calibration


def within_prior(
    bs: BSState, prior_center: BSState, halfwidths: np.ndarray, tol: float = 1e-9
) -> bool:
    """True if ``bs`` lies in the prior box; angle differences are compared wrapped."""
    delta = bs.as_vector() - prior_center.as_vector()
    delta[3:] = wrap_angle(delta[3:])
    return bool(np.all(np.abs(delta) <= np.asarray(halfwidths) + tol))
