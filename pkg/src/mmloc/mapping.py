"""Incidence-point estimation for NLOS paths given a UE position fix."""

from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import least_squares

from mmloc.calibration import select_los
from mmloc.config import AppSettings, get_settings
from mmloc.errors import GeometryError, MmlocError
from mmloc.geometry import (
    BSState,
    angle_residual,
    euler_to_rotation,
    global_direction,
    predict_measurement,
)
from mmloc.optim import jacobian_for, unscented_sigma_points, whitening_matrix
from mmloc.schemas import IPEstimate, MeasurementFrame, PathMeasurement

logger = logging.getLogger(__name__)

Orientation = tuple[float, float, float]


def closest_point_between_rays(
    origin_a: np.ndarray,
    direction_a: np.ndarray,
    origin_b: np.ndarray,
    direction_b: np.ndarray,
    parallel_threshold: float = 1e-6,
) -> np.ndarray:
    """Midpoint of the common perpendicular of two lines.

    This is the point with the least summed squared distance to both lines.
    """
    u = np.asarray(direction_a, dtype=float)
    v = np.asarray(direction_b, dtype=float)
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    if np.linalg.norm(np.cross(u, v)) <= parallel_threshold:
        raise GeometryError("degenerate ray pair")
    w0 = np.asarray(origin_a, dtype=float) - np.asarray(origin_b, dtype=float)
    b = float(u @ v)
    d = float(u @ w0)
    e = float(v @ w0)
    denom = 1.0 - b * b
    s = (b * e - d) / denom
    t = (e - b * d) / denom
    return 0.5 * ((origin_a + s * u) + (origin_b + t * v))


def init_ip(
    meas: PathMeasurement,
    bs: BSState,
    ue_fix: np.ndarray,
    ue_orientation: Orientation,
    parallel_threshold: float | None = None,
) -> np.ndarray:
    """Closed-form IP guess from the AOD ray and the AOA ray; the delay is not used."""
    if parallel_threshold is None:
        parallel_threshold = get_settings().parallel_ray_threshold
    z = meas.measurement
    u_bs = global_direction(bs.rotation, z.aod_az, z.aod_el)
    u_ue = global_direction(euler_to_rotation(ue_orientation), z.aoa_az, z.aoa_el)
    return closest_point_between_rays(
        bs.p, u_bs, np.asarray(ue_fix, dtype=float), u_ue, parallel_threshold
    )


def refine_ip(
    meas: PathMeasurement,
    bs: BSState,
    ue_fix: np.ndarray,
    ue_orientation: Orientation,
    init: np.ndarray,
    clock_bias: float = 0.0,
    settings: AppSettings | None = None,
    *,
    frame_index: int = 0,
    path_index: int = 0,
) -> IPEstimate:
    """Sigma-point least squares over the full NLOS measurement.

    One Levenberg-Marquardt solve per sigma point of ``N(z, R)``, started at
    ``init``; the estimate is the plain mean of the converged solutions. When more
    than half of the solves fail the init is returned, flagged as not converged.
    """
    settings = settings or get_settings()
    p_ue = np.asarray(ue_fix, dtype=float)
    r_ue = euler_to_rotation(ue_orientation)
    p_bs, r_bs = bs.p, bs.rotation
    w = whitening_matrix(meas.cov)
    init = np.asarray(init, dtype=float)

    def make_residuals(z: np.ndarray):
        def residuals(ip: np.ndarray) -> np.ndarray:
            h = predict_measurement(p_ue, r_ue, clock_bias, p_bs, r_bs, ip)
            return w @ angle_residual(h, z)

        return residuals

    points, _ = unscented_sigma_points(meas.z, meas.cov, settings.unscented_lambda)
    solutions = []
    for z_sigma in points:
        residuals = make_residuals(z_sigma)
        try:
            result = least_squares(
                residuals,
                init,
                jac=jacobian_for(residuals, settings.finite_difference_step),
                method="lm",
                max_nfev=settings.ip_max_iterations,
                ftol=settings.ip_cost_tolerance,
                xtol=settings.ip_cost_tolerance,
            )
        except GeometryError:
            continue
        if result.status > 0 and np.all(np.isfinite(result.x)):
            solutions.append(result.x)

    nominal = make_residuals(meas.z)
    if len(solutions) * 2 < len(points):
        logger.warning(
            "ip_refinement_failed",
            extra={"frame": frame_index, "path": path_index, "n_converged": len(solutions)},
        )
        return IPEstimate(
            position=tuple(init),
            residual_cost=float(np.sum(nominal(init) ** 2)),
            frame_index=frame_index,
            path_index=path_index,
            converged=False,
            n_sigma_converged=len(solutions),
        )
    estimate = np.mean(solutions, axis=0)
    return IPEstimate(
        position=tuple(estimate),
        residual_cost=float(np.sum(nominal(estimate) ** 2)),
        frame_index=frame_index,
        path_index=path_index,
        converged=True,
        n_sigma_converged=len(solutions),
    )


def map_frame(
    frame: MeasurementFrame,
    ue_fix: np.ndarray,
    bs: BSState,
    ue_orientation: Orientation,
    clock_bias: float = 0.0,
    settings: AppSettings | None = None,
) -> list[IPEstimate]:
    """IP estimates for every non-LOS path in the frame."""
    settings = settings or get_settings()
    if len(frame.paths) < 2:
        return []
    los = select_los(frame, settings.los_tie_window_s)
    estimates = []
    for i, meas in enumerate(frame.paths):
        if i == los:
            continue
        try:
            guess = init_ip(meas, bs, ue_fix, ue_orientation, settings.parallel_ray_threshold)
        except MmlocError as exc:
            logger.info("ip_skipped", extra={"frame": frame.index, "path": i, "reason": str(exc)})
            continue
        estimates.append(
            refine_ip(
                meas,
                bs,
                ue_fix,
                ue_orientation,
                guess,
                clock_bias,
                settings,
                frame_index=frame.index,
                path_index=i,
            )
        )
    return estimates
