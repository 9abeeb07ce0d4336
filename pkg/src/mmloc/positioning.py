"""UE position solvers: LOS-only inversions and the multipath closed forms."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from mmloc.calibration import select_los
from mmloc.config import AppSettings, get_settings
from mmloc.errors import EstimationError, SolverError
from mmloc.geometry import (
    SPEED_OF_LIGHT,
    BSState,
    UEState,
    angle_residual,
    euler_to_rotation,
    global_direction,
    predict_measurement,
)
from mmloc.optim import jacobian_for, whitening_matrix
from mmloc.schemas import MeasurementFrame, PathKind, PathMeasurement, PositionFix, SolverMode

logger = logging.getLogger(__name__)

Orientation = tuple[float, float, float]


@dataclass(frozen=True)
class PathLine:
    """Locus ``{mu + s * nu}`` of UE positions consistent with one path."""

    mu: np.ndarray
    nu: np.ndarray
    weight: float
    degenerate: bool


def _aod_direction(meas: PathMeasurement, bs: BSState) -> np.ndarray:
    z = meas.measurement
    return global_direction(bs.rotation, z.aod_az, z.aod_el)


def _aoa_direction(meas: PathMeasurement, ue_orientation: Orientation) -> np.ndarray:
    z = meas.measurement
    return global_direction(euler_to_rotation(ue_orientation), z.aoa_az, z.aoa_el)


def locate_rtt_aod(meas: PathMeasurement, bs: BSState) -> PositionFix:
    """3D fix from an RTT-corrected LOS delay and the AOD: ``p = p_BS + d u_BS``."""
    distance = meas.measurement.toa * SPEED_OF_LIGHT
    if not distance > 0.0:
        raise SolverError("invalid range")
    position = bs.p + distance * _aod_direction(meas, bs)
    return PositionFix(position=position.tolist(), mode=SolverMode.RTT_AOD)


def locate_aod_height(
    meas: PathMeasurement, bs: BSState, ue_height: float, epsilon: float | None = None
) -> PositionFix:
    """2D fix where the AOD ray crosses the known UE height."""
    if epsilon is None:
        epsilon = get_settings().grazing_ray_epsilon
    u = _aod_direction(meas, bs)
    if abs(u[2]) <= epsilon:
        raise SolverError("grazing ray")
    scale = (ue_height - bs.p[2]) / u[2]
    if scale <= 0.0:
        raise SolverError("grazing ray: AOD points away from the UE height")
    xy = bs.p[:2] + scale * u[:2]
    return PositionFix(position=xy.tolist(), mode=SolverMode.AOD_HEIGHT)


def locate_los_ls(
    meas: PathMeasurement,
    bs: BSState,
    ue_orientation: Orientation,
    clock_bias: float = 0.0,
    settings: AppSettings | None = None,
) -> PositionFix:
    """Weighted NLS fit of the full LOS measurement over the UE position.

    Initialized from the RTT/AOD inversion; orientation and clock bias are known.
    """
    settings = settings or get_settings()
    rtt = meas.with_toa(meas.measurement.toa - clock_bias)
    x0 = np.asarray(locate_rtt_aod(rtt, bs).position)
    z = meas.z
    w = whitening_matrix(meas.cov)
    r_ue = euler_to_rotation(ue_orientation)
    p_bs, r_bs = bs.p, bs.rotation

    def residuals(p: np.ndarray) -> np.ndarray:
        return w @ angle_residual(predict_measurement(p, r_ue, clock_bias, p_bs, r_bs), z)

    result = least_squares(
        residuals,
        x0,
        jac=jacobian_for(residuals, settings.finite_difference_step),
        method="lm",
        max_nfev=settings.los_ls_max_iterations,
        gtol=settings.los_ls_gtol,
        ftol=1e-15,
        xtol=1e-15,
    )
    cost = float(np.sum(result.fun**2))
    converged = bool(result.status > 0)
    if not converged:
        logger.warning("los_ls_not_converged", extra={"nfev": result.nfev, "cost": cost})
    return PositionFix(
        position=result.x.tolist(),
        mode=SolverMode.RTT_AOD_AOA,
        residual_cost=cost,
        converged=converged,
    )


def build_path_line(
    meas: PathMeasurement,
    bs: BSState,
    ue_orientation: Orientation,
    clock_bias: float = 0.0,
    threshold: float | None = None,
) -> PathLine:
    """``mu = p_BS - d u_UE`` and ``nu = u_BS + u_UE`` for one path."""
    if threshold is None:
        threshold = get_settings().degenerate_line_threshold
    distance = (meas.measurement.toa - clock_bias) * SPEED_OF_LIGHT
    u_bs = _aod_direction(meas, bs)
    u_ue = _aoa_direction(meas, ue_orientation)
    nu = u_bs + u_ue
    return PathLine(
        mu=bs.p - distance * u_ue,
        nu=nu,
        weight=meas.strength,
        degenerate=bool(np.linalg.norm(nu) < threshold),
    )


def _projector(line: PathLine) -> np.ndarray:
    """Orthogonal complement of the line direction; identity for point constraints."""
    if line.degenerate:
        return np.eye(3)
    nu_bar = line.nu / np.linalg.norm(line.nu)
    return np.eye(3) - np.outer(nu_bar, nu_bar)


def _weights(frame: MeasurementFrame, uniform: bool) -> np.ndarray:
    if not frame.paths:
        raise EstimationError("no paths")
    if uniform:
        return np.ones(len(frame.paths))
    return np.array([p.strength for p in frame.paths])


def locate_multipath_rtt(
    frame: MeasurementFrame,
    bs: BSState,
    ue_orientation: Orientation,
    clock_bias: float = 0.0,
    settings: AppSettings | None = None,
    uniform_weights: bool = False,
) -> PositionFix:
    """Closed-form weighted LS point closest to every path line (bias known)."""
    settings = settings or get_settings()
    weights = _weights(frame, uniform_weights)
    lines = [
        build_path_line(m, bs, ue_orientation, clock_bias, settings.degenerate_line_threshold)
        for m in frame.paths
    ]
    normal = np.zeros((3, 3))
    rhs = np.zeros(3)
    projectors = []
    for line, w in zip(lines, weights, strict=True):
        proj = _projector(line)
        projectors.append(proj)
        normal += w * proj
        rhs += w * proj @ line.mu
    if not np.linalg.cond(normal) < settings.max_condition_number:
        raise SolverError("insufficient path diversity")
    position = np.linalg.solve(normal, rhs)
    cost = sum(
        float(w * np.sum((proj @ (position - line.mu)) ** 2))
        for line, w, proj in zip(lines, weights, projectors, strict=True)
    )
    return PositionFix(
        position=position.tolist(),
        mode=SolverMode.MULTIPATH_RTT,
        residual_cost=cost,
        n_paths_used=len(lines),
    )


def locate_multipath_tdoa(
    frame: MeasurementFrame,
    bs: BSState,
    ue_orientation: Orientation,
    settings: AppSettings | None = None,
    uniform_weights: bool = False,
) -> PositionFix:
    """Closed-form joint estimate of the UE position and clock bias.

    The bias enters as a range offset ``c * b`` so each path constrains
    ``[I, -u_UE] @ [p, c b]`` to lie on its line through ``p_BS - tau c u_UE``.
    """
    settings = settings or get_settings()
    weights = _weights(frame, uniform_weights)
    normal = np.zeros((4, 4))
    rhs = np.zeros(4)
    terms = []
    for meas, w in zip(frame.paths, weights, strict=True):
        line = build_path_line(meas, bs, ue_orientation, 0.0, settings.degenerate_line_threshold)
        u_ue = _aoa_direction(meas, ue_orientation)
        jac = np.hstack([np.eye(3), -u_ue[:, None]])
        proj = _projector(line)
        normal += w * jac.T @ proj @ jac
        rhs += w * jac.T @ proj @ line.mu
        terms.append((jac, proj, line.mu, w))
    if not np.linalg.cond(normal) < settings.max_condition_number:
        raise SolverError("unobservable bias/position pair")
    x = np.linalg.solve(normal, rhs)
    cost = sum(float(w * np.sum((proj @ (jac @ x - mu)) ** 2)) for jac, proj, mu, w in terms)
    return PositionFix(
        position=x[:3].tolist(),
        clock_bias=float(x[3] / SPEED_OF_LIGHT),
        mode=SolverMode.MULTIPATH_TDOA,
        residual_cost=cost,
        n_paths_used=len(terms),
    )


def emulate_rtt(frame: MeasurementFrame, clock_bias: float) -> MeasurementFrame:
    """Remove a fixed clock bias from every delay, as an RTT exchange would."""
    paths = [p.with_toa(p.measurement.toa - clock_bias) for p in frame.paths]
    return frame.model_copy(update={"paths": paths})


def los_index(frame: MeasurementFrame) -> int:
    """Ground-truth LOS index when the frame carries truth, else the selected one."""
    if frame.truth is not None and PathKind.LOS in frame.truth.kinds:
        index = frame.truth.kinds.index(PathKind.LOS)
        if index < len(frame.paths):
            return index
    return select_los(frame)


def substitute_synthetic_range(
    frame: MeasurementFrame,
    ue: UEState,
    bs: BSState,
    sigma_m: float,
    rng: np.random.Generator,
) -> MeasurementFrame:
    """Replace the LOS delay by the true range plus Gaussian range noise."""
    index = los_index(frame)
    distance = float(np.linalg.norm(ue.p - bs.p)) + sigma_m * float(rng.standard_normal())
    paths = list(frame.paths)
    paths[index] = paths[index].with_toa(distance / SPEED_OF_LIGHT)
    return frame.model_copy(update={"paths": paths})
