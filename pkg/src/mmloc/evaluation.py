"""Error CDFs, MAE and percentile tables for position and range estimates."""

from __future__ import annotations

import logging

import numpy as np

from mmloc.errors import ConfigurationError, NoDataError
from mmloc.geometry import SPEED_OF_LIGHT, BSState, UEState, global_direction, measurement_function
from mmloc.positioning import los_index
from mmloc.schemas import ErrorReport, MeasurementFrame, PositionFix, ReportComparison

logger = logging.getLogger(__name__)

PERCENTILES = (50.0, 67.0, 90.0, 95.0)
THRESHOLDS_M = (1.0, 2.0, 5.0, 10.0)


def fraction_below(errors: np.ndarray, threshold: float) -> float:
    errors = np.asarray(errors, dtype=float)
    return float(np.mean(errors <= threshold))


def empirical_cdf(errors: np.ndarray) -> list[tuple[float, float]]:
    """Step points ``(e_(i), i / N)`` preceded by ``(0, 0)``."""
    ordered = np.sort(np.asarray(errors, dtype=float))
    fractions = np.arange(1, ordered.size + 1) / ordered.size
    return [(0.0, 0.0), *zip(ordered.tolist(), fractions.tolist(), strict=True)]


def report_from_errors(errors: np.ndarray, metric: str = "xy") -> ErrorReport:
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise NoDataError("no data")
    return ErrorReport(
        metric=metric,
        errors=errors.tolist(),
        cdf=empirical_cdf(errors),
        mae=float(np.mean(errors)),
        percentiles={f"p{q:g}": float(np.percentile(errors, q)) for q in PERCENTILES},
        fraction_below={f"{t:g}": fraction_below(errors, t) for t in THRESHOLDS_M},
    )


def _xy(items) -> np.ndarray:
    rows = []
    for item in items:
        if isinstance(item, PositionFix):
            rows.append(item.position[:2])
        elif isinstance(item, UEState):
            rows.append(item.position[:2])
        else:
            rows.append(np.asarray(item, dtype=float)[:2])
    return np.asarray(rows, dtype=float).reshape(-1, 2)


def compute_error_cdf(estimates, ground_truth) -> ErrorReport:
    """x-y Euclidean error report over aligned estimate/truth sequences."""
    est = _xy(estimates)
    truth = _xy(ground_truth)
    if est.shape != truth.shape:
        raise ConfigurationError(
            f"{len(est)} estimates cannot be aligned with {len(truth)} ground-truth states"
        )
    return report_from_errors(np.linalg.norm(est - truth, axis=1))


def align_by_timestamp(
    fixes: list[PositionFix], truths: list[UEState]
) -> tuple[list[PositionFix], list[UEState]]:
    """Pair fixes with ground truth on exactly equal timestamps."""
    by_time = {t.timestamp: t for t in truths}
    if len(by_time) != len(truths):
        raise ConfigurationError("ground-truth timestamps are not unique")
    paired_fixes, paired_truths = [], []
    for fix in fixes:
        if fix.timestamp not in by_time:
            raise ConfigurationError(f"no ground truth at timestamp {fix.timestamp}")
        paired_fixes.append(fix)
        paired_truths.append(by_time[fix.timestamp])
    return paired_fixes, paired_truths


def range_error_report(
    frames: list[MeasurementFrame],
    truths: list[UEState],
    bs: BSState,
    los_indices: list[int] | None = None,
) -> ErrorReport:
    """Absolute LOS ranging error ``|tau c - ||p_UE - p_BS|||`` per frame."""
    if los_indices is None:
        los_indices = [los_index(frame) for frame in frames]
    errors = [
        abs(frame.paths[k].measurement.toa * SPEED_OF_LIGHT - float(np.linalg.norm(ue.p - bs.p)))
        for frame, ue, k in zip(frames, truths, los_indices, strict=True)
    ]
    return report_from_errors(np.asarray(errors), metric="range")


def compare_reports(a: ErrorReport, b: ErrorReport) -> ReportComparison:
    """How far ``a``'s error CDF lies to the left of ``b``'s."""
    ea, eb = np.sort(a.errors), np.sort(b.errors)
    support = np.union1d(ea, eb)
    cdf_a = np.searchsorted(ea, support, side="right") / ea.size
    cdf_b = np.searchsorted(eb, support, side="right") / eb.size
    median_delta = float(np.median(eb) - np.median(ea))
    left = float(np.mean(cdf_a >= cdf_b))
    return ReportComparison(
        median_delta=median_delta,
        p90_delta=float(np.percentile(eb, 90.0) - np.percentile(ea, 90.0)),
        left_fraction=left,
        dominates=median_delta > 0.0 and left >= 0.5,
    )


def _inverse_variance(std: float) -> float:
    return 1.0 / max(std, 1e-12) ** 2


def monte_carlo_oracle(
    bs: BSState,
    ue_states: list[UEState],
    range_std_m: float,
    aod_std_rad: float,
    n_draws: int,
    rng: np.random.Generator,
    aoa_std_rad: float | None = None,
) -> ErrorReport:
    """x-y errors of the closed-form LOS inversion under directly perturbed angles and range.

    Without ``aoa_std_rad`` this is the RTT/AOD fix ``p_BS + d u_BS``. With it, the AOA
    gives a second fix ``p_BS - d u_UE`` and the two are fused with inverse-variance
    weights; both AOA angles are drawn with ``aoa_std_rad``.
    """
    errors = []
    for ue in ue_states:
        z = measurement_function(ue, bs)
        distance = float(np.linalg.norm(ue.p - bs.p))
        for _ in range(n_draws):
            d = distance + range_std_m * rng.standard_normal()
            az = z.aod_az + aod_std_rad * rng.standard_normal()
            el = z.aod_el + aod_std_rad * rng.standard_normal()
            estimate = bs.p + d * global_direction(bs.rotation, az, el)
            if aoa_std_rad is not None:
                az_ue = z.aoa_az + aoa_std_rad * rng.standard_normal()
                el_ue = z.aoa_el + aoa_std_rad * rng.standard_normal()
                from_aoa = bs.p - d * global_direction(ue.rotation, az_ue, el_ue)
                w_aod, w_aoa = _inverse_variance(aod_std_rad), _inverse_variance(aoa_std_rad)
                estimate = (w_aod * estimate + w_aoa * from_aoa) / (w_aod + w_aoa)
            errors.append(float(np.linalg.norm(estimate[:2] - ue.p[:2])))
    logger.debug("oracle_finished", extra={"n_errors": len(errors)})
    return report_from_errors(np.asarray(errors))
