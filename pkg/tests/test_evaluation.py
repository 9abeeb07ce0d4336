import math

import numpy as np
import pytest

from mmloc.errors import ConfigurationError, NoDataError
from mmloc.evaluation import (
    align_by_timestamp,
    compare_reports,
    compute_error_cdf,
    empirical_cdf,
    monte_carlo_oracle,
    range_error_report,
    report_from_errors,
)
from mmloc.geometry import SPEED_OF_LIGHT, UEState
from mmloc.pipeline import frame_poses, localize_frames
from mmloc.scenario import simulate_frames
from mmloc.schemas import NoiseModel, PositionFix, ScenarioConfig, SolverMode


def fix_at(x: float, y: float, timestamp: float = 0.0) -> PositionFix:
    return PositionFix(position=[x, y, 1.5], mode=SolverMode.RTT_AOD, timestamp=timestamp)


def test_report_summary_statistics() -> None:
    report = report_from_errors(np.array([1.0, 2.0, 3.0, 4.0]))
    assert report.mae == 2.5
    assert report.fraction_below["2"] == 0.5
    assert report.fraction_below["5"] == 1.0
    assert report.percentiles["p50"] == pytest.approx(2.5)
    assert report.cdf[0] == (0.0, 0.0)
    assert report.cdf[-1] == (4.0, 1.0)


def test_all_zero_errors() -> None:
    report = report_from_errors(np.zeros(5))
    assert report.mae == 0.0
    assert all(v == 1.0 for v in report.fraction_below.values())
    assert all(v == 0.0 for v in report.percentiles.values())


def test_half_normal_percentile(rng) -> None:
    report = report_from_errors(np.abs(rng.standard_normal(100_000)))
    assert report.percentiles["p90"] == pytest.approx(1.6449, rel=0.03)
    assert report.mae == pytest.approx(math.sqrt(2 / math.pi), rel=0.03)


def test_empty_errors_have_no_data() -> None:
    with pytest.raises(NoDataError, match="no data"):
        report_from_errors(np.array([]))


def test_cdf_is_monotone(rng) -> None:
    cdf = empirical_cdf(rng.exponential(2.0, 200))
    errors, fractions = zip(*cdf, strict=True)
    assert list(errors) == sorted(errors)
    assert list(fractions) == sorted(fractions)
    assert fractions[-1] == 1.0


def test_xy_error_ignores_height() -> None:
    truth = [UEState(position=(0.0, 0.0, 30.0)), UEState(position=(3.0, 0.0, 1.5))]
    report = compute_error_cdf([fix_at(3.0, 4.0), fix_at(3.0, 1.0)], truth)
    assert report.errors == [5.0, 1.0]


def test_misaligned_sequences_are_rejected() -> None:
    with pytest.raises(ConfigurationError):
        compute_error_cdf([fix_at(0.0, 0.0)], [UEState(position=(0, 0, 0))] * 2)


def test_align_by_timestamp_pairs_equal_stamps() -> None:
    truths = [UEState(position=(k, 0.0, 1.5), timestamp=0.5 * k) for k in range(4)]
    fixes, paired = align_by_timestamp([fix_at(9.0, 0.0, 1.5), fix_at(9.0, 0.0, 0.5)], truths)
    assert [t.position[0] for t in paired] == [3.0, 1.0]
    assert [f.timestamp for f in fixes] == [1.5, 0.5]


def test_align_by_timestamp_rejects_missing_truth() -> None:
    truths = [UEState(position=(0.0, 0.0, 1.5), timestamp=0.0)]
    with pytest.raises(ConfigurationError, match="no ground truth"):
        align_by_timestamp([fix_at(0.0, 0.0, 0.1)], truths)


def test_align_by_timestamp_rejects_duplicate_truth() -> None:
    truths = [UEState(position=(0.0, 0.0, 1.5)), UEState(position=(1.0, 0.0, 1.5))]
    with pytest.raises(ConfigurationError, match="not unique"):
        align_by_timestamp([fix_at(0.0, 0.0)], truths)


def test_compare_reports_detects_a_left_shifted_cdf(rng) -> None:
    better = report_from_errors(np.abs(rng.normal(0.0, 1.0, 500)))
    worse = report_from_errors(np.abs(rng.normal(0.0, 3.0, 500)))
    comparison = compare_reports(better, worse)
    assert comparison.dominates
    assert comparison.median_delta > 0.0
    assert comparison.p90_delta > 0.0
    assert not compare_reports(worse, better).dominates


def test_oracle_without_noise_is_exact(surveyed_bs, make_ue_states, rng) -> None:
    ues = make_ue_states(surveyed_bs, 5, rng)
    report = monte_carlo_oracle(surveyed_bs, ues, 0.0, 0.0, 3, rng)
    assert len(report.errors) == 15
    assert report.mae < 1e-9


def test_oracle_error_grows_with_angle_noise(surveyed_bs, make_ue_states, rng) -> None:
    ues = make_ue_states(surveyed_bs, 5, rng)
    small = monte_carlo_oracle(surveyed_bs, ues, 0.1, math.radians(0.1), 200, rng)
    large = monte_carlo_oracle(surveyed_bs, ues, 0.1, math.radians(2.0), 200, rng)
    assert large.mae > small.mae


def test_oracle_fuses_the_aoa_fix(surveyed_bs, make_ue_states, rng) -> None:
    ues = make_ue_states(surveyed_bs, 5, rng)
    exact = monte_carlo_oracle(surveyed_bs, ues, 0.0, 0.0, 2, rng, aoa_std_rad=0.0)
    assert exact.mae < 1e-9
    sigma = math.radians(1.0)
    aod_only = monte_carlo_oracle(surveyed_bs, ues, 0.0, sigma, 400, rng)
    fused = monte_carlo_oracle(surveyed_bs, ues, 0.0, sigma, 400, rng, aoa_std_rad=sigma)
    assert fused.mae < aod_only.mae


def test_range_report_is_zero_on_noiseless_frames(street_scenario) -> None:
    frames = simulate_frames(street_scenario)
    report = range_error_report(frames, [f.truth.ue for f in frames], street_scenario.bs)
    assert report.metric == "range"
    assert max(report.errors) < 1e-6


def test_los_least_squares_tracks_the_oracle(surveyed_bs, make_ue_states, rng) -> None:
    sigma = math.radians(1.0)
    noise = NoiseModel(
        toa_std_s=1.0 / SPEED_OF_LIGHT,
        aoa_az_std_rad=sigma,
        aoa_el_std_rad=sigma,
        aod_az_std_rad=sigma,
        aod_el_std_rad=sigma,
    )
    scenario = ScenarioConfig(
        bs=surveyed_bs,
        trajectory=make_ue_states(surveyed_bs, 150, rng),
        measurement_noise=noise,
        rng_seed=5,
    )
    frames = simulate_frames(scenario)
    poses = frame_poses(frames)
    localization = localize_frames(frames, surveyed_bs, SolverMode.RTT_AOD_AOA, poses)
    report = compute_error_cdf(localization.fixes, poses)
    oracle = monte_carlo_oracle(surveyed_bs, poses, 1.0, sigma, 20, rng, aoa_std_rad=sigma)
    ratio = report.percentiles["p90"] / oracle.percentiles["p90"]
    assert math.isfinite(report.percentiles["p90"])
    assert 1 / 3 < ratio < 3
