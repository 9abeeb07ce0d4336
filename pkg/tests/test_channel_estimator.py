import math

import numpy as np
import pytest

from mmloc.beamspace import generate_pilots, synthesize_beamspace
from mmloc.channel_estimator import (
    BeamspaceTensor,
    detect_paths,
    detect_strongest,
    estimate_beamspace_channel,
    estimate_delay,
    estimate_frame,
    refine_angles,
    weighted_centroid,
)
from mmloc.codebook import default_codebooks
from mmloc.config import get_settings
from mmloc.errors import ConfigurationError, EstimationError
from mmloc.geometry import SPEED_OF_LIGHT
from mmloc.schemas import SignalConfig

SIGNAL = SignalConfig(active_subcarrier_indices=list(range(0, 64, 4)))
FULL_BAND = np.arange(0, 792, 4)
SPACING_HZ = 120.0e3


def delay_tensor(tau: float, kappa: np.ndarray = FULL_BAND) -> BeamspaceTensor:
    h = 0.3 * np.exp(-2j * np.pi * kappa * SPACING_HZ * tau + 0.7j)
    return BeamspaceTensor(
        h=h.reshape(1, 1, 1, -1), subcarrier_indices=kappa, subcarrier_spacing_hz=SPACING_HZ
    )


def test_flat_phase_channel_is_recovered() -> None:
    pilots = generate_pilots((2, 2, 3, 8), seed=11)
    h0 = 0.4 - 0.2j
    tensor = estimate_beamspace_channel(h0 * pilots, pilots, np.arange(0, 32, 4), SPACING_HZ)
    assert np.allclose(tensor.h, h0)


def test_zero_pilot_is_invalid() -> None:
    pilots = np.ones((1, 1, 2, 2), dtype=complex)
    pilots[0, 0, 1, 0] = 0.0
    with pytest.raises(EstimationError, match="invalid pilot"):
        estimate_beamspace_channel(np.ones_like(pilots), pilots, np.array([0, 4]))


def test_shape_mismatch_is_rejected() -> None:
    with pytest.raises(ConfigurationError):
        estimate_beamspace_channel(np.ones((1, 1, 2, 2)), np.ones((1, 1, 2, 3)))


def test_detect_paths_returns_separated_local_maxima() -> None:
    h = np.zeros((5, 4, 10, 2), dtype=complex)
    h[1, 1, 2] = 1.0
    h[1, 1, 3] = 0.9  # shoulder of the strongest peak
    h[3, 2, 7] = 0.5
    tensor = BeamspaceTensor(h=h, subcarrier_indices=np.array([0, 4]), subcarrier_spacing_hz=1.0)
    assert detect_strongest(tensor) == (1, 1, 2)
    assert detect_paths(tensor) == [(1, 1, 2), (3, 2, 7)]
    assert detect_paths(tensor, max_paths=1) == [(1, 1, 2)]
    # 0.25 relative energy is -6 dB
    assert detect_paths(tensor, min_rel_power_db=-3.0) == [(1, 1, 2)]


def test_detect_paths_needs_a_positive_budget() -> None:
    with pytest.raises(ConfigurationError):
        detect_paths(delay_tensor(1e-7), max_paths=0)


@pytest.mark.parametrize("tau", [12.3e-9, 123.4e-9, 200.0e-9, 1.5e-6])
def test_delay_estimate_is_sub_tenth_nanosecond(tau) -> None:
    assert estimate_delay(delay_tensor(tau), (0, 0, 0)) == pytest.approx(tau, abs=0.1e-9)


def test_delay_wraps_at_the_unambiguous_range() -> None:
    period = delay_tensor(0.0).unambiguous_delay_s
    assert delay_tensor(0.0).index_step == 4
    assert period == pytest.approx(2.0833e-6, rel=1e-4)
    estimate = estimate_delay(delay_tensor(period + 100e-9), (0, 0, 0))
    assert estimate == pytest.approx(100e-9, abs=0.1e-9)


def test_single_subcarrier_delay_is_underdetermined() -> None:
    with pytest.raises(EstimationError, match="underdetermined"):
        estimate_delay(delay_tensor(1e-7, np.array([8])), (0, 0, 0))


def test_weighted_centroid() -> None:
    assert weighted_centroid(np.array([1.0, 1.0]), np.array([0.0, 2.0])) == 1.0
    assert weighted_centroid(np.zeros(3), np.array([0.1, 0.2, 0.3])) == 0.2


def test_refine_angles_rejects_triples_outside_the_tensor() -> None:
    with pytest.raises(EstimationError):
        refine_angles(delay_tensor(1e-7), (0, 0, 1), default_codebooks())


def test_refined_angles_stay_within_a_quarter_beam(rng, make_los_paths) -> None:
    codebooks = default_codebooks(SIGNAL)
    tol_bs_az = 0.25 * math.radians(114.0 / 33)
    tol_bs_el = 0.25 * math.radians(7.5)
    tol_ue_az = 0.25 * math.radians(90.0 / 14)
    for _ in range(20):
        aod_az = math.radians(rng.uniform(-40.0, 40.0))
        aod_el = math.radians(rng.uniform(-8.0, 8.0))
        aoa_az = math.radians(rng.uniform(-30.0, 30.0))
        paths = make_los_paths(aod_az, aod_el, aoa_az)
        raw = synthesize_beamspace(paths, codebooks, SIGNAL, rng)
        tensor = estimate_beamspace_channel(raw.symbols, raw.pilots, raw.subcarrier_indices)
        est_aod_az, est_aod_el, est_aoa_az = refine_angles(
            tensor, detect_strongest(tensor), codebooks
        )
        assert abs(est_aod_az - aod_az) < tol_bs_az
        assert abs(est_aod_el - aod_el) < tol_bs_el
        assert abs(est_aoa_az - aoa_az) < tol_ue_az


def test_midway_between_beams_stays_within_a_quarter_beam(rng, make_los_paths) -> None:
    codebooks = default_codebooks(SIGNAL)
    ue_az = codebooks.ue.azimuths
    aoa_az = 0.5 * (ue_az[7] + ue_az[8])
    paths = make_los_paths(0.0, 0.0, aoa_az)
    raw = synthesize_beamspace(paths, codebooks, SIGNAL, rng)
    tensor = estimate_beamspace_channel(raw.symbols, raw.pilots, raw.subcarrier_indices)
    _, _, est = refine_angles(tensor, detect_strongest(tensor), codebooks)
    assert abs(est - aoa_az) < 0.25 * (ue_az[8] - ue_az[7])


def test_estimate_frame_single_los(rng, make_los_paths) -> None:
    codebooks = default_codebooks(SIGNAL)
    aod_az, aod_el, aoa_az = math.radians(12.0), math.radians(-2.0), math.radians(-7.0)
    (los,) = make_los_paths(aod_az, aod_el, aoa_az)
    raw = synthesize_beamspace([los], codebooks, SIGNAL, rng)
    frame = estimate_frame(raw, codebooks, index=4, timestamp=0.4)
    assert (frame.index, frame.timestamp) == (4, 0.4)
    assert frame.truth is None
    (path,) = frame.paths
    z = path.measurement
    assert z.toa == pytest.approx(60.0 / SPEED_OF_LIGHT, abs=0.1e-9)
    assert z.aod_az == pytest.approx(aod_az, abs=math.radians(1.0))
    assert z.aod_el == pytest.approx(aod_el, abs=math.radians(2.0))
    assert z.aoa_az == pytest.approx(aoa_az, abs=math.radians(1.6))
    assert z.aoa_el == 0.0
    assert path.cov[2, 2] == get_settings().aoa_el_variance
    assert path.strength > 0.0


def test_estimation_error_variance_scales_with_pilot_power(rng) -> None:
    shape = (10, 10, 10, 10)
    noise_power = 0.02
    pilots = 2.0 * generate_pilots(shape, seed=5)
    h = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    noise = math.sqrt(noise_power / 2.0) * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    tensor = estimate_beamspace_channel(h * pilots + noise, pilots, np.arange(0, 40, 4))
    variance = float(np.mean(np.abs(tensor.h - h) ** 2))
    assert variance == pytest.approx(noise_power / 4.0, rel=0.1)


def test_common_phase_leaves_the_energy_unchanged(rng) -> None:
    pilots = generate_pilots((3, 2, 4, 8), seed=21)
    h = rng.normal(size=pilots.shape) + 1j * rng.normal(size=pilots.shape)
    kappa = np.arange(0, 32, 4)
    base = estimate_beamspace_channel(h * pilots, pilots, kappa).energy
    rotation = np.exp(1.3j)
    received = estimate_beamspace_channel(rotation * h * pilots, pilots, kappa).energy
    sent = estimate_beamspace_channel(h * pilots, rotation * pilots, kappa).energy
    assert np.allclose(received, base)
    assert np.allclose(sent, base)


def test_path_strength_grows_with_path_power(make_los_paths) -> None:
    codebooks = default_codebooks(SIGNAL)
    (los,) = make_los_paths(math.radians(12.0), math.radians(-2.0), math.radians(-7.0))
    strengths = []
    for scale in (0.25, 0.5, 1.0, 2.0, 4.0):
        scaled = los.model_copy(
            update={"gain_re": scale * los.gain_re, "gain_im": scale * los.gain_im}
        )
        raw = synthesize_beamspace(
            [scaled], codebooks, SIGNAL, np.random.default_rng(3), pilot_seed=17
        )
        strongest = estimate_frame(raw, codebooks).paths[0]
        strengths.append(strongest.strength)
    assert all(b > a for a, b in zip(strengths, strengths[1:], strict=False))


def test_uniform_tensor_picks_the_first_triple() -> None:
    tensor = BeamspaceTensor(
        h=np.ones((3, 4, 5, 2), dtype=complex),
        subcarrier_indices=np.array([0, 4]),
        subcarrier_spacing_hz=1.0,
    )
    assert detect_strongest(tensor) == (0, 0, 0)
    assert detect_paths(tensor) == [(0, 0, 0)]
