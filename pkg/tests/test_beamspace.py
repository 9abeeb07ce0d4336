import math

import numpy as np
import pytest

from mmloc.beamspace import generate_pilots, gold_sequences, synthesize_beamspace
from mmloc.codebook import beam_gains, check_codebooks, default_codebooks, nearest_beam
from mmloc.errors import ConfigurationError
from mmloc.schemas import SignalConfig

SIGNAL = SignalConfig(active_subcarrier_indices=list(range(0, 64, 4)))


def test_gold_sequences_are_binary_and_seed_dependent() -> None:
    seqs = gold_sequences(np.array([0, 1, 12345]), 64)
    assert seqs.shape == (3, 64)
    assert set(np.unique(seqs)) <= {0, 1}
    assert not np.array_equal(seqs[0], seqs[1])
    assert np.array_equal(seqs, gold_sequences(np.array([0, 1, 12345]), 64))


def test_pilots_are_unit_modulus_qpsk() -> None:
    pilots = generate_pilots((2, 3, 4, 16), seed=7)
    assert pilots.shape == (2, 3, 4, 16)
    assert np.allclose(np.abs(pilots), 1.0)
    assert np.allclose(np.abs(pilots.real), 1 / math.sqrt(2))
    assert np.array_equal(pilots, generate_pilots((2, 3, 4, 16), seed=7))
    assert not np.array_equal(pilots, generate_pilots((2, 3, 4, 16), seed=8))
    # one sequence per beam pair
    assert not np.array_equal(pilots[0, 0, 0], pilots[0, 0, 1])


def test_default_codebooks_match_the_sweep() -> None:
    codebooks = default_codebooks()
    assert codebooks.bs.n_beams == 4 * 34
    assert codebooks.ue.n_beams == 15
    assert codebooks.ue.labels[0] == 1 and codebooks.ue.labels[-1] == 21
    assert math.degrees(codebooks.bs.azimuths[0]) == pytest.approx(-57.0)
    check_codebooks(codebooks, SignalConfig())


def test_mismatched_codebook_is_rejected() -> None:
    with pytest.raises(ConfigurationError):
        check_codebooks(default_codebooks(), SignalConfig(n_ue_beams=21))


def test_beam_gain_main_lobe() -> None:
    bs = default_codebooks().bs
    az, el = bs.azimuths[10], bs.elevations[2]
    gains = beam_gains(bs, az, el)
    assert gains.shape == (4, 34)
    assert gains[2, 10] == pytest.approx(1.0)
    half_width = beam_gains(bs, az + bs.beamwidth_az / 2, el)[2, 10]
    assert 20 * math.log10(half_width) == pytest.approx(-3.0)
    behind = beam_gains(bs, az + math.pi, el)[2, 10]
    assert 20 * math.log10(behind) == pytest.approx(-bs.max_attenuation_db)


def test_strongest_beam_pair_is_the_nearest(rng, make_los_paths) -> None:
    codebooks = default_codebooks(SIGNAL)
    aod_az = codebooks.bs.azimuths[20] + math.radians(0.3)
    aod_el = codebooks.bs.elevations[1] + math.radians(1.0)
    aoa_az = codebooks.ue.azimuths[7] + math.radians(1.0)
    raw = synthesize_beamspace(make_los_paths(aod_az, aod_el, aoa_az), codebooks, SIGNAL, rng)
    energy = np.sum(np.abs(raw.symbols) ** 2, axis=-1)
    strongest = np.unravel_index(int(np.argmax(energy)), energy.shape)
    assert nearest_beam(codebooks.bs, aod_az, aod_el) == (1, 20)
    assert tuple(int(i) for i in strongest) == (7, 1, 20)


def test_noise_power_per_bin(rng) -> None:
    signal = SIGNAL.model_copy(update={"noise_power": 2.0})
    raw = synthesize_beamspace([], default_codebooks(signal), signal, rng)
    assert np.mean(np.abs(raw.symbols) ** 2) == pytest.approx(2.0, rel=0.05)


def test_fixed_pilot_seed_reproduces_pilots(rng) -> None:
    codebooks = default_codebooks(SIGNAL)
    a = synthesize_beamspace([], codebooks, SIGNAL, rng, pilot_seed=99)
    b = synthesize_beamspace([], codebooks, SIGNAL, rng, pilot_seed=99)
    assert np.array_equal(a.pilots, b.pilots)
    assert a.subcarrier_indices.tolist() == SIGNAL.active_subcarrier_indices
