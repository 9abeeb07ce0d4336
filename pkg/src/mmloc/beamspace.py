"""Signal-level beam-sweep synthesis: pilots and raw received symbols per beam pair."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from mmloc.codebook import beam_gains, check_codebooks
from mmloc.schemas import CodebookPair, SignalConfig, SimPath

logger = logging.getLogger(__name__)

GOLD_NC = 1600
_C_INIT_MODULUS = 2**31

AXES = ("ue_beam", "bs_el_beam", "bs_az_beam", "subcarrier")


@dataclass(frozen=True)
class RawBeamspace:
    """Received symbols and the pilots they carry, indexed like ``AXES``."""

    symbols: np.ndarray
    pilots: np.ndarray
    subcarrier_indices: np.ndarray
    subcarrier_spacing_hz: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.symbols.shape


def gold_sequences(c_init: np.ndarray, length: int) -> np.ndarray:
    """Length-31 Gold sequences ``c(n)``, one row per entry of ``c_init``."""
    c_init = np.asarray(c_init, dtype=np.int64).ravel()
    total = length + GOLD_NC
    x1 = np.zeros(total, dtype=np.uint8)
    x1[0] = 1
    x2 = np.zeros((total, c_init.size), dtype=np.uint8)
    for i in range(31):
        x2[i] = (c_init >> i) & 1
    for n in range(total - 31):
        x1[n + 31] = x1[n + 3] ^ x1[n]
        x2[n + 31] = x2[n + 3] ^ x2[n + 2] ^ x2[n + 1] ^ x2[n]
    return (x1[GOLD_NC:, None] ^ x2[GOLD_NC:]).T


def generate_pilots(shape: tuple[int, int, int, int], seed: int) -> np.ndarray:
    """Unit-modulus QPSK pilots, one Gold-sequence initialization per beam pair."""
    n_pairs = int(np.prod(shape[:3]))
    n_sc = shape[3]
    c_init = np.mod(seed + np.arange(n_pairs, dtype=np.int64), _C_INIT_MODULUS)
    bits = gold_sequences(c_init, 2 * n_sc).astype(float)
    qpsk = ((1.0 - 2.0 * bits[:, 0::2]) + 1j * (1.0 - 2.0 * bits[:, 1::2])) / np.sqrt(2.0)
    return qpsk.reshape(shape)


def synthesize_beamspace(
    paths: list[SimPath],
    codebooks: CodebookPair,
    signal: SignalConfig,
    rng: np.random.Generator,
    clock_bias: float = 0.0,
    pilot_seed: int | None = None,
) -> RawBeamspace:
    """Received symbol per (UE beam, BS elevation beam, BS azimuth beam, subcarrier).

    ``y = sum_i rho_i g_UE(theta_i) g_BS(phi_i) exp(-j 2 pi kappa df tau_i) p + n`` with
    ``tau_i`` the path delay plus ``clock_bias``.
    """
    check_codebooks(codebooks, signal)
    shape = (signal.n_ue_beams, signal.n_bs_el_beams, signal.n_bs_az_beams)
    kappa = signal.subcarriers
    if pilot_seed is None:
        pilot_seed = int(rng.integers(0, _C_INIT_MODULUS))
    pilots = generate_pilots((*shape, kappa.size), pilot_seed)

    channel = np.zeros((*shape, kappa.size), dtype=complex)
    for path in paths:
        z = path.true_measurement
        g_ue = beam_gains(codebooks.ue, z.aoa_az, z.aoa_el).reshape(-1)
        g_bs = beam_gains(codebooks.bs, z.aod_az, z.aod_el)
        tau = z.toa + clock_bias
        phase = np.exp(-2j * np.pi * kappa * signal.subcarrier_spacing_hz * tau)
        channel += path.gain * g_ue[:, None, None, None] * g_bs[None, :, :, None] * phase

    symbols = channel * pilots
    if signal.noise_power > 0.0:
        scale = np.sqrt(signal.noise_power / 2.0)
        symbols = symbols + scale * (
            rng.standard_normal(symbols.shape) + 1j * rng.standard_normal(symbols.shape)
        )
    logger.debug("beamspace_synthesized", extra={"n_paths": len(paths), "shape": symbols.shape})
    return RawBeamspace(
        symbols=symbols,
        pilots=pilots,
        subcarrier_indices=np.asarray(signal.active_subcarrier_indices, dtype=int),
        subcarrier_spacing_hz=signal.subcarrier_spacing_hz,
    )
