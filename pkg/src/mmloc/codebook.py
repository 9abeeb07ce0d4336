"""Default beam codebooks and the main-lobe gain model used by the signal simulator."""

from __future__ import annotations

import math

import numpy as np

from mmloc.errors import ConfigurationError
from mmloc.geometry import wrap_angle
from mmloc.schemas import BeamCodebook, CodebookPair, SignalConfig

BS_AZ_COVERAGE_DEG = 57.0
BS_EL_COVERAGE_DEG = 11.25
BS_BEAMWIDTH_AZ_DEG = 4.1
BS_BEAMWIDTH_EL_DEG = 10.4
UE_AZ_COVERAGE_DEG = 45.0
UE_BEAMWIDTH_AZ_DEG = 12.0
UE_BEAMWIDTH_EL_DEG = 60.0
# the 15 beams swept out of the UE's 21
UE_BEAM_LABELS = [1, 3, 4, 5, 7, 8, 9, 11, 13, 14, 15, 17, 18, 19, 21]


def _grid(half_span_deg: float, count: int) -> list[float]:
    if count == 1:
        return [0.0]
    return np.radians(np.linspace(-half_span_deg, half_span_deg, count)).tolist()


def default_codebooks(signal: SignalConfig | None = None) -> CodebookPair:
    signal = signal or SignalConfig()
    bs = BeamCodebook(
        azimuths=_grid(BS_AZ_COVERAGE_DEG, signal.n_bs_az_beams),
        elevations=_grid(BS_EL_COVERAGE_DEG, signal.n_bs_el_beams),
        beamwidth_az=math.radians(BS_BEAMWIDTH_AZ_DEG),
        beamwidth_el=math.radians(BS_BEAMWIDTH_EL_DEG),
    )
    labels = UE_BEAM_LABELS if signal.n_ue_beams == len(UE_BEAM_LABELS) else None
    ue = BeamCodebook(
        azimuths=_grid(UE_AZ_COVERAGE_DEG, signal.n_ue_beams),
        elevations=[0.0],
        beamwidth_az=math.radians(UE_BEAMWIDTH_AZ_DEG),
        beamwidth_el=math.radians(UE_BEAMWIDTH_EL_DEG),
        labels=labels,
    )
    return CodebookPair(ue=ue, bs=bs)


def check_codebooks(codebooks: CodebookPair, signal: SignalConfig) -> None:
    if len(codebooks.bs.azimuths) != signal.n_bs_az_beams:
        raise ConfigurationError("BS azimuth beam count does not match the signal config")
    if len(codebooks.bs.elevations) != signal.n_bs_el_beams:
        raise ConfigurationError("BS elevation beam count does not match the signal config")
    if codebooks.ue.n_beams != signal.n_ue_beams:
        raise ConfigurationError("UE beam count does not match the signal config")


def _axis_loss_db(delta: np.ndarray, beamwidth: float, cap_db: float) -> np.ndarray:
    return np.minimum(12.0 * (delta / beamwidth) ** 2, cap_db)


def beam_gains(codebook: BeamCodebook, azimuth: float, elevation: float) -> np.ndarray:
    """Amplitude gain of every beam toward a local direction, shape ``(n_el, n_az)``.

    Each axis contributes a parabolic loss ``12 (delta / theta_3dB)^2`` in dB, capped
    at the side-lobe floor.
    """
    az = np.asarray(codebook.azimuths)
    el = np.asarray(codebook.elevations)
    cap = codebook.max_attenuation_db
    loss_az = _axis_loss_db(wrap_angle(azimuth - az), codebook.beamwidth_az, cap)
    loss_el = _axis_loss_db(elevation - el, codebook.beamwidth_el, cap)
    gain_db = -(loss_el[:, None] + loss_az[None, :])
    return 10.0 ** (gain_db / 20.0)


def nearest_beam(codebook: BeamCodebook, azimuth: float, elevation: float) -> tuple[int, int]:
    """(elevation index, azimuth index) of the beam center closest to a direction."""
    g_az = int(np.argmin(np.abs(wrap_angle(azimuth - np.asarray(codebook.azimuths)))))
    g_el = int(np.argmin(np.abs(elevation - np.asarray(codebook.elevations))))
    return g_el, g_az
