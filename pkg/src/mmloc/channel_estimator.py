"""Beam-sweep channel parameter estimation.

The beamspace tensor is indexed ``(ue_beam, bs_el_beam, bs_az_beam, subcarrier)``;
beam indices are 0-based throughout. Per detected beam triple the estimator
returns a refined AOD pair, a refined AOA azimuth and a matched-filter delay.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mmloc.beamspace import RawBeamspace
from mmloc.config import AppSettings, get_settings
from mmloc.errors import ConfigurationError, EstimationError
from mmloc.schemas import CodebookPair, MeasurementFrame, PathMeasurement, SignalConfig

logger = logging.getLogger(__name__)

BeamTriple = tuple[int, int, int]

_NEIGHBORHOOD = np.ones((3, 3, 3), dtype=bool)
_NEIGHBORHOOD[1, 1, 1] = False


@dataclass(frozen=True)
class BeamspaceTensor:
    h: np.ndarray
    subcarrier_indices: np.ndarray
    subcarrier_spacing_hz: float

    @property
    def energy(self) -> np.ndarray:
        """Per-beam-pair energy summed over subcarriers."""
        return np.sum(np.abs(self.h) ** 2, axis=-1)

    @property
    def beam_shape(self) -> tuple[int, int, int]:
        return self.h.shape[:3]

    @property
    def index_step(self) -> int:
        """Common spacing of the subcarrier indices."""
        if self.subcarrier_indices.size < 2:
            return 1
        return int(np.gcd.reduce(np.diff(self.subcarrier_indices)))

    @property
    def unambiguous_delay_s(self) -> float:
        return 1.0 / (self.index_step * self.subcarrier_spacing_hz)


def estimate_beamspace_channel(
    symbols: np.ndarray,
    pilots: np.ndarray,
    subcarrier_indices: np.ndarray | None = None,
    subcarrier_spacing_hz: float | None = None,
) -> BeamspaceTensor:
    """Least-squares estimate ``h = conj(p) y / |p|^2`` per bin."""
    symbols = np.asarray(symbols, dtype=complex)
    pilots = np.asarray(pilots, dtype=complex)
    if symbols.shape != pilots.shape or symbols.ndim != 4:
        raise ConfigurationError(
            f"symbols {symbols.shape} and pilots {pilots.shape} must share a 4D shape"
        )
    power = np.abs(pilots) ** 2
    if np.any(power == 0.0):
        raise EstimationError("invalid pilot")
    defaults = SignalConfig()
    if subcarrier_indices is None:
        subcarrier_indices = np.asarray(defaults.active_subcarrier_indices)
    if subcarrier_spacing_hz is None:
        subcarrier_spacing_hz = defaults.subcarrier_spacing_hz
    subcarrier_indices = np.asarray(subcarrier_indices, dtype=int)
    if subcarrier_indices.size != symbols.shape[-1]:
        raise ConfigurationError("one subcarrier index per symbol column required")
    return BeamspaceTensor(
        h=np.conj(pilots) * symbols / power,
        subcarrier_indices=subcarrier_indices,
        subcarrier_spacing_hz=float(subcarrier_spacing_hz),
    )


def detect_strongest(tensor: BeamspaceTensor) -> BeamTriple:
    """Beam triple with the largest energy; ties go to the lowest linear index."""
    energy = tensor.energy
    if energy.size == 0:
        raise EstimationError("empty beamspace tensor")
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(energy)), energy.shape))


def detect_paths(
    tensor: BeamspaceTensor, max_paths: int = 4, min_rel_power_db: float = -15.0
) -> list[BeamTriple]:
    """Greedy extraction of local energy maxima, strongest first.

    A candidate is the global maximum or any beam triple strictly above all of its
    26 neighbors. Accepted triples suppress candidates within one index on every
    axis; extraction stops at ``max_paths`` or below ``min_rel_power_db`` of the peak.
    """
    if max_paths < 1:
        raise ConfigurationError("max_paths must be at least 1")
    energy = tensor.energy
    strongest = detect_strongest(tensor)
    peak = float(energy[strongest])
    if peak <= 0.0:
        return [strongest]

    neighbor_max = ndimage.maximum_filter(
        energy, footprint=_NEIGHBORHOOD, mode="constant", cval=-np.inf
    )
    candidates = np.flatnonzero(energy > neighbor_max)
    order = np.argsort(-energy.ravel()[candidates], kind="stable")
    threshold = peak * 10.0 ** (min_rel_power_db / 10.0)

    selected: list[BeamTriple] = [strongest]
    for flat in candidates[order]:
        if len(selected) >= max_paths:
            break
        triple = tuple(int(i) for i in np.unravel_index(int(flat), energy.shape))
        if energy[triple] < threshold:
            break
        if any(max(abs(a - b) for a, b in zip(triple, s, strict=True)) <= 1 for s in selected):
            continue
        selected.append(triple)
    return selected


def _adjacent(index: int, size: int) -> slice:
    return slice(max(index - 1, 0), min(index + 2, size))


def weighted_centroid(weights: np.ndarray, angles: np.ndarray) -> float:
    """Energy-weighted mean angle; falls back to the middle entry when all weights vanish."""
    weights = np.asarray(weights, dtype=float).ravel()
    angles = np.asarray(angles, dtype=float).ravel()
    total = float(weights.sum())
    if total <= 0.0:
        return float(angles[angles.size // 2])
    return float(weights @ angles / total)


def refine_angles(
    tensor: BeamspaceTensor, triple: BeamTriple, codebooks: CodebookPair
) -> tuple[float, float, float]:
    """Refined ``(aod_az, aod_el, aoa_az)`` around ``triple``.

    The AOD pair is the centroid of BS beam angles over the adjacent elevation and
    azimuth beams at the selected UE beam; the AOA azimuth is the centroid along the
    UE-beam axis. Neighbor sets are truncated at the tensor edges.
    """
    g1, g2, g3 = triple
    n1, n2, n3 = tensor.beam_shape
    if not (0 <= g1 < n1 and 0 <= g2 < n2 and 0 <= g3 < n3):
        raise EstimationError(f"beam triple {triple} outside tensor {tensor.beam_shape}")
    energy = tensor.energy
    bs_az = np.asarray(codebooks.bs.azimuths)
    bs_el = np.asarray(codebooks.bs.elevations)
    ue_az = np.asarray(codebooks.ue.azimuths)

    s1, s2, s3 = _adjacent(g1, n1), _adjacent(g2, n2), _adjacent(g3, n3)
    patch = energy[g1, s2, s3]
    el_grid, az_grid = np.meshgrid(bs_el[s2], bs_az[s3], indexing="ij")
    aod_az = weighted_centroid(patch, az_grid)
    aod_el = weighted_centroid(patch, el_grid)
    aoa_az = weighted_centroid(energy[s1, g2, g3], ue_az[s1])
    return aod_az, aod_el, aoa_az


def estimate_delay(
    tensor: BeamspaceTensor, triple: BeamTriple, grid_size: int = 2048
) -> float:
    """Delay maximizing ``|sum_k h_k exp(j 2 pi k df tau)|^2`` over one unambiguous range.

    The matched filter is evaluated on ``grid_size`` points by FFT and the peak is
    refined with a three-point parabola (circular neighbors). The result lies in
    ``[0, unambiguous_delay_s)``.
    """
    kappa = tensor.subcarrier_indices
    if kappa.size < 2:
        raise EstimationError("underdetermined delay")
    h = tensor.h[triple]
    step = tensor.index_step
    period = tensor.unambiguous_delay_s

    bins = np.zeros(grid_size, dtype=complex)
    np.add.at(bins, ((kappa - kappa[0]) // step) % grid_size, h)
    response = np.abs(np.fft.ifft(bins)) ** 2
    peak = int(np.argmax(response))
    if response[peak] <= 0.0:
        return 0.0
    left = response[(peak - 1) % grid_size]
    right = response[(peak + 1) % grid_size]
    denom = left - 2.0 * response[peak] + right
    offset = 0.0 if denom == 0.0 else 0.5 * (left - right) / denom
    return float(np.mod((peak + offset) * period / grid_size, period))


def assemble_covariance(settings: AppSettings | None = None) -> np.ndarray:
    """Diagonal ``R`` for estimated paths from the configured noise floors."""
    settings = settings or get_settings()
    return np.diag(
        [
            settings.toa_std_floor_s**2,
            settings.aoa_az_std_floor_rad**2,
            settings.aoa_el_variance,
            settings.aod_az_std_floor_rad**2,
            settings.aod_el_std_floor_rad**2,
        ]
    )


def estimate_frame(
    raw: RawBeamspace,
    codebooks: CodebookPair,
    settings: AppSettings | None = None,
    *,
    index: int = 0,
    timestamp: float = 0.0,
) -> MeasurementFrame:
    """Full estimator chain for one beam sweep, producing a measurement frame."""
    settings = settings or get_settings()
    tensor = estimate_beamspace_channel(
        raw.symbols, raw.pilots, raw.subcarrier_indices, raw.subcarrier_spacing_hz
    )
    cov = assemble_covariance(settings)
    energy = tensor.energy
    paths = []
    for triple in detect_paths(tensor, settings.max_paths, settings.min_rel_power_db):
        aod_az, aod_el, aoa_az = refine_angles(tensor, triple, codebooks)
        toa = estimate_delay(tensor, triple, settings.delay_grid_size)
        # AOA elevation is unresolved by the UE array; R carries a huge variance for it
        z = np.array([toa, aoa_az, 0.0, aod_az, aod_el])
        paths.append(PathMeasurement.from_arrays(z, cov, float(energy[triple])))
    logger.debug("frame_estimated", extra={"frame": index, "n_paths": len(paths)})
    return MeasurementFrame(index=index, timestamp=timestamp, paths=paths)
