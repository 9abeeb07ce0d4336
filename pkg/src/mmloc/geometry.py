"""Coordinate conventions, rotation matrices and the forward measurement model.

All coordinates are local Cartesian ENU in meters, angles in radians. A pose's
rotation ``R`` is built as ``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` and applied as
``q = R @ (target - origin)`` to obtain directions in the array's local frame;
``R.T`` maps local unit vectors back to the global frame.
"""

from __future__ import annotations

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from mmloc.errors import GeometryError

SPEED_OF_LIGHT = 299_792_458.0
_COINCIDENT_TOL_M = 1e-9

# Measurement vector layout: [toa, aoa_az, aoa_el, aod_az, aod_el]
TOA, AOA_AZ, AOA_EL, AOD_AZ, AOD_EL = range(5)
ANGLE_SLICE = slice(1, 5)


def wrap_angle(angle):
    """Wrap an angle (or array of angles) to (-pi, pi]; in-range values pass through untouched."""
    angle = np.asarray(angle, dtype=float)
    inside = (angle > -np.pi) & (angle <= np.pi)
    return np.where(inside, angle, np.pi - np.mod(np.pi - angle, 2.0 * np.pi))


def normalize_euler(angles) -> tuple[float, float, float]:
    """Canonical (roll, pitch, yaw): pitch in [-pi/2, pi/2], roll and yaw in (-pi, pi].

    A pitch outside that interval is folded with the equivalent triple
    ``(roll + pi, pi - pitch, yaw + pi)``, which yields the same rotation.

    Roll is not limited to [-pi/2, pi/2]: those two triples are the only Euler forms of a
    rotation, and once pitch picks one of them roll can take any value, so an upside-down
    array keeps a roll near +/-pi.
    """
    roll, pitch, yaw = (float(a) for a in angles)
    if not all(math.isfinite(a) for a in (roll, pitch, yaw)):
        raise GeometryError("orientation angles must be finite")
    pitch = float(wrap_angle(pitch))
    if abs(pitch) > math.pi / 2:
        roll += math.pi
        yaw += math.pi
        pitch = math.copysign(math.pi, pitch) - pitch
    return float(wrap_angle(roll)), pitch, float(wrap_angle(yaw))


def euler_to_rotation(angles) -> np.ndarray:
    """Return ``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` for ``angles = (roll, pitch, yaw)``."""
    roll, pitch, yaw = (float(a) for a in angles)
    ca, sa = math.cos(roll), math.sin(roll)
    cb, sb = math.cos(pitch), math.sin(pitch)
    cg, sg = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    return rz @ ry @ rx


def direction_to_angles(q) -> tuple[float, float]:
    """Azimuth ``arctan2(q2, q1)`` and elevation ``arcsin(q3 / |q|)`` of a direction.

    The zenith/nadir azimuth is ``arctan2(0, 0) = 0``.
    """
    q = np.asarray(q, dtype=float)
    norm = float(np.linalg.norm(q))
    if not norm > 0.0:
        raise GeometryError("degenerate direction")
    azimuth = float(wrap_angle(math.atan2(q[1], q[0])))
    elevation = math.asin(max(-1.0, min(1.0, q[2] / norm)))
    return azimuth, elevation


def angles_to_unit_vector(azimuth: float, elevation: float) -> np.ndarray:
    ce = math.cos(elevation)
    return np.array([math.cos(azimuth) * ce, math.sin(azimuth) * ce, math.sin(elevation)])


def global_direction(rotation: np.ndarray, azimuth: float, elevation: float) -> np.ndarray:
    """Global-frame unit vector of local angles seen by an array with rotation ``rotation``."""
    return rotation.T @ angles_to_unit_vector(azimuth, elevation)


class Pose(BaseModel):
    model_config = ConfigDict(frozen=True)

    position: tuple[float, float, float]
    orientation: tuple[float, float, float] = (0.0, 0.0, 0.0)  # roll, pitch, yaw

    @field_validator("position")
    @classmethod
    def _finite_position(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("position must be finite")
        return value

    @field_validator("orientation")
    @classmethod
    def _normalize_orientation(
        cls, value: tuple[float, float, float]
    ) -> tuple[float, float, float]:
        return normalize_euler(value)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.orientation)


class BSState(Pose):
    """Base station array pose."""

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, np.asarray(self.orientation)])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> BSState:
        return cls(position=tuple(x[:3]), orientation=tuple(x[3:6]))


class UEState(Pose):
    """UE array pose plus the transmit/receive clock bias in seconds."""

    clock_bias: float = 0.0
    timestamp: float = 0.0

    @field_validator("clock_bias")
    @classmethod
    def _finite_bias(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("clock_bias must be finite")
        return value


class IncidencePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    position: tuple[float, float, float]

    @field_validator("position")
    @classmethod
    def _finite(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("incidence point must be finite")
        return value

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


class MeasurementVector(BaseModel):
    model_config = ConfigDict(frozen=True)

    toa: float
    aoa_az: float
    aoa_el: float
    aod_az: float
    aod_el: float

    def as_array(self) -> np.ndarray:
        return np.array([self.toa, self.aoa_az, self.aoa_el, self.aod_az, self.aod_el])

    @classmethod
    def from_array(cls, z: np.ndarray) -> MeasurementVector:
        return cls(toa=z[0], aoa_az=z[1], aoa_el=z[2], aod_az=z[3], aod_el=z[4])


def predict_measurement(
    p_ue: np.ndarray,
    r_ue: np.ndarray,
    clock_bias: float,
    p_bs: np.ndarray,
    r_bs: np.ndarray,
    p_ip: np.ndarray | None = None,
) -> np.ndarray:
    """Array form of the measurement function, used inside solver loops."""
    if p_ip is None:
        to_ue = p_ue - p_bs
        distance = float(np.linalg.norm(to_ue))
        if distance <= _COINCIDENT_TOL_M:
            raise GeometryError("degenerate geometry")
        q_aoa = r_ue @ (p_bs - p_ue)
        q_aod = r_bs @ to_ue
    else:
        leg_bs = float(np.linalg.norm(p_ip - p_bs))
        leg_ue = float(np.linalg.norm(p_ip - p_ue))
        if min(leg_bs, leg_ue, float(np.linalg.norm(p_ue - p_bs))) <= _COINCIDENT_TOL_M:
            raise GeometryError("degenerate geometry")
        distance = leg_bs + leg_ue
        q_aoa = r_ue @ (p_ip - p_ue)
        q_aod = r_bs @ (p_ip - p_bs)
    aoa_az, aoa_el = direction_to_angles(q_aoa)
    aod_az, aod_el = direction_to_angles(q_aod)
    return np.array([distance / SPEED_OF_LIGHT + clock_bias, aoa_az, aoa_el, aod_az, aod_el])


def measurement_function(
    ue: UEState, bs: BSState, ip: IncidencePoint | None = None
) -> MeasurementVector:
    """Delay, AOA and AOD of the LOS path (``ip`` absent) or of the NLOS path via ``ip``."""
    z = predict_measurement(
        ue.p, ue.rotation, ue.clock_bias, bs.p, bs.rotation, None if ip is None else ip.p
    )
    return MeasurementVector.from_array(z)


def angle_residual(predicted: np.ndarray, measured: np.ndarray) -> np.ndarray:
    """``predicted - measured`` with every angular component wrapped to (-pi, pi]."""
    residual = np.asarray(predicted, dtype=float) - np.asarray(measured, dtype=float)
    residual[ANGLE_SLICE] = wrap_angle(residual[ANGLE_SLICE])
    return residual
