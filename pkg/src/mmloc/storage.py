"""Versioned JSON/CSV artifacts and raw beamspace files, all written atomically."""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from pathlib import Path
from typing import TypeVar

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from mmloc.beamspace import AXES, RawBeamspace
from mmloc.errors import ConfigurationError
from mmloc.geometry import BSState
from mmloc.schemas import (
    CalibrationResult,
    ErrorReport,
    FrameBundle,
    FrameTruth,
    MeasurementFrame,
    Versioned,
)

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

_COMPLEX_DTYPE = np.dtype("<c16")


class BeamspaceSidecar(Versioned):
    shape: list[int]
    dtype: str = "complex128"
    byte_order: str = "little"
    axes: list[str] = Field(default_factory=lambda: list(AXES))
    subcarrier_indices: list[int]
    subcarrier_spacing_hz: float
    symbols_file: str
    pilots_file: str


class BeamspaceEntry(BaseModel):
    name: str
    index: int
    timestamp: float
    truth: FrameTruth | None = None


class BeamspaceManifest(Versioned):
    frames: list[BeamspaceEntry]


def write_bytes_atomic(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_text_atomic(path: Path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def save_model(path: Path, model: BaseModel) -> Path:
    write_text_atomic(path, model.model_dump_json(indent=2))
    logger.debug("artifact_written", extra={"path": str(path)})
    return Path(path)


def load_model(path: Path, model_cls: type[ModelT]) -> ModelT:
    try:
        return model_cls.model_validate_json(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"file not found: {path}") from exc
    except ValidationError as exc:
        raise ConfigurationError(f"invalid {model_cls.__name__} in {path}: {exc}") from exc


def save_frames(path: Path, frames: list[MeasurementFrame]) -> Path:
    return save_model(path, FrameBundle(frames=frames))


def load_frames(path: Path) -> list[MeasurementFrame]:
    return load_model(path, FrameBundle).frames


def load_bs(path: Path) -> BSState:
    """BS pose from either a calibration result or a bare pose file."""
    text = Path(path).read_text() if Path(path).is_file() else None
    if text is None:
        raise ConfigurationError(f"file not found: {path}")
    try:
        return CalibrationResult.model_validate_json(text).bs_estimate
    except ValidationError:
        pass
    try:
        return BSState.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigurationError(f"no BS pose in {path}: {exc}") from exc


def save_beamspace(directory: Path, name: str, raw: RawBeamspace) -> Path:
    """``<name>.symbols.bin`` and ``<name>.pilots.bin`` plus a ``<name>.json`` sidecar."""
    directory = Path(directory)
    symbols_file, pilots_file = f"{name}.symbols.bin", f"{name}.pilots.bin"
    write_bytes_atomic(directory / symbols_file, raw.symbols.astype(_COMPLEX_DTYPE).tobytes())
    write_bytes_atomic(directory / pilots_file, raw.pilots.astype(_COMPLEX_DTYPE).tobytes())
    sidecar = BeamspaceSidecar(
        shape=list(raw.shape),
        subcarrier_indices=raw.subcarrier_indices.tolist(),
        subcarrier_spacing_hz=raw.subcarrier_spacing_hz,
        symbols_file=symbols_file,
        pilots_file=pilots_file,
    )
    return save_model(directory / f"{name}.json", sidecar)


def load_beamspace(directory: Path, name: str) -> RawBeamspace:
    directory = Path(directory)
    sidecar = load_model(directory / f"{name}.json", BeamspaceSidecar)
    shape = tuple(sidecar.shape)

    def read(file_name: str) -> np.ndarray:
        data = np.fromfile(directory / file_name, dtype=_COMPLEX_DTYPE)
        if data.size != int(np.prod(shape)):
            raise ConfigurationError(f"{file_name} holds {data.size} values, expected {shape}")
        return data.reshape(shape).astype(complex)

    return RawBeamspace(
        symbols=read(sidecar.symbols_file),
        pilots=read(sidecar.pilots_file),
        subcarrier_indices=np.asarray(sidecar.subcarrier_indices, dtype=int),
        subcarrier_spacing_hz=sidecar.subcarrier_spacing_hz,
    )


def save_beamspace_run(
    directory: Path, items: list[tuple[FrameTruth, RawBeamspace]]
) -> Path:
    entries = []
    for k, (truth, raw) in enumerate(items):
        name = f"frame_{k:05d}"
        save_beamspace(directory, name, raw)
        entries.append(
            BeamspaceEntry(name=name, index=k, timestamp=truth.ue.timestamp, truth=truth)
        )
    return save_model(Path(directory) / "beamspace.json", BeamspaceManifest(frames=entries))


def load_beamspace_run(directory: Path) -> list[tuple[BeamspaceEntry, RawBeamspace]]:
    manifest = load_model(Path(directory) / "beamspace.json", BeamspaceManifest)
    return [(entry, load_beamspace(directory, entry.name)) for entry in manifest.frames]


def write_cdf_csv(path: Path, report: ErrorReport) -> Path:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=["error_m", "fraction"], lineterminator="\n")
    writer.writeheader()
    writer.writerows({"error_m": e, "fraction": f} for e, f in report.cdf)
    write_text_atomic(path, buffer.getvalue())
    return Path(path)


def write_error_table(path: Path, rows: list[dict[str, float | int]]) -> Path:
    buffer = io.StringIO()
    writer = csv.DictWriter(
        buffer, fieldnames=["frame_index", "timestamp", "error_m"], lineterminator="\n"
    )
    writer.writeheader()
    writer.writerows(rows)
    write_text_atomic(path, buffer.getvalue())
    return Path(path)
