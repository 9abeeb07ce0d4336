import json

import numpy as np
import pytest

from mmloc.beamspace import synthesize_beamspace
from mmloc.codebook import default_codebooks
from mmloc.errors import ConfigurationError
from mmloc.geometry import BSState
from mmloc.scenario import simulate_frames
from mmloc.schemas import CalibrationResult, ErrorReport, FrameBundle, SignalConfig
from mmloc.storage import (
    load_beamspace,
    load_bs,
    load_frames,
    load_model,
    save_beamspace,
    save_frames,
    save_model,
    write_cdf_csv,
)

SIGNAL = SignalConfig(active_subcarrier_indices=list(range(0, 32, 4)))


def test_frames_survive_a_save_load_cycle(tmp_path, noisy_street_scenario) -> None:
    frames = simulate_frames(noisy_street_scenario)
    path = save_frames(tmp_path / "frames.json", frames)
    assert load_frames(path) == frames
    assert json.loads(path.read_text())["schema_version"] == "1.0"
    assert [p.name for p in tmp_path.iterdir()] == ["frames.json"]


def test_missing_file_is_a_configuration_error(tmp_path) -> None:
    with pytest.raises(ConfigurationError, match="file not found"):
        load_frames(tmp_path / "nope.json")


def test_invalid_json_is_a_configuration_error(tmp_path) -> None:
    path = tmp_path / "frames.json"
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_frames(path)


def test_unknown_major_schema_version_is_rejected(tmp_path) -> None:
    path = tmp_path / "frames.json"
    path.write_text(json.dumps({"schema_version": "2.0", "frames": []}))
    with pytest.raises(ConfigurationError, match="schema_version"):
        load_model(path, FrameBundle)


def test_beamspace_files_and_sidecar(tmp_path, rng) -> None:
    signal = SIGNAL.model_copy(update={"noise_power": 1.0})
    raw = synthesize_beamspace([], default_codebooks(signal), signal, rng)
    save_beamspace(tmp_path, "frame_00000", raw)
    sidecar = json.loads((tmp_path / "frame_00000.json").read_text())
    assert sidecar["shape"] == [15, 4, 34, 8]
    assert sidecar["axes"] == ["ue_beam", "bs_el_beam", "bs_az_beam", "subcarrier"]
    assert (tmp_path / "frame_00000.symbols.bin").stat().st_size == 15 * 4 * 34 * 8 * 16
    loaded = load_beamspace(tmp_path, "frame_00000")
    assert np.array_equal(loaded.symbols, raw.symbols)
    assert np.array_equal(loaded.pilots, raw.pilots)
    assert loaded.subcarrier_indices.tolist() == SIGNAL.active_subcarrier_indices


def test_truncated_beamspace_is_rejected(tmp_path, rng) -> None:
    raw = synthesize_beamspace([], default_codebooks(SIGNAL), SIGNAL, rng)
    save_beamspace(tmp_path, "f", raw)
    symbols = tmp_path / "f.symbols.bin"
    symbols.write_bytes(symbols.read_bytes()[:-16])
    with pytest.raises(ConfigurationError, match="holds"):
        load_beamspace(tmp_path, "f")


def test_load_bs_accepts_calibration_results_and_bare_poses(tmp_path) -> None:
    bs = BSState(position=(1.0, 2.0, 3.0), orientation=(0.0, 0.1, 0.2))
    result = CalibrationResult(
        bs_estimate=bs,
        initial_cost=2.0,
        final_cost=1.0,
        iterations=3,
        converged=True,
        n_samples=5,
    )
    assert load_bs(save_model(tmp_path / "calibration.json", result)) == bs
    assert load_bs(save_model(tmp_path / "bs.json", bs)) == bs
    (tmp_path / "other.json").write_text(json.dumps({"foo": 1}))
    with pytest.raises(ConfigurationError, match="no BS pose"):
        load_bs(tmp_path / "other.json")


def test_cdf_csv(tmp_path) -> None:
    report = ErrorReport(
        errors=[1.0, 3.0],
        cdf=[(0.0, 0.0), (1.0, 0.5), (3.0, 1.0)],
        mae=2.0,
        percentiles={},
        fraction_below={},
    )
    lines = write_cdf_csv(tmp_path / "cdf.csv", report).read_text().splitlines()
    assert lines == ["error_m,fraction", "0.0,0.0", "1.0,0.5", "3.0,1.0"]
