import json

import pytest

from mmloc.cli import main, parse_args
from mmloc.pipeline import run_pipeline
from mmloc.schemas import ClockBiasModel, FixBundle, RunConfig
from mmloc.storage import load_frames, load_model, save_model


@pytest.fixture
def scenario_file(tmp_path, street_scenario):
    return save_model(tmp_path / "scenario.json", street_scenario)


@pytest.fixture
def bs_file(tmp_path, street_scenario):
    return save_model(tmp_path / "bs.json", street_scenario.bs)


def test_parse_args_reads_global_options() -> None:
    args = parse_args(
        ["--seed", "3", "localize", "--mode", "rtt-aod", "--frames", "f", "--bs", "b"]
    )
    assert args.seed == 3
    assert args.command == "localize"
    assert args.bias_offset == 0.0


def test_unknown_mode_is_rejected() -> None:
    with pytest.raises(SystemExit):
        parse_args(["localize", "--mode", "gps", "--frames", "f", "--bs", "b"])


def test_simulate_localize_evaluate(tmp_path, scenario_file, bs_file, capsys) -> None:
    out = str(tmp_path / "run")
    assert main(["--out", out, "simulate", "--scenario", str(scenario_file)]) == 0
    frames_path = tmp_path / "run" / "frames.json"
    assert len(load_frames(frames_path)) == 16

    argv = ["--out", out, "localize", "--mode", "multipath-rtt"]
    assert main([*argv, "--frames", str(frames_path), "--bs", str(bs_file)]) == 0
    fixes_path = tmp_path / "run" / "fixes.json"
    assert json.loads(fixes_path.read_text())["mode"] == "multipath-rtt"

    capsys.readouterr()
    argv = ["--out", out, "evaluate", "--fixes", str(fixes_path), "--frames", str(frames_path)]
    assert main(argv) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["n"] == 16
    assert summary["mae_m"] == 0.0
    assert (tmp_path / "run" / "cdf.csv").is_file()


def test_map_writes_incidence_points(tmp_path, scenario_file, bs_file) -> None:
    out = str(tmp_path)
    main(["--out", out, "simulate", "--scenario", str(scenario_file)])
    frames = str(tmp_path / "frames.json")
    main(["--out", out, "localize", "--mode", "rtt-aod", "--frames", frames, "--bs", str(bs_file)])
    argv = ["--out", out, "map", "--frames", frames, "--fixes", str(tmp_path / "fixes.json")]
    assert main([*argv, "--bs", str(bs_file)]) == 0
    estimates = json.loads((tmp_path / "ips.json").read_text())["estimates"]
    assert len(estimates) == 32


def test_calibrate_from_a_prior_file(tmp_path, scenario_file, bs_file) -> None:
    out = str(tmp_path)
    main(["--out", out, "simulate", "--scenario", str(scenario_file)])
    argv = ["--out", out, "calibrate", "--frames", str(tmp_path / "frames.json")]
    assert main([*argv, "--prior", str(bs_file), "--samples", str(tmp_path / "s.json")]) == 0
    result = json.loads((tmp_path / "calibration.json").read_text())
    assert result["n_samples"] == 16
    assert len(json.loads((tmp_path / "s.json").read_text())["samples"]) == 16


def test_failing_stage_exits_with_2(tmp_path, street_scenario, bs_file, capsys) -> None:
    single_path = street_scenario.model_copy(update={"surfaces": []})
    scenario_file = save_model(tmp_path / "los.json", single_path)
    out = str(tmp_path)
    main(["--out", out, "simulate", "--scenario", str(scenario_file)])
    frames = str(tmp_path / "frames.json")
    capsys.readouterr()
    argv = ["--out", out, "localize", "--mode", "multipath-tdoa", "--frames", frames]
    code = main([*argv, "--bs", str(bs_file)])
    assert code == 2
    assert "stage=localize error=unobservable bias/position pair" in capsys.readouterr().err


def test_missing_config_exits_with_1(tmp_path, capsys) -> None:
    code = main(["--config", str(tmp_path / "missing.json"), "pipeline"])
    assert code == 1
    assert "error=file not found" in capsys.readouterr().err


def test_pipeline_subcommand(tmp_path, scenario_file, capsys) -> None:
    argv = ["--seed", "5", "--out", str(tmp_path / "p"), "pipeline"]
    assert main([*argv, "--scenario", str(scenario_file), "--mode", "rtt-aod"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["n_frames"] == 16
    assert (tmp_path / "p" / "summary.json").is_file()


@pytest.fixture
def biased_run(tmp_path, noisy_street_scenario):
    scenario = noisy_street_scenario.model_copy(
        update={"clock_bias_model": ClockBiasModel(kind="constant", mean_s=40e-9)}
    )
    run_pipeline(RunConfig(scenario=scenario, output_dir=str(tmp_path / "run")))
    return tmp_path / "run"


def test_evaluate_range_report_matches_the_pipeline(tmp_path, biased_run, bs_file) -> None:
    out = tmp_path / "eval"
    argv = ["--out", str(out), "evaluate", "--fixes", str(biased_run / "fixes.json")]
    argv += ["--frames", str(biased_run / "frames.json"), "--bs", str(bs_file)]
    assert main([*argv, "--bias-offset", "4e-8"]) == 0
    expected = json.loads((biased_run / "range_report.json").read_text())["errors"]
    actual = json.loads((out / "range_report.json").read_text())["errors"]
    assert actual == pytest.approx(expected, abs=1e-9)
    assert max(actual) < 2.0


def test_evaluate_rejects_fixes_without_a_frame(tmp_path, biased_run, bs_file, capsys) -> None:
    bundle = load_model(biased_run / "fixes.json", FixBundle)
    bundle.fixes[0] = bundle.fixes[0].model_copy(update={"frame_index": 99})
    fixes = save_model(tmp_path / "fixes.json", bundle)
    capsys.readouterr()
    argv = ["--out", str(tmp_path), "evaluate", "--fixes", str(fixes)]
    code = main([*argv, "--frames", str(biased_run / "frames.json"), "--bs", str(bs_file)])
    assert code == 2
    assert "no frame with index 99" in capsys.readouterr().err
