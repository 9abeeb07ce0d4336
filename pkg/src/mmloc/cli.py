"""Command-line entry point: ``mmloc <subcommand>`` or ``python -m mmloc.cli``.

Every subcommand runs as one named stage. Exit codes: 0 on success, 2 when a
stage fails (``stage=<name> error=<message>`` on stderr), 1 for any other
toolkit error such as an unreadable ``--config``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from mmloc import storage
from mmloc.beamspace import RawBeamspace
from mmloc.calibration import calibrate_bs, default_halfwidths, samples_from_frames
from mmloc.codebook import default_codebooks
from mmloc.config import get_settings
from mmloc.errors import ConfigurationError, MmlocError, StageError
from mmloc.evaluation import align_by_timestamp, compute_error_cdf, range_error_report
from mmloc.logging_setup import configure_logging
from mmloc.pipeline import (
    Localization,
    believed_bs,
    error_rows,
    estimate_frames,
    frame_poses,
    load_scenario,
    localize_frames,
    map_fixes,
    run_pipeline,
    scenario_codebooks,
    stage,
)
from mmloc.positioning import emulate_rtt
from mmloc.scenario import simulate_frames, simulate_signal
from mmloc.schemas import (
    CalibrationSampleBundle,
    CodebookPair,
    FixBundle,
    IPBundle,
    MeasurementFrame,
    PoseUncertainty,
    PositionFix,
    RunConfig,
    ScenarioConfig,
    SignalConfig,
    SolverMode,
)

MODES = [m.value for m in SolverMode]


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="mmloc", description="Single-BS mmWave positioning and mapping toolkit."
    )
    parser.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")
    parser.add_argument("--config", type=Path, default=None, help="RunConfig JSON file.")
    parser.add_argument("--out", type=Path, default=None, help="Output directory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Synthesize measurement frames (or raw beam sweeps).")
    p.add_argument("--scenario", type=Path, default=None, help="ScenarioConfig JSON file.")
    p.add_argument("--signal-level", action="store_true", help="Write raw beamspace sweeps.")

    p = sub.add_parser("estimate-channel", help="Estimate path parameters from beam sweeps.")
    p.add_argument("--beamspace", type=Path, required=True, help="Directory from simulate.")
    p.add_argument("--scenario", type=Path, default=None, help="Scenario with custom codebooks.")

    p = sub.add_parser("calibrate", help="Estimate the BS pose from LOS angles.")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--prior", type=Path, default=None, help="BS pose at the prior box center.")
    p.add_argument("--samples", type=Path, default=None, help="Also write the samples here.")
    p.add_argument(
        "--pose-uncertainty",
        action="store_true",
        help="Inflate sample covariances with the default UE pose uncertainty.",
    )

    p = sub.add_parser("localize", help="Position the UE in every frame.")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--bs", type=Path, required=True, help="BS pose or calibration result.")
    p.add_argument("--bias-offset", type=float, default=0.0, help="RTT bias to remove (s).")
    p.add_argument("--synthetic-range-std", type=float, default=None, help="Meters.")
    p.add_argument("--true-bs", type=Path, default=None, help="BS pose for synthetic ranges.")
    p.add_argument("--uniform-weights", action="store_true")
    p.add_argument("--skip-failed", action="store_true")

    p = sub.add_parser("map", help="Estimate incidence points of the NLOS paths.")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--fixes", type=Path, required=True)
    p.add_argument("--bs", type=Path, required=True)
    p.add_argument("--bias-offset", type=float, default=0.0)

    p = sub.add_parser("evaluate", help="Error CDF of fixes against ground truth.")
    p.add_argument("--fixes", type=Path, required=True)
    p.add_argument("--frames", type=Path, required=True, help="Frames carrying ground truth.")
    p.add_argument("--bs", type=Path, default=None, help="True BS pose for the range report.")
    p.add_argument("--bias-offset", type=float, default=0.0, help="RTT bias to remove (s).")

    p = sub.add_parser("pipeline", help="Run every stage from one RunConfig.")
    p.add_argument("--scenario", type=Path, default=None)
    p.add_argument("--mode", choices=MODES, default=None)

    return parser.parse_args(argv)


def _run_config(args: argparse.Namespace) -> RunConfig | None:
    if args.config is None:
        return None
    return storage.load_model(args.config, RunConfig)


def _scenario(args: argparse.Namespace, run: RunConfig | None) -> ScenarioConfig:
    if getattr(args, "scenario", None) is not None:
        run = RunConfig(scenario=storage.load_model(args.scenario, ScenarioConfig))
    if run is None:
        raise ConfigurationError("a scenario is required (--scenario or --config)")
    if args.seed is not None:
        run = run.model_copy(update={"seed": args.seed})
    return load_scenario(run)


def _out_dir(args: argparse.Namespace, run: RunConfig | None) -> Path:
    if args.out is not None:
        return args.out
    return Path(run.output_dir if run is not None else get_settings().output_dir)


def cmd_simulate(args: argparse.Namespace, run: RunConfig | None) -> str:
    scenario = _scenario(args, run)
    out = _out_dir(args, run)
    if args.signal_level:
        items = simulate_signal(scenario)
        path = storage.save_beamspace_run(out / "beamspace", items)
        return f"Wrote {path} with {len(items)} sweeps."
    frames = simulate_frames(scenario, get_settings())
    path = storage.save_frames(out / "frames.json", frames)
    return f"Wrote {path} with {len(frames)} frames."


def cmd_estimate_channel(args: argparse.Namespace, run: RunConfig | None) -> str:
    entries = storage.load_beamspace_run(args.beamspace)
    if not entries:
        raise ConfigurationError(f"no beam sweeps in {args.beamspace}")
    if args.scenario is not None or run is not None:
        codebooks = scenario_codebooks(_scenario(args, run))
    else:
        codebooks = _codebooks_for(entries[0][1])
    items = [(entry.truth, raw) for entry, raw in entries]
    frames = estimate_frames(
        items, codebooks, [entry.timestamp for entry, _ in entries], get_settings()
    )
    path = storage.save_frames(_out_dir(args, run) / "frames.json", frames)
    return f"Wrote {path} with {len(frames)} frames."


def _codebooks_for(raw: RawBeamspace) -> CodebookPair:
    """Default codebooks sized to a stored sweep."""
    shape = raw.shape
    signal = SignalConfig(
        n_ue_beams=shape[0],
        n_bs_el_beams=shape[1],
        n_bs_az_beams=shape[2],
        active_subcarrier_indices=raw.subcarrier_indices.tolist(),
        subcarrier_spacing_hz=raw.subcarrier_spacing_hz,
    )
    return default_codebooks(signal)


def cmd_calibrate(args: argparse.Namespace, run: RunConfig | None) -> str:
    settings = get_settings()
    frames = storage.load_frames(args.frames)
    if args.prior is not None:
        prior = storage.load_bs(args.prior)
    elif run is not None:
        scenario = _scenario(args, run)
        prior = believed_bs(scenario, run.bs_position_offset_m, run.bs_orientation_offset_deg)
    else:
        raise ConfigurationError("calibration needs --prior or --config")
    uncertainty = PoseUncertainty() if args.pose_uncertainty else None
    samples = samples_from_frames(
        frames, pose_uncertainty=uncertainty, bs_guess=prior, settings=settings
    )
    out = _out_dir(args, run)
    if args.samples is not None:
        bundle = CalibrationSampleBundle(samples=samples, prior_center=prior)
        storage.save_model(args.samples, bundle)
    result = calibrate_bs(samples, prior, default_halfwidths(settings), settings)
    path = storage.save_model(out / "calibration.json", result)
    return f"Wrote {path}: final_cost={result.final_cost:.6g} converged={result.converged}"


def cmd_localize(args: argparse.Namespace, run: RunConfig | None) -> str:
    mode = SolverMode(args.mode)
    frames = storage.load_frames(args.frames)
    bs = storage.load_bs(args.bs)
    true_bs = storage.load_bs(args.true_bs) if args.true_bs is not None else None
    seed = args.seed if args.seed is not None else 0
    localization = localize_frames(
        frames,
        bs,
        mode,
        frame_poses(frames),
        bias_offset=args.bias_offset,
        synthetic_range_std_m=args.synthetic_range_std,
        true_bs=true_bs,
        rng=np.random.default_rng(seed),
        uniform_weights=args.uniform_weights,
        skip_failed_frames=args.skip_failed,
        settings=get_settings(),
    )
    path = storage.save_model(
        _out_dir(args, run) / "fixes.json", FixBundle(mode=mode, fixes=localization.fixes)
    )
    return f"Wrote {path} with {len(localization.fixes)} fixes ({localization.n_failed} failed)."


def _paired_frames(
    fixes: list[PositionFix],
    frames: list[MeasurementFrame],
    bias_offset: float,
    remove_bias: bool,
) -> Localization:
    """Frames matching each fix by index, with the RTT bias removed when asked."""
    by_index = {f.index: f for f in frames}
    localization = Localization()
    for fix in fixes:
        if fix.frame_index not in by_index:
            raise ConfigurationError(f"no frame with index {fix.frame_index}")
        frame = by_index[fix.frame_index]
        (pose,) = frame_poses([frame])
        if remove_bias:
            frame = emulate_rtt(frame, pose.clock_bias + bias_offset)
        localization.fixes.append(fix)
        localization.frames.append(frame)
        localization.poses.append(pose)
    return localization


def cmd_map(args: argparse.Namespace, run: RunConfig | None) -> str:
    bundle = storage.load_model(args.fixes, FixBundle)
    bs = storage.load_bs(args.bs)
    localization = _paired_frames(
        bundle.fixes, storage.load_frames(args.frames), args.bias_offset, bundle.mode.uses_rtt
    )
    estimates = map_fixes(localization, bs, get_settings())
    path = storage.save_model(_out_dir(args, run) / "ips.json", IPBundle(estimates=estimates))
    return f"Wrote {path} with {len(estimates)} incidence points."


def cmd_evaluate(args: argparse.Namespace, run: RunConfig | None) -> str:
    bundle = storage.load_model(args.fixes, FixBundle)
    frames = storage.load_frames(args.frames)
    fixes, truths = align_by_timestamp(bundle.fixes, frame_poses(frames))
    report = compute_error_cdf(fixes, truths)
    out = _out_dir(args, run)
    storage.save_model(out / "report.json", report)
    storage.write_cdf_csv(out / "cdf.csv", report)
    storage.write_error_table(out / "errors.csv", error_rows(fixes, report.errors))
    if args.bs is not None:
        # ranges are judged on RTT-corrected delays, as in the pipeline
        paired = _paired_frames(fixes, frames, args.bias_offset, remove_bias=True)
        range_report = range_error_report(
            paired.frames, paired.poses, storage.load_bs(args.bs)
        )
        storage.save_model(out / "range_report.json", range_report)
    return json.dumps(
        {
            "n": len(report.errors),
            "mae_m": round(report.mae, 4),
            **{k: round(v, 4) for k, v in report.percentiles.items()},
        }
    )


def cmd_pipeline(args: argparse.Namespace, run: RunConfig | None) -> str:
    if args.scenario is not None:
        base = run.model_dump(exclude={"scenario", "scenario_path"}) if run else {}
        try:
            run = RunConfig(**base, scenario_path=str(args.scenario))
        except ValidationError as exc:
            raise ConfigurationError(f"invalid run configuration: {exc}") from exc
    if run is None:
        raise ConfigurationError("pipeline needs --config or --scenario")
    update: dict[str, object] = {}
    if args.mode is not None:
        update["mode"] = SolverMode(args.mode)
    if args.seed is not None:
        update["seed"] = args.seed
    if args.out is not None:
        update["output_dir"] = str(args.out)
    run = run.model_copy(update=update)
    summary = run_pipeline(run, get_settings())
    return json.dumps(
        {
            "n_frames": summary.n_frames,
            "n_failed_frames": summary.n_failed_frames,
            "mae_m": round(summary.report.mae, 4),
            **{k: round(v, 4) for k, v in summary.report.percentiles.items()},
        }
    )


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate-channel": cmd_estimate_channel,
    "calibrate": cmd_calibrate,
    "localize": cmd_localize,
    "map": cmd_map,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    configure_logging(get_settings().log_level)
    try:
        run = _run_config(args)
        if args.command == "pipeline":
            message = cmd_pipeline(args, run)
        else:
            with stage(args.command):
                message = COMMANDS[args.command](args, run)
    except StageError as exc:
        print(f"stage={exc.stage} error={exc.cause}", file=sys.stderr)
        return 2
    except MmlocError as exc:
        print(f"error={exc}", file=sys.stderr)
        return 1
    print(message)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
