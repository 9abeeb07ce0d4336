from __future__ import annotations

import argparse
import csv
import itertools
import math
import tempfile
import time
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np

from mmloc.beamspace import synthesize_beamspace
from mmloc.calibration import calibrate_bs
from mmloc.channel_estimator import (
    detect_strongest,
    estimate_beamspace_channel,
    estimate_delay,
    refine_angles,
)
from mmloc.codebook import default_codebooks
from mmloc.evaluation import compare_reports, compute_error_cdf, monte_carlo_oracle
from mmloc.geometry import (
    ANGLE_SLICE,
    SPEED_OF_LIGHT,
    BSState,
    UEState,
    angles_to_unit_vector,
    global_direction,
    measurement_function,
)
from mmloc.logging_setup import configure_logging
from mmloc.mapping import map_frame
from mmloc.pipeline import frame_poses, localize_frames, run_pipeline
from mmloc.positioning import build_path_line, locate_multipath_rtt, locate_multipath_tdoa
from mmloc.scenario import generate_paths, simulate_frames
from mmloc.schemas import (
    CalibrationSample,
    ClockBiasModel,
    DriveSpec,
    NoiseModel,
    RunConfig,
    ScenarioConfig,
    SignalConfig,
    SolverMode,
    Surface,
)
from mmloc.solvers import get_solver

SURVEYED_BS = BSState(
    position=(0.78, 0.73, 18.66),
    orientation=tuple(math.radians(d) for d in (1.25, 9.92, 73.45)),
)
PRIOR_BS = BSState(
    position=(0.0, 0.0, 21.0),
    orientation=tuple(math.radians(d) for d in (0.0, 12.0, 69.0)),
)

Row = dict[str, Any]


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Run the synthetic acceptance suite.")
    parser.add_argument("--seed", type=int, default=20240611, help="Master seed.")
    parser.add_argument("--out", type=Path, default=Path("portfolio"), help="Report directory.")
    parser.add_argument("--log-level", default="WARNING")
    return parser.parse_args()


def ue_states(bs: BSState, n: int, rng: np.random.Generator) -> list[UEState]:
    """UEs at 85-130 m in front of the BS array, ground height, random yaw."""
    states = []
    for k in range(n):
        direction = global_direction(bs.rotation, rng.uniform(-1.0, 1.0), 0.0)
        horizontal = direction[:2] / np.linalg.norm(direction[:2])
        xy = bs.p[:2] + rng.uniform(85.0, 130.0) * horizontal
        states.append(
            UEState(
                position=(float(xy[0]), float(xy[1]), 1.5),
                orientation=(0.0, 0.0, float(rng.uniform(-np.pi, np.pi))),
                timestamp=0.1 * k,
            )
        )
    return states


def street_scene(rng: np.random.Generator, noise: NoiseModel | None = None) -> ScenarioConfig:
    """BS between two walls parallel to a random heading, one UE down the street."""
    heading = rng.uniform(-np.pi, np.pi)
    along = np.array([math.cos(heading), math.sin(heading), 0.0])
    across = np.array([-along[1], along[0], 0.0])
    bs = BSState(position=(0.0, 0.0, 10.0), orientation=(0.0, 0.0, -heading))
    ue_xy = rng.uniform(40.0, 120.0) * along + rng.uniform(-15.0, 15.0) * across
    ue = UEState(
        position=(float(ue_xy[0]), float(ue_xy[1]), 1.5),
        orientation=(0.0, 0.0, float(rng.uniform(-np.pi, np.pi))),
    )
    walls = [
        Surface(anchor=tuple(30.0 * across), normal=tuple(-across)),
        Surface(anchor=tuple(-30.0 * across), normal=tuple(across)),
    ]
    return ScenarioConfig(
        bs=bs,
        trajectory=[ue],
        surfaces=walls,
        measurement_noise=noise or NoiseModel(),
        clock_bias_model=ClockBiasModel(kind="constant", mean_s=rng.uniform(0.0, 100e-9)),
        rng_seed=int(rng.integers(0, 2**31)),
    )


def check_noiseless_roundtrip(rng: np.random.Generator) -> Row:
    worst_m, worst_bias_ns = 0.0, 0.0
    for _ in range(100):
        scene = street_scene(rng)
        (frame,) = simulate_frames(scene)
        ue, bias = frame.truth.ue, frame.truth.clock_bias
        for mode in SolverMode:
            fix = get_solver(mode).locate(
                frame, scene.bs, ue.orientation, 0.0 if not mode.uses_rtt else bias, 1.5
            )
            n = len(fix.position)
            worst_m = max(worst_m, float(np.linalg.norm(np.asarray(fix.position) - ue.p[:n])))
            if fix.clock_bias is not None:
                worst_bias_ns = max(worst_bias_ns, abs(fix.clock_bias - bias) * 1e9)
    metric = f"max_err_m={worst_m:.3g} max_bias_ns={worst_bias_ns:.3g}"
    return {"metric": metric, "passed": worst_m < 1e-6 and worst_bias_ns < 1e-3}


def _tdoa_cost(lines, u_ues, p: np.ndarray) -> float:
    """Line cost with the range offset minimized out for a fixed position."""
    num = den = 0.0
    terms = []
    for line, u_ue in zip(lines, u_ues, strict=True):
        proj = _projector(line)
        a, r = proj @ u_ue, proj @ (p - line.mu)
        num += line.weight * float(a @ r)
        den += line.weight * float(a @ a)
        terms.append((line.weight, a, r))
    offset = num / den
    return sum(w * float(np.sum((r - offset * a) ** 2)) for w, a, r in terms)


def _projector(line) -> np.ndarray:
    if line.degenerate:
        return np.eye(3)
    nu = line.nu / np.linalg.norm(line.nu)
    return np.eye(3) - np.outer(nu, nu)


def check_lattice_oracle(rng: np.random.Generator) -> Row:
    sigma = math.radians(1.0)
    noise = NoiseModel(
        toa_std_s=1e-9, aoa_az_std_rad=sigma, aod_az_std_rad=sigma, aod_el_std_rad=sigma
    )
    step = 0.01
    grid = step * np.arange(-5, 6)
    worst = 0.0
    for _ in range(20):
        scene = street_scene(rng, noise)
        (frame,) = simulate_frames(scene)
        orientation = frame.truth.ue.orientation
        rtt = locate_multipath_rtt(frame, scene.bs, orientation, frame.truth.clock_bias)
        tdoa = locate_multipath_tdoa(frame, scene.bs, orientation)
        lines_rtt = [
            build_path_line(m, scene.bs, orientation, frame.truth.clock_bias) for m in frame.paths
        ]
        lines_tdoa = [build_path_line(m, scene.bs, orientation) for m in frame.paths]
        u_ues = [
            global_direction(
                frame.truth.ue.rotation, m.measurement.aoa_az, m.measurement.aoa_el
            )
            for m in frame.paths
        ]

        def rtt_cost(p: np.ndarray, lines=lines_rtt) -> float:
            return sum(
                line.weight * float(np.sum((_projector(line) @ (p - line.mu)) ** 2))
                for line in lines
            )

        for fix, cost in (
            (rtt, rtt_cost),
            (tdoa, lambda p, lines=lines_tdoa, u=u_ues: _tdoa_cost(lines, u, p)),
        ):
            center = np.asarray(fix.position)
            best = min(
                (center + np.array(d) for d in itertools.product(grid, repeat=3)), key=cost
            )
            worst = max(worst, float(np.max(np.abs(best - center))))
    return {"metric": f"max_lattice_offset_m={worst:.3g}", "passed": worst <= step}


def check_calibration(rng: np.random.Generator) -> Row:
    cov = (np.eye(4) * math.radians(0.5) ** 2).tolist()
    samples = [
        CalibrationSample(
            ue_pose=ue,
            los_angles=tuple(measurement_function(ue, SURVEYED_BS).as_array()[ANGLE_SLICE]),
            covariance=cov,
        )
        for ue in ue_states(SURVEYED_BS, 20, rng)
    ]
    estimate = calibrate_bs(samples, PRIOR_BS).bs_estimate
    pos_err = float(np.max(np.abs(estimate.p - SURVEYED_BS.p)))
    ang_err = math.degrees(
        float(np.max(np.abs(np.subtract(estimate.orientation, SURVEYED_BS.orientation))))
    )
    return {
        "metric": f"pos_err_m={pos_err:.3g} ang_err_deg={ang_err:.3g}",
        "passed": pos_err < 0.01 and ang_err < 0.01,
    }


def check_channel_estimator(rng: np.random.Generator) -> Row:
    signal = SignalConfig()
    codebooks = default_codebooks(signal)
    bs = BSState(position=(0.0, 0.0, 10.0))
    spacing = {
        "bs_az": math.radians(114.0 / 33),
        "bs_el": math.radians(7.5),
        "ue_az": math.radians(90.0 / 14),
    }
    worst_delay_ns, worst_ratio = 0.0, 0.0
    for _ in range(50):
        aod_az = math.radians(rng.uniform(-40.0, 40.0))
        aod_el = math.radians(rng.uniform(-8.0, 8.0))
        aoa_az = math.radians(rng.uniform(-30.0, 30.0))
        direction = angles_to_unit_vector(aod_az, aod_el)
        distance = rng.uniform(30.0, 300.0)
        ue = UEState(
            position=tuple(bs.p + distance * direction),
            orientation=(0.0, 0.0, aoa_az - math.atan2(-direction[1], -direction[0])),
        )
        paths = generate_paths(bs, ue, [])
        raw = synthesize_beamspace(paths, codebooks, signal, rng)
        tensor = estimate_beamspace_channel(
            raw.symbols, raw.pilots, raw.subcarrier_indices, raw.subcarrier_spacing_hz
        )
        triple = detect_strongest(tensor)
        est = refine_angles(tensor, triple, codebooks)
        delay = estimate_delay(tensor, triple)
        worst_delay_ns = max(worst_delay_ns, abs(delay - distance / SPEED_OF_LIGHT) * 1e9)
        ratios = (
            abs(est[0] - aod_az) / spacing["bs_az"],
            abs(est[1] - aod_el) / spacing["bs_el"],
            abs(est[2] - aoa_az) / spacing["ue_az"],
        )
        worst_ratio = max(worst_ratio, *ratios)
    return {
        "metric": f"max_delay_err_ns={worst_delay_ns:.3g} max_angle_err_beams={worst_ratio:.3g}",
        "passed": worst_delay_ns < 0.1 and worst_ratio < 0.25,
    }


def check_oracle_agreement(rng: np.random.Generator) -> Row:
    sigma = math.radians(1.0)
    noise = NoiseModel(
        toa_std_s=1.0 / SPEED_OF_LIGHT,
        aoa_az_std_rad=sigma,
        aod_az_std_rad=sigma,
        aod_el_std_rad=sigma,
        report_aoa_elevation=False,
    )
    scenario = ScenarioConfig(
        bs=SURVEYED_BS,
        trajectory=ue_states(SURVEYED_BS, 500, rng),
        measurement_noise=noise,
        rng_seed=int(rng.integers(0, 2**31)),
    )
    frames = simulate_frames(scenario)
    poses = frame_poses(frames)
    fixes = localize_frames(frames, SURVEYED_BS, SolverMode.RTT_AOD_AOA, poses).fixes
    p90 = compute_error_cdf(fixes, poses).percentiles["p90"]
    oracle = monte_carlo_oracle(
        SURVEYED_BS, poses, 1.0, sigma, 10, rng, aoa_std_rad=sigma
    ).percentiles["p90"]
    ratio = p90 / oracle
    return {
        "metric": f"p90_m={p90:.3g} oracle_p90_m={oracle:.3g}",
        "passed": math.isfinite(p90) and 1 / 3 <= ratio <= 3,
    }


def check_mapping_consistency(rng: np.random.Generator) -> Row:
    sigma_tau, sigma_angle = 3e-9, math.radians(1.0)
    noise = NoiseModel(
        toa_std_s=sigma_tau,
        aoa_az_std_rad=sigma_angle,
        aoa_el_std_rad=sigma_angle,
        aod_az_std_rad=sigma_angle,
        aod_el_std_rad=sigma_angle,
    )
    inside = total = 0
    for _ in range(30):
        scene = street_scene(rng, noise)
        (frame,) = simulate_frames(scene)
        ue = frame.truth.ue
        bias = frame.truth.clock_bias
        for estimate in map_frame(frame, ue.p, scene.bs, ue.orientation, bias):
            surface = scene.surfaces[frame.truth.surface_indices[estimate.path_index]]
            ip = np.asarray(estimate.position)
            distance = abs(float(surface.n @ (ip - np.asarray(surface.anchor))))
            sigma = math.hypot(
                float(np.linalg.norm(ip - scene.bs.p)) * sigma_angle,
                float(np.linalg.norm(ip - ue.p)) * sigma_angle,
                SPEED_OF_LIGHT * sigma_tau,
            )
            inside += distance <= 3.0 * sigma
            total += 1
    fraction = inside / max(total, 1)
    return {"metric": f"within_3sigma={fraction:.3f} n={total}", "passed": fraction >= 0.95}


def check_calibration_ab(rng: np.random.Generator) -> Row:
    noise = NoiseModel(
        toa_std_s=1e-9,
        aoa_az_std_rad=math.radians(0.5),
        aod_az_std_rad=math.radians(0.5),
        aod_el_std_rad=math.radians(0.5),
    )
    scenario = ScenarioConfig(
        bs=BSState(position=(0.0, 0.0, 10.0)),
        surfaces=[Surface(anchor=(0.0, 30.0, 0.0), normal=(0.0, -1.0, 0.0))],
        drive=DriveSpec(
            waypoints=[(40.0, -10.0, 1.5), (120.0, -10.0, 1.5), (120.0, 25.0, 1.5)],
            speed_mps=10.0,
            orientation_mode="face_bs",
        ),
        measurement_noise=noise,
        frame_period=0.2,
        rng_seed=int(rng.integers(0, 2**31)),
    )
    offset = (0.0, 0.0, 4.45)
    with tempfile.TemporaryDirectory() as tmp:
        perturbed = run_pipeline(
            RunConfig(
                scenario=scenario, bs_orientation_offset_deg=offset, output_dir=f"{tmp}/a"
            )
        )
        calibrated = run_pipeline(
            RunConfig(
                scenario=scenario,
                calibrate=True,
                bs_orientation_offset_deg=offset,
                output_dir=f"{tmp}/b",
            )
        )
    comparison = compare_reports(calibrated.report, perturbed.report)
    return {
        "metric": (
            f"median_delta_m={comparison.median_delta:.3g} "
            f"left_fraction={comparison.left_fraction:.3f}"
        ),
        "passed": comparison.dominates,
    }


CHECKS: dict[str, Callable[[np.random.Generator], Row]] = {
    "noiseless_roundtrip": check_noiseless_roundtrip,
    "lattice_oracle": check_lattice_oracle,
    "calibration_recovery": check_calibration,
    "channel_estimator": check_channel_estimator,
    "oracle_agreement": check_oracle_agreement,
    "mapping_consistency": check_mapping_consistency,
    "calibration_ab": check_calibration_ab,
}


def main() -> None:
    args = parse_args()
    configure_logging(args.log_level)
    seeds = np.random.SeedSequence(args.seed).spawn(len(CHECKS))
    report_rows: list[Row] = []
    for (name, check), seed in zip(CHECKS.items(), seeds, strict=True):
        t0 = time.perf_counter()
        row = check(np.random.default_rng(seed))
        dt_ms = (time.perf_counter() - t0) * 1000
        report_rows.append({"name": name, "runtime_ms": round(dt_ms, 1), **row})
        print(f"{name}: {'PASS' if row['passed'] else 'FAIL'} {row['metric']}")

    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / "acceptance_report.csv"
    with csv_path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["name", "runtime_ms", "metric", "passed"])
        writer.writeheader()
        writer.writerows(report_rows)
    print(f"Wrote {csv_path} with {len(report_rows)} rows.")


if __name__ == "__main__":
    main()
