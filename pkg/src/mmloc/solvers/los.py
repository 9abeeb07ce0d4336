from __future__ import annotations

from mmloc.calibration import select_los
from mmloc.config import get_settings
from mmloc.errors import ConfigurationError
from mmloc.geometry import BSState
from mmloc.positioning import locate_aod_height, locate_los_ls, locate_rtt_aod
from mmloc.schemas import MeasurementFrame, PositionFix, SolverMode
from mmloc.solvers.base import PositionSolver


class AodHeightSolver(PositionSolver):
    mode = SolverMode.AOD_HEIGHT

    def locate(
        self,
        frame: MeasurementFrame,
        bs: BSState,
        ue_orientation: tuple[float, float, float],
        clock_bias: float = 0.0,
        ue_height: float | None = None,
    ) -> PositionFix:
        if ue_height is None:
            raise ConfigurationError("aod-height mode requires the UE height")
        settings = self.settings or get_settings()
        meas = frame.paths[select_los(frame, settings.los_tie_window_s)]
        fix = locate_aod_height(meas, bs, ue_height, settings.grazing_ray_epsilon)
        return self._stamp(fix, frame)


class RttAodSolver(PositionSolver):
    mode = SolverMode.RTT_AOD

    def locate(
        self,
        frame: MeasurementFrame,
        bs: BSState,
        ue_orientation: tuple[float, float, float],
        clock_bias: float = 0.0,
        ue_height: float | None = None,
    ) -> PositionFix:
        settings = self.settings or get_settings()
        meas = frame.paths[select_los(frame, settings.los_tie_window_s)]
        fix = locate_rtt_aod(meas.with_toa(meas.measurement.toa - clock_bias), bs)
        return self._stamp(fix, frame)


class RttAodAoaSolver(PositionSolver):
    mode = SolverMode.RTT_AOD_AOA

    def locate(
        self,
        frame: MeasurementFrame,
        bs: BSState,
        ue_orientation: tuple[float, float, float],
        clock_bias: float = 0.0,
        ue_height: float | None = None,
    ) -> PositionFix:
        settings = self.settings or get_settings()
        meas = frame.paths[select_los(frame, settings.los_tie_window_s)]
        fix = locate_los_ls(meas, bs, ue_orientation, clock_bias, settings)
        return self._stamp(fix, frame)
