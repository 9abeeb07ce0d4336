from __future__ import annotations

from mmloc.geometry import BSState
from mmloc.positioning import locate_multipath_rtt, locate_multipath_tdoa
from mmloc.schemas import MeasurementFrame, PositionFix, SolverMode
from mmloc.solvers.base import PositionSolver


class MultipathRttSolver(PositionSolver):
    mode = SolverMode.MULTIPATH_RTT

    def locate(
        self,
        frame: MeasurementFrame,
        bs: BSState,
        ue_orientation: tuple[float, float, float],
        clock_bias: float = 0.0,
        ue_height: float | None = None,
    ) -> PositionFix:
        fix = locate_multipath_rtt(
            frame, bs, ue_orientation, clock_bias, self.settings, self.uniform_weights
        )
        return self._stamp(fix, frame)


class MultipathTdoaSolver(PositionSolver):
    """Estimates the clock bias jointly; any supplied bias is ignored."""

    mode = SolverMode.MULTIPATH_TDOA

    def locate(
        self,
        frame: MeasurementFrame,
        bs: BSState,
        ue_orientation: tuple[float, float, float],
        clock_bias: float = 0.0,
        ue_height: float | None = None,
    ) -> PositionFix:
        fix = locate_multipath_tdoa(frame, bs, ue_orientation, self.settings, self.uniform_weights)
        return self._stamp(fix, frame)
