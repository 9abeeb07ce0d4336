from __future__ import annotations

from abc import ABC, abstractmethod
from typing import ClassVar

from mmloc.config import AppSettings
from mmloc.geometry import BSState
from mmloc.schemas import MeasurementFrame, PositionFix, SolverMode


class PositionSolver(ABC):
    mode: ClassVar[SolverMode]

    def __init__(self, settings: AppSettings | None = None, uniform_weights: bool = False) -> None:
        self.settings = settings
        self.uniform_weights = uniform_weights

    @abstractmethod
    def locate(
        self,
        frame: MeasurementFrame,
        bs: BSState,
        ue_orientation: tuple[float, float, float],
        clock_bias: float = 0.0,
        ue_height: float | None = None,
    ) -> PositionFix:  # pragma: no cover - interface
        raise NotImplementedError

    def _stamp(self, fix: PositionFix, frame: MeasurementFrame) -> PositionFix:
        return fix.model_copy(update={"frame_index": frame.index, "timestamp": frame.timestamp})
