from __future__ import annotations

from mmloc.config import AppSettings
from mmloc.schemas import SolverMode
from mmloc.solvers.base import PositionSolver
from mmloc.solvers.los import AodHeightSolver, RttAodAoaSolver, RttAodSolver
from mmloc.solvers.multipath import MultipathRttSolver, MultipathTdoaSolver

_SOLVERS: dict[SolverMode, type[PositionSolver]] = {
    cls.mode: cls
    for cls in (
        AodHeightSolver,
        RttAodSolver,
        RttAodAoaSolver,
        MultipathRttSolver,
        MultipathTdoaSolver,
    )
}


def get_solver(
    mode: SolverMode | str,
    settings: AppSettings | None = None,
    uniform_weights: bool = False,
) -> PositionSolver:
    return _SOLVERS[SolverMode(mode)](settings=settings, uniform_weights=uniform_weights)


__all__ = ["PositionSolver", "get_solver"]
