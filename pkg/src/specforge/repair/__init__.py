"""Execution-guided grammar repair."""

from .editscript import EditOp, EditScript, min_edit_script
from .loop import (
    DEFAULT_BUDGET,
    FixReport,
    Localization,
    RepairResult,
    RoundLog,
    aggregate_rounds,
    generate_fix,
    localize,
    repair_loop,
)

__all__ = [
    "EditOp", "EditScript", "min_edit_script", "DEFAULT_BUDGET", "FixReport", "Localization",
    "RepairResult", "RoundLog", "aggregate_rounds", "generate_fix", "localize", "repair_loop",
]
