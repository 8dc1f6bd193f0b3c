from .dtw import EmptySequence, dtw, pairwise_cost
from .metrics import (FreeFlow, GoalFeed, RobotDeviation, RobotMismatch, ZeroTruthDelay, cde, cde_from_proportions,
                      delay_proportion, dtw_report, free_flow_counterfactual)
from .report import REPORT_COLUMNS, RolloutReport, evaluate, read_report, write_report
from .rollout import PREDICTORS, InsufficientContext, exclusivity_violations, new_events, rollout
from .trajectory import Trajectory, trajectories

__all__ = [
    "EmptySequence", "dtw", "pairwise_cost",
    "FreeFlow", "GoalFeed", "RobotDeviation", "RobotMismatch", "ZeroTruthDelay", "cde", "cde_from_proportions",
    "delay_proportion", "dtw_report", "free_flow_counterfactual",
    "REPORT_COLUMNS", "RolloutReport", "evaluate", "read_report", "write_report",
    "PREDICTORS", "InsufficientContext", "exclusivity_violations", "new_events", "rollout",
    "Trajectory", "trajectories",
]
