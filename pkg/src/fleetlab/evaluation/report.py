"""Aggregate rollout metrics into the evaluation report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..floor import FloorGraph
from ..sim.episode import Episode
from .metrics import FreeFlow, ZeroTruthDelay, cde_from_proportions, delay_proportion, dtw_report, \
    free_flow_counterfactual
from .trajectory import trajectories

REPORT_COLUMNS = ("model", "dtw_position_m", "dtw_state", "dtw_timing_s", "cde_percent")


@dataclass
class RolloutReport:
    model: str
    dtw_position_m: float
    dtw_state: float
    dtw_timing_s: float
    cde_percent: float  # NaN when the truth delay is zero

    def row(self) -> list[str]:
        def fmt(x):
            return "undefined" if isinstance(x, float) and math.isnan(x) else f"{x:.2f}"
        return [self.model] + [fmt(v) for v in (self.dtw_position_m, self.dtw_state, self.dtw_timing_s,
                                                  self.cde_percent)]


def evaluate(model: str, pairs: list[tuple[Episode, Episode, FloorGraph]]) -> RolloutReport:
    """Mean per-robot DTW over all (prediction, truth) pairs and pooled fleet CDE.

    Each truth is the ground-truth window over the same horizon as its prediction.
    """
    pos, state, timing = [], [], []
    pred_flows: list[FreeFlow] = []
    truth_flows: list[FreeFlow] = []
    for pred, truth, floor in pairs:
        if (pred.t_start, pred.t_end) != (truth.t_start, truth.t_end):
            raise ValueError("prediction and truth cover different horizons")
        dev = dtw_report(trajectories(pred, floor), trajectories(truth, floor), float(truth.t_end))
        for d in dev.values():
            pos.append(d.position_m)
            state.append(d.state)
            timing.append(d.timing_s)
        pred_flows.extend(free_flow_counterfactual(pred, floor).values())
        truth_flows.extend(free_flow_counterfactual(truth, floor).values())
    try:
        c = cde_from_proportions(delay_proportion(pred_flows), delay_proportion(truth_flows))
    except ZeroTruthDelay:
        c = float("nan")
    mean = lambda v: float(np.mean(v)) if v else 0.0  # noqa: E731
    return RolloutReport(model, mean(pos), mean(state), mean(timing), c)


def write_report(reports: list[RolloutReport], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(r.row())


def read_report(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
