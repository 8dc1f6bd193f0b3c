"""DTW deviation report, free-flow counterfactual and congestion delay error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..floor import Action, FloorGraph, FloorState
from ..sim.env import env_step
from ..sim.episode import Episode
from ..sim.policy import robot_intent
from .dtw import dtw
from .trajectory import Trajectory


class RobotMismatch(ValueError):
    pass


class ZeroTruthDelay(ValueError):
    """The ground-truth delay proportion is zero, so the relative error is undefined."""


@dataclass
class RobotDeviation:
    position_m: float
    state: float
    timing_s: float


def timing_deviation(pred: list[float], truth: list[float], horizon_end: float) -> float:
    if not pred and not truth:
        return 0.0
    if not pred or not truth:
        times = pred or truth
        return float(np.mean([abs(horizon_end - t) for t in times]))
    return dtw(pred, truth, "abs")[1]


def dtw_report(pred: Mapping[int, Trajectory], truth: Mapping[int, Trajectory],
               horizon_end: float | None = None) -> dict[int, RobotDeviation]:
    """Normalized DTW per robot on position, (laden, heading) state and event timing."""
    if set(pred) != set(truth):
        raise RobotMismatch(f"robot ids differ: {sorted(set(pred) ^ set(truth))}")
    out = {}
    for rid in sorted(truth):
        p, t = pred[rid], truth[rid]
        end = horizon_end if horizon_end is not None else float(max(t.times[-1], p.times[-1]))
        out[rid] = RobotDeviation(
            dtw(p.positions, t.positions, "euclidean")[1],
            dtw(p.states, t.states, "hamming")[1],
            timing_deviation(p.event_times(), t.event_times(), end),
        )
    return out


# ------------------------------------------------------------------ free flow

@dataclass
class FreeFlow:
    legs: int  # load/unload actions completed inside the window
    t_total: float
    t_free_flow: float

    @property
    def delay(self) -> float:
        return self.t_total - self.t_free_flow


def _leg_ends(episode: Episode, t0: int, t1: int) -> dict[int, list[float]]:
    ends: dict[int, list[float]] = {rid: [] for rid in episode.robot_ids}
    for e in episode.events:
        if e.action in (Action.LOAD, Action.UNLOAD) and t0 < e.end_s <= t1:
            ends.setdefault(e.robot_id, []).append(e.end_s)
    return {rid: sorted(v) for rid, v in ends.items()}


class GoalFeed:
    """Exogenous goal sequence per robot, replayed from a reference episode.

    The k-th load/unload a robot starts adopts goal ``stream[k]``; when the
    stream runs out the robot keeps its current goal.
    """

    def __init__(self, episode: Episode, t0: int):
        self.streams = episode.goal_streams()
        self.count = {rid: 0 for rid in self.streams}
        for e in episode.events:
            if e.action in (Action.LOAD, Action.UNLOAD) and e.time_s < t0:
                self.count[e.robot_id] = self.count.get(e.robot_id, 0) + 1

    def peek(self, robot_id: int, current_goal: int) -> int:
        s = self.streams.get(robot_id, [])
        k = self.count.get(robot_id, 0) + 1
        return s[k] if k < len(s) else current_goal

    def consume(self, robot_id: int) -> None:
        self.count[robot_id] = self.count.get(robot_id, 0) + 1


def solo_completion_times(floor: FloorGraph, state: FloorState, robot_id: int, feed: GoalFeed, legs: int,
                          max_ticks: int) -> list[float]:
    """Re-run one robot alone with the scripted policy until ``legs`` load/unloads complete."""
    r = state.robot(robot_id)
    act = tuple(a for a in state.active if a.robot_id == robot_id)
    cur = FloorState(state.time_s, (r,), (), act)
    ends = [float(a.end) for a in act if a.action in (Action.LOAD, Action.UNLOAD)]
    for _ in range(max_ticks):
        if sum(1 for t in ends if t <= cur.time_s) >= legs:
            break
        intents, goals = [], {}
        if not cur.active:
            me = cur.robots[0]
            a, _ = robot_intent(floor, me, me.goal, set(), me.laden)
            intents.append((robot_id, a))
            if a in (Action.LOAD, Action.UNLOAD):
                goals[robot_id] = feed.peek(robot_id, me.goal)
        cur, events = env_step(floor, cur, intents, next_goals=goals, exclusive=False)
        for e in events:
            if e.action in (Action.LOAD, Action.UNLOAD):
                feed.consume(robot_id)
                ends.append(e.end_s)
    return sorted(t for t in ends if t <= cur.time_s)[:legs]


def free_flow_counterfactual(episode: Episode, floor: FloorGraph, t0: int | None = None,
                             t1: int | None = None) -> dict[int, FreeFlow]:
    """Per robot: time to finish its in-window legs with and without other robots.

    ``t_total`` runs from the window start to the completion of the last
    load/unload inside the window; ``t_free_flow`` is the same count of legs
    replayed alone from the window-start state (including any action in
    progress) with the scripted policy and the same goal sequence.
    """
    t0 = episode.t_start if t0 is None else int(t0)
    t1 = episode.t_end if t1 is None else int(t1)
    if not episode.snapshots:
        return {}
    state = episode.state_at(floor, t0)
    ends = _leg_ends(episode, t0, t1)
    out = {}
    for rid in episode.robot_ids:
        legs = len(ends.get(rid, []))
        if legs == 0:
            out[rid] = FreeFlow(0, 0.0, 0.0)
            continue
        t_total = ends[rid][-1] - t0
        feed = GoalFeed(episode, t0)
        solo = solo_completion_times(floor, state, rid, feed, legs, max_ticks=20 * (t1 - t0) + 100)
        t_free = (solo[-1] - t0) if len(solo) == legs else float("inf")
        out[rid] = FreeFlow(legs, float(t_total), float(t_free))
    return out


def delay_proportion(flows) -> float:
    """Fleet-level ``sum(t_total - t_free) / sum(t_total)`` (0 when nothing completed)."""
    flows = list(flows)
    total = sum(f.t_total for f in flows)
    if total <= 0:
        return 0.0
    return sum(f.delay for f in flows) / total


def cde_from_proportions(p_pred: float, p_truth: float) -> float:
    if p_truth == 0:
        raise ZeroTruthDelay("ground-truth delay proportion is zero; CDE undefined")
    return 100.0 * abs(p_pred - p_truth) / p_truth


def cde(pred_episode: Episode, truth_episode: Episode, floor: FloorGraph) -> float:
    """Congestion delay error in percent between two episodes over the same horizon."""
    if (pred_episode.t_start, pred_episode.t_end) != (truth_episode.t_start, truth_episode.t_end):
        raise ValueError("episodes cover different horizons")
    p_pred = delay_proportion(free_flow_counterfactual(pred_episode, floor).values())
    p_truth = delay_proportion(free_flow_counterfactual(truth_episode, floor).values())
    return cde_from_proportions(p_pred, p_truth)
