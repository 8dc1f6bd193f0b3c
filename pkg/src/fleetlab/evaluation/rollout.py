"""Closed-loop rollouts of learned and baseline predictors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..dataset.rc import NeighborhoodObs, observe
from ..floor import Action, FloorGraph, FloorState, is_legal, legal_actions
from ..rng import make_rng
from ..sim.env import EventRecord, env_step
from ..sim.episode import Episode
from .metrics import GoalFeed

PREDICTORS = ("rc", "gf", "random", "replay")


class InsufficientContext(ValueError):
    pass


@dataclass
class Predictor:
    """Maps the current state to intents (and optionally an arbitration order)."""

    name: str
    decide: Callable[[int, FloorState], tuple[list[tuple[int, Action]], list[int] | None]]
    observe: Callable[[FloorState, list[EventRecord]], None] = lambda state, events: None


def _plain(state: FloorState) -> FloorState:
    return FloorState(state.time_s, state.robots, state.objects)


def new_events(episode: Episode) -> list[EventRecord]:
    """Events that start inside the episode window (excludes carried-over actions)."""
    return [e for e in episode.events if e.time_s >= episode.t_start]


def _replay(truth: Episode) -> Predictor:
    starts: dict[tuple[int, int], Action] = {(int(round(e.time_s)), e.robot_id): e.action for e in truth.events}

    def decide(t, state):
        busy = state.busy_ids()
        return [(r.robot_id, starts.get((t, r.robot_id), Action.WAIT)) for r in state.robots
                if r.robot_id not in busy], None
    return Predictor("replay", decide)


def _random(floor: FloorGraph, seed: int) -> Predictor:
    def decide(t, state):
        rng = make_rng(seed, "random-predictor", t)
        busy = state.busy_ids()
        out = []
        for r in sorted(state.robots, key=lambda r: r.robot_id):
            if r.robot_id in busy:
                continue
            options = legal_actions(floor, r)
            out.append((r.robot_id, options[int(rng.integers(len(options)))]))
        return out, None
    return Predictor("random", decide)


def _rc(floor: FloorGraph, truth: Episode, t0: int, model, sample: bool, seed: int) -> Predictor:
    from ..models.rc import rc_infer_fleet

    store, config = model
    hist: dict[int, list[tuple[NeighborhoodObs, Action]]] = {}
    for e in truth.events:
        if e.time_s < t0:
            obs = observe(floor, truth.snapshot_at(int(round(e.time_s))), e.robot_id, config.K_r, config.K_p,
                          config.K_x)
            hist.setdefault(e.robot_id, []).append((obs, e.action))
    for rid in truth.robot_ids:
        if len(hist.get(rid, [])) < config.K:
            raise InsufficientContext(f"robot {rid} has fewer than K={config.K} events before t={t0}")
    current: dict[int, NeighborhoodObs] = {}

    def decide(t, state):
        busy = state.busy_ids()
        idle = [r for r in state.robots if r.robot_id not in busy]
        histories = {}
        for r in idle:
            obs = observe(floor, state, r.robot_id, config.K_r, config.K_p, config.K_x)
            current[r.robot_id] = obs
            past = hist.get(r.robot_id, [])[-config.K:] if config.K else []
            histories[r.robot_id] = ([o for o, _ in past] + [obs], [a for _, a in past])
        outs = rc_infer_fleet(store, config, histories)
        rng = make_rng(seed, "rc-sample", t) if sample else None
        intents = []
        for r in idle:
            out = outs[r.robot_id]
            if rng is not None:
                a = Action(int(rng.choice(len(out.action_probs), p=out.action_probs / out.action_probs.sum())))
            else:
                a = out.action
            intents.append((r.robot_id, a if is_legal(floor, r, a) else Action.WAIT))
        return intents, None

    def record(state, events):
        for e in events:
            if e.robot_id in current:
                hist.setdefault(e.robot_id, []).append((current.pop(e.robot_id), e.action))
    return Predictor("rc", decide, record)


def _gf(floor: FloorGraph, truth: Episode, t0: int, model) -> Predictor:
    from ..models.gf import arbitration_order, gf_decisions

    store, config = model
    if t0 - config.T + 1 < truth.t_start:
        raise InsufficientContext(f"GF needs {config.T} ticks of history before t={t0}")
    history = [truth.snapshot_at(t) for t in range(t0 - config.T + 1, t0)]

    def decide(t, state):
        history.append(state)
        del history[:-config.T]
        decisions = gf_decisions(store, config, floor, history)
        intents = [(rid, d.action) for rid, d in sorted(decisions.items())]
        order = arbitration_order(state, {rid: d.confidence for rid, d in decisions.items()})
        return intents, order
    return Predictor("gf", decide)


def make_predictor(name: str, floor: FloorGraph, truth: Episode, t0: int, model=None, seed: int = 0,
                   sample: bool = False) -> Predictor:
    if name == "replay":
        return _replay(truth)
    if name == "random":
        return _random(floor, seed)
    if name == "rc":
        return _rc(floor, truth, t0, model, sample, seed)
    if name == "gf":
        return _gf(floor, truth, t0, model)
    raise ValueError(f"unknown predictor {name!r}; expected one of {PREDICTORS}")


def rollout(predictor: str | Predictor, floor: FloorGraph, truth: Episode, t0: int, horizon_s: int = 60,
            model=None, seed: int = 0, sample: bool = False) -> Episode:
    """Roll the fleet forward ``horizon_s`` ticks from the ground-truth state at ``t0``.

    Predictions drive the deterministic environment; goals after each
    load/unload are taken from the ground-truth goal sequence. The result
    covers ``[t0, t0 + horizon_s]`` and, like :meth:`Episode.window`, keeps the
    actions already running at ``t0``.
    """
    t0 = int(t0)
    horizon_s = int(horizon_s)
    if horizon_s < 0:
        raise ValueError("horizon must be non-negative")
    if not truth.t_start <= t0 <= truth.t_end:
        raise InsufficientContext(f"t0={t0} outside the reference episode")
    pred = predictor if isinstance(predictor, Predictor) else make_predictor(predictor, floor, truth, t0, model,
                                                                           seed, sample)
    state = truth.state_at(floor, t0)
    feed = GoalFeed(truth, t0)
    events = [e for e in truth.events if e.time_s < t0 < e.end_s]
    snapshots = [_plain(state)]
    for tick in range(t0, t0 + horizon_s):
        intents, order = pred.decide(tick, state)
        goals = {rid: feed.peek(rid, state.robot(rid).goal) for rid, a in intents
                 if a in (Action.LOAD, Action.UNLOAD)}
        state, evs = env_step(floor, state, intents, order=order, next_goals=goals)
        for e in evs:
            if e.action in (Action.LOAD, Action.UNLOAD):
                feed.consume(e.robot_id)
        pred.observe(state, evs)
        events.extend(evs)
        snapshots.append(_plain(state))
    events.sort(key=lambda e: (e.time_s, e.robot_id))
    meta = dict(truth.meta)
    meta["t_start"] = t0
    meta["predictor"] = pred.name
    return Episode(truth.floor_hash, truth.seed, float(horizon_s), events, snapshots, truth.snapshots_hz, meta)


def exclusivity_violations(episode: Episode) -> int:
    bad = 0
    for s in episode.snapshots:
        pos = [r.position for r in s.robots]
        bad += len(pos) - len(set(pos))
    return bad
