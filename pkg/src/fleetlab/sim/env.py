"""Deterministic environment model with sequential vertex reservation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from ..floor import (
    Action,
    ActiveAction,
    FloorGraph,
    FloorState,
    IllegalAction,
    ObjectState,
    RobotState,
    apply_action,
    swept_vertices,
)


class UnknownRobot(KeyError):
    pass


class RobotBusy(ValueError):
    """An intent was issued for a robot that is still executing an action."""


@dataclass(frozen=True)
class EventRecord:
    time_s: float
    robot_id: int
    action: Action
    pre: RobotState
    post: RobotState
    duration_s: float

    @property
    def end_s(self) -> float:
        return self.time_s + self.duration_s

    def to_dict(self) -> dict:
        return {
            "t": round(float(self.time_s), 3),
            "id": self.robot_id,
            "a": self.action.label,
            "pre": self.pre.to_dict(),
            "post": self.post.to_dict(),
            "d": round(float(self.duration_s), 3),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EventRecord:
        return cls(float(d["t"]), int(d["id"]), Action.from_label(d["a"]),
                   RobotState.from_dict(d["pre"]), RobotState.from_dict(d["post"]), float(d["d"]))


class ReservationTable:
    """Vertex claims for one tick; at most one robot per vertex."""

    def __init__(self):
        self.reserved: dict[int, int] = {}

    def holder(self, vertex: int) -> int | None:
        return self.reserved.get(vertex)

    def conflicts(self, robot_id: int, vertices: Iterable[int]) -> list[int]:
        return [v for v in vertices if self.reserved.get(v, robot_id) != robot_id]

    def reserve(self, robot_id: int, vertices: Iterable[int]) -> None:
        for v in vertices:
            held = self.reserved.setdefault(v, robot_id)
            if held != robot_id:
                raise ValueError(f"vertex {v} already reserved by robot {held}")

    def clear(self) -> None:
        self.reserved.clear()


def _remaining_path(act: ActiveAction, now: int) -> tuple[int, ...]:
    k = act.action.forward_steps
    if not k:
        return act.swept
    return act.swept[min(now - act.start, k):]


def env_step(
    floor: FloorGraph,
    state: FloorState,
    intents: Sequence[tuple[int, Action]] | Mapping[int, Action],
    order: Sequence[int] | None = None,
    next_goals: Mapping[int, int] | None = None,
    exclusive: bool = True,
    table: ReservationTable | None = None,
) -> tuple[FloorState, list[EventRecord]]:
    """Advance the floor by one tick.

    Robots still executing an action keep their remaining vertices reserved.
    Idle robots hold their current vertex and are then processed in
    ``order`` (ascending id by default): each tries to reserve the rest of
    its swept path and executes ``wait`` instead if any vertex is taken.
    Idle robots without an intent wait. ``next_goals`` supplies the goal a
    robot adopts when a load/unload started this tick completes.

    Returns the next state and the events started at this tick.
    """
    now = int(round(state.time_s))
    by_id = {r.robot_id: r for r in state.robots}
    intent_map: dict[int, Action] = {}
    items = intents.items() if isinstance(intents, Mapping) else intents
    for rid, a in items:
        if rid not in by_id:
            raise UnknownRobot(rid)
        if rid in intent_map:
            raise ValueError(f"duplicate intent for robot {rid}")
        intent_map[rid] = Action(a)
    active = {a.robot_id: a for a in state.active}
    for rid in intent_map:
        if rid in active:
            raise RobotBusy(rid)
    next_goals = next_goals or {}

    table = table if table is not None else ReservationTable()
    table.clear()
    if exclusive:
        for rid in sorted(by_id):
            if rid in active:
                table.reserve(rid, _remaining_path(active[rid], now))
            else:
                table.reserve(rid, (by_id[rid].position,))

    if order is None:
        order = sorted(by_id)
    else:
        order = list(order)
        missing = set(by_id) - set(order)
        if missing or len(order) != len(set(order)) or set(order) - set(by_id):
            raise ValueError("arbitration order must list every robot exactly once")

    events: list[EventRecord] = []
    for rid in order:
        if rid in active:
            continue
        pre = by_id[rid]
        a = intent_map.get(rid, Action.WAIT)
        path = swept_vertices(floor, pre, a)  # raises IllegalAction
        if exclusive and table.conflicts(rid, path[1:]):
            a, path = Action.WAIT, [pre.position]
        if exclusive:
            table.reserve(rid, path[1:])
        post = apply_action(floor, pre, a)
        goal = next_goals.get(rid) if a in (Action.LOAD, Action.UNLOAD) else None
        if goal is not None:
            post = replace(post, goal=int(goal))
        active[rid] = ActiveAction(rid, a, now, tuple(path), goal)
        events.append(EventRecord(float(now), rid, a, pre, post, float(a.duration)))
    events.sort(key=lambda e: e.robot_id)
    post_of = {e.robot_id: e.post for e in events}

    # Advance one tick.
    nxt = now + 1
    robots = []
    still_active = []
    completed: list[tuple[int, Action, RobotState]] = []
    for rid in sorted(by_id):
        act = active[rid]
        r = by_id[rid]
        if nxt >= act.end:
            final = post_of.get(rid)
            if final is None:
                final = _completed_state(floor, r, act)
            robots.append(final)
            completed.append((rid, act.action, final))
        else:
            k = act.action.forward_steps
            if k:
                r = replace(r, position=act.swept[nxt - act.start])
            robots.append(r)
            still_active.append(act)

    objects = _advance_objects(state.objects, robots, completed)
    return FloorState(float(nxt), tuple(robots), objects, tuple(still_active)), events


def _completed_state(floor: FloorGraph, r: RobotState, act: ActiveAction) -> RobotState:
    origin = replace(r, position=act.swept[0])
    post = apply_action(floor, origin, act.action)
    if act.next_goal is not None:
        post = replace(post, goal=act.next_goal)
    return post


def _advance_objects(
    objects: Sequence[ObjectState],
    robots: Sequence[RobotState],
    completed: Sequence[tuple[int, Action, RobotState]],
) -> tuple[ObjectState, ...]:
    """Carried objects follow their carrier; loads pick the lowest-id resting
    object at the vertex and unloads return the object to its home vertex."""
    if not objects:
        return tuple(objects)
    objs = {o.object_id: o for o in objects}
    for rid, action, final in completed:
        if action == Action.LOAD:
            resting = [o for o in objs.values() if o.carried_by is None and o.position == final.position]
            if resting:
                o = min(resting, key=lambda o: o.object_id)
                objs[o.object_id] = replace(o, carried_by=rid)
        elif action == Action.UNLOAD:
            for o in list(objs.values()):
                if o.carried_by == rid:
                    home = o.home if o.home is not None else final.position
                    objs[o.object_id] = replace(o, carried_by=None, position=home)
    pos = {r.robot_id: r.position for r in robots}
    out = []
    for oid in sorted(objs):
        o = objs[oid]
        if o.carried_by is not None and o.position != pos[o.carried_by]:
            o = replace(o, position=pos[o.carried_by])
        out.append(o)
    return tuple(out)


__all__ = ["EventRecord", "ReservationTable", "UnknownRobot", "RobotBusy", "IllegalAction", "env_step"]
