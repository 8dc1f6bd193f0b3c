"""Seeded ground-truth episode generation."""

from __future__ import annotations

import math
from collections import Counter

from ..floor import Action, FloorGraph, FloorState, Heading, ObjectState, RobotState
from ..rng import make_rng
from .env import env_step
from .episode import Episode
from .policy import Mission, scripted_policy


def pickup_kinds(floor: FloorGraph) -> tuple[str, ...]:
    return ("pickup",) if floor.kind == "sortation" else ("storage",)


def dropoff_kinds(floor: FloorGraph) -> tuple[str, ...]:
    return ("dropoff",) if floor.kind == "sortation" else ("pick", "stow")


def initial_objects(floor: FloorGraph, n_robots: int) -> tuple[ObjectState, ...]:
    """Pods on every storage vertex, or stacked packages at pickup stations.

    Pickup stations are stocked with at least ``n_robots + 1`` packages.
    """
    sources = floor.vertices_of_kind(*pickup_kinds(floor))
    if not sources:
        return ()
    kind = "package" if floor.kind == "sortation" else "pod"
    stock = 1 if kind == "pod" else max(1, math.ceil((n_robots + 1) / len(sources)))
    objs = []
    for v in sources:
        for _ in range(stock):
            objs.append(ObjectState(len(objs), kind, v, None, v))
    return tuple(objs)


class MissionQueue:
    """Uniform seeded draws over (pickup, dropoff) pairs with a free object."""

    def __init__(self, floor: FloorGraph, seed: int):
        self.rng = make_rng(seed, "missions")
        self.sources = floor.vertices_of_kind(*pickup_kinds(floor))
        self.sinks = floor.vertices_of_kind(*dropoff_kinds(floor))
        if not self.sources or not self.sinks:
            raise ValueError("floor has no legal (pickup, dropoff) pairs")
        self.claims: Counter = Counter()

    def draw(self, robot_id: int, objects, returning: Counter | None = None) -> Mission:
        """Claim a free object; ``returning`` counts objects whose unload starts
        this tick, by home vertex. They are used only when nothing else is free.
        """
        resting = Counter(o.position for o in objects if o.carried_by is None)
        free = [v for v in self.sources if resting[v] - self.claims[v] > 0]
        if not free and returning:
            resting += returning
            free = [v for v in self.sources if resting[v] - self.claims[v] > 0]
        if not free:
            raise RuntimeError("no free object to assign")
        pickup = free[int(self.rng.integers(len(free)))]
        dropoff = self.sinks[int(self.rng.integers(len(self.sinks)))]
        self.claims[pickup] += 1
        return Mission(robot_id, pickup, dropoff)

    def release(self, vertex: int) -> None:
        self.claims[vertex] -= 1


def spawn_robots(floor: FloorGraph, n_robots: int, seed: int) -> list[int]:
    travel = floor.vertices_of_kind("travel")
    if n_robots > len(travel):
        raise ValueError(f"{n_robots} robots exceed {len(travel)} travel vertices")
    rng = make_rng(seed, "spawn")
    return sorted(int(v) for v in rng.choice(travel, size=n_robots, replace=False)) if n_robots else []


def simulate(floor: FloorGraph, n_robots: int, duration_s: float, seed: int, day: int = 0) -> Episode:
    """Run the scripted fleet for ``duration_s`` one-second ticks.

    Robots spawn unladen, heading east, on distinct travel vertices (robot
    ids assigned in vertex order) and always hold a mission; finished
    missions are replaced from the seeded queue when the unload starts.
    """
    ticks = int(math.floor(duration_s))
    spawn = spawn_robots(floor, n_robots, seed)
    objects = initial_objects(floor, n_robots)
    if n_robots > len(objects):
        raise ValueError(f"{n_robots} robots need at least as many objects; the floor holds {len(objects)}")
    queue = MissionQueue(floor, seed) if n_robots else None
    missions: dict[int, Mission] = {}
    robots = []
    for rid in range(n_robots):
        m = queue.draw(rid, objects)
        missions[rid] = m
        robots.append(RobotState(rid, spawn[rid], Heading.E, m.pickup, False))
    state = FloorState(0.0, tuple(robots), objects)

    episode = Episode(floor.content_hash(), int(seed), float(duration_s),
                      meta={"day": int(day), "n_robots": int(n_robots)})
    pending: dict[int, tuple[int, Action, Mission | None]] = {}
    for t in range(ticks):
        for rid, (end, action, nxt) in list(pending.items()):
            if end == t:
                if action == Action.LOAD:
                    missions[rid].status = "to_dropoff"
                    queue.release(missions[rid].pickup)
                else:
                    missions[rid] = nxt
                del pending[rid]
        episode.snapshots.append(FloorState(state.time_s, state.robots, state.objects))

        intents = scripted_policy(floor, state, missions, seed)
        next_goals = {}
        new_missions = {}
        unloading = {rid for rid, a in intents if a == Action.UNLOAD}
        returning = Counter(o.home for o in state.objects if o.carried_by in unloading and o.home is not None)
        for rid, a in intents:
            if a == Action.LOAD:
                next_goals[rid] = missions[rid].dropoff
            elif a == Action.UNLOAD:
                m = queue.draw(rid, state.objects, returning)
                new_missions[rid] = m
                next_goals[rid] = m.pickup
        state, events = env_step(floor, state, intents, next_goals=next_goals)
        for e in events:
            m = missions[e.robot_id]
            if e.action == Action.WAIT:
                m.blocked_ticks += 1
            elif e.action.forward_steps or e.action in (Action.LOAD, Action.UNLOAD):
                m.blocked_ticks = 0
            if e.action in (Action.LOAD, Action.UNLOAD):
                pending[e.robot_id] = (int(e.end_s), e.action, new_missions.get(e.robot_id))
        episode.events.extend(events)
    if n_robots or ticks:
        episode.snapshots.append(FloorState(state.time_s, state.robots, state.objects))
    return episode
