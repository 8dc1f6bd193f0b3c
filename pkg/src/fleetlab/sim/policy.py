"""Scripted mission policy used to produce ground-truth fleet behavior."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .._kernels import bfs_distances
from ..floor import Action, FloorGraph, FloorState, Heading, RobotState, rotation_toward


class NoPath(RuntimeError):
    pass


@dataclass
class Mission:
    robot_id: int
    pickup: int
    dropoff: int
    status: str = "to_pickup"  # to_pickup | to_dropoff | done
    blocked_ticks: int = 0

    @property
    def target(self) -> int:
        return self.pickup if self.status == "to_pickup" else self.dropoff


def patience(robot_id: int) -> int:
    """Consecutive waits tolerated before a robot tries to detour."""
    return 2 + robot_id % 3


def _reverse_csr(floor: FloorGraph) -> tuple[np.ndarray, np.ndarray]:
    return floor.cached("reverse_csr", lambda: _build_reverse_csr(floor))


def _build_reverse_csr(floor: FloorGraph) -> tuple[np.ndarray, np.ndarray]:
    preds: list[list[int]] = [[] for _ in range(floor.n_vertices)]
    for u, v in floor.edges:
        preds[v].append(u)
    indptr = np.zeros(floor.n_vertices + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(p) for p in preds])
    indices = np.array([u for p in preds for u in sorted(p)], dtype=np.int64)
    return indptr, indices


def distance_field(floor: FloorGraph, target: int) -> np.ndarray:
    """Directed hop distance from every vertex to ``target`` (-1 if unreachable)."""
    def build():
        indptr, indices = _reverse_csr(floor)
        return bfs_distances(indptr, indices, target)
    return floor.cached(("dist", target), build)


def _priority(heading: Heading) -> tuple[Heading, ...]:
    return (heading, heading.rotate_left(), heading.rotate_right(), heading.rotate_180())


def _toward(heading: Heading, direction: Heading, move: Action) -> Action:
    if direction == heading:
        return move
    return rotation_toward(heading, direction)


def robot_intent(floor: FloorGraph, robot: RobotState, target: int, occupied: set[int],
                 laden_goal: bool, detour: bool = False) -> tuple[Action, bool]:
    """Action for one idle robot and whether it is blocked.

    ``occupied`` holds the current positions of the other robots.
    """
    pos, heading = robot.position, robot.heading
    if pos == target:
        return (Action.UNLOAD if laden_goal else Action.LOAD), False
    dist = distance_field(floor, target)
    if dist[pos] < 0:
        raise NoPath(f"robot {robot.robot_id}: vertex {target} unreachable from {pos}")

    if detour:
        blocked = np.zeros(floor.n_vertices, dtype=np.uint8)
        for v in occupied:
            if v != target:
                blocked[v] = 1
        indptr, indices = _reverse_csr(floor)
        dist2 = bfs_distances(indptr, indices, target, blocked)
        best = None
        for h in _priority(heading):
            nxt = floor.step(pos, h)
            if nxt is None or nxt in occupied or dist2[nxt] < 0:
                continue
            if best is None or dist2[nxt] < best[0]:
                best = (dist2[nxt], h)
        if best is None:
            return Action.WAIT, True
        return _toward(heading, best[1], Action.FORWARD_1), False

    reducing = []
    for h in _priority(heading):
        nxt = floor.step(pos, h)
        if nxt is not None and dist[nxt] == dist[pos] - 1:
            reducing.append(h)
    if reducing[0] != heading:
        return rotation_toward(heading, reducing[0]), False
    k = 0
    cur = pos
    while k < 3:
        nxt = floor.step(cur, heading)
        if nxt is None or nxt in occupied or dist[nxt] != dist[cur] - 1:
            break
        k += 1
        cur = nxt
    if k == 0:
        return Action.WAIT, True
    return Action.forward(k), False


def scripted_policy(
    floor: FloorGraph,
    state: FloorState,
    missions: Mapping[int, Mission],
    seed: int = 0,
) -> list[tuple[int, Action]]:
    """Intents for every idle robot.

    Robots follow shortest directed paths, preferring to keep their heading,
    moving up to three cells when the straight run is free. They load at the
    pickup, unload at the dropoff and wait when the next cell is occupied.
    After ``patience(robot_id)`` consecutive waits a robot steps around the
    occupied cells instead. The policy is deterministic; ``seed`` is accepted
    for interface symmetry with stochastic policies.
    """
    busy = state.busy_ids()
    positions = {r.robot_id: r.position for r in state.robots}
    intents = []
    for r in sorted(state.robots, key=lambda r: r.robot_id):
        if r.robot_id in busy:
            continue
        m = missions.get(r.robot_id)
        if m is None:
            raise KeyError(f"robot {r.robot_id} has no mission")
        occupied = {p for rid, p in positions.items() if rid != r.robot_id}
        detour = m.blocked_ticks >= patience(r.robot_id)
        a, _ = robot_intent(floor, r, m.target, occupied, m.status == "to_dropoff", detour)
        intents.append((r.robot_id, a))
    return intents
