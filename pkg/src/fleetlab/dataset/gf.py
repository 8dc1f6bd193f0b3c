"""Whole-floor spatiotemporal graphs and their multi-task targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..floor import VERTEX_KINDS, Action, FloorGraph, FloorState, Heading
from ..sim.episode import Episode

NODE_DIM = len(VERTEX_KINDS) + 2 + 1 + 4 + 1 + 2
EDGE_DIM = 4
DYNAMIC = slice(len(VERTEX_KINDS) + 2, NODE_DIM)


class WindowOutOfRange(ValueError):
    pass


@dataclass
class SpatioTemporalGraph:
    """The floor replicated over ``T`` ticks; node index is ``t * M + v``.

    ``edge_index`` rows are (source, destination); spatial edges come first.
    ``node_ids`` holds the occupant class per node (robot_id + 1, 0 = empty).
    """

    node_features: np.ndarray
    node_ids: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray
    n_spatial: int
    T: int
    M: int

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def spatial_edges(self) -> np.ndarray:
        return self.edge_index[: self.n_spatial]

    @property
    def temporal_edges(self) -> np.ndarray:
        return self.edge_index[self.n_spatial:]

    def last_tick(self) -> slice:
        return slice((self.T - 1) * self.M, self.T * self.M)

    def permuted(self, perm: np.ndarray) -> SpatioTemporalGraph:
        """Relabel nodes so that old node ``perm[k]`` becomes new node ``k``."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return SpatioTemporalGraph(self.node_features[perm], self.node_ids[perm], inv[self.edge_index],
                                   self.edge_features.copy(), self.n_spatial, self.T, self.M)


@dataclass
class GFTargets:
    """Labels for the last-tick nodes (one row per vertex).

    ``move`` is 1 when the occupant translates or turns during the next tick;
    ``direction`` is the heading it is heading toward (-1 when not moving or
    unoccupied). ``ids[v, h]`` is the occupant class of vertex v at tick
    ``t_end + 1 + h``.
    """

    occupied: np.ndarray
    ids: np.ndarray
    move: np.ndarray
    direction: np.ndarray
    heading: np.ndarray
    laden: np.ndarray
    bearing: np.ndarray


def _static_features(floor: FloorGraph) -> np.ndarray:
    def build():
        M = floor.n_vertices
        feats = np.zeros((M, NODE_DIM))
        wx = max(floor.width - 1, 1)
        wy = max(floor.height - 1, 1)
        x0 = min(v.x for v in floor.vertices)
        y0 = min(v.y for v in floor.vertices)
        for v in floor.vertices:
            feats[v.id, VERTEX_KINDS.index(v.kind)] = 1.0
            feats[v.id, len(VERTEX_KINDS)] = (v.x - x0) / wx
            feats[v.id, len(VERTEX_KINDS) + 1] = (v.y - y0) / wy
        return feats
    return floor.cached("gf_static", build)


def bearing(floor: FloorGraph, position: int, goal: int) -> np.ndarray:
    """Unit vector from ``position`` toward ``goal`` (zero at the goal)."""
    px, py = floor.coords(position)
    gx, gy = floor.coords(goal)
    d = np.array([gx - px, gy - py], dtype=float)
    n = np.hypot(d[0], d[1])
    return d / n if n > 0 else d


def _edges(floor: FloorGraph, T: int):
    def build():
        M = floor.n_vertices
        sp = np.array(sorted(floor.edges), dtype=np.int64).reshape(-1, 2)
        xy = np.array([(v.x, v.y) for v in floor.vertices], dtype=float).reshape(-1, 2)
        blocks, feats = [], []
        for t in range(T):
            blocks.append(sp + t * M)
            f = np.zeros((len(sp), EDGE_DIM))
            f[:, :2] = xy[sp[:, 1]] - xy[sp[:, 0]]
            f[:, 2] = 1.0
            feats.append(f)
        n_sp = len(sp) * T
        for t in range(T - 1):
            v = np.arange(M, dtype=np.int64)
            blocks.append(np.stack([v + t * M, v + (t + 1) * M], axis=1))
            f = np.zeros((M, EDGE_DIM))
            f[:, 3] = 1.0
            feats.append(f)
        index = np.concatenate(blocks) if blocks else np.zeros((0, 2), dtype=np.int64)
        return index, np.concatenate(feats) if feats else np.zeros((0, EDGE_DIM)), n_sp
    return floor.cached(("gf_edges", T), build)


def node_features(floor: FloorGraph, state: FloorState) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex features and occupant classes for one tick."""
    feats = _static_features(floor).copy()
    ids = np.zeros(floor.n_vertices, dtype=np.int64)
    base = len(VERTEX_KINDS) + 2
    for r in state.robots:
        row = feats[r.position]
        row[base] = 1.0
        row[base + 1 + int(r.heading)] = 1.0
        row[base + 5] = float(r.laden)
        row[base + 6: base + 8] = bearing(floor, r.position, r.goal)
        ids[r.position] = r.robot_id + 1
    return feats, ids


def build_graph(floor: FloorGraph, states: list[FloorState]) -> SpatioTemporalGraph:
    """Stack per-tick node features over the given consecutive states."""
    T = len(states)
    if T < 1:
        raise WindowOutOfRange("window needs at least one tick")
    feats, ids = zip(*(node_features(floor, s) for s in states))
    index, efeat, n_sp = _edges(floor, T)
    return SpatioTemporalGraph(np.concatenate(feats), np.concatenate(ids), index, efeat, n_sp, T,
                               floor.n_vertices)


def motion_label(action: Action, pre_heading: Heading) -> tuple[int, int]:
    """(move bit, direction class) for the action a robot executes over one tick."""
    if action.forward_steps:
        return 1, int(pre_heading)
    if action == Action.ROTATE_LEFT:
        return 1, int(pre_heading.rotate_left())
    if action == Action.ROTATE_RIGHT:
        return 1, int(pre_heading.rotate_right())
    if action == Action.ROTATE_180:
        return 1, int(pre_heading.rotate_180())
    return 0, -1


def _running_action(episode: Episode, t: int) -> dict[int, tuple[Action, Heading]]:
    out = {}
    for e in episode.events:
        if e.time_s <= t < e.end_s:
            out[e.robot_id] = (e.action, e.pre.heading)
    return out


def build_gf_window(episode: Episode, floor: FloorGraph, t_end: int, T: int = 4,
                    H_id: int = 4) -> tuple[SpatioTemporalGraph, GFTargets]:
    """Graph over ticks ``t_end-T+1 .. t_end`` and labels for the ticks after it."""
    t_end = int(round(t_end))
    if T < 1 or H_id < 1:
        raise WindowOutOfRange("T and H_id must be positive")
    if t_end - T + 1 < episode.t_start or t_end + H_id > episode.t_end:
        raise WindowOutOfRange(f"episode covers [{episode.t_start}, {episode.t_end}], "
                               f"window needs [{t_end - T + 1}, {t_end + H_id}]")
    graph = build_graph(floor, [episode.snapshot_at(t) for t in range(t_end - T + 1, t_end + 1)])
    return graph, window_targets(episode, floor, t_end, H_id)


def window_targets(episode: Episode, floor: FloorGraph, t_end: int, H_id: int) -> GFTargets:
    M = floor.n_vertices
    now = episode.snapshot_at(t_end)
    nxt = episode.snapshot_at(t_end + 1)
    running = _running_action(episode, t_end)
    occupied = np.zeros(M, dtype=bool)
    move = np.zeros(M, dtype=np.int64)
    direction = np.full(M, -1, dtype=np.int64)
    heading = np.full(M, -1, dtype=np.int64)
    laden = np.zeros(M, dtype=np.int64)
    bear = np.zeros((M, 2))
    after = {r.robot_id: r for r in nxt.robots}
    for r in now.robots:
        v = r.position
        occupied[v] = True
        action, pre_h = running.get(r.robot_id, (Action.WAIT, r.heading))
        move[v], direction[v] = motion_label(action, pre_h)
        a = after[r.robot_id]
        heading[v] = int(a.heading)
        laden[v] = int(a.laden)
        bear[v] = bearing(floor, a.position, a.goal)
    ids = np.zeros((M, H_id), dtype=np.int64)
    for h in range(H_id):
        for r in episode.snapshot_at(t_end + 1 + h).robots:
            ids[r.position, h] = r.robot_id + 1
    return GFTargets(occupied, ids, move, direction, heading, laden, bear)


@dataclass
class GFBatch:
    """Several windows merged into one disconnected graph."""

    node_features: np.ndarray
    node_ids: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray
    readout: np.ndarray  # node index of each supervised (last-tick) vertex
    targets: GFTargets | None

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]


def batch_windows(items: list[tuple[SpatioTemporalGraph, GFTargets | None]]) -> GFBatch:
    feats, ids, edges, efeat, readout, tg = [], [], [], [], [], []
    offset = 0
    for g, t in items:
        feats.append(g.node_features)
        ids.append(g.node_ids)
        edges.append(g.edge_index + offset)
        efeat.append(g.edge_features)
        readout.append(np.arange(g.last_tick().start, g.last_tick().stop) + offset)
        tg.append(t)
        offset += g.n_nodes
    targets = None
    if all(t is not None for t in tg):
        targets = GFTargets(*(np.concatenate([getattr(t, f) for t in tg]) for f in GFTargets.__dataclass_fields__))
    return GFBatch(np.concatenate(feats), np.concatenate(ids), np.concatenate(edges),
                   np.concatenate(efeat), np.concatenate(readout), targets)
