"""Robot-centric neighborhood observations and training windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..floor import VERTEX_KINDS, Action, FloorGraph, FloorState, RobotState
from ..sim.episode import Episode
from .ego import ego_offsets, rotate_cw

COORD_SCALE = 0.25  # ego-frame offsets are given in units of 4 cells

EGO_DIM = 10
ROBOT_DIM = 10
OBJECT_DIM = 5
VERTEX_DIM = 3 + len(VERTEX_KINDS)

DESK_PRESET = {"K": 5, "K_r": 6, "K_p": 8, "K_x": 12}
PAPER_PRESET = {"K": 5, "K_r": 30, "K_p": 100, "K_x": 100}


@dataclass
class NeighborhoodObs:
    """One robot's ego-frame view at one decision time.

    Feature rows past the available neighbor count are zero and masked.
    ``robot_ids``/``object_ids`` name the occupants of the valid slots.
    """

    ego: np.ndarray
    robots: np.ndarray
    robot_mask: np.ndarray
    objects: np.ndarray
    object_mask: np.ndarray
    vertices: np.ndarray
    vertex_mask: np.ndarray
    robot_ids: tuple[int, ...] = ()
    object_ids: tuple[int, ...] = ()

    def same_features(self, other: NeighborhoodObs) -> bool:
        pairs = [(self.ego, other.ego), (self.robots, other.robots), (self.robot_mask, other.robot_mask),
                 (self.objects, other.objects), (self.object_mask, other.object_mask),
                 (self.vertices, other.vertices), (self.vertex_mask, other.vertex_mask)]
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)


@dataclass
class RCSample:
    robot_id: int
    time_s: float
    observations: list[NeighborhoodObs]  # K+1 states, oldest first
    actions: list[Action]  # K actions between them
    target: Action

    def to_dict(self) -> dict:
        def obs(o: NeighborhoodObs) -> dict:
            return {"ego": o.ego.tolist(), "robots": o.robots.tolist(), "robot_mask": o.robot_mask.tolist(),
                    "objects": o.objects.tolist(), "object_mask": o.object_mask.tolist(),
                    "vertices": o.vertices.tolist(), "vertex_mask": o.vertex_mask.tolist()}
        return {"robot_id": int(self.robot_id), "time_s": round(float(self.time_s), 3),
                "observations": [obs(o) for o in self.observations],
                "actions": [a.label for a in self.actions], "target": self.target.label}


def _floor_arrays(floor: FloorGraph):
    def build():
        xs = np.array([v.x for v in floor.vertices], dtype=np.int64)
        ys = np.array([v.y for v in floor.vertices], dtype=np.int64)
        kinds = np.zeros((floor.n_vertices, len(VERTEX_KINDS)))
        for v in floor.vertices:
            kinds[v.id, VERTEX_KINDS.index(v.kind)] = 1.0
        return xs, ys, kinds
    return floor.cached("rc_arrays", build)


def _sign(v: int) -> float:
    return float((v > 0) - (v < 0))


def observe(floor: FloorGraph, state: FloorState, robot_id: int, K_r: int, K_p: int, K_x: int) -> NeighborhoodObs:
    """Build the ego-frame neighborhood of ``robot_id`` in ``state``."""
    xs, ys, kinds = _floor_arrays(floor)
    ego = state.robot(robot_id)
    exy = (int(xs[ego.position]), int(ys[ego.position]))
    h = int(ego.heading)

    gx, gy = rotate_cw(int(xs[ego.goal]) - exy[0], int(ys[ego.goal]) - exy[1], h)
    ego_feat = np.array([
        gx * COORD_SCALE, gy * COORD_SCALE, _sign(gx), _sign(gy),
        float(gx == 0), float(gy == 0), min(max(gx, 0), 3) / 3.0,
        (abs(gx) + abs(gy)) * COORD_SCALE, float(gx == 0 and gy == 0), float(ego.laden),
    ])

    # neighbor robots: nearest by squared grid distance, ties by id
    others = [r for r in state.robots if r.robot_id != robot_id]
    robots = np.zeros((K_r, ROBOT_DIM))
    rmask = np.zeros(K_r, dtype=bool)
    chosen_r: list[RobotState] = []
    if others and K_r:
        ox = np.array([xs[r.position] for r in others])
        oy = np.array([ys[r.position] for r in others])
        rx, ry = ego_offsets(exy, ego.heading, ox, oy)
        d2 = rx * rx + ry * ry
        ids = np.array([r.robot_id for r in others])
        order = np.lexsort((ids, d2))[:K_r]
        for slot, i in enumerate(order):
            r = others[i]
            chosen_r.append(r)
            rel_h = (int(r.heading) - h) % 4
            ggx, ggy = rotate_cw(int(xs[r.goal]) - exy[0], int(ys[r.goal]) - exy[1], h)
            row = robots[slot]
            row[0], row[1] = rx[i] * COORD_SCALE, ry[i] * COORD_SCALE
            row[2 + rel_h] = 1.0
            row[6] = float(r.laden)
            row[7], row[8] = ggx * COORD_SCALE, ggy * COORD_SCALE
            row[9] = np.sqrt(d2[i]) * COORD_SCALE
            rmask[slot] = True

    objects = np.zeros((K_p, OBJECT_DIM))
    omask = np.zeros(K_p, dtype=bool)
    chosen_o: list[int] = []
    if state.objects and K_p:
        ox = np.array([xs[o.position] for o in state.objects])
        oy = np.array([ys[o.position] for o in state.objects])
        rx, ry = ego_offsets(exy, ego.heading, ox, oy)
        d2 = rx * rx + ry * ry
        ids = np.array([o.object_id for o in state.objects])
        order = np.lexsort((ids, d2))[:K_p]
        for slot, i in enumerate(order):
            o = state.objects[i]
            chosen_o.append(o.object_id)
            row = objects[slot]
            row[0], row[1] = rx[i] * COORD_SCALE, ry[i] * COORD_SCALE
            row[2 if o.kind == "pod" else 3] = 1.0
            row[4] = float(o.carried_by is not None)
            omask[slot] = True

    vertices = np.zeros((K_x, VERTEX_DIM))
    vmask = np.zeros(K_x, dtype=bool)
    if K_x:
        rx, ry = ego_offsets(exy, ego.heading, xs, ys)
        d2 = rx * rx + ry * ry
        # tie-break on ego-frame coordinates so the choice is rotation invariant
        order = np.lexsort((ry, rx, d2))[:K_x]
        n = len(order)
        vertices[:n, 0] = rx[order] * COORD_SCALE
        vertices[:n, 1] = ry[order] * COORD_SCALE
        vertices[:n, 2] = (order == ego.goal)
        vertices[:n, 3:] = kinds[order]
        vmask[:n] = True

    return NeighborhoodObs(ego_feat, robots, rmask, objects, omask, vertices, vmask,
                           tuple(r.robot_id for r in chosen_r), tuple(chosen_o))


def build_rc_samples(episode: Episode, floor: FloorGraph, K: int = 5, K_r: int = 6, K_p: int = 8,
                     K_x: int = 12) -> list[RCSample]:
    """One sample per robot event with at least ``K`` predecessors."""
    if K < 0:
        raise ValueError("K must be non-negative")
    samples = []
    for rid, evs in sorted(episode.events_by_robot().items()):
        if len(evs) <= K:
            continue
        obs_cache: dict[int, NeighborhoodObs] = {}

        def obs(j):
            if j not in obs_cache:
                t = int(round(evs[j].time_s))
                obs_cache[j] = observe(floor, episode.snapshot_at(t), rid, K_r, K_p, K_x)
            return obs_cache[j]

        for j in range(K, len(evs)):
            window = [obs(i) for i in range(j - K, j + 1)]
            samples.append(RCSample(rid, evs[j].time_s, window,
                                    [evs[i].action for i in range(j - K, j)], evs[j].action))
    return samples


@dataclass
class RCBatch:
    """Stacked arrays for a list of samples (leading dims: batch, window)."""

    ego: np.ndarray
    robots: np.ndarray
    robot_mask: np.ndarray
    objects: np.ndarray
    object_mask: np.ndarray
    vertices: np.ndarray
    vertex_mask: np.ndarray
    actions: np.ndarray
    step_mask: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return self.ego.shape[0]

    def take(self, idx) -> RCBatch:
        return RCBatch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    @classmethod
    def concat(cls, batches) -> RCBatch:
        batches = [b for b in batches if len(b)]
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in cls.__dataclass_fields__))


def stack_windows(windows, K: int) -> RCBatch:
    """Stack ``(observations, actions, target)`` windows, left-padding short ones.

    ``step_mask`` marks which of the ``K+1`` window steps hold real data.
    Targets may be None (inference), stored as -1.
    """
    windows = list(windows)
    n = len(windows)
    probe = windows[0][0][-1]
    K_r, K_p, K_x = len(probe.robot_mask), len(probe.object_mask), len(probe.vertex_mask)
    W = K + 1
    ego = np.zeros((n, W, EGO_DIM))
    robots = np.zeros((n, W, K_r, ROBOT_DIM))
    rmask = np.zeros((n, W, K_r), dtype=bool)
    objects = np.zeros((n, W, K_p, OBJECT_DIM))
    omask = np.zeros((n, W, K_p), dtype=bool)
    verts = np.zeros((n, W, K_x, VERTEX_DIM))
    vmask = np.zeros((n, W, K_x), dtype=bool)
    actions = np.full((n, K), int(Action.WAIT), dtype=np.int64)
    step_mask = np.zeros((n, W), dtype=bool)
    target = np.full(n, -1, dtype=np.int64)
    for b, (obs_list, acts, tgt) in enumerate(windows):
        if len(obs_list) > W or len(acts) != len(obs_list) - 1:
            raise ValueError("window must hold at most K+1 observations and one action between each")
        off = W - len(obs_list)
        for j, o in enumerate(obs_list):
            s = off + j
            ego[b, s] = o.ego
            robots[b, s], rmask[b, s] = o.robots, o.robot_mask
            objects[b, s], omask[b, s] = o.objects, o.object_mask
            verts[b, s], vmask[b, s] = o.vertices, o.vertex_mask
            step_mask[b, s] = True
        for j, a in enumerate(acts):
            actions[b, off + j] = int(a)
        if tgt is not None:
            target[b] = int(tgt)
    return RCBatch(ego, robots, rmask, objects, omask, verts, vmask, actions, step_mask, target)


def stack_samples(samples: list[RCSample], K: int) -> RCBatch:
    return stack_windows(((s.observations, s.actions, s.target) for s in samples), K)


@dataclass
class RCTable:
    """Deduplicated observations plus windows that index into them.

    ``windows[i, s]`` is the observation row for step ``s`` of sample ``i``
    (-1 marks left padding). Gathering a subset yields an :class:`RCBatch`.
    """

    ego: np.ndarray
    robots: np.ndarray
    robot_mask: np.ndarray
    objects: np.ndarray
    object_mask: np.ndarray
    vertices: np.ndarray
    vertex_mask: np.ndarray
    windows: np.ndarray
    actions: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return self.windows.shape[0]

    def batch(self, idx) -> RCBatch:
        idx = np.asarray(idx, dtype=np.int64)
        w = self.windows[idx]
        valid = w >= 0
        safe = np.where(valid, w, 0)

        def gather(a):
            out = a[safe]
            out[~valid] = 0
            return out

        return RCBatch(gather(self.ego), gather(self.robots), gather(self.robot_mask), gather(self.objects),
                       gather(self.object_mask), gather(self.vertices), gather(self.vertex_mask),
                       self.actions[idx], valid, self.target[idx])

    @classmethod
    def concat(cls, tables) -> RCTable:
        tables = [t for t in tables if len(t)]
        if not tables:
            raise ValueError("no samples")
        shifted = []
        offset = 0
        for t in tables:
            shifted.append(np.where(t.windows >= 0, t.windows + offset, -1))
            offset += t.ego.shape[0]
        fields = ["ego", "robots", "robot_mask", "objects", "object_mask", "vertices", "vertex_mask"]
        parts = {f: np.concatenate([getattr(t, f) for t in tables]) for f in fields}
        return cls(**parts, windows=np.concatenate(shifted), actions=np.concatenate([t.actions for t in tables]),
                   target=np.concatenate([t.target for t in tables]))


def build_rc_table(episode: Episode, floor: FloorGraph, K: int = 5, K_r: int = 6, K_p: int = 8,
                   K_x: int = 12, dtype=np.float32) -> RCTable:
    """Same samples as :func:`build_rc_samples`, stored compactly."""
    obs: list[NeighborhoodObs] = []
    windows, actions, targets = [], [], []
    for rid, evs in sorted(episode.events_by_robot().items()):
        if len(evs) <= K:
            continue
        base = len(obs)
        for e in evs:
            obs.append(observe(floor, episode.snapshot_at(int(round(e.time_s))), rid, K_r, K_p, K_x))
        for j in range(K, len(evs)):
            windows.append(np.arange(base + j - K, base + j + 1))
            actions.append([int(evs[i].action) for i in range(j - K, j)])
            targets.append(int(evs[j].action))
    n = len(obs)
    W = K + 1
    return RCTable(
        np.array([o.ego for o in obs], dtype=dtype).reshape(n, EGO_DIM),
        np.array([o.robots for o in obs], dtype=dtype).reshape(n, K_r, ROBOT_DIM),
        np.array([o.robot_mask for o in obs], dtype=bool).reshape(n, K_r),
        np.array([o.objects for o in obs], dtype=dtype).reshape(n, K_p, OBJECT_DIM),
        np.array([o.object_mask for o in obs], dtype=bool).reshape(n, K_p),
        np.array([o.vertices for o in obs], dtype=dtype).reshape(n, K_x, VERTEX_DIM),
        np.array([o.vertex_mask for o in obs], dtype=bool).reshape(n, K_x),
        np.array(windows, dtype=np.int64).reshape(-1, W),
        np.array(actions, dtype=np.int64).reshape(-1, K),
        np.array(targets, dtype=np.int64),
    )
