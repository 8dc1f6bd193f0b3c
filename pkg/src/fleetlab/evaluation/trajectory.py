"""Per-robot 1 Hz trajectories extracted from episodes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..floor import Action, FloorGraph
from ..sim.episode import Episode


@dataclass
class Trajectory:
    robot_id: int
    times: np.ndarray  # (n,) seconds, 1 s spacing
    samples: np.ndarray  # (n, 4): x_m, y_m, laden, heading index
    load_events: list[float] = field(default_factory=list)
    unload_events: list[float] = field(default_factory=list)

    @property
    def positions(self) -> np.ndarray:
        return self.samples[:, :2]

    @property
    def states(self) -> np.ndarray:
        return self.samples[:, 2:]

    def event_times(self) -> list[float]:
        return sorted(self.load_events + self.unload_events)


def trajectories(episode: Episode, floor: FloorGraph, t0: int | None = None,
                 t1: int | None = None) -> dict[int, Trajectory]:
    """Trajectories over snapshots in ``[t0, t1]``; load/unload times are completion times in ``(t0, t1]``."""
    t0 = episode.t_start if t0 is None else int(t0)
    t1 = episode.t_end if t1 is None else int(t1)
    pitch = floor.cell_pitch_m
    xy = np.array([(v.x, v.y) for v in floor.vertices], dtype=float) * pitch
    snaps = [episode.snapshot_at(t) for t in range(t0, t1 + 1)]
    out = {}
    for rid in episode.robot_ids:
        rows = []
        for s in snaps:
            r = s.robot(rid)
            rows.append((xy[r.position, 0], xy[r.position, 1], float(r.laden), float(int(r.heading))))
        out[rid] = Trajectory(rid, np.arange(t0, t1 + 1, dtype=float), np.array(rows).reshape(-1, 4))
    for e in episode.events:
        if e.action not in (Action.LOAD, Action.UNLOAD) or not (t0 < e.end_s <= t1) or e.robot_id not in out:
            continue
        tr = out[e.robot_id]
        (tr.load_events if e.action == Action.LOAD else tr.unload_events).append(float(e.end_s))
    for tr in out.values():
        tr.load_events.sort()
        tr.unload_events.sort()
    return out
