"""Episode event logs, their JSON Lines format and derived views."""

from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path


from ..floor import Action, ActiveAction, FloorGraph, FloorState, ObjectState, RobotState, swept_vertices
from .env import EventRecord, _advance_objects

HEADER_KEYS = ("floor_hash", "seed", "duration_s", "snapshots_hz")


def _encode(obj) -> str:
    """Compact JSON with every float printed to three decimals."""
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            raise ValueError("non-finite value in episode record")
        return f"{obj:.3f}"
    if isinstance(obj, int):
        return str(obj)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def _object_dict(o: ObjectState) -> dict:
    d = o.to_dict()
    d["home"] = o.home
    return d


def _snapshot_dict(s: FloorState) -> dict:
    return {
        "time_s": float(s.time_s),
        "robots": [r.to_dict() for r in s.robots],
        "objects": [_object_dict(o) for o in s.objects],
    }


def _snapshot_from(d: dict) -> FloorState:
    robots = tuple(RobotState.from_dict(r) for r in d["robots"])
    objects = tuple(ObjectState.from_dict(o, o.get("home")) for o in d["objects"])
    return FloorState(float(d["time_s"]), robots, objects)


@dataclass
class Episode:
    floor_hash: str
    seed: int
    duration_s: float
    events: list[EventRecord] = field(default_factory=list)
    snapshots: list[FloorState] = field(default_factory=list)
    snapshots_hz: int = 1
    meta: dict = field(default_factory=dict)

    # -- serialization -------------------------------------------------
    def header(self) -> dict:
        h = {"floor_hash": self.floor_hash, "seed": int(self.seed),
             "duration_s": float(self.duration_s), "snapshots_hz": int(self.snapshots_hz)}
        for k in sorted(self.meta):
            h[k] = self.meta[k]
        return h

    def lines(self):
        yield _encode(self.header())
        ev_by_t = defaultdict(list)
        for e in self.events:
            ev_by_t[int(round(e.time_s))].append(e)
        emitted = set()
        first = int(round(self.snapshots[0].time_s)) if self.snapshots else None
        if first is not None:
            for t in sorted(t for t in ev_by_t if t < first):
                for e in ev_by_t[t]:
                    yield _encode({"ev": e.to_dict()})
                emitted.add(t)
        for snap in self.snapshots:
            t = int(round(snap.time_s))
            yield _encode({"snap": _snapshot_dict(snap)})
            for e in ev_by_t.get(t, ()):
                yield _encode({"ev": e.to_dict()})
            emitted.add(t)
        for t in sorted(set(ev_by_t) - emitted):
            for e in ev_by_t[t]:
                yield _encode({"ev": e.to_dict()})

    def to_jsonl(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()

    @classmethod
    def from_lines(cls, lines) -> Episode:
        it = iter(lines)
        header = json.loads(next(it))
        ep = cls(header["floor_hash"], int(header["seed"]), float(header["duration_s"]),
                 snapshots_hz=int(header.get("snapshots_hz", 1)),
                 meta={k: v for k, v in header.items() if k not in HEADER_KEYS})
        for line in it:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "ev" in rec:
                ep.events.append(EventRecord.from_dict(rec["ev"]))
            elif "snap" in rec:
                ep.snapshots.append(_snapshot_from(rec["snap"]))
            else:
                raise ValueError(f"unknown episode record {sorted(rec)}")
        ep.events.sort(key=lambda e: (e.time_s, e.robot_id))
        return ep

    @classmethod
    def load(cls, path) -> Episode:
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)

    # -- views ------------------------------------------------------------
    @property
    def t_start(self) -> int:
        return int(round(self.snapshots[0].time_s)) if self.snapshots else 0

    @property
    def t_end(self) -> int:
        return int(round(self.snapshots[-1].time_s)) if self.snapshots else 0

    @property
    def robot_ids(self) -> list[int]:
        if self.snapshots:
            return sorted(r.robot_id for r in self.snapshots[0].robots)
        return sorted({e.robot_id for e in self.events})

    def snapshot_at(self, t: int) -> FloorState:
        i = int(round(t)) - self.t_start
        if not 0 <= i < len(self.snapshots):
            raise IndexError(f"no snapshot at t={t}")
        return self.snapshots[i]

    def events_by_robot(self) -> dict[int, list[EventRecord]]:
        out: dict[int, list[EventRecord]] = defaultdict(list)
        for e in self.events:
            out[e.robot_id].append(e)
        return dict(out)

    def active_at(self, floor: FloorGraph, t: int) -> tuple[ActiveAction, ...]:
        """Actions started before ``t`` and still running at ``t``."""
        acts = [active_from_event(floor, e) for e in self.events if e.time_s < t < e.end_s]
        return tuple(sorted(acts, key=lambda a: a.robot_id))

    def state_at(self, floor: FloorGraph, t: int) -> FloorState:
        """Snapshot at ``t`` including in-progress actions."""
        return replace(self.snapshot_at(t), active=self.active_at(floor, t))

    def goal_streams(self) -> dict[int, list[int]]:
        """Per robot: its goal at the first snapshot then every goal it was assigned."""
        streams: dict[int, list[int]] = {}
        if self.snapshots:
            for r in self.snapshots[0].robots:
                streams[r.robot_id] = [r.goal]
        for e in self.events:
            if e.action in (Action.LOAD, Action.UNLOAD):
                s = streams.setdefault(e.robot_id, [e.pre.goal])
                s.append(e.post.goal)
        return streams

    def window(self, t0: int, t1: int) -> Episode:
        """Sub-episode covering ``[t0, t1]``; keeps actions overlapping the window."""
        snaps = [s for s in self.snapshots if t0 <= s.time_s <= t1]
        events = [e for e in self.events if e.time_s < t1 and e.end_s > t0]
        meta = dict(self.meta)
        meta["t_start"] = int(t0)
        return Episode(self.floor_hash, self.seed, float(t1 - t0), events, snaps, self.snapshots_hz, meta)


def active_from_event(floor: FloorGraph, e: EventRecord) -> ActiveAction:
    goal = e.post.goal if e.action in (Action.LOAD, Action.UNLOAD) else None
    return ActiveAction(e.robot_id, e.action, int(round(e.time_s)),
                        tuple(swept_vertices(floor, e.pre, e.action)), goal)


def reconstruct_snapshots(floor: FloorGraph, episode: Episode) -> list[FloorState]:
    """Rebuild every per-tick snapshot from the first one plus the event log."""
    if not episode.snapshots:
        return []
    first = episode.snapshots[0]
    by_robot = episode.events_by_robot()
    paths = {}
    for rid, evs in by_robot.items():
        for e in evs:
            paths[id(e)] = swept_vertices(floor, e.pre, e.action)
    ends = defaultdict(list)
    for e in episode.events:
        ends[int(round(e.end_s))].append(e)
    out = [replace(first, active=())]
    objects = first.objects
    t0 = episode.t_start
    for t in range(t0 + 1, episode.t_end + 1):
        robots = []
        for r0 in first.robots:
            state = r0
            for e in by_robot.get(r0.robot_id, ()):
                start, end = int(round(e.time_s)), int(round(e.end_s))
                if end <= t:
                    state = e.post
                elif start <= t:
                    state = e.pre
                    if e.action.forward_steps:
                        state = replace(state, position=paths[id(e)][t - start])
                    break
                else:
                    break
            robots.append(state)
        done = [(e.robot_id, e.action, e.post) for e in sorted(ends.get(t, ()), key=lambda e: e.robot_id)]
        objects = _advance_objects(objects, robots, done)
        out.append(FloorState(float(t), tuple(robots), objects))
    return out


def load_episode(path) -> Episode:
    return Episode.load(Path(path))
