"""Floor graph, robot/floor state types and the discrete action vocabulary."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, Sequence

VERTEX_KINDS = ("travel", "charging", "storage", "pick", "stow", "pickup", "dropoff")
STORAGE_KINDS = frozenset({"travel", "charging", "storage", "pick", "stow"})
SORTATION_KINDS = frozenset({"travel", "charging", "pickup", "dropoff"})
OBJECT_KINDS = ("pod", "package")


class IllegalAction(ValueError):
    """Raised when an action's kinematic preconditions do not hold."""


class Heading(IntEnum):
    """Quarter-turn heading; values count counterclockwise turns from +x."""

    E = 0
    N = 1
    W = 2
    S = 3

    @property
    def vector(self) -> tuple[int, int]:
        return _HEADING_VECTORS[self]

    def rotate_left(self) -> Heading:
        return Heading((self + 1) % 4)

    def rotate_right(self) -> Heading:
        return Heading((self - 1) % 4)

    def rotate_180(self) -> Heading:
        return Heading((self + 2) % 4)

    @classmethod
    def from_vector(cls, dx: int, dy: int) -> Heading:
        return _VECTOR_HEADINGS[(dx, dy)]


_HEADING_VECTORS = {Heading.E: (1, 0), Heading.N: (0, 1), Heading.W: (-1, 0), Heading.S: (0, -1)}
_VECTOR_HEADINGS = {v: h for h, v in _HEADING_VECTORS.items()}


class Action(IntEnum):
    """Robot action; the integer value is the fixed vocabulary index."""

    FORWARD_1 = 0
    FORWARD_2 = 1
    FORWARD_3 = 2
    ROTATE_LEFT = 3
    ROTATE_RIGHT = 4
    ROTATE_180 = 5
    LOAD = 6
    UNLOAD = 7
    WAIT = 8

    @property
    def forward_steps(self) -> int:
        return self.value + 1 if self.value <= 2 else 0

    @property
    def is_rotation(self) -> bool:
        return Action.ROTATE_LEFT <= self <= Action.ROTATE_180

    @property
    def duration(self) -> int:
        """Whole-tick duration of the action."""
        if self.forward_steps:
            return self.forward_steps
        if self in (Action.LOAD, Action.UNLOAD):
            return 2
        return 1

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> Action:
        return cls[label.upper()]

    @classmethod
    def forward(cls, k: int) -> Action:
        if not 1 <= k <= 3:
            raise ValueError(f"forward step count must be in 1..3, got {k}")
        return cls(k - 1)


N_ACTIONS = len(Action)


@dataclass(frozen=True)
class VertexRecord:
    id: int
    x: int
    y: int
    kind: str = "travel"


@dataclass(frozen=True)
class FloorGraph:
    """Directed grid graph of floor locations.

    Vertices must be stored in id order (``vertices[i].id == i``); the
    adjacency helpers below assume it.
    """

    vertices: tuple[VertexRecord, ...]
    edges: tuple[tuple[int, int], ...]
    cell_pitch_m: float = 1.0
    _coord_index: dict = field(default=None, init=False, repr=False, compare=False)
    _succ: tuple = field(default=None, init=False, repr=False, compare=False)
    _cache: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple((int(u), int(v)) for u, v in self.edges))
        object.__setattr__(self, "_coord_index", {(v.x, v.y): v.id for v in self.vertices})
        succ: list[list[int]] = [[] for _ in self.vertices]
        for u, v in self.edges:
            if 0 <= u < len(succ):
                succ[u].append(v)
        object.__setattr__(self, "_succ", tuple(tuple(sorted(s)) for s in succ))
        object.__setattr__(self, "_cache", {})

    def __hash__(self) -> int:
        return self.cached("hash", lambda: hash((self.vertices, self.edges, self.cell_pitch_m)))

    def cached(self, key, build):
        """Memoize a derived structure on this (immutable) floor."""
        try:
            return self._cache[key]
        except KeyError:
            value = self._cache[key] = build()
            return value

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def width(self) -> int:
        return max(v.x for v in self.vertices) - min(v.x for v in self.vertices) + 1

    @property
    def height(self) -> int:
        return max(v.y for v in self.vertices) - min(v.y for v in self.vertices) + 1

    @property
    def kind(self) -> str:
        kinds = {v.kind for v in self.vertices}
        return "sortation" if kinds & {"pickup", "dropoff"} else "storage"

    def coords(self, vid: int) -> tuple[int, int]:
        v = self.vertices[vid]
        return v.x, v.y

    def vertex_at(self, x: int, y: int) -> int | None:
        return self._coord_index.get((x, y))

    def successors(self, vid: int) -> tuple[int, ...]:
        return self._succ[vid]

    def has_edge(self, u: int, v: int) -> bool:
        return v in self._succ[u]

    def step(self, vid: int, heading: Heading) -> int | None:
        """Neighbor reached by one edge in ``heading``, or None."""
        x, y = self.coords(vid)
        dx, dy = heading.vector
        nxt = self._coord_index.get((x + dx, y + dy))
        if nxt is None or not self.has_edge(vid, nxt):
            return None
        return nxt

    def vertices_of_kind(self, *kinds: str) -> list[int]:
        return [v.id for v in self.vertices if v.kind in kinds]

    def to_dict(self) -> dict:
        return {
            "cell_pitch_m": float(self.cell_pitch_m),
            "vertices": [
                {"id": v.id, "x": v.x, "y": v.y, "kind": v.kind}
                for v in sorted(self.vertices, key=lambda r: r.id)
            ],
            "edges": [list(e) for e in sorted(self.edges)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=False, separators=(",", ":")) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> FloorGraph:
        pitch = float(doc.get("cell_pitch_m", 1.0))
        if not math.isfinite(pitch):
            raise ValueError("cell_pitch_m must be finite")
        verts = sorted(
            (VertexRecord(int(v["id"]), int(v["x"]), int(v["y"]), str(v["kind"])) for v in doc["vertices"]),
            key=lambda r: r.id,
        )
        return cls(tuple(verts), tuple((int(u), int(v)) for u, v in doc["edges"]), pitch)

    @classmethod
    def from_json(cls, text: str) -> FloorGraph:
        return cls.from_dict(json.loads(text, parse_constant=_reject_constant))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> FloorGraph:
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} not permitted in floor files")


def grid_floor(width: int, height: int, kinds: dict[tuple[int, int], str] | None = None,
               cell_pitch_m: float = 1.0) -> FloorGraph:
    """Fully connected 4-neighbor grid with bidirectional edges."""
    kinds = kinds or {}
    verts = []
    for y in range(height):
        for x in range(width):
            verts.append(VertexRecord(len(verts), x, y, kinds.get((x, y), "travel")))
    index = {(v.x, v.y): v.id for v in verts}
    edges = []
    for v in verts:
        for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1)):
            w = index.get((v.x + dx, v.y + dy))
            if w is not None:
                edges.append((v.id, w))
    return FloorGraph(tuple(verts), tuple(sorted(edges)), cell_pitch_m)


@dataclass
class ValidationReport:
    violations: list[tuple[str, tuple]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {name for name, _ in self.violations}

    def __bool__(self) -> bool:
        return self.ok


def validate_floor(floor: FloorGraph) -> ValidationReport:
    """Check the floor invariants; violations are reported, never raised."""
    report = ValidationReport()
    n = floor.n_vertices
    for i, v in enumerate(floor.vertices):
        if v.id != i:
            report.violations.append(("non-dense id", (v.id,)))
        if v.kind not in VERTEX_KINDS:
            report.violations.append(("unknown kind", (v.id, v.kind)))
    seen: dict[tuple[int, int], int] = {}
    for v in floor.vertices:
        if (v.x, v.y) in seen:
            report.violations.append(("duplicate coordinate", (seen[(v.x, v.y)], v.id)))
        seen.setdefault((v.x, v.y), v.id)
    kinds = {v.kind for v in floor.vertices}
    if not (kinds <= STORAGE_KINDS or kinds <= SORTATION_KINDS):
        report.violations.append(("mixed floor kinds", tuple(sorted(kinds))))
    for u, w in floor.edges:
        if not (0 <= u < n and 0 <= w < n):
            report.violations.append(("dangling edge", (u, w)))
            continue
        if u == w:
            report.violations.append(("self-loop", (u, w)))
            continue
        a, b = floor.vertices[u], floor.vertices[w]
        if abs(a.x - b.x) + abs(a.y - b.y) != 1:
            report.violations.append(("non-adjacent edge", (u, w)))
    if not (floor.cell_pitch_m > 0 and math.isfinite(floor.cell_pitch_m)):
        report.violations.append(("bad cell pitch", (floor.cell_pitch_m,)))
    return report


@dataclass(frozen=True)
class RobotState:
    robot_id: int
    position: int
    heading: Heading = Heading.E
    goal: int = 0
    laden: bool = False

    def to_dict(self) -> dict:
        return {"id": self.robot_id, "p": self.position, "h": self.heading.name,
                "g": self.goal, "l": int(self.laden)}

    @classmethod
    def from_dict(cls, d: dict) -> RobotState:
        return cls(int(d["id"]), int(d["p"]), Heading[d["h"]], int(d["g"]), bool(d["l"]))


@dataclass(frozen=True)
class ObjectState:
    object_id: int
    kind: str
    position: int
    carried_by: int | None = None
    home: int | None = None

    def to_dict(self) -> dict:
        return {"id": self.object_id, "k": self.kind, "p": self.position, "c": self.carried_by}

    @classmethod
    def from_dict(cls, d: dict, home: int | None = None) -> ObjectState:
        return cls(int(d["id"]), d["k"], int(d["p"]), d["c"], home)


@dataclass(frozen=True)
class ActiveAction:
    """An accepted multi-tick action still in progress."""

    robot_id: int
    action: Action
    start: int
    swept: tuple[int, ...]
    next_goal: int | None = None

    @property
    def end(self) -> int:
        return self.start + self.action.duration


@dataclass(frozen=True)
class FloorState:
    time_s: float
    robots: tuple[RobotState, ...]
    objects: tuple[ObjectState, ...] = ()
    active: tuple[ActiveAction, ...] = ()

    def robot(self, robot_id: int) -> RobotState:
        for r in self.robots:
            if r.robot_id == robot_id:
                return r
        raise KeyError(robot_id)

    def occupied(self) -> dict[int, int]:
        return {r.position: r.robot_id for r in self.robots}

    def busy_ids(self) -> set[int]:
        return {a.robot_id for a in self.active}

    def dense(self, floor: FloorGraph) -> "list[list[float]]":
        """Dense per-vertex view: occupancy, heading one-hot, laden."""
        rows = [[0.0] * 6 for _ in range(floor.n_vertices)]
        for r in self.robots:
            row = rows[r.position]
            row[0] = 1.0
            row[1 + int(r.heading)] = 1.0
            row[5] = float(r.laden)
        return rows

    def snapshot_dict(self) -> dict:
        return {
            "time_s": _fmt_time(self.time_s),
            "robots": [r.to_dict() for r in self.robots],
            "objects": [o.to_dict() for o in self.objects],
        }


def _fmt_time(t: float) -> float:
    return round(float(t), 3)


def check_floor_state(state: FloorState) -> list[str]:
    problems = []
    ids = [r.robot_id for r in state.robots]
    if len(set(ids)) != len(ids):
        problems.append("duplicate robot ids")
    pos = [r.position for r in state.robots]
    if len(set(pos)) != len(pos):
        problems.append("shared vertex")
    by_id = {r.robot_id: r for r in state.robots}
    for o in state.objects:
        if o.carried_by is not None:
            r = by_id.get(o.carried_by)
            if r is None or not r.laden or r.position != o.position:
                problems.append(f"object {o.object_id} detached from carrier")
    return problems


def swept_vertices(floor: FloorGraph, s: RobotState, a: Action) -> list[int]:
    """Ordered vertices the robot occupies while executing ``a``, origin first."""
    a = Action(a)
    k = a.forward_steps
    if k:
        path = [s.position]
        for _ in range(k):
            nxt = floor.step(path[-1], s.heading)
            if nxt is None:
                raise IllegalAction(f"no {k} consecutive edges heading {s.heading.name} from {s.position}")
            path.append(nxt)
        return path
    if a == Action.LOAD and s.laden:
        raise IllegalAction("already laden")
    if a == Action.UNLOAD and not s.laden:
        raise IllegalAction("not laden")
    return [s.position]


def apply_action(floor: FloorGraph, s: RobotState, a: Action) -> RobotState:
    """Successor state after ``a``; the goal is left unchanged."""
    a = Action(a)
    path = swept_vertices(floor, s, a)
    if a.forward_steps:
        return replace(s, position=path[-1])
    if a == Action.ROTATE_LEFT:
        return replace(s, heading=s.heading.rotate_left())
    if a == Action.ROTATE_RIGHT:
        return replace(s, heading=s.heading.rotate_right())
    if a == Action.ROTATE_180:
        return replace(s, heading=s.heading.rotate_180())
    if a == Action.LOAD:
        return replace(s, laden=True)
    if a == Action.UNLOAD:
        return replace(s, laden=False)
    return s


def is_legal(floor: FloorGraph, s: RobotState, a: Action) -> bool:
    try:
        swept_vertices(floor, s, a)
    except IllegalAction:
        return False
    return True


def legal_actions(floor: FloorGraph, s: RobotState) -> list[Action]:
    return [a for a in Action if is_legal(floor, s, a)]


def rotation_toward(current: Heading, target: Heading) -> Action | None:
    """Single rotation that most reduces angular distance; ties go left."""
    diff = (int(target) - int(current)) % 4
    if diff == 0:
        return None
    if diff == 1:
        return Action.ROTATE_LEFT
    if diff == 3:
        return Action.ROTATE_RIGHT
    return Action.ROTATE_180


def robots_by_id(robots: Iterable[RobotState]) -> dict[int, RobotState]:
    return {r.robot_id: r for r in robots}


def sorted_robots(robots: Sequence[RobotState]) -> tuple[RobotState, ...]:
    return tuple(sorted(robots, key=lambda r: r.robot_id))
