import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetlab.dataset import (InsufficientData, ManifestEntry, WindowOutOfRange, build_gf_window,
                              build_rc_samples, build_rc_table, observe, split_manifest, stack_samples,
                              to_ego_frame, write_shards)
from fleetlab.dataset.gf import DYNAMIC
from fleetlab.floor import FloorGraph, FloorState, Heading, ObjectState, RobotState, VertexRecord, grid_floor
from fleetlab.sim import generate_floor, simulate

# ------------------------------------------------------------------ ego frame


def test_ego_frame_examples():
    assert to_ego_frame((5, 3), Heading.N, (5, 5))[:2] == (2, 0)
    assert to_ego_frame((4, 4), Heading.E, (4, 4))[:2] == (0, 0)
    assert to_ego_frame((0, 0), Heading.S, (0, 0), Heading.S)[2] == Heading.E
    # a point to the ego's left lands on +y
    assert to_ego_frame((0, 0), Heading.E, (0, 1))[:2] == (0, 1)
    assert to_ego_frame((0, 0), Heading.W, (0, -1))[:2] == (0, 1)


@given(st.integers(-9, 9), st.integers(-9, 9), st.integers(-9, 9), st.integers(-9, 9), st.integers(0, 3))
def test_ego_frame_preserves_distance(ex, ey, px, py, h):
    rx, ry, _ = to_ego_frame((ex, ey), Heading(h), (px, py))
    assert rx * rx + ry * ry == (px - ex) ** 2 + (py - ey) ** 2


# ------------------------------------------------------------------ RC observations

def test_single_robot_has_no_neighbors():
    floor = grid_floor(5, 5)
    state = FloorState(0.0, (RobotState(0, 12, Heading.N, 3),))
    obs = observe(floor, state, 0, K_r=4, K_p=2, K_x=6)
    assert not obs.robot_mask.any() and not obs.robots.any()
    assert obs.vertex_mask.all()


def test_neighbor_tie_break_by_id():
    floor = grid_floor(5, 5)
    ego = RobotState(0, floor.vertex_at(2, 2))
    left = RobotState(9, floor.vertex_at(1, 2))
    right = RobotState(4, floor.vertex_at(3, 2))
    obs = observe(floor, FloorState(0.0, (ego, left, right)), 0, K_r=1, K_p=0, K_x=0)
    assert obs.robot_ids == (4,)
    obs = observe(floor, FloorState(0.0, (ego, right, left)), 0, K_r=3, K_p=0, K_x=0)
    assert obs.robot_ids == (4, 9) and obs.robot_mask.tolist() == [True, True, False]


def test_sample_count_matches_event_log(episode8, floor8):
    K = 5
    samples = build_rc_samples(episode8, floor8, K=K)
    expected = sum(max(0, len(evs) - K) for evs in episode8.events_by_robot().values())
    assert len(samples) == expected > 0
    for s in samples:
        assert len(s.observations) == K + 1 and len(s.actions) == K
    table = build_rc_table(episode8, floor8, K=K, dtype=np.float64)
    assert len(table) == expected
    a, b = table.batch(np.arange(len(table))), stack_samples(samples, K)
    for f in ("ego", "robots", "robot_mask", "objects", "vertices", "actions", "target", "step_mask"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_samples_follow_one_robots_events(episode8, floor8):
    by_robot = episode8.events_by_robot()
    for s in build_rc_samples(episode8, floor8, K=3)[:40]:
        evs = by_robot[s.robot_id]
        j = next(i for i, e in enumerate(evs) if e.time_s == s.time_s)
        assert s.target == evs[j].action
        assert s.actions == [e.action for e in evs[j - 3:j]]


def test_short_episode_yields_no_samples(floor8):
    ep = simulate(floor8, 2, 2, 0)
    assert build_rc_samples(ep, floor8, K=5) == []


def _transform_floor(floor: FloorGraph, quarter_turns: int, shift: tuple[int, int]) -> FloorGraph:
    def move(x, y):
        for _ in range(quarter_turns % 4):
            x, y = -y, x
        return x + shift[0], y + shift[1]
    verts = tuple(VertexRecord(v.id, *move(v.x, v.y), v.kind) for v in floor.vertices)
    return FloorGraph(verts, floor.edges, floor.cell_pitch_m)


def _turn_state(state: FloorState, quarter_turns: int) -> FloorState:
    robots = tuple(RobotState(r.robot_id, r.position, Heading((r.heading + quarter_turns) % 4), r.goal, r.laden)
                   for r in state.robots)
    return FloorState(state.time_s, robots, state.objects)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(-20, 20), st.integers(-20, 20), st.integers(0, 400))
def test_observation_invariance(turns, sx, sy, tick):
    floor = _FLOOR
    state = _EPISODE.snapshot_at(tick % 100)
    moved = _transform_floor(floor, turns, (sx, sy))
    turned = _turn_state(state, turns)
    for r in state.robots:
        a = observe(floor, state, r.robot_id, 4, 6, 10)
        b = observe(moved, turned, r.robot_id, 4, 6, 10)
        assert a.same_features(b)
        assert a.robot_ids == b.robot_ids and a.object_ids == b.object_ids


# ------------------------------------------------------------------ GF windows

def test_gf_window_sizes(floor8, episode8):
    assert floor8.n_vertices == 64
    g, t = build_gf_window(episode8, floor8, t_end=10, T=4)
    assert g.n_nodes == 256
    assert len(g.temporal_edges) == 192
    assert len(g.spatial_edges) == 4 * len(floor8.edges)
    te = g.temporal_edges
    assert np.all(te[:, 1] - te[:, 0] == 64)
    assert t.ids.shape == (64, 4)


def test_gf_empty_floor_is_zero(floor8):
    ep = simulate(floor8, 0, 20, 0)
    g, t = build_gf_window(ep, floor8, t_end=8, T=4)
    assert not g.node_features[:, DYNAMIC].any()
    assert not g.node_ids.any() and not t.occupied.any()


def test_gf_window_out_of_range(floor8, episode8):
    with pytest.raises(WindowOutOfRange):
        build_gf_window(episode8, floor8, t_end=1, T=4)
    with pytest.raises(WindowOutOfRange):
        build_gf_window(episode8, floor8, t_end=episode8.t_end - 2, T=4, H_id=4)


def test_gf_occupancy_matches_snapshots(floor8, episode8):
    g, _ = build_gf_window(episode8, floor8, t_end=50, T=4)
    occ = g.node_features[:, DYNAMIC.start].reshape(4, 64)
    for k, t in enumerate(range(47, 51)):
        expect = np.zeros(64)
        for r in episode8.snapshot_at(t).robots:
            expect[r.position] = 1
        np.testing.assert_array_equal(occ[k], expect)


def test_gf_move_labels_match_event_log(floor8, episode8):
    checked = 0
    for t_end in range(4, 100, 7):
        _, tg = build_gf_window(episode8, floor8, t_end=t_end, T=4)
        now, nxt = episode8.snapshot_at(t_end), episode8.snapshot_at(t_end + 1)
        for r in now.robots:
            a = nxt.robot(r.robot_id)
            dx = np.subtract(floor8.coords(a.position), floor8.coords(r.position))
            moved = bool(dx.any()) or a.heading != r.heading
            assert tg.move[r.position] == int(moved)
            if dx.any():
                assert tg.direction[r.position] == int(Heading.from_vector(*np.sign(dx)))
            elif moved:
                assert tg.direction[r.position] == int(a.heading)
            checked += 1
    assert checked > 20


# ------------------------------------------------------------------ manifests

def _entries(n_floors=7, n_days=7, per=3):
    return [ManifestEntry(f"f{f}/d{d}/e{k}", f"f{f}", d) for f in range(n_floors) for d in range(n_days)
            for k in range(per)]


def test_split_hygiene_over_many_seeds():
    entries = _entries()
    for seed in range(100):
        m = split_manifest(entries, 2, 3, seed)
        test = m.floor_days("test")
        assert test and not (test & m.floor_days("train")) and not (test & m.floor_days("val"))
        assert len(m.entries) == len(entries)
        assert len({f for f, _ in test}) == 2 and len({d for _, d in test}) == 3


def test_seven_floors_by_seven_days_held_out():
    m = split_manifest(_entries(n_floors=10, n_days=10, per=1), 7, 7, 0)
    assert len(m.floor_days("test")) == 49
    rest = len(m.split("train")) + len(m.split("val"))
    assert len(m.split("val")) == round(0.05 * rest)


def test_no_test_floors_keeps_everything():
    m = split_manifest(_entries(), 0, 3, 1)
    assert m.split("test") == []
    assert len(m.split("train")) + len(m.split("val")) == len(_entries())


def test_insufficient_data():
    with pytest.raises(InsufficientData):
        split_manifest(_entries(n_floors=2), 3, 1, 0)
    with pytest.raises(InsufficientData):
        split_manifest(_entries(n_floors=1, n_days=1), 1, 1, 0)


def test_manifest_roundtrip(tmp_path):
    m = split_manifest(_entries(), 1, 1, 3)
    m.save(tmp_path / "manifest.json")
    again = type(m).load(tmp_path / "manifest.json")
    assert again.entries == m.entries


def test_shards_respect_size_and_order(tmp_path):
    records = [{"i": i, "pad": "x" * (i % 17)} for i in range(500)]
    paths = write_shards(records, tmp_path, max_bytes=2048)
    assert [p.name for p in paths] == [f"shard-{i:05d}.jsonl" for i in range(len(paths))]
    assert len(paths) > 1 and all(p.stat().st_size <= 2048 for p in paths)
    back = [json.loads(line) for p in paths for line in p.read_text().splitlines()]
    assert back == records


def test_rc_sample_serializes(episode8, floor8):
    s = build_rc_samples(episode8, floor8, K=2)[0]
    doc = json.loads(json.dumps(s.to_dict()))
    assert doc["target"] == s.target.label and len(doc["observations"]) == 3


def test_objects_enter_observation():
    floor = grid_floor(4, 4)
    state = FloorState(0.0, (RobotState(0, 0),), (ObjectState(0, "pod", 5), ObjectState(1, "pod", 15)))
    obs = observe(floor, state, 0, 0, 1, 0)
    assert obs.object_ids == (0,) and obs.object_mask.tolist() == [True]


_FLOOR = generate_floor("storage", 9, 7, 5)
_EPISODE = simulate(_FLOOR, 5, 100, 4)
