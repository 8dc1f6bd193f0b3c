import math

import numpy as np
import pytest
import torch

from fleetlab.dataset import build_gf_window, build_graph
from fleetlab.dataset.gf import EDGE_DIM, NODE_DIM, GFTargets
from fleetlab.floor import Action, FloorState, Heading, RobotState, grid_floor
from fleetlab.models.common import TrainConfig
from fleetlab.models.gf import (GFConfig, GFDecision, GFTable, NeighborTable, compose_action, gf_apply, gf_decode,
                                gf_decisions, gf_edge_attention, gf_encode, gf_forward, gf_loss, gf_loss_terms,
                                gf_message_pass, init_gf, neighbor_attention, normalize_bearing, sorted_sum, train_gf)
from fleetlab.sim import simulate

F64 = torch.float64
TINY = GFConfig(d_emb=8, n_blocks=1, n_heads=2, N_max=8)


@pytest.fixture(scope="module")
def small_window():
    floor = grid_floor(4, 3)
    robots = (RobotState(0, floor.vertex_at(0, 0), Heading.E, floor.vertex_at(3, 2)),
              RobotState(1, floor.vertex_at(2, 1), Heading.N, floor.vertex_at(0, 2), True))
    states = [FloorState(float(t), robots) for t in range(2)]
    return floor, build_graph(floor, states)


# ------------------------------------------------------------------ encoder

def test_token_shapes(small_window):
    _, g = small_window
    store = init_gf(TINY, 0)
    x, e = gf_encode(store, TINY, g.node_features, g.node_ids, g.edge_features)
    assert x.shape == (g.n_nodes, 8) and e.shape == (len(g.edge_index), 8)


def test_identical_raw_features_identical_tokens():
    store = init_gf(TINY, 0)
    feats = np.tile(np.random.default_rng(0).normal(size=NODE_DIM), (3, 1))
    x, _ = gf_encode(store, TINY, feats, np.array([2, 2, 2]), np.zeros((0, EDGE_DIM)))
    assert torch.equal(x[0], x[1]) and torch.equal(x[1], x[2])


def test_edge_type_changes_token():
    store = init_gf(TINY, 0)
    spatial = np.array([[1.0, 0.0, 1.0, 0.0]])
    temporal = np.array([[1.0, 0.0, 0.0, 1.0]])
    _, e = gf_encode(store, TINY, np.zeros((1, NODE_DIM)), np.zeros(1), np.concatenate([spatial, temporal]))
    assert not torch.equal(e[0], e[1])


# ------------------------------------------------------------------ message passing

def test_no_in_edges_gives_zero_aggregate():
    table = NeighborTable.build(np.array([[0, 1]]), 3)
    agg = sorted_sum(torch.ones(1, 4), table)
    assert agg[1].tolist() == [1.0] * 4
    assert not agg[0].any() and not agg[2].any()


def test_aggregation_ignores_edge_order(rng):
    edges = rng.integers(0, 6, size=(30, 2))
    vals = torch.tensor(rng.normal(size=(30, 5)), dtype=torch.float32)
    base = sorted_sum(vals, NeighborTable.build(edges, 6))
    for _ in range(5):
        p = rng.permutation(30)
        assert torch.equal(sorted_sum(vals[p], NeighborTable.build(edges[p], 6)), base)


def test_two_node_hand_computation():
    d = 4
    cfg = GFConfig(d_emb=d, n_blocks=1, n_heads=1, N_max=2)
    store = init_gf(cfg, 0, F64)
    eye = torch.eye(d, dtype=F64)
    with torch.no_grad():
        store["b0.msg.fc1.w"].copy_(torch.cat([eye, torch.zeros(d, 2 * d, dtype=F64)], 1))  # picks t_i
        store["b0.upd.fc1.w"].copy_(torch.cat([torch.zeros(d, d, dtype=F64), eye], 1))  # picks the aggregate
        for name in ("b0.msg", "b0.upd"):
            store[f"{name}.fc2.w"].copy_(eye)
            store[f"{name}.fc1.b"].zero_()
            store[f"{name}.fc2.b"].zero_()
    x = torch.tensor([[0.5, -1.0, 2.0, 0.0], [3.0, 1.0, -0.5, 0.25]], dtype=F64)
    e = torch.zeros(1, d, dtype=F64)
    edges = np.array([[0, 1]])
    out, agg = gf_message_pass(store, x, e, edges, NeighborTable.build(edges, 2), 0, return_aggregate=True)
    out, agg = out.detach(), agg.detach()

    def silu(v):
        return v / (1 + np.exp(-v))

    m01 = silu(x[0].numpy())
    np.testing.assert_allclose(agg[1].numpy(), m01, rtol=1e-15)
    np.testing.assert_array_equal(agg[0].numpy(), np.zeros(d))
    np.testing.assert_allclose(out[1].numpy(), silu(m01), rtol=1e-15)
    np.testing.assert_array_equal(out[0].numpy(), np.zeros(d))


# ------------------------------------------------------------------ attention

def test_singleton_neighborhood_returns_value(rng):
    q = torch.tensor(rng.normal(size=(2, 4)))
    k = torch.tensor(rng.normal(size=(1, 4)))
    v = torch.tensor(rng.normal(size=(1, 4)))
    edges = np.array([[0, 1]])
    out = neighbor_attention(q, k, v, edges, NeighborTable.build(edges, 2), n_heads=2)
    assert torch.equal(out[1], v[0]) and not out[0].any()


def test_attention_weights_sum_to_one(rng):
    edges = rng.integers(0, 8, size=(40, 2))
    q = torch.tensor(rng.normal(size=(8, 6)), dtype=torch.float32)
    k = torch.tensor(rng.normal(size=(40, 6)), dtype=torch.float32)
    v = torch.tensor(rng.normal(size=(40, 6)), dtype=torch.float32)
    table = NeighborTable.build(edges, 8)
    _, alpha = neighbor_attention(q, k, v, edges, table, 3, return_weights=True)
    has = table.valid.any(1)
    sums = alpha.sum(1)[has]
    assert torch.all((sums - 1).abs() < 1e-6)
    assert not alpha[~table.valid].any()


def test_attention_is_local(small_window):
    floor, g = small_window
    store = init_gf(TINY, 1)
    x, e = gf_encode(store, TINY, g.node_features, g.node_ids, g.edge_features)
    table = NeighborTable.build(g.edge_index, g.n_nodes)
    base = gf_edge_attention(store, TINY, x, e, g.edge_index, table, 0)
    for i in range(g.n_nodes):
        near = {i} | {int(s) for s, d in g.edge_index if d == i}
        far = [j for j in range(g.n_nodes) if j not in near]
        x2 = x.clone()
        x2[far] = 0.0
        assert torch.equal(gf_edge_attention(store, TINY, x2, e, g.edge_index, table, 0)[i], base[i])


def test_node_relabelling_permutes_outputs(floor8, episode8):
    store = init_gf(GFConfig(), 0)
    g, _ = build_gf_window(episode8, floor8, t_end=40)
    base = gf_forward(store, GFConfig(), g)
    perm = np.random.default_rng(0).permutation(g.n_nodes)
    out = gf_forward(store, GFConfig(), g.permuted(perm))
    for name in base:
        assert torch.equal(out[name], base[name][perm]), name


def test_edge_order_does_not_change_outputs(floor8, episode8):
    store = init_gf(GFConfig(), 3)
    g, _ = build_gf_window(episode8, floor8, t_end=40)
    p = np.random.default_rng(1).permutation(len(g.edge_index))
    base = gf_forward(store, GFConfig(), g)
    out = gf_forward(store, GFConfig(), type(g)(g.node_features, g.node_ids, g.edge_index[p], g.edge_features[p],
                                                 g.n_spatial, g.T, g.M))
    for name in base:
        assert torch.equal(out[name], base[name])


# ------------------------------------------------------------------ decoder

def test_head_shapes(small_window):
    _, g = small_window
    out = gf_forward(init_gf(TINY, 0), TINY, g)
    n = g.n_nodes
    assert out["id"].shape == (n, TINY.H_id, TINY.N_max + 1)
    assert {k: tuple(v.shape) for k, v in out.items() if k != "id"} == {
        "move": (n, 2), "direction": (n, 4), "heading": (n, 4), "laden": (n, 2), "bearing": (n, 2)}


def test_bearing_normalization():
    out = normalize_bearing([[3.0, 4.0], [1e-9, 0.0], [0.0, -2.0]])
    np.testing.assert_allclose(out, [[0.6, 0.8], [0.0, 0.0], [0.0, -1.0]])
    raw = np.random.default_rng(0).normal(size=(50, 2))
    assert np.allclose(np.linalg.norm(normalize_bearing(raw), axis=1), 1.0)


# ------------------------------------------------------------------ loss

def _targets(n=3, H=2):
    return GFTargets(
        occupied=np.array([True, True, False][:n]),
        ids=np.array([[1, 1], [2, 0], [0, 0]])[:n, :H],
        move=np.array([1, 0, 0])[:n],
        direction=np.array([2, -1, -1])[:n],
        heading=np.array([2, 1, -1])[:n],
        laden=np.array([0, 1, 0])[:n],
        bearing=np.array([[0.0, 1.0], [0.6, -0.8], [0.0, 0.0]])[:n],
    )


CFG3 = GFConfig(d_emb=4, n_blocks=1, n_heads=1, H_id=2, N_max=3, w_ID=1.0, w_move=1.0, w_attr=1.0)


def _perfect(t: GFTargets, big=1e4):
    n = len(t.occupied)
    idl = np.zeros((n, CFG3.H_id, CFG3.N_max + 1))
    np.put_along_axis(idl, t.ids[..., None], big, -1)
    move = np.zeros((n, 2))
    move[np.arange(n), t.move] = big
    direction = np.zeros((n, 4))
    direction[np.arange(n), np.maximum(t.direction, 0)] = big
    heading = np.eye(4)[np.maximum(t.heading, 0)]
    laden = np.stack([t.laden * 2.0 - 1.0, np.zeros(n)], 1)
    out = {"id": idl, "move": move, "direction": direction, "heading": heading, "laden": laden,
           "bearing": t.bearing.copy()}
    return {k: torch.tensor(v, dtype=F64) for k, v in out.items()}


def test_perfect_predictions_cost_nothing():
    t = _targets()
    assert abs(gf_loss(_perfect(t), t, CFG3).item()) < 1e-12


def test_orthogonal_bearing_costs_one():
    t = _targets()
    out = _perfect(t)
    out["bearing"][0] = torch.tensor([1.0, 0.0])
    out["bearing"][1] = torch.tensor([0.6, -0.8])
    assert gf_loss_terms(out, t, CFG3)["bearing"].item() == pytest.approx(0.5)
    one = _targets(1)
    out1 = _perfect(one)
    out1["bearing"][0] = torch.tensor([1.0, 0.0])
    assert gf_loss_terms(out1, one, CFG3)["bearing"].item() == pytest.approx(1.0, abs=1e-15)


def test_uniform_heads_hand_computed():
    t = _targets()
    zeros = {k: torch.zeros_like(v) for k, v in _perfect(t).items()}
    expected = math.log(CFG3.N_max + 1) + math.log(2) + math.log(4) + (1 + 1 + 1) / 3
    assert gf_loss(zeros, t, CFG3).item() == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("weight,terms", [("w_ID", ("id",)), ("w_move", ("move", "direction")),
                                          ("w_attr", ("attr",))])
def test_single_weight_decomposition(weight, terms, rng):
    t = _targets()
    out = {k: torch.tensor(rng.normal(size=v.shape), dtype=F64) for k, v in _perfect(t).items()}
    cfg = GFConfig(**{**CFG3.to_dict(), "w_ID": 0.0, "w_move": 0.0, "w_attr": 0.0, weight: 1.0})
    parts = gf_loss_terms(out, t, cfg)
    expect = parts[terms[0]] + (parts[terms[1]] if len(terms) > 1 else 0.0)
    assert gf_loss(out, t, cfg).item() == expect.item()


# ------------------------------------------------------------------ rollout

def test_compose_action_rules():
    floor = grid_floor(4, 4)
    r = RobotState(0, floor.vertex_at(1, 1), Heading.E)
    assert compose_action(floor, r, 0.8, int(Heading.E), False) == Action.FORWARD_1
    assert compose_action(floor, r, 0.8, int(Heading.N), False) == Action.ROTATE_LEFT
    assert compose_action(floor, r, 0.8, int(Heading.S), False) == Action.ROTATE_RIGHT
    assert compose_action(floor, r, 0.8, int(Heading.W), False) == Action.ROTATE_180
    assert compose_action(floor, r, 0.2, int(Heading.W), False) == Action.WAIT
    assert compose_action(floor, r, 0.2, 0, True) == Action.LOAD
    edge = RobotState(0, floor.vertex_at(3, 1), Heading.E)
    assert compose_action(floor, edge, 0.9, int(Heading.E), False) == Action.WAIT


def _claim_state():
    floor = grid_floor(3, 1)
    state = FloorState(0.0, (RobotState(0, 0, Heading.E), RobotState(1, 2, Heading.W)))
    return floor, state


def test_all_wait_keeps_positions(floor8, episode8):
    state = episode8.snapshot_at(10)
    nxt, _ = gf_apply(floor8, state, {r.robot_id: GFDecision(Action.WAIT, 0.0) for r in state.robots
                                      if r.robot_id not in state.busy_ids()})
    assert [r.position for r in nxt.robots] == [r.position for r in state.robots]


def test_more_confident_claim_wins():
    floor, state = _claim_state()
    nxt, ev = gf_apply(floor, state, {0: GFDecision(Action.FORWARD_1, 0.6), 1: GFDecision(Action.FORWARD_1, 0.9)})
    assert nxt.robot(1).position == 1 and nxt.robot(0).position == 0
    assert {e.robot_id: e.action for e in ev} == {0: Action.WAIT, 1: Action.FORWARD_1}


def test_confidence_tie_goes_to_lower_id():
    floor, state = _claim_state()
    nxt, _ = gf_apply(floor, state, {0: GFDecision(Action.FORWARD_1, 0.7), 1: GFDecision(Action.FORWARD_1, 0.7)})
    assert nxt.robot(0).position == 1 and nxt.robot(1).position == 2


def test_decisions_cover_idle_robots(floor8, episode8):
    hist = [episode8.snapshot_at(t) for t in range(20, 24)]
    dec = gf_decisions(init_gf(GFConfig(), 0), GFConfig(), floor8, hist)
    assert set(dec) == {r.robot_id for r in hist[-1].robots} - hist[-1].busy_ids()
    with pytest.raises(ValueError):
        gf_decisions(init_gf(GFConfig(), 0), GFConfig(), floor8, hist[:2])


# ------------------------------------------------------------------ training

def test_same_seed_same_ledger(floor8, episode8):
    table = GFTable(TINY)
    table.add(episode8, floor8)
    tc = TrainConfig(steps=6, batch_size=4, lr=1e-2, log_every=2)
    s1, a = train_gf(table, TINY, tc, seed=1)
    s2, b = train_gf(table, TINY, tc, seed=1)
    assert [r.as_tuple() for r in a] == [r.as_tuple() for r in b]
    assert torch.equal(s1.flat(), s2.flat())


@pytest.mark.xfail(strict=True, reason=(
    "minibatch noise: a rise of the window-100 running mean at step t means loss[t+100] > loss[t] for two "
    "independent batch-16 draws; a run on an earlier 200-episode corpus had 741 of 1900 steps rise (max +0.0057), and even disjoint "
    "100-step block means rise by up to +0.053, so the pointwise property needs full-batch training"))
def test_smoothed_training_loss_never_rises(gf_trained):
    """Window-100 running mean of the per-step loss never goes up."""
    loss = np.array([r.loss for r in gf_trained.rows])
    assert len(loss) == gf_trained.store.opt_step
    smooth = np.convolve(loss, np.ones(100) / 100, mode="valid")
    rises = np.diff(smooth)
    assert rises.max() <= 0, f"largest rise {rises.max():.4g} at step {int(rises.argmax()) + 100}"


def test_training_loss_trend_decreases(gf_trained):
    """Means over consecutive quarters of the run fall strictly."""
    loss = np.array([r.loss for r in gf_trained.rows])
    quarters = loss[: len(loss) // 4 * 4].reshape(4, -1).mean(axis=1)
    assert np.all(np.diff(quarters) < 0), quarters


def test_empty_floor_predicted_empty(gf_trained, floor8):
    ep = simulate(floor8, 0, 20, 0)
    g, _ = build_gf_window(ep, floor8, t_end=10)
    out = gf_forward(gf_trained.store, gf_trained.config, g, np.arange(g.last_tick().start, g.last_tick().stop))
    assert torch.all(out["id"].argmax(-1) == 0)


def test_gf_decode_directly():
    store = init_gf(TINY, 0)
    out = gf_decode(store, TINY, torch.zeros(5, TINY.d_emb))
    assert out["id"].shape == (5, TINY.H_id, TINY.N_max + 1)
