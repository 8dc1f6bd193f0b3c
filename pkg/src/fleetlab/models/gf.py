"""Graph-floor network over spatiotemporal floor graphs.

Node and edge encoders map raw features into one embedding space; each
processor block runs sum-aggregated message passing followed by attention
restricted to graph in-neighbors with edge features injected into keys and
values. Six heads decode identities, move/wait, direction, heading, laden
state and target bearing.

Neighbor reductions sort their operands along the neighbor axis before
summing, so results do not depend on edge order or node labelling at all
(not merely up to rounding).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
import torch

from ..dataset.gf import EDGE_DIM, NODE_DIM, GFBatch, GFTargets, SpatioTemporalGraph, batch_windows, build_graph
from ..dataset.gf import bearing as bearing_vec
from ..dataset.gf import motion_label, node_features, window_targets
from ..floor import Action, FloorGraph, FloorState, Heading, is_legal, rotation_toward
from ..nn import ParamStore, ShapeMismatch, layer_norm, linear, log_softmax, softmax
from ..nn.kernel import add_mlp, mlp
from ..sim.env import EventRecord, env_step
from ..sim.episode import Episode
from .common import EmptyBatch, TrainConfig, config_from_dict, run_training

HEADS = ("id", "move", "direction", "heading", "laden", "bearing")


@dataclass
class GFConfig:
    d_emb: int = 32
    n_blocks: int = 2
    n_heads: int = 2
    T: int = 4
    H_id: int = 4
    N_max: int = 64
    w_ID: float = 0.5
    w_move: float = 1.0
    w_attr: float = 0.5

    def __post_init__(self):
        if self.d_emb % self.n_heads:
            raise ValueError("d_emb must be divisible by n_heads")
        if self.T < 1 or self.H_id < 1 or self.N_max < 1:
            raise ValueError("T, H_id and N_max must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> GFConfig:
        return config_from_dict(cls, doc)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def head_sizes(self) -> dict[str, int]:
        return {"id": self.H_id * (self.N_max + 1), "move": 2, "direction": 4, "heading": 4, "laden": 2,
                "bearing": 2}

    @property
    def head_width(self) -> int:
        return sum(self.head_sizes.values())


def init_gf(config: GFConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> ParamStore:
    d = config.d_emb
    s = ParamStore(seed, dtype)
    add_mlp(s, "enc.node", NODE_DIM, d, d)
    add_mlp(s, "enc.edge", EDGE_DIM, d, d)
    s.add_embedding("enc.id", config.N_max + 1, d)
    for b in range(config.n_blocks):
        add_mlp(s, f"b{b}.msg", 3 * d, d, d)
        add_mlp(s, f"b{b}.upd", 2 * d, d, d)
        s.add_linear(f"b{b}.q", d, d)
        s.add_linear(f"b{b}.k", 2 * d, d)
        s.add_linear(f"b{b}.v", 2 * d, d)
        s.add_linear(f"b{b}.o", d, d)
    s.add_layer_norm("dec.ln", d)
    for name, size in config.head_sizes.items():
        s.add_linear(f"dec.{name}", d, size)
    s.meta["model"] = "gf"
    s.meta["config"] = config.to_dict()
    return s


# ------------------------------------------------------------------ graph plumbing

@dataclass
class NeighborTable:
    """In-edges of every node padded to the maximum in-degree (-1 = empty)."""

    edges: torch.Tensor  # (N, D) edge ids
    valid: torch.Tensor  # (N, D) bool

    @classmethod
    def build(cls, edge_index: np.ndarray, n_nodes: int) -> NeighborTable:
        dst = np.asarray(edge_index[:, 1], dtype=np.int64) if len(edge_index) else np.zeros(0, dtype=np.int64)
        counts = np.bincount(dst, minlength=n_nodes)
        D = int(counts.max()) if n_nodes and len(dst) else 0
        order = np.argsort(dst, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]) if n_nodes else np.zeros(0, dtype=np.int64)
        table = np.full((n_nodes, D), -1, dtype=np.int64)
        rank = np.arange(len(dst)) - np.repeat(starts, counts)
        table[dst[order], rank] = order
        return cls(torch.as_tensor(np.maximum(table, 0)), torch.as_tensor(table >= 0))


def sorted_sum(values: torch.Tensor, table: NeighborTable) -> torch.Tensor:
    """Sum of per-edge ``values`` (E, ...) into nodes, independent of edge order."""
    n, D = table.edges.shape
    if D == 0:
        return values.new_zeros((n,) + tuple(values.shape[1:]))
    g = values[table.edges]
    shape = (n, D) + (1,) * (values.dim() - 1)
    g = torch.where(table.valid.reshape(shape), g, torch.zeros((), dtype=values.dtype))
    return torch.sort(g, dim=1).values.sum(dim=1)


def _tensor(a, dtype):
    return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)


# ------------------------------------------------------------------ model pieces

def gf_encode(store: ParamStore, config: GFConfig, node_feats, node_ids, edge_feats):
    """Node tokens (N, d) and edge tokens (E, d)."""
    if node_feats.shape[-1] != NODE_DIM or edge_feats.shape[-1] != EDGE_DIM:
        raise ShapeMismatch("raw feature widths do not match the graph encoder")
    dt = store.dtype
    ids = torch.as_tensor(np.asarray(node_ids, dtype=np.int64))
    if ids.numel() and (int(ids.max()) > config.N_max or int(ids.min()) < 0):
        raise ShapeMismatch(f"robot id class outside [0, {config.N_max}]")
    x = mlp(store, "enc.node", _tensor(node_feats, dt)) + store["enc.id"][ids]
    e = mlp(store, "enc.edge", _tensor(edge_feats, dt))
    return x, e


def gf_message_pass(store: ParamStore, x: torch.Tensor, e: torch.Tensor, edge_index: np.ndarray,
                    table: NeighborTable, layer: int, return_aggregate: bool = False):
    """``m_ij = MLP_msg(t_i, t_j, t_ij)``, ``t_j' = MLP_upd(t_j, sum_i m_ij)``."""
    src = torch.as_tensor(edge_index[:, 0])
    dst = torch.as_tensor(edge_index[:, 1])
    m = mlp(store, f"b{layer}.msg", torch.cat([x[src], x[dst], e], dim=-1))
    agg = sorted_sum(m, table)
    out = mlp(store, f"b{layer}.upd", torch.cat([x, agg], dim=-1))
    return (out, agg) if return_aggregate else out


def neighbor_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, edge_index: np.ndarray,
                       table: NeighborTable, n_heads: int, return_weights: bool = False):
    """Per-node softmax over in-edges of ``<q_dst, k_e>/sqrt(d_head)``, mixing ``v_e``.

    ``q``: (N, d); ``k``, ``v``: (E, d). Nodes without in-edges get zeros.
    """
    N, d = q.shape
    dh = d // n_heads
    D = table.edges.shape[1]
    if D == 0:
        out = q.new_zeros((N, d))
        return (out, q.new_zeros((N, 0, n_heads))) if return_weights else out
    dst = torch.as_tensor(edge_index[:, 1])
    qh = q.reshape(N, n_heads, dh)
    kh = k.reshape(-1, n_heads, dh)
    vh = v.reshape(-1, n_heads, dh)
    scores = (qh[dst] * kh).sum(-1) / math.sqrt(dh)  # (E, H)
    s = scores[table.edges]  # (N, D, H)
    valid = table.valid[:, :, None]
    lowest = torch.finfo(s.dtype).min
    s = torch.where(valid, s, torch.full((), lowest, dtype=s.dtype))
    mx = s.max(dim=1, keepdim=True).values.detach()
    ex = torch.where(valid, torch.exp(s - mx), torch.zeros((), dtype=s.dtype))
    den = torch.sort(ex, dim=1).values.sum(dim=1, keepdim=True)
    den = torch.where(den > 0, den, torch.ones((), dtype=s.dtype))
    alpha = ex / den  # (N, D, H)
    mixed = alpha[..., None] * vh[table.edges]  # (N, D, H, dh)
    out = torch.sort(mixed, dim=1).values.sum(dim=1).reshape(N, d)
    return (out, alpha) if return_weights else out


def gf_edge_attention(store: ParamStore, config: GFConfig, x: torch.Tensor, e: torch.Tensor,
                      edge_index: np.ndarray, table: NeighborTable, layer: int,
                      return_raw: bool = False):
    """Edge-conditioned attention restricted to in-neighbors, added residually."""
    src = torch.as_tensor(edge_index[:, 0])
    kv_in = torch.cat([x[src], e], dim=-1)
    q = linear(store, f"b{layer}.q", x)
    k = linear(store, f"b{layer}.k", kv_in)
    v = linear(store, f"b{layer}.v", kv_in)
    raw = neighbor_attention(q, k, v, edge_index, table, config.n_heads)
    out = x + linear(store, f"b{layer}.o", raw)
    return (out, raw) if return_raw else out


def gf_decode(store: ParamStore, config: GFConfig, tokens: torch.Tensor) -> dict[str, torch.Tensor]:
    """Raw head outputs per node; the ID head is shaped (n, H_id, N_max+1)."""
    h = layer_norm(store, "dec.ln", tokens)
    out = {name: linear(store, f"dec.{name}", h) for name in HEADS}
    out["id"] = out["id"].reshape(tokens.shape[0], config.H_id, config.N_max + 1)
    return out


def normalize_bearing(raw) -> np.ndarray:
    """Unit vectors, or zero where the raw norm is below 1e-8."""
    raw = np.asarray(raw, dtype=float)
    n = np.linalg.norm(raw, axis=-1, keepdims=True)
    return np.where(n < 1e-8, 0.0, raw / np.where(n < 1e-8, 1.0, n))


def gf_tokens(store: ParamStore, config: GFConfig, node_feats, node_ids, edge_index, edge_feats,
              table: NeighborTable | None = None) -> torch.Tensor:
    """Final-block node tokens for a (possibly batched) graph."""
    edge_index = np.asarray(edge_index, dtype=np.int64).reshape(-1, 2)
    if table is None:
        table = NeighborTable.build(edge_index, node_feats.shape[0])
    x, e = gf_encode(store, config, node_feats, node_ids, edge_feats)
    for b in range(config.n_blocks):
        x = gf_message_pass(store, x, e, edge_index, table, b)
        x = gf_edge_attention(store, config, x, e, edge_index, table, b)
    return x


def gf_forward(store: ParamStore, config: GFConfig, graph: SpatioTemporalGraph | GFBatch,
               readout: np.ndarray | None = None) -> dict[str, torch.Tensor]:
    """Head outputs at ``readout`` nodes (all nodes when None)."""
    x = gf_tokens(store, config, graph.node_features, graph.node_ids, graph.edge_index, graph.edge_features)
    if readout is not None:
        x = x[torch.as_tensor(np.asarray(readout, dtype=np.int64))]
    return gf_decode(store, config, x)


# ------------------------------------------------------------------ loss

def _cosine_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-row ``1 - cos(pred, target)``."""
    num = (pred * target).sum(-1)
    den = torch.sqrt((pred * pred).sum(-1)) * torch.sqrt((target * target).sum(-1))
    return 1.0 - num / torch.clamp(den, min=1e-12)


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    n = int(mask.sum())
    if n == 0:
        return values.new_zeros(())
    return values[mask].sum() / n


def gf_loss_terms(outputs: Mapping[str, torch.Tensor], targets: GFTargets, config: GFConfig) -> dict[str, torch.Tensor]:
    n = outputs["move"].shape[0]
    if len(targets.occupied) != n or outputs["id"].shape[1:] != (config.H_id, config.N_max + 1) or \
            targets.ids.shape != (n, config.H_id):
        raise ShapeMismatch("head outputs and targets disagree")
    dt = outputs["move"].dtype
    occ = torch.as_tensor(targets.occupied, dtype=torch.bool)
    ids = torch.as_tensor(targets.ids, dtype=torch.int64)
    ce_id = -log_softmax(outputs["id"], -1).gather(-1, ids[..., None]).mean()
    move = torch.as_tensor(targets.move, dtype=torch.int64)
    ce_move = _masked_mean(-log_softmax(outputs["move"], -1).gather(-1, move[:, None].clamp(min=0))[:, 0], occ)
    direction = torch.as_tensor(targets.direction, dtype=torch.int64)
    moving = occ & (move == 1) & (direction >= 0)
    ce_dir = _masked_mean(-log_softmax(outputs["direction"], -1).gather(-1, direction[:, None].clamp(min=0))[:, 0],
                          moving)
    heading = torch.as_tensor(targets.heading, dtype=torch.int64).clamp(min=0)
    onehot = torch.nn.functional.one_hot(heading, 4).to(dt)
    cos_heading = _masked_mean(_cosine_loss(outputs["heading"], onehot), occ)
    lad = torch.as_tensor(targets.laden, dtype=dt) * 2.0 - 1.0
    lad_vec = torch.stack([lad, torch.zeros_like(lad)], dim=-1)
    cos_laden = _masked_mean(_cosine_loss(outputs["laden"], lad_vec), occ)
    bear = torch.as_tensor(targets.bearing, dtype=dt)
    has_bearing = occ & (torch.as_tensor(np.linalg.norm(targets.bearing, axis=-1)) > 0)
    cos_bearing = _masked_mean(_cosine_loss(outputs["bearing"], bear), has_bearing)
    attr = (cos_heading + cos_laden + cos_bearing) / 3.0
    return {"id": ce_id, "move": ce_move, "direction": ce_dir, "heading": cos_heading, "laden": cos_laden,
            "bearing": cos_bearing, "attr": attr}


def gf_loss(outputs: Mapping[str, torch.Tensor], targets: GFTargets, config: GFConfig) -> torch.Tensor:
    """``w_ID*CE_ID + w_move*(CE_move + CE_dir) + w_attr*attr``."""
    t = gf_loss_terms(outputs, targets, config)
    return config.w_ID * t["id"] + config.w_move * (t["move"] + t["direction"]) + config.w_attr * t["attr"]


# ------------------------------------------------------------------ data

@dataclass
class _EpisodeTicks:
    floor: FloorGraph
    feats: np.ndarray  # (ticks, M, NODE_DIM)
    ids: np.ndarray  # (ticks, M)
    targets: list  # per tick GFTargets (without ids)
    t0: int


class GFTable:
    """Per-tick features of many episodes; windows are assembled on demand."""

    def __init__(self, config: GFConfig, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.episodes: list[_EpisodeTicks] = []
        self.index: list[tuple[int, int]] = []  # (episode, t_end)

    def __len__(self) -> int:
        return len(self.index)

    def add(self, episode: Episode, floor: FloorGraph) -> None:
        T, H = self.config.T, self.config.H_id
        snaps = episode.snapshots
        feats, ids = zip(*(node_features(floor, s) for s in snaps)) if snaps else ((), ())
        t0 = episode.t_start
        ends = list(range(t0 + T - 1, episode.t_end - H + 1))
        if not ends:
            return
        targets = {t: window_targets(episode, floor, t, 1) for t in ends}
        k = len(self.episodes)
        self.episodes.append(_EpisodeTicks(floor, np.asarray(feats, dtype=self.dtype), np.asarray(ids),
                                           targets, t0))
        self.index.extend((k, t) for t in ends)

    def window(self, i: int) -> tuple[SpatioTemporalGraph, GFTargets]:
        k, t_end = self.index[i]
        ep = self.episodes[k]
        T, H = self.config.T, self.config.H_id
        a = t_end - T + 1 - ep.t0
        from ..dataset.gf import _edges  # shared cached edge arrays

        index, efeat, n_sp = _edges(ep.floor, T)
        M = ep.floor.n_vertices
        g = SpatioTemporalGraph(ep.feats[a:a + T].reshape(T * M, -1), ep.ids[a:a + T].reshape(-1), index, efeat,
                                n_sp, T, M)
        base = ep.targets[t_end]
        b = t_end + 1 - ep.t0
        ids = ep.ids[b:b + H].T.copy()
        return g, GFTargets(base.occupied, ids, base.move, base.direction, base.heading, base.laden, base.bearing)

    def batch(self, idx) -> GFBatch:
        return batch_windows([self.window(int(i)) for i in idx])

    def graph_size(self) -> tuple[int, int, int]:
        g, _ = self.window(0)
        return g.n_nodes, len(g.edge_index), g.M


def gf_batch_loss(store: ParamStore, config: GFConfig, batch: GFBatch) -> torch.Tensor:
    if batch.targets is None or len(batch.readout) == 0:
        raise EmptyBatch("gf loss needs labelled windows")
    return gf_loss(gf_forward(store, config, batch, batch.readout), batch.targets, config)


@torch.no_grad()
def gf_move_accuracy(store: ParamStore, config: GFConfig, table: GFTable, batch_size: int = 32) -> float:
    hits = total = 0
    for start in range(0, len(table), batch_size):
        b = table.batch(range(start, min(start + batch_size, len(table))))
        out = gf_forward(store, config, b, b.readout)
        occ = b.targets.occupied
        pred = out["move"].argmax(-1).numpy()
        hits += int((pred[occ] == b.targets.move[occ]).sum())
        total += int(occ.sum())
    if total == 0:
        raise EmptyBatch("no occupied nodes to score")
    return hits / total


def train_gf(table: GFTable, config: GFConfig, train: TrainConfig, seed: int,
             store: ParamStore | None = None, on_row=None, until: int | None = None):
    from ..scaling.flops import estimate_flops

    if store is None:
        store = init_gf(config, seed)
    if len(table) == 0:
        raise EmptyBatch("no training windows")
    n_nodes, n_edges, M = table.graph_size()
    per_flops = estimate_flops("gf", config, 1, graph=(n_nodes, n_edges, M))

    def loss_fn(idx):
        return gf_batch_loss(store, config, table.batch(idx))

    def cost_fn(idx):
        return n_nodes * len(idx), per_flops * len(idx)

    store.meta["train"] = asdict(train)
    rows = run_training(store, len(table), loss_fn, cost_fn, train, seed, on_row, until)
    return store, rows


# ------------------------------------------------------------------ inference

@dataclass
class GFDecision:
    action: Action
    confidence: float


def compose_action(floor: FloorGraph, robot, p_move: float, direction: int, laden_pred: bool) -> Action:
    """Turn head readouts into one discrete action for an idle robot."""
    if p_move > 0.5:
        target = Heading(direction)
        if target == robot.heading:
            a = Action.FORWARD_1
            return a if is_legal(floor, robot, a) else Action.WAIT
        return rotation_toward(robot.heading, target)
    if laden_pred and not robot.laden:
        return Action.LOAD
    if robot.laden and not laden_pred:
        return Action.UNLOAD
    return Action.WAIT


def gf_decisions(store: ParamStore, config: GFConfig, floor: FloorGraph, history: list[FloorState]
                 ) -> dict[int, GFDecision]:
    """Per idle robot: composed action and its move-head confidence."""
    if len(history) < config.T:
        raise ValueError(f"history must cover {config.T} ticks")
    graph = build_graph(floor, list(history[-config.T:]))
    with torch.no_grad():
        out = gf_forward(store, config, graph, np.arange(graph.last_tick().start, graph.last_tick().stop))
    p_move = softmax(out["move"], -1)[:, 1].numpy()
    direction = out["direction"].argmax(-1).numpy()
    laden = out["laden"][:, 0].numpy() > 0
    state = history[-1]
    busy = state.busy_ids()
    decisions = {}
    for r in state.robots:
        if r.robot_id in busy:
            continue
        v = r.position
        a = compose_action(floor, r, float(p_move[v]), int(direction[v]), bool(laden[v]))
        conf = float(p_move[v]) if a.forward_steps else 0.0
        decisions[r.robot_id] = GFDecision(a, conf)
    return decisions


def arbitration_order(state: FloorState, confidences: Mapping[int, float]) -> list[int]:
    """Robots by descending claim confidence; ties go to the lower robot_id."""
    ids = [r.robot_id for r in state.robots]
    return sorted(ids, key=lambda rid: (-confidences.get(rid, 0.0), rid))


def gf_apply(floor: FloorGraph, state: FloorState, decisions: Mapping[int, GFDecision],
             next_goals: Mapping[int, int] | None = None) -> tuple[FloorState, list[EventRecord]]:
    """Deterministic dynamics; the more confident claim on a vertex is honored, the other waits."""
    intents = [(rid, d.action) for rid, d in sorted(decisions.items())]
    order = arbitration_order(state, {rid: d.confidence for rid, d in decisions.items()})
    return env_step(floor, state, intents, order=order, next_goals=next_goals)


def gf_rollout_step(store: ParamStore, config: GFConfig, floor: FloorGraph, history: list[FloorState],
                    next_goals: Mapping[int, int] | None = None) -> tuple[FloorState, list[EventRecord]]:
    """One closed-loop tick: forward pass, action composition, arbitration, dynamics."""
    decisions = gf_decisions(store, config, floor, history)
    return gf_apply(floor, history[-1], decisions, next_goals)


__all__ = [
    "GFConfig", "GFTable", "GFDecision", "NeighborTable", "arbitration_order", "bearing_vec", "compose_action",
    "gf_apply", "gf_batch_loss", "gf_decisions", "gf_decode", "gf_edge_attention", "gf_encode", "gf_forward",
    "gf_loss", "gf_loss_terms", "gf_message_pass", "gf_move_accuracy", "gf_rollout_step", "gf_tokens",
    "init_gf", "motion_label", "neighbor_attention", "normalize_bearing", "sorted_sum", "train_gf",
]
