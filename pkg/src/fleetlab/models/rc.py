"""Robot-centric decision transformer.

An encoder maps each ego-frame neighborhood to a latent ``h``; a causal
decoder reads the alternating sequence ``h_{t-K}, a_{t-K}, ..., h_t`` and
predicts the next action from the final state token.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from ..dataset.rc import EGO_DIM, OBJECT_DIM, ROBOT_DIM, VERTEX_DIM, NeighborhoodObs, RCBatch, RCTable, stack_windows
from ..floor import N_ACTIONS, Action
from ..nn import ParamStore, ShapeMismatch, layer_norm, linear, log_softmax, softmax
from .common import EmptyBatch, TrainConfig, add_block, block, config_from_dict, run_training

HEAD_INIT_SCALE = 0.1


@dataclass
class RCConfig:
    d_model: int = 32
    n_heads: int = 2
    n_layers_enc: int = 1
    n_layers_dec: int = 1
    d_ff: int = 64
    K: int = 5
    K_r: int = 6
    K_p: int = 8
    K_x: int = 12
    n_actions: int = N_ACTIONS
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_actions != N_ACTIONS:
            raise ValueError(f"action vocabulary has {N_ACTIONS} entries")
        if self.dropout != 0.0:
            raise ValueError("dropout is not supported; training is deterministic")

    @classmethod
    def from_dict(cls, doc: dict) -> RCConfig:
        return config_from_dict(cls, doc)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def n_tokens_enc(self) -> int:
        return 1 + self.K_r + self.K_p + self.K_x

    @property
    def seq_len(self) -> int:
        return 2 * self.K + 1

    def tokens_per_sample(self) -> int:
        return (self.K + 1) * self.n_tokens_enc + self.seq_len


@dataclass
class RCOutput:
    action_logits: np.ndarray
    action_probs: np.ndarray

    @property
    def action(self) -> Action:
        return Action(int(np.argmax(self.action_logits)))


def init_rc(config: RCConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> ParamStore:
    d = config.d_model
    s = ParamStore(seed, dtype)
    s.add_linear("enc.ego", EGO_DIM, d)
    s.add_linear("enc.robot", ROBOT_DIM, d)
    s.add_linear("enc.object", OBJECT_DIM, d)
    s.add_linear("enc.vertex", VERTEX_DIM, d)
    for i in range(config.n_layers_enc):
        add_block(s, f"enc.L{i}", d, config.d_ff)
    s.add_layer_norm("enc.ln_f", d)
    s.add_embedding("dec.action", config.n_actions, d)
    s.add_embedding("dec.pos", config.seq_len, d)
    s.add_embedding("dec.type", 2, d)
    for i in range(config.n_layers_dec):
        add_block(s, f"dec.L{i}", d, config.d_ff)
    s.add_layer_norm("dec.ln_f", d)
    s.add_linear("dec.head", d, config.n_actions)
    with torch.no_grad():
        s["dec.head.w"].mul_(HEAD_INIT_SCALE)
    s.meta["model"] = "rc"
    s.meta["config"] = config.to_dict()
    return s


# ------------------------------------------------------------------ encoder

def canonical_slots(features: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero masked slots and order slots by their feature rows (masked last).

    The encoder has no slot positions, so this only fixes the floating-point
    summation order and makes the output exactly independent of slot order.
    """
    feats = np.where(mask[..., None], features, 0.0)
    if feats.shape[-2] == 0:
        return feats, mask
    # lexsort treats the last key as primary: validity first, then column 0, 1, ...
    keys = np.concatenate([np.moveaxis(feats, -1, 0)[::-1], ~mask[None]], axis=0)
    order = np.lexsort(keys, axis=-1)
    return (np.take_along_axis(feats, order[..., None], axis=-2),
            np.take_along_axis(mask, order, axis=-1))


def _encode_arrays(store: ParamStore, config: RCConfig, ego, robots, rmask, objects, omask, verts, vmask):
    """Encode stacked observations with leading shape (B,)."""
    if ego.shape[-1] != EGO_DIM or robots.shape[-2:] != (config.K_r, ROBOT_DIM) or \
            objects.shape[-2:] != (config.K_p, OBJECT_DIM) or verts.shape[-2:] != (config.K_x, VERTEX_DIM):
        raise ShapeMismatch("observation shapes do not match the configuration")
    robots, rmask = canonical_slots(robots, rmask)
    objects, omask = canonical_slots(objects, omask)
    verts, vmask = canonical_slots(verts, vmask)
    dt = store.dtype
    t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=dt)  # noqa: E731
    x = torch.cat([
        linear(store, "enc.ego", t(ego)).unsqueeze(-2),
        linear(store, "enc.robot", t(robots)),
        linear(store, "enc.object", t(objects)),
        linear(store, "enc.vertex", t(verts)),
    ], dim=-2)
    keys = np.concatenate([np.ones(ego.shape[:-1] + (1,), dtype=bool), rmask, omask, vmask], axis=-1)
    mask = torch.as_tensor(keys).unsqueeze(-2)
    for i in range(config.n_layers_enc):
        x = block(store, f"enc.L{i}", x, config.n_heads, mask)
    return layer_norm(store, "enc.ln_f", x[..., 0, :])


def encode_neighborhood(store: ParamStore, config: RCConfig, obs: NeighborhoodObs) -> torch.Tensor:
    """Latent embedding (d_model,) of one observation; the ego token is the readout."""
    out = _encode_arrays(store, config, obs.ego[None], obs.robots[None], obs.robot_mask[None], obs.objects[None],
                         obs.object_mask[None], obs.vertices[None], obs.vertex_mask[None])
    return out[0]


def encode_batch(store: ParamStore, config: RCConfig, batch: RCBatch) -> torch.Tensor:
    """Latents (B, K+1, d) for every window step (padded steps encode zeros)."""
    B, W = batch.ego.shape[:2]
    flat = lambda a: a.reshape(B * W, *a.shape[2:])  # noqa: E731
    h = _encode_arrays(store, config, flat(batch.ego), flat(batch.robots), flat(batch.robot_mask),
                       flat(batch.objects), flat(batch.object_mask), flat(batch.vertices), flat(batch.vertex_mask))
    return h.reshape(B, W, -1)


# ------------------------------------------------------------------ decoder

def decode_sequence(store: ParamStore, config: RCConfig, h: torch.Tensor, actions: np.ndarray,
                    step_mask: np.ndarray) -> torch.Tensor:
    """Logits at every position of the interleaved sequence, shape (B, 2W-1, |A|).

    ``h``: (B, W, d) state latents, ``actions``: (B, W-1), ``step_mask``: (B, W).
    Windows shorter than ``K+1`` are left padded so the final state token always
    sits at the last position.
    """
    B, W, d = h.shape
    if W > config.K + 1 or W < 1:
        raise ShapeMismatch(f"window of {W} states exceeds K+1={config.K + 1}")
    if actions.shape != (B, W - 1) or step_mask.shape != (B, W):
        raise ShapeMismatch("actions/step_mask shapes disagree with the state latents")
    L = 2 * W - 1
    acts = torch.as_tensor(np.asarray(actions, dtype=np.int64))
    a_tok = store["dec.action"][acts] + store["dec.type"][1]
    s_tok = h + store["dec.type"][0]
    if W > 1:
        seq = torch.stack([s_tok[:, :-1], a_tok], dim=2).reshape(B, L - 1, d)
        seq = torch.cat([seq, s_tok[:, -1:]], dim=1)
    else:
        seq = s_tok
    pos0 = config.seq_len - L
    seq = seq + store["dec.pos"][pos0:]
    valid = np.repeat(np.asarray(step_mask, dtype=bool), 2, axis=1)[:, :L]
    causal = torch.tril(torch.ones(L, L, dtype=torch.bool))
    mask = causal.unsqueeze(0) & torch.as_tensor(valid).unsqueeze(1)
    for i in range(config.n_layers_dec):
        seq = block(store, f"dec.L{i}", seq, config.n_heads, mask)
    return linear(store, "dec.head", layer_norm(store, "dec.ln_f", seq))


def decode_next_action(store: ParamStore, config: RCConfig, h: torch.Tensor, actions, step_mask=None) -> torch.Tensor:
    """Logits (B, |A|) read at the final (state) position."""
    if h.dim() == 2:
        h = h.unsqueeze(0)
        actions = np.asarray(actions, dtype=np.int64).reshape(1, -1)
    actions = np.asarray(actions, dtype=np.int64).reshape(h.shape[0], h.shape[1] - 1)
    if step_mask is None:
        step_mask = np.ones(h.shape[:2], dtype=bool)
    return decode_sequence(store, config, h, actions, np.asarray(step_mask, dtype=bool))[:, -1]


def rc_logits(store: ParamStore, config: RCConfig, batch: RCBatch) -> torch.Tensor:
    return decode_next_action(store, config, encode_batch(store, config, batch), batch.actions, batch.step_mask)


def rc_loss(store: ParamStore, config: RCConfig, batch: RCBatch) -> torch.Tensor:
    """Mean negative log-likelihood of the target actions under teacher forcing."""
    if len(batch) == 0:
        raise EmptyBatch("rc_loss needs at least one sample")
    if np.any(batch.target < 0):
        raise ValueError("batch contains samples without targets")
    logp = log_softmax(rc_logits(store, config, batch), dim=-1)
    tgt = torch.as_tensor(batch.target, dtype=torch.int64)
    return -logp.gather(1, tgt[:, None]).mean()


def nll_from_probs(probs, targets) -> float:
    p = np.asarray(probs, dtype=float)
    return float(-np.mean(np.log(p[np.arange(len(p)), np.asarray(targets)])))


def _outputs(logits: torch.Tensor) -> list[RCOutput]:
    probs = softmax(logits, dim=-1)
    lg = logits.detach().cpu().numpy()
    pr = probs.detach().cpu().numpy()
    return [RCOutput(lg[i], pr[i]) for i in range(lg.shape[0])]


@torch.no_grad()
def rc_predict(store: ParamStore, config: RCConfig, batch: RCBatch) -> list[RCOutput]:
    return _outputs(rc_logits(store, config, batch))


@torch.no_grad()
def rc_infer_fleet(store: ParamStore, config: RCConfig,
                   histories: Mapping[int, tuple[Sequence[NeighborhoodObs], Sequence[Action]]]) -> dict[int, RCOutput]:
    """One batched forward pass over every robot's recent (observation, action) history.

    Each history holds up to ``K+1`` observations (oldest first) and the
    actions between them.
    """
    rids = sorted(histories)
    if not rids:
        return {}
    windows = []
    for rid in rids:
        obs, acts = histories[rid]
        obs = list(obs)[-(config.K + 1):]
        acts = list(acts)[len(acts) - (len(obs) - 1):] if len(obs) > 1 else []
        if not obs:
            raise ValueError(f"robot {rid} has no observation")
        windows.append((obs, acts, None))
    outs = rc_predict(store, config, stack_windows(windows, config.K))
    return dict(zip(rids, outs))


@torch.no_grad()
def rc_accuracy(store: ParamStore, config: RCConfig, table: RCTable, batch_size: int = 512) -> float:
    if len(table) == 0:
        raise EmptyBatch("no samples to score")
    hits = 0
    for start in range(0, len(table), batch_size):
        b = table.batch(np.arange(start, min(start + batch_size, len(table))))
        pred = rc_logits(store, config, b).argmax(dim=-1).numpy()
        hits += int((pred == b.target).sum())
    return hits / len(table)


def train_rc(table: RCTable, config: RCConfig, train: TrainConfig, seed: int,
             store: ParamStore | None = None, on_row=None, until: int | None = None):
    """Seeded mini-batch behavior cloning; pass ``store`` to resume from a checkpoint."""
    from ..scaling.flops import estimate_flops

    if store is None:
        store = init_rc(config, seed)
    per_tokens = config.tokens_per_sample()
    per_flops = estimate_flops("rc", config, 1)

    def loss_fn(idx):
        return rc_loss(store, config, table.batch(idx))

    def cost_fn(idx):
        return per_tokens * len(idx), per_flops * len(idx)

    store.meta["train"] = asdict(train)
    rows = run_training(store, len(table), loss_fn, cost_fn, train, seed, on_row, until)
    return store, rows
