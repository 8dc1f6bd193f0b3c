"""Pieces shared by both models: transformer blocks, configs and the training loop."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ..nn import ParamStore, adam_step, backward, layer_norm, multi_head_attention, silu
from ..nn.kernel import add_mha, linear
from ..rng import make_rng

LEDGER_HEADER = ("step", "examples", "tokens", "flops", "loss")


class EmptyBatch(ValueError):
    pass


class UnknownConfigKey(KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""



def config_from_dict(cls, doc: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    extra = sorted(set(doc) - names)
    if extra:
        raise UnknownConfigKey(f"{cls.__name__}: unknown keys {extra}")
    return cls(**doc)


def add_block(store: ParamStore, prefix: str, d_model: int, d_ff: int) -> None:
    store.add_layer_norm(f"{prefix}.ln1", d_model)
    add_mha(store, f"{prefix}.attn", d_model)
    store.add_layer_norm(f"{prefix}.ln2", d_model)
    store.add_linear(f"{prefix}.ff1", d_model, d_ff)
    store.add_linear(f"{prefix}.ff2", d_ff, d_model)


def block(store: ParamStore, prefix: str, x: torch.Tensor, n_heads: int, mask: torch.Tensor | None) -> torch.Tensor:
    """Pre-norm transformer block: attention then a SiLU feed-forward, both residual."""
    x = x + multi_head_attention(store, f"{prefix}.attn", layer_norm(store, f"{prefix}.ln1", x), n_heads, mask)
    h = silu(linear(store, f"{prefix}.ff1", layer_norm(store, f"{prefix}.ln2", x)))
    return x + linear(store, f"{prefix}.ff2", h)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 50
    warmup: int = 50
    min_lr_ratio: float = 0.1  # cosine decay floor after warmup; 1.0 keeps lr constant

    def lr_at(self, step: int) -> float:
        if self.warmup > 0 and step < self.warmup:
            return self.lr * (step + 1) / self.warmup
        span = max(1, self.steps - self.warmup)
        frac = min(1.0, max(0, step - self.warmup) / span)
        return self.lr * (self.min_lr_ratio + (1 - self.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))


@dataclass
class LedgerRow:
    step: int
    examples: int
    tokens: int
    flops: int
    loss: float

    def as_tuple(self):
        return (self.step, self.examples, self.tokens, self.flops, self.loss)


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Counter-based batch draw: depends only on (seed, step)."""
    if batch_size >= n:
        return np.arange(n)
    return np.sort(make_rng(seed, "batch", step).choice(n, size=batch_size, replace=False))


def run_training(
    store: ParamStore,
    n_examples: int,
    loss_fn: Callable[[np.ndarray], torch.Tensor],
    cost_fn: Callable[[np.ndarray], tuple[int, int]],
    train: TrainConfig,
    seed: int,
    on_row: Callable[[LedgerRow], None] | None = None,
    until: int | None = None,
) -> list[LedgerRow]:
    """Adam loop from ``store.opt_step`` up to ``train.steps``.

    ``until`` stops early (as an interrupted run would) without changing the
    learning-rate schedule, which always spans ``train.steps``.

    ``cost_fn(idx)`` gives (tokens, flops) for a batch. Counters for examples,
    tokens and FLOPs are kept in ``store.meta`` so a resumed run continues them.
    """
    if n_examples <= 0:
        raise EmptyBatch("no training examples")
    counters = store.meta.setdefault("counters", {"examples": 0, "tokens": 0, "flops": 0})
    rows = []
    stop = train.steps if until is None else min(int(until), train.steps)
    for step in range(store.opt_step, stop):
        idx = batch_indices(seed, step, n_examples, train.batch_size)
        loss = loss_fn(idx)
        backward(loss, store)
        adam_step(store, train.lr_at(step), train.beta1, train.beta2, train.eps)
        tokens, flops = cost_fn(idx)
        counters["examples"] += len(idx)
        counters["tokens"] += int(tokens)
        counters["flops"] += int(flops)
        done = step + 1
        if done % train.log_every == 0 or done == stop:
            row = LedgerRow(done, counters["examples"], counters["tokens"], counters["flops"], float(loss.item()))
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def write_ledger(rows: list[LedgerRow], path, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(LEDGER_HEADER)
        for r in rows:
            w.writerow((r.step, r.examples, r.tokens, r.flops, repr(float(r.loss))))


def read_ledger(path) -> list[LedgerRow]:
    with open(path, newline="") as fh:
        return [LedgerRow(int(r["step"]), int(r["examples"]), int(r["tokens"]), int(r["flops"]), float(r["loss"]))
                for r in csv.DictReader(fh)]


def dump_config(obj) -> str:
    return json.dumps(dataclasses.asdict(obj), sort_keys=True, indent=1)
