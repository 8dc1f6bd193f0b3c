"""Parameter store, layer set, Adam and checkpoint container.

Tensors are torch tensors (float32 by default, float64 for gradient
checks); reverse-mode differentiation is torch's dynamically recorded tape.
Parameters live in a :class:`ParamStore` rather than in modules so both
models share one serialization and optimizer path.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from ..rng import make_rng

_MAGIC = b"FLCKPT01"
_DTYPES = {"float32": (torch.float32, "<f4"), "float64": (torch.float64, "<f8")}


class ShapeMismatch(ValueError):
    pass


class GraphUnavailable(RuntimeError):
    pass


class CorruptManifest(ValueError):
    pass


def _dtype_name(dtype: torch.dtype) -> str:
    for name, (dt, _) in _DTYPES.items():
        if dt == dtype:
            return name
    raise TypeError(f"unsupported dtype {dtype}")


class ParamStore:
    """Ordered named parameters with gradient buffers and optimizer state."""

    def __init__(self, seed: int = 0, dtype: torch.dtype = torch.float32):
        self.params: OrderedDict[str, torch.Tensor] = OrderedDict()
        self.seed = int(seed)
        self.dtype = dtype
        self.opt_state: dict[str, torch.Tensor] = {}
        self.opt_step = 0
        self.meta: dict = {}

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def n_params(self, prefix: str = "") -> int:
        return sum(p.numel() for n, p in self.params.items() if n.startswith(prefix))

    def add(self, name: str, value: np.ndarray | torch.Tensor) -> torch.Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = torch.as_tensor(np.asarray(value), dtype=self.dtype).clone().requires_grad_(True)
        self.params[name] = t
        return t

    def _rng(self, name: str) -> np.random.Generator:
        return make_rng(self.seed, "param", name)

    def add_linear(self, prefix: str, fan_in: int, fan_out: int, bias: bool = True) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        self.add(f"{prefix}.w", self._rng(f"{prefix}.w").uniform(-bound, bound, size=(fan_out, fan_in)))
        if bias:
            self.add(f"{prefix}.b", np.zeros(fan_out))

    def add_layer_norm(self, prefix: str, dim: int) -> None:
        self.add(f"{prefix}.g", np.ones(dim))
        self.add(f"{prefix}.b", np.zeros(dim))

    def add_embedding(self, name: str, count: int, dim: int) -> None:
        bound = 1.0 / math.sqrt(dim)
        self.add(name, self._rng(name).uniform(-bound, bound, size=(count, dim)))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, torch.Tensor]:
        return {n: (p.grad if p.grad is not None else torch.zeros_like(p)) for n, p in self.params.items()}

    def to(self, dtype: torch.dtype) -> ParamStore:
        """Copy of the store in another precision (optimizer state included)."""
        out = ParamStore(self.seed, dtype)
        for n, p in self.params.items():
            out.params[n] = p.detach().to(dtype).clone().requires_grad_(True)
        out.opt_state = {k: v.to(dtype).clone() for k, v in self.opt_state.items()}
        out.opt_step = self.opt_step
        out.meta = json.loads(json.dumps(self.meta))
        return out

    def flat(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.params.values()]) if self.params else torch.zeros(0)


# ---------------------------------------------------------------- layers

def linear(store: ParamStore, prefix: str, x: torch.Tensor) -> torch.Tensor:
    w = store[f"{prefix}.w"]
    if x.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"{prefix}: input dim {x.shape[-1]} != {w.shape[1]}")
    b = store.params.get(f"{prefix}.b")
    return torch.nn.functional.linear(x, w, b)


def layer_norm(store: ParamStore, prefix: str, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    xhat = (x - mu) / torch.sqrt(var + eps)
    return xhat * store[f"{prefix}.g"] + store[f"{prefix}.b"]


def silu(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    z = x - x.max(dim=dim, keepdim=True).values.detach()
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def log_softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    z = x - x.max(dim=dim, keepdim=True).values.detach()
    return z - torch.log(torch.exp(z).sum(dim=dim, keepdim=True))


def embedding(store: ParamStore, name: str, idx: torch.Tensor) -> torch.Tensor:
    return store[name][idx]


def mlp(store: ParamStore, prefix: str, x: torch.Tensor) -> torch.Tensor:
    """Two-layer perceptron with a SiLU hidden layer."""
    return linear(store, f"{prefix}.fc2", silu(linear(store, f"{prefix}.fc1", x)))


def add_mlp(store: ParamStore, prefix: str, d_in: int, d_hidden: int, d_out: int) -> None:
    store.add_linear(f"{prefix}.fc1", d_in, d_hidden)
    store.add_linear(f"{prefix}.fc2", d_hidden, d_out)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Scaled dot-product attention ``softmax(q kᵀ/√d + bias) v``.

    ``q``: (..., Lq, d), ``k``: (..., Lk, d), ``v``: (..., Lk, dv). ``mask`` is
    a boolean tensor broadcastable to (..., Lq, Lk), True where attention is
    allowed. Disallowed logits are set to the lowest finite value, which
    vanishes exactly after the max shift whenever any key is allowed.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"attention shapes q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)}")
    scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    if mask is not None:
        try:
            mask = torch.broadcast_to(mask, scores.shape)
        except RuntimeError as exc:
            raise ShapeMismatch(f"mask {tuple(mask.shape)} not broadcastable to {tuple(scores.shape)}") from exc
        scores = scores.masked_fill(~mask, torch.finfo(scores.dtype).min)
    return torch.matmul(softmax(scores, dim=-1), v)


def add_mha(store: ParamStore, prefix: str, d_model: int) -> None:
    for part in ("q", "k", "v", "o"):
        store.add_linear(f"{prefix}.{part}", d_model, d_model)


def multi_head_attention(store: ParamStore, prefix: str, x: torch.Tensor, n_heads: int,
                         mask: torch.Tensor | None = None, kv: torch.Tensor | None = None) -> torch.Tensor:
    """Multi-head attention over (..., L, d) inputs; ``mask`` is (..., Lq, Lk)."""
    kv = x if kv is None else kv
    d = x.shape[-1]
    if d % n_heads:
        raise ShapeMismatch(f"d_model {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def split(t):
        return t.reshape(*t.shape[:-1], n_heads, dh).transpose(-2, -3)

    q = split(linear(store, f"{prefix}.q", x))
    k = split(linear(store, f"{prefix}.k", kv))
    v = split(linear(store, f"{prefix}.v", kv))
    if mask is not None:
        mask = mask.unsqueeze(-3)
    out = attention(q, k, v, mask).transpose(-2, -3)
    return linear(store, f"{prefix}.o", out.reshape(*out.shape[:-2], d))


# ---------------------------------------------------------------- training

def backward(loss: torch.Tensor, store: ParamStore) -> dict[str, torch.Tensor]:
    """Populate gradients of a scalar ``loss`` for every parameter in ``store``."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise GraphUnavailable("loss was not produced by a recorded computation")
    if loss.numel() != 1:
        raise ShapeMismatch("loss must be a scalar")
    store.zero_grad()
    loss.backward()
    return store.grads()


@torch.no_grad()
def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected adaptive moment update of every parameter."""
    store.opt_step += 1
    t = store.opt_step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        m = store.opt_state.setdefault(f"adam.m/{name}", torch.zeros_like(p))
        v = store.opt_state.setdefault(f"adam.v/{name}", torch.zeros_like(p))
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        if lr:
            p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + eps))


sgd_adam_step = adam_step


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(store: ParamStore, path) -> None:
    """Write a JSON manifest plus a raw little-endian payload in one file."""
    entries = []
    blobs = []
    offset = 0
    tensors = list(store.params.items()) + sorted(store.opt_state.items())
    for name, t in tensors:
        dname = _dtype_name(t.dtype)
        raw = t.detach().cpu().numpy().astype(_DTYPES[dname][1], copy=False).tobytes(order="C")
        entries.append({"name": name, "shape": list(t.shape), "dtype": dname, "byte_offset": offset,
                        "kind": "param" if name in store.params else "opt"})
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    manifest = {
        "format": "fleetlab-checkpoint/1",
        "seed": store.seed,
        "dtype": _dtype_name(store.dtype),
        "opt_step": store.opt_step,
        "meta": store.meta,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "entries": entries,
    }
    head = json.dumps(manifest, sort_keys=True, allow_nan=False).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(payload)


def load_checkpoint(path) -> ParamStore:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != _MAGIC:
        raise CorruptManifest("not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        manifest = json.loads(data[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptManifest("unreadable manifest") from exc
    payload = data[16 + n:]
    if len(payload) != manifest.get("payload_bytes") or hashlib.sha256(payload).hexdigest() != manifest.get("payload_sha256"):
        raise CorruptManifest("payload hash mismatch")
    store = ParamStore(manifest["seed"], _DTYPES[manifest["dtype"]][0])
    store.opt_step = int(manifest["opt_step"])
    store.meta = manifest.get("meta", {})
    for e in manifest["entries"]:
        dt, np_dt = _DTYPES[e["dtype"]]
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype=np_dt, count=count, offset=e["byte_offset"]).reshape(e["shape"])
        t = torch.from_numpy(arr.astype(np_dt.replace("<", "="), copy=True))
        if e["kind"] == "param":
            store.params[e["name"]] = t.requires_grad_(True)
        else:
            store.opt_state[e["name"]] = t
    return store


# ---------------------------------------------------------------- op counting

def count_flops(fn, *args, **kwargs) -> tuple[int, object]:
    """Run ``fn`` under torch's operation counter; returns (flops, result)."""
    from torch.utils.flop_counter import FlopCounterMode

    with FlopCounterMode(display=False) as counter:
        result = fn(*args, **kwargs)
    return int(counter.get_total_flops()), result
