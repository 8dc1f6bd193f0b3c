"""Training FLOP accounting.

Counts multiply-accumulates (MACs) of every dense product and converts them
to FLOPs with the usual constants: 2 FLOPs per MAC forward and twice that
backward, hence 6 per MAC for products whose input carries a gradient and
4 for the first projection of raw features (no input gradient needed).
Attention score and mixing products cost ``L^2 d`` MACs each per layer.
Layer norms, nonlinearities and lookups are ignored.
"""

from __future__ import annotations

from ..dataset.gf import EDGE_DIM, NODE_DIM
from ..dataset.rc import EGO_DIM, OBJECT_DIM, ROBOT_DIM, VERTEX_DIM

TRAIN_PER_MAC = 6
INPUT_PER_MAC = 4


def six_n_d(params: int, tokens: int) -> int:
    """The plain 6·N·D transformer training estimate."""
    return 6 * int(params) * int(tokens)


def _block_macs(d: int, d_ff: int) -> int:
    return 4 * d * d + 2 * d * d_ff


def rc_flops_per_example(config) -> int:
    d = config.d_model
    n = config.n_tokens_enc
    proj = d * (EGO_DIM + config.K_r * ROBOT_DIM + config.K_p * OBJECT_DIM + config.K_x * VERTEX_DIM)
    enc_layer = TRAIN_PER_MAC * (n * _block_macs(d, config.d_ff) + 2 * n * n * d)
    enc = (config.K + 1) * (INPUT_PER_MAC * proj + config.n_layers_enc * enc_layer)
    L = config.seq_len
    dec_layer = TRAIN_PER_MAC * (L * _block_macs(d, config.d_ff) + 2 * L * L * d)
    dec = config.n_layers_dec * dec_layer + TRAIN_PER_MAC * L * d * config.n_actions
    return enc + dec


def gf_macs(config, n_nodes: int, n_edges: int, n_readout: int) -> tuple[int, int, int, int]:
    """(input-projection MACs, per-node MACs, per-edge MACs, head MACs) for one graph."""
    d = config.d_emb
    proj = n_nodes * NODE_DIM * d + n_edges * EDGE_DIM * d
    node = n_nodes * d * d  # second layer of the node encoder
    edge = n_edges * d * d  # second layer of the edge encoder
    per_edge = 3 * d * d + d * d + 2 * (2 * d * d) + 2 * d  # message MLP, keys/values, scores and mixing
    per_node = 2 * d * d + d * d + 2 * d * d  # update MLP, query and output projections
    node += config.n_blocks * n_nodes * per_node
    edge += config.n_blocks * n_edges * per_edge
    heads = n_readout * d * config.head_width
    return proj, node, edge, heads


def gf_flops_per_example(config, n_nodes: int, n_edges: int, n_readout: int) -> int:
    proj, node, edge, heads = gf_macs(config, n_nodes, n_edges, n_readout)
    return INPUT_PER_MAC * proj + TRAIN_PER_MAC * (node + edge + heads)


def estimate_flops(model_family: str, config, examples: int, graph: tuple[int, int, int] | None = None) -> int:
    """Training FLOPs for ``examples`` samples (RC windows or GF graph windows).

    GF needs ``graph = (nodes, edges, readout nodes)`` per window; it defaults to
    an 8x8 floor with the configured context length.
    """
    examples = int(examples)
    if examples < 0:
        raise ValueError("examples must be non-negative")
    if model_family == "rc":
        return examples * rc_flops_per_example(config)
    if model_family == "gf":
        if graph is None:
            M, T = 64, config.T
            graph = (M * T, 224 * T + M * (T - 1), M)
        return examples * gf_flops_per_example(config, *graph)
    raise ValueError(f"unknown model family {model_family!r}")
