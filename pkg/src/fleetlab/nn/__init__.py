from .kernel import (
    CorruptManifest,
    GraphUnavailable,
    ParamStore,
    ShapeMismatch,
    adam_step,
    attention,
    backward,
    count_flops,
    embedding,
    layer_norm,
    linear,
    load_checkpoint,
    log_softmax,
    multi_head_attention,
    save_checkpoint,
    sgd_adam_step,
    silu,
    softmax,
)

__all__ = [
    "CorruptManifest", "GraphUnavailable", "ParamStore", "ShapeMismatch", "adam_step", "attention", "backward",
    "count_flops", "embedding", "layer_norm", "linear", "load_checkpoint", "log_softmax",
    "multi_head_attention", "save_checkpoint", "sgd_adam_step", "silu", "softmax",
]
