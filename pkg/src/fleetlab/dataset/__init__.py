from .ego import rotate_cw, to_ego_frame
from .gf import (GFBatch, GFTargets, SpatioTemporalGraph, WindowOutOfRange, batch_windows, build_gf_window,
                 build_graph)
from .manifest import DatasetManifest, InsufficientData, ManifestEntry, split_manifest, write_shards
from .rc import (DESK_PRESET, PAPER_PRESET, NeighborhoodObs, RCBatch, RCSample, RCTable, build_rc_samples,
                 build_rc_table, observe, stack_samples, stack_windows)

__all__ = [
    "rotate_cw", "to_ego_frame",
    "GFBatch", "GFTargets", "SpatioTemporalGraph", "WindowOutOfRange", "batch_windows", "build_gf_window",
    "build_graph",
    "DatasetManifest", "InsufficientData", "ManifestEntry", "split_manifest", "write_shards",
    "DESK_PRESET", "PAPER_PRESET", "NeighborhoodObs", "RCBatch", "RCSample", "RCTable", "build_rc_samples",
    "build_rc_table", "observe", "stack_windows",
    "stack_samples",
]
