"""Seeded storage and sortation floor generators."""

from __future__ import annotations

from ..floor import FloorGraph, grid_floor
from ..rng import make_rng


class InvalidDimensions(ValueError):
    pass


def _perimeter(width: int, height: int) -> list[tuple[int, int]]:
    """Non-corner perimeter cells in a fixed order."""
    cells = [(x, 0) for x in range(1, width - 1)]
    cells += [(width - 1, y) for y in range(1, height - 1)]
    cells += [(x, height - 1) for x in range(width - 2, 0, -1)]
    cells += [(0, y) for y in range(height - 2, 0, -1)]
    return cells


def generate_floor(kind: str, width: int, height: int, seed: int, cell_pitch_m: float = 1.0) -> FloorGraph:
    """Generate a grid floor of the given kind.

    Storage floors get two-wide storage blocks between one-wide aisles, with
    pick/stow stations on the perimeter. Sortation floors get a lattice of
    dropoff cells with pickup stations on the perimeter. Every vertex is
    traversable and edges are bidirectional, so all vertices are mutually
    reachable.
    """
    if kind not in ("storage", "sortation"):
        raise ValueError(f"unknown floor kind {kind!r}")
    if width < 4 or height < 4:
        raise InvalidDimensions(f"floor must be at least 4x4, got {width}x{height}")
    rng = make_rng(seed, "floor", kind, width, height)
    kinds: dict[tuple[int, int], str] = {}
    corners = [(0, 0), (width - 1, 0), (width - 1, height - 1), (0, height - 1)]
    kinds[corners[int(rng.integers(4))]] = "charging"
    rim = _perimeter(width, height)

    if kind == "storage":
        phase = int(rng.integers(3))
        y_lo, y_hi = (2, height - 3) if height >= 6 else (1, height - 2)
        for x in range(1, width - 1):
            if (x - 1 + phase) % 3 == 2:
                continue
            for y in range(y_lo, y_hi + 1):
                kinds[(x, y)] = "storage"
        if "storage" not in kinds.values():
            kinds[(1, 1)] = "storage"
        n_stations = max(2, len(rim) // 6)
        picks = sorted(int(i) for i in rng.choice(len(rim), size=n_stations, replace=False))
        for j, i in enumerate(picks):
            kinds[rim[i]] = "pick" if j % 2 == 0 else "stow"
    else:
        phase = int(rng.integers(2))
        lo_x, hi_x = (2, width - 3) if width >= 6 else (1, width - 2)
        lo_y, hi_y = (2, height - 3) if height >= 6 else (1, height - 2)
        for x in range(lo_x, hi_x + 1):
            for y in range(lo_y, hi_y + 1):
                if (x + phase) % 2 == 0 and (y + phase) % 2 == 0:
                    kinds[(x, y)] = "dropoff"
        if "dropoff" not in kinds.values():
            kinds[(width // 2, height // 2)] = "dropoff"
        n_stations = max(2, len(rim) // 4)
        for i in sorted(int(i) for i in rng.choice(len(rim), size=n_stations, replace=False)):
            kinds[rim[i]] = "pickup"
    return grid_floor(width, height, kinds, cell_pitch_m)
