"""Ego-frame normalization."""

from __future__ import annotations

import numpy as np

from ..floor import Heading


def rotate_cw(dx, dy, quarter_turns: int):
    """Rotate offsets clockwise by ``quarter_turns`` (works on scalars and arrays)."""
    q = quarter_turns % 4
    if q == 0:
        return dx, dy
    if q == 1:
        return dy, -dx
    if q == 2:
        return -dx, -dy
    return -dy, dx


def to_ego_frame(ego_xy, ego_heading: Heading, world_point, world_heading: Heading | None = None):
    """Express ``world_point`` (and optionally a heading) in the ego frame.

    The ego sits at the origin facing +x. Returns ``(rel_x, rel_y, rel_heading)``
    with ``rel_heading`` None when no heading was given.
    """
    dx = world_point[0] - ego_xy[0]
    dy = world_point[1] - ego_xy[1]
    rx, ry = rotate_cw(dx, dy, int(ego_heading))
    rel_h = None if world_heading is None else Heading((int(world_heading) - int(ego_heading)) % 4)
    return rx, ry, rel_h


def ego_offsets(ego_xy, ego_heading: Heading, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return rotate_cw(np.asarray(xs) - ego_xy[0], np.asarray(ys) - ego_xy[1], int(ego_heading))
