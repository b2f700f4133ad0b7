"""Deterministic rendering of observations to PNG for the annotation UI.

A 7x7x3 observation becomes a 224x224 image (32 px cells). Cells are painted
from a fixed palette keyed by object and color id; the agent's own position
(bottom-center of the egocentric view) carries a forward-pointing wedge.
The PNG encoder is written against the stdlib only (zlib), so identical
observations give byte-identical files on any platform, forever.
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

from .envs import base

CELL = 32
SIZE = 7 * CELL

# color-channel palette (RGB)
COLORS = np.array(
    [
        (203, 70, 56),    # 0 red
        (84, 176, 72),    # 1 green
        (64, 106, 220),   # 2 blue
        (222, 200, 60),   # 3 yellow
        (160, 74, 200),   # 4 purple
        (72, 200, 198),   # 5 cyan
    ],
    dtype=np.uint8,
)

BACKGROUND = np.array((28, 28, 32), dtype=np.uint8)
WALL_RGB = np.array((92, 92, 98), dtype=np.uint8)
DOOR_RGB = np.array((150, 110, 60), dtype=np.uint8)
GOAL_RGB = np.array((240, 240, 240), dtype=np.uint8)
AGENT_RGB = np.array((250, 250, 250), dtype=np.uint8)
STATE_BORDER = {1: np.array((180, 180, 180), dtype=np.uint8),
                2: np.array((255, 255, 255), dtype=np.uint8)}


def _shape_mask(obj: int) -> np.ndarray:
    """Boolean 32x32 footprint for an object id, distinct per type."""
    yy, xx = np.mgrid[0:CELL, 0:CELL]
    cy = cx = (CELL - 1) / 2.0
    r = CELL * 0.34
    if obj == base.BALL:
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if obj == base.BOX:
        return (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    if obj == base.KEY:
        return (np.abs(xx - cx) <= CELL * 0.12) | ((yy - cy) ** 2 + (xx - cx) ** 2 <= (r * 0.6) ** 2)
    if obj == base.STAR:
        return np.abs(yy - cy) + np.abs(xx - cx) <= r
    if obj == base.RING:
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return (d2 <= r * r) & (d2 >= (r * 0.55) ** 2)
    if obj == base.GEM:
        return (np.abs(yy - cy) * 0.6 + np.abs(xx - cx)) <= r
    if obj == base.ARROW:
        return (yy - 6 >= np.abs(xx - cx) * 1.6) & (yy <= CELL - 7)
    return np.zeros((CELL, CELL), dtype=bool)


_SHAPES = {obj: _shape_mask(obj) for obj in range(11)}


def render_observation(obs: np.ndarray) -> np.ndarray:
    """(7, 7, 3) observation to a (224, 224, 3) uint8 image."""
    obs = np.asarray(obs)
    if obs.shape != (7, 7, 3):
        raise ValueError(f"expected a 7x7x3 observation, got {obs.shape}")
    img = np.empty((SIZE, SIZE, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for r in range(7):
        for c in range(7):
            obj, color, state = (int(v) for v in obs[r, c])
            y0, x0 = r * CELL, c * CELL
            cell = img[y0 : y0 + CELL, x0 : x0 + CELL]
            if obj == base.WALL:
                cell[:] = WALL_RGB
            elif obj == base.DOOR:
                cell[:] = DOOR_RGB
                cell[6:-6, 6:-6] = BACKGROUND
            elif obj == base.GOAL:
                cell[:] = GOAL_RGB // 2
                cell[4:-4, 4:-4] = GOAL_RGB
            elif obj != base.EMPTY:
                cell[_SHAPES[obj]] = COLORS[color]
            if state in STATE_BORDER:
                border = STATE_BORDER[state]
                cell[:2, :] = border
                cell[-2:, :] = border
                cell[:, :2] = border
                cell[:, -2:] = border
            # faint grid line
            cell[0, :] = np.maximum(cell[0, :], 40)
            cell[:, 0] = np.maximum(cell[:, 0], 40)
    # agent wedge at the view anchor (row 6, column 3), pointing forward (up)
    y0, x0 = 6 * CELL, 3 * CELL
    yy, xx = np.mgrid[0:CELL, 0:CELL]
    wedge = (yy - 5 >= np.abs(xx - (CELL - 1) / 2.0) * 1.4) & (yy <= CELL - 6)
    img[y0 : y0 + CELL, x0 : x0 + CELL][wedge] = AGENT_RGB
    return img


# ---------------------------------------------------------------------------
# minimal PNG writer (8-bit RGB, no filtering)


def _chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))


def encode_png(image: np.ndarray) -> bytes:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    raw = b"".join(b"\x00" + image[y].tobytes() for y in range(h))
    return b"".join(
        [
            b"\x89PNG\r\n\x1a\n",
            _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)),
            _chunk(b"IDAT", zlib.compress(raw, 9)),
            _chunk(b"IEND", b""),
        ]
    )


def observation_png(obs: np.ndarray) -> bytes:
    return encode_png(render_observation(obs))
