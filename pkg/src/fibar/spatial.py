"""Stale-pixel detection with a regulated active-event queue, plus one-time blur.

A global FIFO ring holds the most recent events ("active events"). A pixel is
active while it owns at least one queued event; when its last one is trimmed
from the front it goes stale and its brightness gets a single 3x3 blur. The
queue's target length is regulated so the image formed by active pixels keeps
a configured tile fill ratio, which keeps it sharp across scene textures.

These classes are the transparent reference implementation; the streaming
engine runs the same logic fused inside `_kernels.full_chunk`. Both paths
share state layout and float32 blur arithmetic, so they agree bit for bit.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .core import FilterParams, SensorGeometry
from .errors import ConfigError, InvariantError

BLUR_WEIGHTS = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.int64)  # /16 interior


class ActiveQueue:
    """FIFO ring of (x, y) entries, capacity fixed at construction."""

    def __init__(self, capacity: int):
        if capacity < 2:
            raise ConfigError("queue capacity must be >= 2")
        self.capacity = capacity
        self.qx = np.zeros(capacity, dtype=np.uint16)
        self.qy = np.zeros(capacity, dtype=np.uint16)
        self.head = 0
        self.length = 0

    def __len__(self) -> int:
        return self.length

    def push(self, x: int, y: int) -> None:
        if self.length >= self.capacity:
            raise InvariantError("active queue overflow")
        slot = self.head + self.length
        if slot >= self.capacity:
            slot -= self.capacity
        self.qx[slot] = x
        self.qy[slot] = y
        self.length += 1

    def pop(self) -> tuple[int, int]:
        if self.length == 0:
            raise InvariantError("pop from empty active queue")
        x = int(self.qx[self.head])
        y = int(self.qy[self.head])
        self.head += 1
        if self.head >= self.capacity:
            self.head -= self.capacity
        self.length -= 1
        return x, y


class TileGrid:
    """Per-tile active-pixel counters with running totals."""

    def __init__(self, geometry: SensorGeometry, tile_side: int = 2):
        self.tile_side = tile_side
        self.tiles_x = -(-geometry.width // tile_side)
        self.tiles_y = -(-geometry.height // tile_side)
        self.counts = np.zeros(self.tiles_x * self.tiles_y, dtype=np.uint8)
        self.n_pix_act = 0
        self.n_tiles_act = 0

    def _index(self, x: int, y: int) -> int:
        return (y // self.tile_side) * self.tiles_x + (x // self.tile_side)

    def pixel_activated(self, x: int, y: int) -> None:
        self.n_pix_act += 1
        ti = self._index(x, y)
        if self.counts[ti] == 0:
            self.n_tiles_act += 1
        if self.counts[ti] < 255:
            self.counts[ti] += 1

    def pixel_deactivated(self, x: int, y: int) -> None:
        self.n_pix_act -= 1
        ti = self._index(x, y)
        if self.counts[ti] > 0:
            self.counts[ti] -= 1
            if self.counts[ti] == 0:
                self.n_tiles_act -= 1


def fill_ratio(tiles: TileGrid) -> Fraction:
    """Active pixels over covered tile area, as an exact rational."""
    if tiles.n_tiles_act < 1:
        raise InvariantError("fill ratio undefined with no active tiles")
    area = tiles.tile_side * tiles.tile_side
    return Fraction(tiles.n_pix_act, tiles.n_tiles_act * area)


def regulate_queue(
    q_current: int,
    r_target: Fraction,
    n_pix_act: int,
    n_tiles_act: int,
    area: int,
    q_min: int,
    q_max: int,
) -> int:
    """Next target queue length, floor(q * r_target / r_observed), clamped.

    All integer arithmetic: q * num * n_tiles * area // (den * n_pix). The
    lower clamp keeps the floor from collapsing the queue to where it could
    never grow back.
    """
    if n_pix_act < 1 or n_tiles_act < 1:
        raise InvariantError("queue regulation needs at least one active pixel")
    q_next = (q_current * r_target.numerator * n_tiles_act * area) // (r_target.denominator * n_pix_act)
    return min(max(q_next, q_min), q_max)


def blur_pixel(l: np.ndarray, x: int, y: int) -> float:
    """New brightness at (x, y) after the renormalized 3x3 binomial blur.

    64-bit reference semantics; only the center value is meant to change.
    At borders the kernel renormalizes over in-bounds taps.
    """
    height, width = l.shape
    num = 0.0
    den = 0.0
    for dy in (-1, 0, 1):
        yy = y + dy
        if not 0 <= yy < height:
            continue
        for dx in (-1, 0, 1):
            xx = x + dx
            if not 0 <= xx < width:
                continue
            w = float(BLUR_WEIGHTS[dy + 1, dx + 1])
            num += w * float(l[yy, xx])
            den += w
    return num / den


class SpatialFilter:
    """Reference per-event driver for queue, tiles and blur bookkeeping.

    Operates on the same arrays the engine owns (brightness grid and
    active-count grid); blur arithmetic goes through the float32 kernel so a
    replay through this class reproduces the fused kernel bit for bit.
    """

    def __init__(self, geometry: SensorGeometry, params: FilterParams, regulate_every: int = 1):
        self.geometry = geometry
        self.params = params
        self.queue = ActiveQueue(geometry.n_pix + 1)
        self.tiles = TileGrid(geometry, params.tile_side)
        self.q_target = min(max(geometry.n_pix // 16, params.q_min), params.q_max)
        self.regulate_every = regulate_every
        self._since_regulation = 0
        self.blur_count = 0
        self.stale_count = 0

    def on_event(self, l_flat: np.ndarray, active_count: np.ndarray, x: int, y: int) -> list[tuple[int, int]]:
        """Track one event (temporal update must already be applied); returns blurred pixels."""
        from . import _kernels

        width = self.geometry.width
        height = self.geometry.height
        i = y * width + x
        self.queue.push(x, y)
        c = int(active_count[i])
        if c == 0:
            self.tiles.pixel_activated(x, y)
        if c < 65535:
            active_count[i] = c + 1

        blurred: list[tuple[int, int]] = []
        while len(self.queue) > self.q_target:
            px, py = self.queue.pop()
            ii = py * width + px
            cc = int(active_count[ii])
            if cc > 0:
                cc -= 1
                active_count[ii] = cc
                if cc == 0:
                    self.stale_count += 1
                    self.tiles.pixel_deactivated(px, py)
                    l_flat[ii] = _kernels.blur_at(l_flat, width, height, px, py)
                    self.blur_count += 1
                    blurred.append((px, py))

        self._since_regulation += 1
        if self._since_regulation >= self.regulate_every:
            self._since_regulation = 0
            if self.tiles.n_pix_act >= 1 and self.tiles.n_tiles_act >= 1:
                self.q_target = regulate_queue(
                    len(self.queue),
                    self.params.fill_ratio_target,
                    self.tiles.n_pix_act,
                    self.tiles.n_tiles_act,
                    self.params.tile_area,
                    self.params.q_min,
                    self.params.q_max,
                )
        return blurred
