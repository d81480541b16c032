"""Streaming reconstruction engine and frame read-out.

The engine owns all mutable state in flat numpy arrays sized for cache
residency (10 bytes of filter state per pixel plus a 4-byte-per-entry ring
queue capped at the pixel count). Events are consumed in blocks through the
fused kernels; a frame can be read out at any instant without touching state.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Iterator

import numpy as np

from . import _kernels
from .core import Event, EventArray, FilterParams, SensorGeometry
from .errors import ConfigError, DataError, OrderError
from ._kernels import (
    QS_BLUR,
    QS_EVCTR,
    QS_HEAD,
    QS_LEN,
    QS_NPIX,
    QS_NTILES,
    QS_QTMAX,
    QS_QTMIN,
    QS_SIZE,
    QS_STALE,
    QS_TARGET,
)

logger = logging.getLogger("fibar")

PERCENTILE_LO = 1.0
PERCENTILE_HI = 99.0


@dataclass
class Frame:
    """Rendered 8-bit grayscale view of the brightness grid."""

    pixels: np.ndarray  # uint8, shape (height, width)
    readout_time: int
    scale_mode: str
    bounds: tuple[float, float]
    degenerate: bool = False

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


class ReconstructionEngine:
    """Full mutable reconstruction state for one sensor."""

    def __init__(
        self,
        geometry: SensorGeometry,
        params: FilterParams,
        threshold_map: np.ndarray | None = None,
        strict: bool = False,
        regulate_every: int = 1,
        blur_enabled: bool = True,
    ):
        if params.q_max > geometry.n_pix:
            raise ConfigError("q_max exceeds pixel count")
        if regulate_every < 1:
            raise ConfigError("regulate_every must be >= 1")
        self.geometry = geometry
        self.params = params
        self.strict = strict
        self.regulate_every = regulate_every
        self.blur_enabled = blur_enabled

        n = geometry.n_pix
        self.p_bar = np.zeros(n, dtype=np.float32)
        self.l = np.zeros(n, dtype=np.float32)
        self.active_count = np.zeros(n, dtype=np.uint16)
        self.tiles_x = -(-geometry.width // params.tile_side)
        tiles_y = -(-geometry.height // params.tile_side)
        self.tile_count = np.zeros(self.tiles_x * tiles_y, dtype=np.uint8)
        self.qcap = n + 1
        self.qx = np.zeros(self.qcap, dtype=np.uint16)
        self.qy = np.zeros(self.qcap, dtype=np.uint16)
        self.qs = np.zeros(QS_SIZE, dtype=np.int64)
        q0 = min(max(n // 16, params.q_min), params.q_max)
        self.qs[QS_TARGET] = q0
        self.qs[QS_QTMIN] = q0
        self.qs[QS_QTMAX] = q0

        if threshold_map is not None:
            gain = np.asarray(threshold_map, dtype=np.float32)
            if gain.shape != (geometry.height, geometry.width):
                raise ConfigError(
                    f"threshold map shape {gain.shape} does not match geometry "
                    f"{geometry.height}x{geometry.width}"
                )
            if not np.all(np.isfinite(gain)) or np.any(gain <= 0):
                raise DataError("threshold map entries must be finite and positive")
            self._gain = np.ascontiguousarray(gain.reshape(-1))
            self._use_gain = True
        else:
            self._gain = np.ones(1, dtype=np.float32)
            self._use_gain = False

        # coefficients premultiplied once, stored at state precision
        self._alpha32 = np.float32(params.alpha)
        self._one_m_alpha32 = np.float32(1.0 - params.alpha)
        self._beta32 = np.float32(params.beta)
        self._half_1p_beta32 = np.float32(params.half_one_plus_beta)

        self.event_count = 0
        self.oob_dropped = 0
        self.last_t: int | None = None

    # -- views ---------------------------------------------------------------

    @property
    def l_grid(self) -> np.ndarray:
        return self.l.reshape(self.geometry.height, self.geometry.width)

    @property
    def p_bar_grid(self) -> np.ndarray:
        return self.p_bar.reshape(self.geometry.height, self.geometry.width)

    @property
    def queue_length(self) -> int:
        return int(self.qs[QS_LEN])

    @property
    def q_target(self) -> int:
        return int(self.qs[QS_TARGET])

    @property
    def q_target_range_seen(self) -> tuple[int, int]:
        return int(self.qs[QS_QTMIN]), int(self.qs[QS_QTMAX])

    @property
    def n_pix_act(self) -> int:
        return int(self.qs[QS_NPIX])

    @property
    def n_tiles_act(self) -> int:
        return int(self.qs[QS_NTILES])

    @property
    def blur_count(self) -> int:
        return int(self.qs[QS_BLUR])

    @property
    def stale_count(self) -> int:
        return int(self.qs[QS_STALE])

    def fill_ratio(self) -> Fraction | None:
        if self.n_tiles_act < 1:
            return None
        return Fraction(self.n_pix_act, self.n_tiles_act * self.params.tile_area)

    def iap(self) -> np.ndarray:
        """Image of active pixels: per-pixel count of queued events."""
        return self.active_count.reshape(self.geometry.height, self.geometry.width).copy()

    def state_bytes(self) -> int:
        arrays = (self.p_bar, self.l, self.active_count, self.tile_count, self.qx, self.qy, self.qs)
        return sum(a.nbytes for a in arrays) + (self._gain.nbytes if self._use_gain else 0)

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.p_bar, self.l, self.active_count, self.tile_count, self.qx, self.qy, self.qs):
            h.update(a.tobytes())
        return h.hexdigest()

    # -- event intake ----------------------------------------------------------

    def process(self, event: Event) -> None:
        """Apply a single event (wraps the block path)."""
        self.process_array(
            EventArray(
                np.array([event.t], np.uint64),
                np.array([event.x], np.uint16),
                np.array([event.y], np.uint16),
                np.array([event.polarity], np.int8),
            )
        )

    def process_array(self, block: EventArray) -> None:
        """Apply a block of events in order."""
        if not len(block):
            return
        xs, ys, ps, ts = block.x, block.y, block.p, block.t
        oob = (xs >= self.geometry.width) | (ys >= self.geometry.height)
        if oob.any():
            if self.strict:
                i = int(np.nonzero(oob)[0][0])
                raise DataError(
                    f"event {self.event_count + i} at ({int(xs[i])},{int(ys[i])}) outside "
                    f"{self.geometry.width}x{self.geometry.height}"
                )
            keep = ~oob
            self.oob_dropped += int(oob.sum())
            xs, ys, ps, ts = xs[keep], ys[keep], ps[keep], ts[keep]
            if not len(xs):
                return
        if self.strict:
            if self.last_t is not None and int(ts[0]) < self.last_t:
                raise OrderError("event timestamps regress across blocks")
            if np.any(ts[1:] < ts[:-1]):
                raise OrderError("event timestamps regress within a block")

        p = self.params
        if p.spatial_enabled:
            _kernels.full_chunk(
                xs, ys, ps,
                self.geometry.width, self.geometry.height,
                self.tiles_x, p.tile_side, p.tile_area,
                self.p_bar, self.l, self.active_count, self.tile_count,
                self.qx, self.qy, self.qcap, self.qs,
                self._alpha32, self._one_m_alpha32, self._beta32, self._half_1p_beta32,
                self._gain, self._use_gain,
                p.fill_ratio_target.numerator, p.fill_ratio_target.denominator,
                p.q_min, p.q_max,
                self.blur_enabled, self.regulate_every,
            )
        else:
            _kernels.temporal_chunk(
                xs, ys, ps,
                self.geometry.width,
                self.p_bar, self.l,
                self._alpha32, self._one_m_alpha32, self._beta32, self._half_1p_beta32,
                self._gain, self._use_gain,
            )
        self.event_count += len(xs)
        self.last_t = int(ts[-1])

    # -- read-out ----------------------------------------------------------------

    def render(self, scale_mode: str = "robust", fixed_bound: float = 1.0, readout_time: int = 0) -> Frame:
        """Map the brightness grid to 8-bit gray; never mutates engine state.

        "robust" stretches the 1st..99th percentile to [0, 255]; "fixed" maps
        [-a, +a] affinely with clamping. Rounding is half-up, so 0 maps to 128
        in fixed mode. A degenerate (flat) grid renders mid-gray.
        """
        values = self.l_grid.astype(np.float64)
        if scale_mode == "robust":
            lo, hi = np.percentile(values, [PERCENTILE_LO, PERCENTILE_HI])
        elif scale_mode == "fixed":
            if not (fixed_bound > 0):
                raise ConfigError("fixed scale bound must be positive")
            lo, hi = -float(fixed_bound), float(fixed_bound)
        else:
            raise ConfigError(f"unknown scale mode {scale_mode!r}")
        degenerate = not (hi > lo)
        if degenerate:
            pixels = np.full(values.shape, 128, dtype=np.uint8)
            return Frame(pixels, readout_time, scale_mode, (float(lo), float(hi)), True)
        scaled = (values - lo) * (255.0 / (hi - lo))
        pixels = np.clip(np.floor(scaled + 0.5), 0.0, 255.0).astype(np.uint8)
        return Frame(pixels, readout_time, scale_mode, (float(lo), float(hi)), False)


# -- frame output ------------------------------------------------------------------


def write_pgm(frame: Frame, path) -> None:
    """Binary PGM (P5, maxval 255)."""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        fh.write(frame.pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ConfigError(f"not a binary PGM: {magic!r}")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = (int(v) for v in line.split())
        maxval = int(fh.readline())
        if maxval != 255:
            raise ConfigError("only maxval 255 PGM supported")
        data = fh.read(w * h)
        return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


@dataclass
class RunResult:
    frames_emitted: int
    events_processed: int
    oob_dropped: int
    blur_count: int


def _readout_times(fps: float | None, explicit) -> tuple[Iterator[float], bool]:
    if explicit is not None:
        times = list(explicit)
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigError("explicit readout times must be non-decreasing")
        return iter(times), True
    if fps is None or not (fps > 0):
        raise ConfigError("need fps > 0 or explicit readout times")
    period = 1e6 / fps

    def gen():
        k = 1
        while True:
            yield k * period
            k += 1

    return gen(), False


def run(
    engine: ReconstructionEngine,
    blocks: Iterable[EventArray],
    *,
    fps: float | None = 40.0,
    readout_times=None,
    scale_mode: str = "robust",
    fixed_bound: float = 1.0,
    frame_sink: Callable[[int, Frame], None] | None = None,
    out_dir=None,
    diagnostics_path=None,
) -> RunResult:
    """Stream events through the engine, reading out frames on a time grid.

    A frame read out at time r reflects exactly the events with t < r. With
    fps cadence the grid is k/fps for k = 1, 2, ... up to the last event's
    timestamp; explicit readout times are honored verbatim, and any that fall
    after the stream's end render the final state.
    """
    if frame_sink is None and out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

        def frame_sink(index: int, frame: Frame) -> None:
            write_pgm(frame, os.path.join(out_dir, f"frame_{index:06d}.pgm"))

    diag = None
    if diagnostics_path is not None:
        diag = open(diagnostics_path, "w")
        diag.write("frame,readout_us,q_target,fill_ratio,n_pix_act,n_tiles_act,blur_count\n")

    times, explicit = _readout_times(fps, readout_times)
    next_r = next(times, None)
    frame_index = 0

    def emit(readout) -> None:
        nonlocal frame_index
        frame = engine.render(scale_mode, fixed_bound, readout_time=int(readout))
        if frame_sink is not None:
            frame_sink(frame_index, frame)
        if diag is not None:
            r = engine.fill_ratio()
            diag.write(
                f"{frame_index},{int(readout)},{engine.q_target},"
                f"{float(r) if r is not None else math.nan:.6f},"
                f"{engine.n_pix_act},{engine.n_tiles_act},{engine.blur_count}\n"
            )
        frame_index += 1

    try:
        for block in blocks:
            if not len(block):
                continue
            ts = block.t
            pos = 0
            while next_r is not None and next_r <= ts[-1]:
                idx = int(np.searchsorted(ts, next_r, side="left"))
                if idx > pos:
                    engine.process_array(block.slice(pos, idx))
                    pos = idx
                emit(next_r)
                next_r = next(times, None)
            if pos < len(block):
                engine.process_array(block.slice(pos, len(block)))
        if explicit:
            while next_r is not None:
                emit(next_r)
                next_r = next(times, None)
    finally:
        if diag is not None:
            diag.close()

    logger.info("run complete: %d frames, %d events", frame_index, engine.event_count)
    return RunResult(frame_index, engine.event_count, engine.oob_dropped, engine.blur_count)
