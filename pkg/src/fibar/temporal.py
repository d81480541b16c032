"""Per-pixel two-stage temporal filter.

Each event advances the pixel's private clock by one tick; wall-clock
timestamps are never consulted, so trajectories depend only on event order.
The two stages are: an exponential moving average that cancels the ON/OFF
polarity imbalance, then a leaky integration of the detrended increment.

`update_pixel` / `update_pixel_iir` are the exact scalar (64-bit) reference
semantics; `stream_pixel` / `stream_pixel_iir` run whole polarity sequences
through the compiled kernels at a chosen state precision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .core import FilterParams
from .errors import DataError


@dataclass(frozen=True)
class PixelState:
    """Filter memory for one pixel: detrend average, brightness, queue membership."""

    p_bar: float = 0.0
    l: float = 0.0
    active_count: int = 0


def update_pixel(state: PixelState, polarity: int, params: FilterParams) -> tuple[PixelState, float]:
    """Apply one event to a pixel; returns (new state, detrended increment).

    Only this pixel's state is touched. The moving average is updated first,
    the increment is taken against the *new* average, then the brightness
    integrates the increment.
    """
    if polarity not in (-1, 1):
        raise DataError(f"polarity must be -1 or +1, got {polarity}")
    p = float(polarity)
    p_bar = params.alpha * state.p_bar + (1.0 - params.alpha) * p
    delta = p - p_bar
    l = params.beta * state.l + params.half_one_plus_beta * delta
    return replace(state, p_bar=p_bar, l=l), delta


def update_pixel_iir(
    l_prev: float, l_prev2: float, polarity: int, polarity_prev: int, params: FilterParams
) -> float:
    """One step of the equivalent combined second-order recurrence.

    Kept as a cross-check oracle only: the production path needs the two
    stages separated because the spatial blur rewrites the brightness value
    but must leave the moving average alone.
    """
    a, b = params.alpha, params.beta
    return (a + b) * l_prev - a * b * l_prev2 + 0.5 * a * (1.0 + b) * (polarity - polarity_prev)


def apply_threshold_map(delta: float, c_prime: float) -> float:
    """Scale a detrended increment by a pixel's relative threshold."""
    if not (c_prime > 0.0):
        raise DataError(f"relative threshold must be positive, got {c_prime}")
    return delta * c_prime


@dataclass
class PixelTrace:
    """Per-event trajectories of one pixel's filter state."""

    p_bar: np.ndarray
    delta: np.ndarray
    l: np.ndarray


def stream_pixel(polarities, params: FilterParams, dtype=np.float32) -> PixelTrace:
    """Run a polarity sequence through the two-stage filter from zero state.

    dtype selects the state precision: float32 matches the streaming engine
    bit for bit, float64 is the high-precision reference.
    """
    dt = np.dtype(dtype).type
    ps = np.asarray(polarities, dtype=np.int8).astype(dtype)
    n = len(ps)
    out = PixelTrace(np.empty(n, dtype), np.empty(n, dtype), np.empty(n, dtype))
    state = np.zeros(2, dtype)
    _kernels.temporal_trace(
        ps,
        dt(params.alpha),
        dt(1.0 - params.alpha),
        dt(params.beta),
        dt(params.half_one_plus_beta),
        state,
        out.p_bar,
        out.delta,
        out.l,
    )
    return out


def stream_pixel_iir(polarities, params: FilterParams, dtype=np.float32) -> np.ndarray:
    """Run a polarity sequence through the combined recurrence from zero state."""
    dt = np.dtype(dtype).type
    ps = np.asarray(polarities, dtype=np.int8).astype(dtype)
    out = np.empty(len(ps), dtype)
    state = np.zeros(3, dtype)
    _kernels.iir_trace(
        ps,
        dt(params.alpha + params.beta),
        dt(params.alpha * params.beta),
        dt(0.5 * params.alpha * (1.0 + params.beta)),
        state,
        out,
    )
    return out
