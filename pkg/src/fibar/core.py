"""Core domain types and filter-coefficient math.

Everything here is immutable after construction and safe to share across
workers. Coefficients are always derived at 64-bit precision; the streaming
engine downcasts to 32-bit state separately.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import ConfigError

# Floor below which the closed-form coefficient recipes leave (0, 1).
MIN_CUTOFF_PERIOD = 4.0


class Event(NamedTuple):
    """A single sensor event: timestamp (microseconds), pixel, polarity (+1/-1)."""

    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True)
class SensorGeometry:
    """Sensor pixel-array dimensions."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ConfigError(f"geometry must be at least 2x2, got {self.width}x{self.height}")
        if self.width * self.height > 0xFFFFFFFF:
            raise ConfigError("pixel count must fit in 32 bits")

    @property
    def n_pix(self) -> int:
        return self.width * self.height

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


@dataclass(frozen=True)
class FilterParams:
    """Derived filter coefficients plus spatial-filter targets.

    ``alpha`` drives the polarity detrending average, ``beta`` the high-pass
    integration stage. ``fill_ratio_target`` is kept as an exact rational so
    the queue regulator can run on integers only.
    """

    t_cut: float
    omega_cut: float
    alpha: float
    beta: float
    fill_ratio_target: Fraction
    tile_side: int = 2
    q_min: int = 256
    q_max: int = 0
    spatial_enabled: bool = True

    @property
    def tile_area(self) -> int:
        return self.tile_side * self.tile_side

    @property
    def half_one_plus_beta(self) -> float:
        return 0.5 * (1.0 + self.beta)


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, tuple):
        return Fraction(value[0], value[1])
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # keep the regulator's integer products small
        return Fraction(value).limit_denominator(1000)
    raise ConfigError(f"cannot interpret fill ratio {value!r}")


def cutoff_coefficients(t_cut: float) -> tuple[float, float, float]:
    """Return (omega_cut, alpha, beta) for a cutoff period given in events.

    Both filter stages are tuned so their squared magnitude response drops to
    half its maximum at ``omega_cut``. The beta radical is evaluated through
    the factored form (1-cos)(3-cos) with 1-cos computed as 2*sin^2(w/2),
    which stays fully accurate for large t_cut where the naive square loses
    all significant digits.
    """
    if not (t_cut > MIN_CUTOFF_PERIOD):
        raise ConfigError(f"t_cut must exceed {MIN_CUTOFF_PERIOD}, got {t_cut}")
    omega = 2.0 * math.pi / t_cut
    alpha = (1.0 - math.sin(omega)) / math.cos(omega)
    one_minus_cos = 2.0 * math.sin(0.5 * omega) ** 2
    u = 1.0 + one_minus_cos  # 2 - cos(omega)
    beta = u - math.sqrt(one_minus_cos * (u + 1.0))
    if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
        raise ConfigError(f"t_cut={t_cut} yields coefficients outside (0,1)")
    return omega, alpha, beta


def compute_params(
    t_cut: float,
    fill_ratio_target=Fraction(1, 2),
    geometry: SensorGeometry | None = None,
    *,
    tile_side: int = 2,
    q_min: int | None = None,
    q_max: int | None = None,
    spatial_enabled: bool = True,
) -> FilterParams:
    """Derive all filter parameters from the cutoff period and fill-ratio target.

    ``q_min`` defaults to 256 (clamped to the pixel count on tiny sensors) and
    ``q_max`` to the pixel count, which also bounds the queue memory.
    """
    omega, alpha, beta = cutoff_coefficients(float(t_cut))
    if tile_side < 2:
        raise ConfigError(f"tile_side must be >= 2, got {tile_side}")
    ratio = _as_fraction(fill_ratio_target)
    area = tile_side * tile_side
    if not (Fraction(1, area) <= ratio <= 1):
        raise ConfigError(
            f"fill ratio target {ratio} outside [1/{area}, 1] for {tile_side}x{tile_side} tiles"
        )
    n_pix = geometry.n_pix if geometry is not None else 0
    if q_max is None:
        q_max = n_pix if n_pix else 1 << 22
    if q_min is None:
        q_min = min(256, q_max)
    if q_min < 1:
        raise ConfigError("q_min must be >= 1")
    if n_pix and q_max > n_pix:
        raise ConfigError(f"q_max {q_max} exceeds pixel count {n_pix}")
    if q_min > q_max:
        raise ConfigError(f"q_min {q_min} exceeds q_max {q_max}")
    return FilterParams(
        t_cut=float(t_cut),
        omega_cut=omega,
        alpha=alpha,
        beta=beta,
        fill_ratio_target=ratio,
        tile_side=tile_side,
        q_min=q_min,
        q_max=q_max,
        spatial_enabled=spatial_enabled,
    )


def suggest_tcut(n_on: int, n_off: int) -> float:
    """Cutoff period for a signal that sweeps n_on up-events and n_off down-events."""
    if n_on < 0 or n_off < 0:
        raise ConfigError("event counts must be non-negative")
    if n_on == 0 and n_off == 0:
        raise ConfigError("cannot suggest a cutoff period from zero events")
    return 4.0 * max(n_on, n_off)


def bode_gain(omega: float, params: FilterParams) -> tuple[float, float, float]:
    """Magnitude response at angular frequency omega (radians per event).

    Returns (gain_total, gain_alpha, gain_beta) where gain_total is the
    product of the detrending stage's high-pass and the integrator stage's
    low-pass, evaluated on the unit circle.
    """
    if not (0.0 <= omega <= math.pi + 1e-12):
        raise ConfigError(f"omega must lie in [0, pi], got {omega}")
    z = cmath.exp(1j * omega)
    a, b = params.alpha, params.beta
    h_alpha = a * (z - 1.0) / (z - a)
    h_beta = z * (1.0 + b) / (2.0 * (z - b))
    ga = abs(h_alpha)
    gb = abs(h_beta)
    return ga * gb, ga, gb


@dataclass
class EventArray:
    """Column-oriented block of events (the in-memory hot-path representation).

    ``t`` is uint64 microseconds, ``x``/``y`` uint16 and ``p`` int8 holding
    exactly -1 or +1. All four columns share one length.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=np.uint64)
        self.x = np.ascontiguousarray(self.x, dtype=np.uint16)
        self.y = np.ascontiguousarray(self.y, dtype=np.uint16)
        self.p = np.ascontiguousarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ConfigError("event columns must have equal length")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def empty(cls) -> "EventArray":
        z = np.zeros(0, dtype=np.uint64)
        return cls(z, z.astype(np.uint16), z.astype(np.uint16), z.astype(np.int8))

    @classmethod
    def from_events(cls, events: Iterable[Event]) -> "EventArray":
        rows = list(events)
        if not rows:
            return cls.empty()
        t, x, y, p = zip(*rows)
        return cls(np.array(t, np.uint64), np.array(x, np.uint16), np.array(y, np.uint16), np.array(p, np.int8))

    @classmethod
    def concatenate(cls, blocks: Iterable["EventArray"]) -> "EventArray":
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            return cls.empty()
        return cls(
            np.concatenate([b.t for b in blocks]),
            np.concatenate([b.x for b in blocks]),
            np.concatenate([b.y for b in blocks]),
            np.concatenate([b.p for b in blocks]),
        )

    def slice(self, start: int, stop: int) -> "EventArray":
        return EventArray(self.t[start:stop], self.x[start:stop], self.y[start:stop], self.p[start:stop])

    def at_pixel(self, x: int, y: int) -> "EventArray":
        m = (self.x == x) & (self.y == y)
        return EventArray(self.t[m], self.x[m], self.y[m], self.p[m])

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self.t)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))
