"""Ideal event-sensor simulator and reference reconstructors.

This is the ground-truth side of the toolkit: scenes are synthesized directly
in log-brightness, and an ideal reference-level-crossing sensor turns them
into events. Per pixel, an ON event fires when brightness rises at least
c_on above the reference level (which then steps up by c_on), and an OFF
event when it falls c_off below (reference steps down). Ties at the exact
threshold fire. The scene must be sampled finely enough that brightness moves
less than a quarter of the smallest threshold per sample, which guarantees at
most one event per pixel per sample and no missed crossings.

Generation is deterministic: events within one sample are ordered row-major,
and scaling the duration (with sample count fixed) rescales timestamps only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EventArray, SensorGeometry
from .errors import ConfigError

SCENE_KINDS = ("triangle-global", "moving-edge", "translating-sinusoid")


@dataclass
class IdealSensorConfig:
    """Sensor model: per-pixel contrast thresholds, optional refractory time."""

    geometry: SensorGeometry
    c_on: np.ndarray | float = 0.1
    c_off: np.ndarray | float = 0.1
    refractory_us: int = 0
    seed: int = 0

    def threshold_grids(self) -> tuple[np.ndarray, np.ndarray]:
        shape = (self.geometry.height, self.geometry.width)
        on = np.broadcast_to(np.asarray(self.c_on, dtype=np.float64), shape)
        off = np.broadcast_to(np.asarray(self.c_off, dtype=np.float64), shape)
        if np.any(on <= 0) or np.any(off <= 0):
            raise ConfigError("contrast thresholds must be positive")
        return np.ascontiguousarray(on), np.ascontiguousarray(off)


@dataclass
class SceneSignal:
    """A synthetic log-brightness scene.

    kind "triangle-global": spatially uniform triangle wave, `amplitude`
    peak-to-peak over `period_s`, starting at the minimum.
    kind "moving-edge": a bright band (linear ramps of `ramp_px` on both
    sides of a `flat_px` plateau) translating in +x at `speed_px_s`,
    wrapping around.
    kind "translating-sinusoid": amplitude/2 * (1 + sin) grating of
    `wavelength_px` translating at `speed_px_s`.
    """

    kind: str
    amplitude: float
    duration_s: float
    sample_rate_hz: float
    period_s: float = 1.0
    speed_px_s: float = 0.0
    ramp_px: float = 4.0
    flat_px: float = 8.0
    wavelength_px: float = 32.0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigError(f"unknown scene kind {self.kind!r}; choose from {SCENE_KINDS}")
        if self.amplitude <= 0 or self.duration_s <= 0 or self.sample_rate_hz <= 0:
            raise ConfigError("amplitude, duration and sample rate must be positive")
        if self.kind == "triangle-global" and self.period_s <= 0:
            raise ConfigError("triangle scene needs period_s > 0")
        if self.kind in ("moving-edge", "translating-sinusoid") and self.speed_px_s <= 0:
            raise ConfigError(f"{self.kind} scene needs speed_px_s > 0")

    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def max_step(self) -> float:
        """Upper bound on per-sample brightness change at any pixel."""
        dt = 1.0 / self.sample_rate_hz
        if self.kind == "triangle-global":
            return 2.0 * self.amplitude / self.period_s * dt
        if self.kind == "moving-edge":
            return self.amplitude / self.ramp_px * self.speed_px_s * dt
        return self.amplitude * math.pi / self.wavelength_px * self.speed_px_s * dt


def _band_profile(u: np.ndarray, amplitude: float, ramp: float, flat: float) -> np.ndarray:
    """Trapezoid profile over distance u >= 0 from the band's leading edge."""
    up = np.clip(u / ramp, 0.0, 1.0)
    down = np.clip((u - ramp - flat) / ramp, 0.0, 1.0)
    return amplitude * (up - down)


def _column_values(scene: SceneSignal, width: int, t_s: float) -> np.ndarray:
    x = np.arange(width, dtype=np.float64)
    if scene.kind == "moving-edge":
        u = np.mod(x - scene.speed_px_s * t_s, float(width))
        return _band_profile(u, scene.amplitude, scene.ramp_px, scene.flat_px)
    u = (x - scene.speed_px_s * t_s) / scene.wavelength_px
    return 0.5 * scene.amplitude * (1.0 + np.sin(2.0 * math.pi * u))


def _scalar_value(scene: SceneSignal, t_s: float) -> float:
    phase = math.fmod(t_s / scene.period_s, 1.0)
    return scene.amplitude * (2.0 * phase if phase < 0.5 else 2.0 - 2.0 * phase)


def generate(scene: SceneSignal, sensor: IdealSensorConfig) -> EventArray:
    """Synthesize the event stream for a scene observed by an ideal sensor."""
    geometry = sensor.geometry
    c_on, c_off = sensor.threshold_grids()
    min_threshold = min(float(c_on.min()), float(c_off.min()))
    step = scene.max_step()
    if not (step < min_threshold / 4.0):
        raise ConfigError(
            f"scene moves up to {step:.3g} per sample but the anti-aliasing bound is "
            f"{min_threshold / 4.0:.3g}; raise sample_rate_hz"
        )

    width, height = geometry.width, geometry.height
    per_column = scene.kind != "triangle-global"
    n = scene.n_samples()
    c_on_f = c_on.reshape(-1)
    c_off_f = c_off.reshape(-1)
    ref = np.empty(height * width, dtype=np.float64)
    if per_column:
        ref[:] = np.broadcast_to(_column_values(scene, width, 0.0), (height, width)).reshape(-1)
    else:
        ref[:] = _scalar_value(scene, 0.0)

    refractory = int(sensor.refractory_us)
    last_fire = None
    if refractory > 0:
        last_fire = np.full(height * width, -np.inf)

    flat_index = np.arange(height * width, dtype=np.int64)
    ts_chunks: list[np.ndarray] = []
    idx_chunks: list[np.ndarray] = []
    pol_chunks: list[np.ndarray] = []
    level = np.empty(height * width, dtype=np.float64)

    for j in range(1, n + 1):
        t_s = j * scene.duration_s / n
        t_us = round(j * scene.duration_s * 1e6 / n)
        if per_column:
            level[:] = np.broadcast_to(_column_values(scene, width, t_s), (height, width)).reshape(-1)
        else:
            level[:] = _scalar_value(scene, t_s)
        diff = level - ref
        pol = np.zeros(height * width, dtype=np.int8)
        pol[diff >= c_on_f] = 1
        pol[diff <= -c_off_f] = -1
        if last_fire is not None:
            pol[t_us - last_fire < refractory] = 0
        fired = np.nonzero(pol)[0]
        if fired.size == 0:
            continue
        pf = pol[fired]
        ref[fired] += np.where(pf > 0, c_on_f[fired], -c_off_f[fired])
        if last_fire is not None:
            last_fire[fired] = t_us
        ts_chunks.append(np.full(fired.size, t_us, dtype=np.uint64))
        idx_chunks.append(flat_index[fired])
        pol_chunks.append(pf)

    if not ts_chunks:
        return EventArray.empty()
    t = np.concatenate(ts_chunks)
    idx = np.concatenate(idx_chunks)
    p = np.concatenate(pol_chunks)
    return EventArray(t, (idx % width).astype(np.uint16), (idx // width).astype(np.uint16), p)


def sample_threshold_maps(
    geometry: SensorGeometry,
    c_on_mean: float = 0.1,
    c_off_mean: float = 0.1,
    sigma: float = 0.0,
    seed: int = 0,
    mode: str = "independent",
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel threshold grids with lognormal fixed-pattern spread.

    mode "independent" draws separate deviates for ON and OFF, "common" uses
    one shared deviate, and "anticorrelated" applies +g to ON and -g to OFF
    (pure per-pixel imbalance with a nearly constant harmonic mean).
    """
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    shape = (geometry.height, geometry.width)
    rng = np.random.default_rng(seed)
    if sigma == 0:
        return np.full(shape, c_on_mean), np.full(shape, c_off_mean)
    g1 = rng.standard_normal(shape)
    if mode == "independent":
        g2 = rng.standard_normal(shape)
    elif mode == "common":
        g2 = g1
    elif mode == "anticorrelated":
        g2 = -g1
    else:
        raise ConfigError(f"unknown threshold mode {mode!r}")
    return c_on_mean * np.exp(sigma * g1), c_off_mean * np.exp(sigma * g2)


def reconstruct_simple(polarities) -> np.ndarray:
    """Running sum of polarities at one pixel, starting from zero."""
    return np.cumsum(np.asarray(polarities, dtype=np.int64)).astype(np.float64)


def reconstruct_calibrated(polarities, c_on: float, c_off: float) -> np.ndarray:
    """Running sum of threshold-weighted brightness changes at one pixel."""
    if c_on <= 0 or c_off <= 0:
        raise ConfigError("thresholds must be positive")
    p = np.asarray(polarities, dtype=np.float64)
    steps = np.where(p > 0, c_on, -c_off)
    return np.cumsum(steps)
