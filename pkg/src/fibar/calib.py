"""Relative contrast-threshold estimation from event counts.

Under a stationary, spatially uniform periodic stimulus, the brightness swing
|dL| at every pixel is the same, so a pixel's total event count is inversely
proportional to the harmonic mean of its ON and OFF thresholds. Dividing the
mean total count by a pixel's total count therefore yields that pixel's
threshold relative to the population harmonic mean -- |dL| cancels and never
needs to be known. Hot and dead pixels are excluded by a count quantile
before the mean is taken.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .core import EventArray, SensorGeometry
from .errors import ConfigError, DataError, EstimationError

MAP_CSV_HEADER = "x,y,c_prime,c_on_prime,c_off_prime,n_on,n_off,excluded"


def count_events(events, geometry: SensorGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel ON and OFF event counts (int64 grids)."""
    if isinstance(events, EventArray):
        blocks: Iterable[EventArray] = [events]
    else:
        blocks = events
    n = geometry.n_pix
    n_on = np.zeros(n, dtype=np.int64)
    n_off = np.zeros(n, dtype=np.int64)
    for block in blocks:
        if not len(block):
            continue
        flat = block.y.astype(np.int64) * geometry.width + block.x.astype(np.int64)
        if flat.max() >= n:
            raise DataError("event outside geometry while counting")
        pos = block.p > 0
        n_on += np.bincount(flat[pos], minlength=n)
        n_off += np.bincount(flat[~pos], minlength=n)
    shape = (geometry.height, geometry.width)
    return n_on.reshape(shape), n_off.reshape(shape)


@dataclass
class ThresholdMap:
    """Per-pixel relative thresholds with the raw counts they came from.

    c_prime is defined for every pixel that produced events (NaN otherwise);
    the excluded mask marks pixels left out of the population mean, so the
    harmonic mean of c_prime over ~excluded is 1 by construction.
    """

    c_prime: np.ndarray
    c_on_prime: np.ndarray
    c_off_prime: np.ndarray
    n_on: np.ndarray
    n_off: np.ndarray
    excluded: np.ndarray
    n_bar_tot: float

    @property
    def included(self) -> np.ndarray:
        return ~self.excluded

    def harmonic_mean(self) -> float:
        c = self.c_prime[self.included]
        return len(c) / float(np.sum(1.0 / c))

    def gain_grid(self, dtype=np.float32) -> np.ndarray:
        """Grid suitable for the reconstruction engine; unusable pixels get 1.0."""
        g = self.c_prime.astype(np.float64).copy()
        g[~np.isfinite(g)] = 1.0
        g[g <= 0] = 1.0
        return g.astype(dtype)

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(MAP_CSV_HEADER + "\n")
            h, w = self.c_prime.shape
            for y in range(h):
                for x in range(w):
                    fh.write(
                        f"{x},{y},{self.c_prime[y, x]:.9g},{self.c_on_prime[y, x]:.9g},"
                        f"{self.c_off_prime[y, x]:.9g},{self.n_on[y, x]},{self.n_off[y, x]},"
                        f"{int(self.excluded[y, x])}\n"
                    )

    @staticmethod
    def load_csv(path) -> "ThresholdMap":
        data = np.genfromtxt(path, delimiter=",", names=True)
        if data.size == 0:
            raise EstimationError(f"empty threshold map {path}")
        x = data["x"].astype(np.int64)
        y = data["y"].astype(np.int64)
        w, h = int(x.max()) + 1, int(y.max()) + 1
        grids = {}
        for name in ("c_prime", "c_on_prime", "c_off_prime"):
            g = np.full((h, w), np.nan)
            g[y, x] = data[name]
            grids[name] = g
        n_on = np.zeros((h, w), dtype=np.int64)
        n_on[y, x] = data["n_on"].astype(np.int64)
        n_off = np.zeros((h, w), dtype=np.int64)
        n_off[y, x] = data["n_off"].astype(np.int64)
        excluded = np.ones((h, w), dtype=bool)
        excluded[y, x] = data["excluded"] > 0.5
        n_tot = n_on + n_off
        inc = ~excluded
        n_bar = float(n_tot[inc].sum() / inc.sum()) if inc.any() else float("nan")
        return ThresholdMap(grids["c_prime"], grids["c_on_prime"], grids["c_off_prime"], n_on, n_off, excluded, n_bar)


def estimate_thresholds(
    n_on: np.ndarray, n_off: np.ndarray, exclusion_quantile: float = 0.01
) -> ThresholdMap:
    """Relative thresholds from per-pixel counts.

    Pixels whose total count falls in the top or bottom `exclusion_quantile`
    (plus all zero-count pixels) are excluded from the population mean but
    still receive estimates. The mean total count is carried as an exact
    rational until the final per-pixel division.
    """
    if not (0.0 <= exclusion_quantile < 0.5):
        raise ConfigError("exclusion quantile must lie in [0, 0.5)")
    n_on = np.asarray(n_on, dtype=np.int64)
    n_off = np.asarray(n_off, dtype=np.int64)
    if n_on.shape != n_off.shape:
        raise ConfigError("count grids must share a shape")
    n_tot = n_on + n_off
    excluded = n_tot == 0
    if exclusion_quantile > 0 and (~excluded).any():
        lo, hi = np.quantile(n_tot, [exclusion_quantile, 1.0 - exclusion_quantile])
        excluded |= (n_tot < lo) | (n_tot > hi)
    included = ~excluded
    if not included.any():
        raise EstimationError("all pixels excluded; cannot estimate thresholds")

    total = int(n_tot[included].sum())
    count = int(included.sum())
    n_bar = Fraction(total, count)
    n_bar_f = float(n_bar)

    with np.errstate(divide="ignore"):
        c_prime = np.where(n_tot > 0, n_bar_f / np.maximum(n_tot, 1), np.nan)
        c_on_prime = np.where(n_on > 0, 0.5 * n_bar_f / np.maximum(n_on, 1), np.nan)
        c_off_prime = np.where(n_off > 0, 0.5 * n_bar_f / np.maximum(n_off, 1), np.nan)
    return ThresholdMap(c_prime, c_on_prime, c_off_prime, n_on, n_off, excluded, n_bar_f)


def histogram(
    tmap: ThresholdMap, which: str = "c_prime", bins: int = 50, value_range=None
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram (edges, counts) of a relative-threshold field over included pixels."""
    fields = {
        "c_prime": tmap.c_prime,
        "c_on_prime": tmap.c_on_prime,
        "c_off_prime": tmap.c_off_prime,
    }
    if which not in fields:
        raise ConfigError(f"unknown field {which!r}; choose from {sorted(fields)}")
    values = fields[which][tmap.included]
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise EstimationError("no finite values to histogram")
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return edges, counts


def write_histogram_csv(edges: np.ndarray, counts: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{lo:.9g},{hi:.9g},{int(c)}\n")
