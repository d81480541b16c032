"""Command-line interface: reconstruct, synth, calib, bench, bode, trace.

Exit codes: 0 success, 2 bad arguments, 3 input format/data error,
4 internal invariant violation. Verbosity is controlled by the FIBAR_LOG
environment variable (debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import io
import logging
import math
import os
import platform
import statistics
import sys
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import __version__, _kernels, calib, event_io, synth
from .core import EventArray, SensorGeometry, bode_gain, compute_params
from .errors import (
    ConfigError,
    DataError,
    EstimationError,
    FibarError,
    FormatError,
    InvariantError,
    OrderError,
    RangeError,
    TruncationError,
)
from .pipeline import ReconstructionEngine, run
from .temporal import stream_pixel

logger = logging.getLogger("fibar")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_INVARIANT = 4

BENCH_STAGES = ("decode", "temporal", "tracking", "blur", "full", "all")

# reference points measured on the original implementation's laptop CPU
REFERENCE_NS_PER_EVENT = {"decode": 4.5, "temporal": 2.7, "tracking": 13.8, "blur": 3.0, "full": 24.0}


def _setup_logging() -> None:
    level = os.environ.get("FIBAR_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s %(levelname)s %(message)s")


def _parse_scale(text: str) -> tuple[str, float]:
    if text == "robust":
        return "robust", 1.0
    if text.startswith("fixed:"):
        try:
            return "fixed", float(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad fixed scale bound in {text!r}") from None
    raise ConfigError(f"scale must be 'robust' or 'fixed:<bound>', got {text!r}")


def _read_events(path: str) -> tuple[SensorGeometry, EventArray]:
    if path.endswith(".csv"):
        events = event_io.read_csv(path)
        if len(events) == 0:
            raise DataError(f"{path} contains no events")
        width = int(events.x.max()) + 1
        height = int(events.y.max()) + 1
        return SensorGeometry(max(width, 2), max(height, 2)), events
    geometry, events = event_io.read_stream(path)
    return geometry, events


# -- reconstruct ---------------------------------------------------------------


def cmd_reconstruct(args) -> int:
    geometry, blocks = event_io.read_blocks(args.input)
    params = compute_params(
        args.tcut,
        Fraction(args.fill_ratio),
        geometry,
        spatial_enabled=not args.no_spatial,
    )
    threshold_map = None
    if args.threshold_map:
        threshold_map = calib.ThresholdMap.load_csv(args.threshold_map).gain_grid()
    engine = ReconstructionEngine(geometry, params, threshold_map=threshold_map, strict=args.strict)
    scale_mode, bound = _parse_scale(args.scale)
    readout_times = None
    if args.readout_at:
        readout_times = [int(v) for v in args.readout_at.split(",")]
    result = run(
        engine,
        blocks,
        fps=args.fps,
        readout_times=readout_times,
        scale_mode=scale_mode,
        fixed_bound=bound,
        out_dir=args.out,
        diagnostics_path=args.diagnostics,
    )
    print(
        f"reconstructed {result.frames_emitted} frames from {result.events_processed} events "
        f"({result.oob_dropped} out-of-bounds dropped, {result.blur_count} blurs) -> {args.out}"
    )
    return EXIT_OK


# -- synth ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    geometry = SensorGeometry(args.width, args.height)
    c_on, c_off = synth.sample_threshold_maps(
        geometry, args.c_on, args.c_off, sigma=args.sigma, seed=args.seed, mode=args.threshold_mode
    )
    sensor = synth.IdealSensorConfig(geometry, c_on, c_off, refractory_us=args.refractory, seed=args.seed)
    scene = synth.SceneSignal(
        kind=args.scene,
        amplitude=args.amplitude,
        duration_s=args.duration,
        sample_rate_hz=args.rate,
        period_s=args.period,
        speed_px_s=args.speed,
        ramp_px=args.ramp,
        flat_px=args.flat,
        wavelength_px=args.wavelength,
    )
    events = synth.generate(scene, sensor)
    if args.out.endswith(".csv"):
        count = event_io.write_csv(geometry, events, args.out)
    else:
        count = event_io.write_stream(geometry, events, args.out)
    if args.dump_thresholds:
        with open(args.dump_thresholds, "w") as fh:
            fh.write("x,y,c_on,c_off\n")
            for y in range(geometry.height):
                for x in range(geometry.width):
                    fh.write(f"{x},{y},{c_on[y, x]:.9g},{c_off[y, x]:.9g}\n")
    print(f"wrote {count} events ({args.scene}, {geometry.width}x{geometry.height}) -> {args.out}")
    return EXIT_OK


# -- calib ----------------------------------------------------------------------


def cmd_calib(args) -> int:
    geometry, blocks = event_io.read_blocks(args.input)
    n_on, n_off = calib.count_events(blocks, geometry)
    if n_on.sum() + n_off.sum() == 0:
        raise EstimationError(f"{args.input} contains no events")
    tmap = calib.estimate_thresholds(n_on, n_off, exclusion_quantile=args.exclude_quantile)
    tmap.save_csv(args.out_map)
    print(
        f"estimated thresholds for {int(tmap.included.sum())} pixels "
        f"({int(tmap.excluded.sum())} excluded), harmonic mean {tmap.harmonic_mean():.6f} -> {args.out_map}"
    )
    if args.out_histogram:
        edges, counts = calib.histogram(tmap, which=args.histogram_field, bins=args.bins)
        calib.write_histogram_csv(edges, counts, args.out_histogram)
        print(f"histogram of {args.histogram_field} -> {args.out_histogram}")
    return EXIT_OK


# -- bench ----------------------------------------------------------------------


@dataclass
class BenchReport:
    stage: str
    events: int
    seconds: float
    repeat: int

    @property
    def ns_per_event(self) -> float:
        return self.seconds / self.events * 1e9 if self.events else math.nan

    @property
    def mev_per_s(self) -> float:
        return self.events / self.seconds / 1e6 if self.seconds > 0 else math.inf


def _time_decode(raw: bytes) -> tuple[float, int]:
    t0 = time.perf_counter()
    _, blocks = event_io.read_blocks(io.BytesIO(raw))
    n = 0
    for block in blocks:
        n += len(block)
    return time.perf_counter() - t0, n


def _time_engine(raw: bytes, tcut: float, fill_ratio, spatial: bool, blur: bool) -> tuple[float, int]:
    geometry, _ = event_io.read_blocks(io.BytesIO(raw))
    params = compute_params(tcut, fill_ratio, geometry, spatial_enabled=spatial)
    engine = ReconstructionEngine(geometry, params, blur_enabled=blur)
    t0 = time.perf_counter()
    _, blocks = event_io.read_blocks(io.BytesIO(raw))
    for block in blocks:
        engine.process_array(block)
    return time.perf_counter() - t0, engine.event_count


def run_bench(raw: bytes, tcut: float, fill_ratio, repeat: int) -> dict[str, BenchReport]:
    """Median stage timings. Stages beyond decode are isolated by subtracting
    the previous stage's run (per-event instrumentation would distort the
    nanosecond-scale loop, so subtraction is the documented approximation)."""
    _kernels.warmup()
    samples: dict[str, list[tuple[float, int]]] = {k: [] for k in ("decode", "temporal", "tracking", "full")}
    for _ in range(repeat):
        samples["decode"].append(_time_decode(raw))
        samples["temporal"].append(_time_engine(raw, tcut, fill_ratio, spatial=False, blur=False))
        samples["tracking"].append(_time_engine(raw, tcut, fill_ratio, spatial=True, blur=False))
        samples["full"].append(_time_engine(raw, tcut, fill_ratio, spatial=True, blur=True))
    med = {k: (statistics.median(t for t, _ in v), v[0][1]) for k, v in samples.items()}
    n = med["decode"][1]
    reports = {
        "decode": BenchReport("decode", n, med["decode"][0], repeat),
        "temporal": BenchReport("temporal", n, max(med["temporal"][0] - med["decode"][0], 1e-12), repeat),
        "tracking": BenchReport("tracking", n, max(med["tracking"][0] - med["temporal"][0], 1e-12), repeat),
        "blur": BenchReport("blur", n, max(med["full"][0] - med["tracking"][0], 1e-12), repeat),
        "full": BenchReport("full", n, med["full"][0], repeat),
    }
    return reports


def cmd_bench(args) -> int:
    if args.stage not in BENCH_STAGES:
        raise ConfigError(f"unknown stage {args.stage!r}; choose from {BENCH_STAGES}")
    with open(args.input, "rb") as fh:
        raw = fh.read()
    reports = run_bench(raw, args.tcut, Fraction(args.fill_ratio), args.repeat)
    wanted = [s for s in ("decode", "temporal", "tracking", "blur", "full") if args.stage in ("all", s)]
    print(f"backend={_kernels.backend()} cpu={platform.processor() or platform.machine()} "
          f"python={platform.python_version()} repeat={args.repeat} events={reports['full'].events}")
    print(f"{'stage':<10}{'ns/ev':>10}{'Mev/s':>10}{'reference ns/ev':>18}")
    for name in wanted:
        r = reports[name]
        print(f"{name:<10}{r.ns_per_event:>10.2f}{r.mev_per_s:>10.1f}{REFERENCE_NS_PER_EVENT[name]:>18.1f}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("stage,events,ns_per_event,mev_per_s,repeat,backend\n")
            for name in wanted:
                r = reports[name]
                fh.write(f"{name},{r.events},{r.ns_per_event:.4f},{r.mev_per_s:.4f},{r.repeat},{_kernels.backend()}\n")
    return EXIT_OK


# -- bode -------------------------------------------------------------------------


def cmd_bode(args) -> int:
    params = compute_params(args.tcut)
    omegas = np.geomspace(1e-4 * math.pi, math.pi, args.points)
    with open(args.out, "w") as fh:
        fh.write("omega,gain_alpha,gain_beta,gain_total\n")
        for w in omegas:
            total, ga, gb = bode_gain(float(w), params)
            fh.write(f"{w:.9g},{ga:.9g},{gb:.9g},{total:.9g}\n")
    print(f"wrote {args.points} response points (t_cut={args.tcut}) -> {args.out}")
    return EXIT_OK


# -- trace ------------------------------------------------------------------------


def cmd_trace(args) -> int:
    geometry, events = _read_events(args.input)
    try:
        x, y = (int(v) for v in args.pixel.split(","))
    except ValueError:
        raise ConfigError(f"--pixel must be 'x,y', got {args.pixel!r}") from None
    if not geometry.contains(x, y):
        raise ConfigError(f"pixel ({x},{y}) outside {geometry.width}x{geometry.height}")
    params = compute_params(args.tcut)
    sub = events.at_pixel(x, y)
    trace = stream_pixel(sub.p, params)
    l_simple = synth.reconstruct_simple(sub.p)
    l_calib = None
    if args.c_on is not None and args.c_off is not None:
        l_calib = synth.reconstruct_calibrated(sub.p, args.c_on, args.c_off)
    with open(args.out, "w") as fh:
        cols = "k,t_us,p,p_bar,delta,l,l_simple"
        fh.write(cols + (",l_calib\n" if l_calib is not None else "\n"))
        for k in range(len(sub)):
            row = (
                f"{k},{int(sub.t[k])},{int(sub.p[k])},{trace.p_bar[k]:.9g},"
                f"{trace.delta[k]:.9g},{trace.l[k]:.9g},{l_simple[k]:.9g}"
            )
            if l_calib is not None:
                row += f",{l_calib[k]:.9g}"
            fh.write(row + "\n")
    print(f"traced {len(sub)} events at pixel ({x},{y}) -> {args.out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fibar", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fibar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="reconstruct PGM frames from an event stream")
    p.add_argument("--input", required=True, help="EVF1 event stream")
    p.add_argument("--out", required=True, help="output directory for frame_%%06d.pgm")
    p.add_argument("--tcut", type=float, default=40.0, help="cutoff period in events (default 40)")
    p.add_argument("--fill-ratio", default="0.5", help="target tile fill ratio (default 0.5)")
    p.add_argument("--no-spatial", action="store_true", help="disable the spatial staleness filter")
    p.add_argument("--fps", type=float, default=40.0, help="frame read-out rate (default 40)")
    p.add_argument("--readout-at", default=None, help="explicit readout times in us, comma separated (overrides --fps)")
    p.add_argument("--scale", default="robust", help="'robust' or 'fixed:<bound>' gray mapping")
    p.add_argument("--threshold-map", default=None, help="per-pixel relative-threshold CSV")
    p.add_argument("--diagnostics", default=None, help="per-frame diagnostics CSV path")
    p.add_argument("--strict", action="store_true", help="abort on out-of-order or out-of-bounds events")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("synth", help="generate a synthetic event stream")
    p.add_argument("--scene", required=True, choices=["triangle", "edge", "sinusoid"])
    p.add_argument("--out", required=True, help=".evf (binary) or .csv output path")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--amplitude", type=float, default=2.0, help="peak-to-peak log-brightness swing")
    p.add_argument("--duration", type=float, default=1.0, help="seconds")
    p.add_argument("--rate", type=float, default=10000.0, help="scene sample rate in Hz")
    p.add_argument("--period", type=float, default=0.1, help="triangle period in seconds")
    p.add_argument("--speed", type=float, default=100.0, help="edge/sinusoid speed in px/s")
    p.add_argument("--ramp", type=float, default=4.0, help="edge ramp width in px")
    p.add_argument("--flat", type=float, default=8.0, help="edge plateau width in px")
    p.add_argument("--wavelength", type=float, default=32.0, help="sinusoid wavelength in px")
    p.add_argument("--c-on", type=float, default=0.1)
    p.add_argument("--c-off", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=0.0, help="lognormal threshold spread")
    p.add_argument("--threshold-mode", default="independent", choices=["independent", "common", "anticorrelated"])
    p.add_argument("--refractory", type=int, default=0, help="refractory time in us")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-thresholds", default=None, help="write ground-truth thresholds CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calib", help="estimate relative thresholds from event counts")
    p.add_argument("--input", required=True, help="EVF1 event stream of a uniform periodic stimulus")
    p.add_argument("--out-map", required=True, help="threshold map CSV")
    p.add_argument("--out-histogram", default=None, help="histogram CSV")
    p.add_argument("--histogram-field", default="c_prime", choices=["c_prime", "c_on_prime", "c_off_prime"])
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--exclude-quantile", type=float, default=0.01)
    p.set_defaults(func=cmd_calib)

    p = sub.add_parser("bench", help="throughput benchmark with stage isolation")
    p.add_argument("--input", required=True, help="EVF1 event stream")
    p.add_argument("--stage", default="all", help="decode|temporal|tracking|blur|full|all")
    p.add_argument("--repeat", type=int, default=3, help="repetitions; the median is reported")
    p.add_argument("--tcut", type=float, default=40.0)
    p.add_argument("--fill-ratio", default="0.5")
    p.add_argument("--csv", default=None, help="also write the report as CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bode", help="magnitude response of both filter stages as CSV")
    p.add_argument("--tcut", type=float, required=True)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bode)

    p = sub.add_parser("trace", help="per-event filter trajectory at one pixel as CSV")
    p.add_argument("--input", required=True, help="EVF1 or CSV event stream")
    p.add_argument("--pixel", required=True, help="x,y")
    p.add_argument("--tcut", type=float, default=40.0)
    p.add_argument("--c-on", type=float, default=None, help="true ON threshold (adds l_calib column)")
    p.add_argument("--c-off", type=float, default=None, help="true OFF threshold (adds l_calib column)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, TruncationError, DataError, OrderError, RangeError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except FibarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
