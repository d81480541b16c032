"""Per-event hot loops, JIT-compiled with numba when available.

Set FIBAR_NUMBA=0 to force the pure-Python fallback. Both backends execute
the same function bodies with the same float32 arithmetic, so results are
bit-identical; only throughput differs. The ``py_*`` aliases always point at
the uncompiled versions regardless of the active backend.

Conventions shared by every kernel:
  - pixel state arrays are flat, row-major, length width*height
  - index math goes through int() so uint16 coordinates never wrap
  - float coefficients arrive pre-cast to the state dtype; no literals in
    hot expressions (numba would promote float32 ops to float64)
"""

import os

import numpy as np


def _numba_wanted() -> bool:
    return os.environ.get("FIBAR_NUMBA", "1").strip().lower() not in ("0", "false", "off", "no")


if _numba_wanted():
    try:
        from numba import njit as _njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False

BACKEND = "numba" if _HAVE_NUMBA else "python"


def backend() -> str:
    """Active kernel backend, 'numba' or 'python'."""
    return BACKEND


def _compile(fn):
    if _HAVE_NUMBA:
        return _njit(cache=True)(fn)
    return fn


# Slots of the int64 bookkeeping vector threaded through the spatial kernel.
QS_HEAD = 0        # ring-buffer front slot
QS_LEN = 1         # current queue length
QS_TARGET = 2      # regulated target length
QS_NPIX = 3        # pixels with active_count > 0
QS_NTILES = 4      # tiles with at least one active pixel
QS_BLUR = 5        # blurs applied
QS_STALE = 6       # staleness episodes (counted even when blur is skipped)
QS_QTMIN = 7       # min target ever set by the regulator
QS_QTMAX = 8       # max target ever set by the regulator
QS_EVCTR = 9       # events since last regulation
QS_SIZE = 10


def _temporal_chunk(xs, ys, ps, width, p_bar, l, alpha, one_m_alpha, beta, half_1p_beta, gain, use_gain):
    """Detrend + high-pass update for one block of events, temporal path only."""
    n = xs.shape[0]
    for j in range(n):
        i = int(ys[j]) * width + int(xs[j])
        p = np.float32(ps[j])
        pb = alpha * p_bar[i] + one_m_alpha * p
        p_bar[i] = pb
        d = p - pb
        if use_gain:
            d = d * gain[i]
        l[i] = beta * l[i] + half_1p_beta * d


def _full_chunk(
    xs,
    ys,
    ps,
    width,
    height,
    tiles_x,
    tile_side,
    area,
    p_bar,
    l,
    active_count,
    tile_count,
    qx,
    qy,
    qcap,
    qs,
    alpha,
    one_m_alpha,
    beta,
    half_1p_beta,
    gain,
    use_gain,
    fill_num,
    fill_den,
    q_min,
    q_max,
    blur_on,
    regulate_every,
):
    """Temporal update + active-pixel tracking + staleness blur, fused per event."""
    n = xs.shape[0]
    head = qs[QS_HEAD]
    qlen = qs[QS_LEN]
    q_targ = qs[QS_TARGET]
    npix_act = qs[QS_NPIX]
    ntiles_act = qs[QS_NTILES]
    blur_count = qs[QS_BLUR]
    stale_count = qs[QS_STALE]
    qt_min_seen = qs[QS_QTMIN]
    qt_max_seen = qs[QS_QTMAX]
    evctr = qs[QS_EVCTR]

    for j in range(n):
        x = int(xs[j])
        y = int(ys[j])
        i = y * width + x

        p = np.float32(ps[j])
        pb = alpha * p_bar[i] + one_m_alpha * p
        p_bar[i] = pb
        d = p - pb
        if use_gain:
            d = d * gain[i]
        l[i] = beta * l[i] + half_1p_beta * d

        # enqueue, tracking first-activation per pixel and per tile
        slot = head + qlen
        if slot >= qcap:
            slot -= qcap
        qx[slot] = x
        qy[slot] = y
        qlen += 1
        c = int(active_count[i])
        if c == 0:
            npix_act += 1
            ti = (y // tile_side) * tiles_x + (x // tile_side)
            tc = int(tile_count[ti])
            if tc == 0:
                ntiles_act += 1
            if tc < 255:
                tile_count[ti] = tc + 1
        if c < 65535:  # saturate rather than wrap (release semantics)
            active_count[i] = c + 1

        # trim the front; a pixel whose last queued event leaves goes stale
        while qlen > q_targ:
            px = int(qx[head])
            py = int(qy[head])
            head += 1
            if head >= qcap:
                head -= qcap
            qlen -= 1
            ii = py * width + px
            cc = int(active_count[ii])
            if cc > 0:
                cc -= 1
                active_count[ii] = cc
                if cc == 0:
                    stale_count += 1
                    npix_act -= 1
                    ti = (py // tile_side) * tiles_x + (px // tile_side)
                    tc = int(tile_count[ti])
                    if tc > 0:
                        tile_count[ti] = tc - 1
                        if tc == 1:
                            ntiles_act -= 1
                    if blur_on:
                        num = np.float32(0.0)
                        den = np.float32(0.0)
                        for dy in range(-1, 2):
                            yy = py + dy
                            if yy < 0 or yy >= height:
                                continue
                            wy = 2 if dy == 0 else 1
                            for dx in range(-1, 2):
                                xx = px + dx
                                if xx < 0 or xx >= width:
                                    continue
                                w = np.float32(wy * (2 if dx == 0 else 1))
                                num = num + w * l[yy * width + xx]
                                den = den + w
                        l[ii] = num / den
                        blur_count += 1

        # regulate the target from the observed fill ratio, integers only
        evctr += 1
        if evctr >= regulate_every:
            evctr = 0
            if npix_act >= 1 and ntiles_act >= 1:
                qn = (qlen * fill_num * ntiles_act * area) // (fill_den * npix_act)
                if qn < q_min:
                    qn = q_min
                if qn > q_max:
                    qn = q_max
                q_targ = qn
                if q_targ < qt_min_seen:
                    qt_min_seen = q_targ
                if q_targ > qt_max_seen:
                    qt_max_seen = q_targ

    qs[QS_HEAD] = head
    qs[QS_LEN] = qlen
    qs[QS_TARGET] = q_targ
    qs[QS_NPIX] = npix_act
    qs[QS_NTILES] = ntiles_act
    qs[QS_BLUR] = blur_count
    qs[QS_STALE] = stale_count
    qs[QS_QTMIN] = qt_min_seen
    qs[QS_QTMAX] = qt_max_seen
    qs[QS_EVCTR] = evctr


def _temporal_trace(ps_f, alpha, one_m_alpha, beta, half_1p_beta, state, out_pbar, out_delta, out_l):
    """Single-pixel two-stage trajectory; dtype follows the arrays passed in."""
    pb = state[0]
    lv = state[1]
    for j in range(ps_f.shape[0]):
        p = ps_f[j]
        pb = alpha * pb + one_m_alpha * p
        d = p - pb
        lv = beta * lv + half_1p_beta * d
        out_pbar[j] = pb
        out_delta[j] = d
        out_l[j] = lv
    state[0] = pb
    state[1] = lv


def _iir_trace(ps_f, a_plus_b, a_times_b, half_a_1p_beta, state, out_l):
    """Single-pixel combined second-order recurrence; state = (l_prev, l_prev2, p_prev)."""
    l1 = state[0]
    l2 = state[1]
    p_prev = state[2]
    for j in range(ps_f.shape[0]):
        p = ps_f[j]
        lv = a_plus_b * l1 - a_times_b * l2 + half_a_1p_beta * (p - p_prev)
        out_l[j] = lv
        l2 = l1
        l1 = lv
        p_prev = p
    state[0] = l1
    state[1] = l2
    state[2] = p_prev


def _blur_at(l, width, height, x, y):
    """Renormalized 3x3 binomial blur value at (x, y); float32 tap order fixed."""
    num = np.float32(0.0)
    den = np.float32(0.0)
    for dy in range(-1, 2):
        yy = y + dy
        if yy < 0 or yy >= height:
            continue
        wy = 2 if dy == 0 else 1
        for dx in range(-1, 2):
            xx = x + dx
            if xx < 0 or xx >= width:
                continue
            w = np.float32(wy * (2 if dx == 0 else 1))
            num = num + w * l[yy * width + xx]
            den = den + w
    return num / den


# pure-Python handles (always available, used for backend parity tests)
py_temporal_chunk = _temporal_chunk
py_full_chunk = _full_chunk
py_temporal_trace = _temporal_trace
py_iir_trace = _iir_trace
py_blur_at = _blur_at

# active backend
temporal_chunk = _compile(_temporal_chunk)
full_chunk = _compile(_full_chunk)
temporal_trace = _compile(_temporal_trace)
iir_trace = _compile(_iir_trace)
blur_at = _compile(_blur_at)


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    xs = np.zeros(1, np.uint16)
    ys = np.zeros(1, np.uint16)
    ps = np.ones(1, np.int8)
    for dt in (np.float32, np.float64):
        psf = ps.astype(dt)
        st2 = np.zeros(2, dt)
        st3 = np.zeros(3, dt)
        out = np.zeros(1, dt)
        temporal_trace(psf, dt(0.9), dt(0.1), dt(0.9), dt(0.95), st2, out.copy(), out.copy(), out.copy())
        iir_trace(psf, dt(1.8), dt(0.81), dt(0.855), st3, out.copy())
    p_bar = np.zeros(4, np.float32)
    l = np.zeros(4, np.float32)
    gain = np.ones(4, np.float32)
    f32 = np.float32
    temporal_chunk(xs, ys, ps, 2, p_bar, l, f32(0.9), f32(0.1), f32(0.9), f32(0.95), gain, False)
    active = np.zeros(4, np.uint16)
    tiles = np.zeros(1, np.uint8)
    qx = np.zeros(5, np.uint16)
    qy = np.zeros(5, np.uint16)
    qs = np.zeros(QS_SIZE, np.int64)
    qs[QS_TARGET] = 2
    full_chunk(
        xs, ys, ps, 2, 2, 1, 2, 4,
        p_bar, l, active, tiles, qx, qy, 5, qs,
        f32(0.9), f32(0.1), f32(0.9), f32(0.95), gain, False,
        1, 2, 1, 4, True, 1,
    )
    blur_at(l, 2, 2, 0, 0)
