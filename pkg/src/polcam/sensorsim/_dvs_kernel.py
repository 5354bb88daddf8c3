"""Per-pixel DVS change detector over analytic log-intensity segments.

Each pixel's flux is a time-ordered list of segments (see ``stimulus``).
Segments are split into monotone pieces; inside a piece the next threshold
crossing is found by inverting the closed form, so timestamps are exact up
to float rounding. The memorized level moves by exactly one threshold per
event.
"""

import math

import numpy as np
from numba import njit

SEG_CONST = 0
SEG_LOGLIN = 1
SEG_SINE = 2

NEG_INF_TIME = -1e300


@njit(cache=True, error_model="numpy")
def seg_log(kind, p0, p1, p2, p3, ta, t):
    if kind == SEG_CONST:
        return math.log(p0)
    if kind == SEG_LOGLIN:
        return p0 + p1 * (t - ta)
    return math.log(p0 + p1 * math.cos(p2 * t + p3))


@njit(cache=True, error_model="numpy")
def _sine_inverse(p0, p1, p2, p3, n, level):
    """Time in monotone piece n (phase in [n pi, (n+1) pi]) where log flux == level."""
    c = (math.exp(level) - p0) / p1
    if n % 2 != 0:
        c = -c
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    phi = n * math.pi + math.acos(c)
    return (phi - p3) / p2


@njit(cache=True, nogil=True, error_model="numpy")
def generate_events(seg_first, seg_kind, seg_ta, seg_tb, seg_params, mem, t_last, th_on, th_off,
                    refractory, w0, w1, out_t, out_pix, out_pol, out_cross, n_out, pix_start):
    """Run the change detector for every pixel over the window ``[w0, w1)``.

    ``seg_first[p]:seg_first[p + 1]`` are pixel p's segments. ``mem`` and
    ``t_last`` carry the memorized level and last event time between
    windows and are updated in place; a NaN ``mem`` is initialized from the
    log intensity at the pixel's first segment start. Events come out grouped
    by pixel, time-ordered within a pixel. ``crossing`` is 1 for timestamps
    from an exact level inversion, 0 for those set by the refractory period
    or a discontinuity.

    Output goes into the caller's buffers starting at ``n_out``. Returns
    ``(n_out, next_pixel)``; if the buffers fill up, ``next_pixel`` is the
    pixel to resume from (its state is untouched and its partial output is
    discarded). ``next_pixel == n_pixels`` means the window is done.
    """
    cap = out_t.shape[0]
    n_pixels = seg_first.shape[0] - 1
    for pix in range(pix_start, n_pixels):
        n_start = n_out
        s0 = seg_first[pix]
        s1 = seg_first[pix + 1]
        if s1 <= s0:
            continue
        on = th_on[pix]
        off = th_off[pix]
        m = mem[pix]
        if math.isnan(m):
            m = seg_log(seg_kind[s0], seg_params[s0, 0], seg_params[s0, 1], seg_params[s0, 2],
                        seg_params[s0, 3], seg_ta[s0], seg_ta[s0])
        tl = t_last[pix]
        for k in range(s0, s1):
            ta = seg_ta[k]
            tb = seg_tb[k]
            if tb < w0 or ta >= w1 or tb < ta:
                continue
            kind = seg_kind[k]
            p0 = seg_params[k, 0]
            p1 = seg_params[k, 1]
            p2 = seg_params[k, 2]
            p3 = seg_params[k, 3]
            ca = max(ta, w0)
            cb = min(tb, w1)
            # enumerate monotone pieces of the clipped segment
            if kind == SEG_SINE and p2 != 0.0:
                n_a = math.floor((p2 * ca + p3) / math.pi)
                n_b = math.floor((p2 * cb + p3) / math.pi)
                n_pieces = abs(n_b - n_a) + 1
                step = 1 if n_b >= n_a else -1
            else:
                n_a = 0
                n_pieces = 1
                step = 1
            prev_edge = ca
            for q in range(n_pieces):
                n = n_a + q * step
                pa = prev_edge
                if n_pieces > 1 and q < n_pieces - 1:
                    if step > 0:
                        edge = ((n + 1) * math.pi - p3) / p2
                    else:
                        edge = (n * math.pi - p3) / p2
                    pb = min(max(edge, pa), cb)
                else:
                    pb = cb
                prev_edge = pb
                la = seg_log(kind, p0, p1, p2, p3, ta, pa)
                lb = seg_log(kind, p0, p1, p2, p3, ta, pb)
                if lb > la:
                    d = 1
                elif lb < la:
                    d = -1
                else:
                    d = 0
                tcur = pa
                fresh = False
                while True:
                    if fresh:
                        # just emitted at an exact crossing: m equals L(tcur)
                        up = False
                        dn = False
                        fresh = False
                    else:
                        lc = seg_log(kind, p0, p1, p2, p3, ta, tcur)
                        up = lc - m >= on
                        dn = m - lc >= off
                    if up or dn:
                        tr = tl + refractory
                        if tcur >= tr:
                            if tcur >= w1:
                                break
                            if n_out >= cap:
                                return n_start, pix
                            out_t[n_out] = tcur
                            out_pix[n_out] = pix
                            out_pol[n_out] = 1 if up else 0
                            out_cross[n_out] = 0
                            n_out += 1
                            if up:
                                m += on
                            else:
                                m -= off
                            tl = tcur
                            continue
                        if tr <= pb:
                            tcur = tr
                            continue
                        break
                    if d == 0:
                        break
                    if d > 0:
                        target = m + on
                        if lb < target:
                            break
                    else:
                        target = m - off
                        if lb > target:
                            break
                    if kind == SEG_LOGLIN:
                        tc = ta + (target - p0) / p1
                    else:
                        tc = _sine_inverse(p0, p1, p2, p3, n, target)
                    if tc < tcur:
                        tc = tcur
                    if tc > pb:
                        tc = pb
                    tr = tl + refractory
                    if tr > tc:
                        if tr > pb:
                            break
                        tcur = tr
                        continue
                    if tc >= w1:
                        break
                    if n_out >= cap:
                        return n_start, pix
                    out_t[n_out] = tc
                    out_pix[n_out] = pix
                    out_pol[n_out] = 1 if d > 0 else 0
                    out_cross[n_out] = 1
                    n_out += 1
                    m = target
                    tl = tc
                    tcur = tc
                    fresh = True
                    if kind == SEG_SINE:
                        # run of unobstructed crossings; the target flux is stepped multiplicatively
                        th = on if d > 0 else -off
                        ratio = math.exp(th)
                        flux_t = math.exp(m) * ratio
                        pol8 = 1 if d > 0 else 0
                        sgn = 1.0 if n % 2 == 0 else -1.0
                        base = n * math.pi
                        while True:
                            nt = m + th
                            if (d > 0 and lb < nt) or (d < 0 and lb > nt):
                                break
                            c = sgn * (flux_t - p0) / p1
                            if c > 1.0:
                                c = 1.0
                            elif c < -1.0:
                                c = -1.0
                            tc = (base + math.acos(c) - p3) / p2
                            if tc < tcur or tc > pb or tc < tl + refractory or tc >= w1:
                                break
                            if n_out >= cap:
                                return n_start, pix
                            out_t[n_out] = tc
                            out_pix[n_out] = pix
                            out_pol[n_out] = pol8
                            out_cross[n_out] = 1
                            n_out += 1
                            m = nt
                            tl = tc
                            tcur = tc
                            flux_t *= ratio
        mem[pix] = m
        t_last[pix] = tl
    return n_out, n_pixels


@njit(cache=True)
def pack_events(t, pix, pol, xs, ys, out_words):
    """Round, time-sort (stable) and pack events into 16-byte records.

    ``out_words`` is the (n, 2) uint64 view of an event record array: word 0
    is the timestamp, word 1 holds x | y << 16 | polarity << 32.
    """
    n = t.shape[0]
    if n == 0:
        return
    ti = np.empty(n, np.int64)
    lo = np.int64(9223372036854775807)
    hi = np.int64(-9223372036854775807)
    for i in range(n):
        v = np.int64(math.floor(t[i] + 0.5))
        ti[i] = v
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    span = hi - lo + 1
    count = np.zeros(span + 1, np.int64)
    for i in range(n):
        count[ti[i] - lo + 1] += 1
    for r in range(span):
        count[r + 1] += count[r]
    for i in range(n):
        d = ti[i] - lo
        j = count[d]
        count[d] += 1
        p = pix[i]
        out_words[j, 0] = np.uint64(ti[i])
        out_words[j, 1] = np.uint64(xs[p]) | (np.uint64(ys[p]) << np.uint64(16)) | (np.uint64(pol[i]) << np.uint64(32))


@njit(cache=True)
def brute_force_events(seg_kind, seg_ta, seg_tb, seg_params, th_on, th_off, t0, t1):
    """Reference detector for one pixel, stepping the closed form every 1 us."""
    n_seg = seg_kind.shape[0]
    ts = []
    pols = []
    k = 0
    mem = seg_log(seg_kind[0], seg_params[0, 0], seg_params[0, 1], seg_params[0, 2], seg_params[0, 3],
                  seg_ta[0], t0)
    t = t0
    while t <= t1:
        while k < n_seg - 1 and t > seg_tb[k]:
            k += 1
        lv = seg_log(seg_kind[k], seg_params[k, 0], seg_params[k, 1], seg_params[k, 2], seg_params[k, 3],
                     seg_ta[k], t)
        while True:
            if lv - mem >= th_on:
                mem += th_on
                ts.append(t)
                pols.append(1)
            elif mem - lv >= th_off:
                mem -= th_off
                ts.append(t)
                pols.append(0)
            else:
                break
        t += 1.0
    return np.array(ts, dtype=np.float64), np.array(pols, dtype=np.int8)


@njit(cache=True)
def radix_argsort_u64(keys):
    """Stable LSD radix argsort of unsigned 64-bit keys (11-bit digits)."""
    n = keys.shape[0]
    idx = np.arange(n)
    if n < 2:
        return idx
    kmax = keys.max()
    bits = 0
    while bits < 64 and (kmax >> np.uint64(bits)) > 0:
        bits += 11
    tmp = np.empty(n, np.int64)
    cur = keys.copy()
    curk = np.empty(n, np.uint64)
    radix = 2048
    mask = np.uint64(radix - 1)
    shift = 0
    while shift < bits:
        count = np.zeros(radix + 1, np.int64)
        sh = np.uint64(shift)
        for i in range(n):
            count[((cur[i] >> sh) & mask) + 1] += 1
        for r in range(radix):
            count[r + 1] += count[r]
        for i in range(n):
            d = (cur[i] >> sh) & mask
            j = count[d]
            count[d] += 1
            tmp[j] = idx[i]
            curk[j] = cur[i]
        idx, tmp = tmp, idx
        cur, curk = curk, cur
        shift += 11
    return idx


@njit(cache=True)
def counting_argsort(t, t_min, span):
    """Stable argsort of integer timestamps in ``[t_min, t_min + span)``."""
    n = t.shape[0]
    count = np.zeros(span + 1, np.int64)
    for i in range(n):
        count[t[i] - t_min + 1] += 1
    for r in range(span):
        count[r + 1] += count[r]
    out = np.empty(n, np.int64)
    for i in range(n):
        d = t[i] - t_min
        out[count[d]] = i
        count[d] += 1
    return out


@njit(cache=True)
def merge_sorted_keys(ka, kb):
    """Merge order of two sorted key arrays; ties take ``a`` first."""
    na = ka.shape[0]
    nb = kb.shape[0]
    out = np.empty(na + nb, np.int64)
    i = 0
    j = 0
    k = 0
    while i < na and j < nb:
        if kb[j] < ka[i]:
            out[k] = na + j
            j += 1
        else:
            out[k] = i
            i += 1
        k += 1
    while i < na:
        out[k] = i
        i += 1
        k += 1
    while j < nb:
        out[k] = na + j
        j += 1
        k += 1
    return out
