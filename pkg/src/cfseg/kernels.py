"""Hot per-pixel kernels: lung field rasterization, effusion overlay,
value-noise texture, silver-mask row clipping, and mask overlap counts.

Each kernel has a jitted loop implementation and a vectorized numpy
fallback; :func:`cfseg.accel.use_numba` picks the path at call time. Both
paths use the same float64 operation order (polynomial math only, no
transcendentals) so their outputs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from . import accel

# ---------------------------------------------------------------------------
# lung membership fields + ground-truth mask
# ---------------------------------------------------------------------------
# ells is float64[2, 4] with rows (cy, cx, ry, rx); row 0 is the right lung
# (label 1, image-left side), row 1 the left lung (label 2).


def _lung_fields_loop(h, w, ells, edge_w):
    m_right = np.zeros((h, w), dtype=np.float64)
    m_left = np.zeros((h, w), dtype=np.float64)
    gt = np.zeros((h, w), dtype=np.uint8)
    for k in range(2):
        cy = ells[k, 0]
        cx = ells[k, 1]
        inv_ry2 = 1.0 / (ells[k, 2] * ells[k, 2])
        inv_rx2 = 1.0 / (ells[k, 3] * ells[k, 3])
        for r in range(h):
            dr = r - cy
            er = (dr * dr) * inv_ry2
            for c in range(w):
                dc = c - cx
                e = er + (dc * dc) * inv_rx2
                s = (1.0 - e) / edge_w + 0.5
                if s < 0.0:
                    s = 0.0
                elif s > 1.0:
                    s = 1.0
                m = s * s * (3.0 - 2.0 * s)
                if k == 0:
                    m_right[r, c] = m
                else:
                    m_left[r, c] = m
                if e <= 1.0:
                    gt[r, c] = k + 1
    return m_right, m_left, gt


def _lung_fields_np(h, w, ells, edge_w):
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    fields = []
    gt = np.zeros((h, w), dtype=np.uint8)
    for k in range(2):
        cy, cx, ry, rx = ells[k]
        dr = rows - cy
        dc = cols - cx
        e = (dr * dr) * (1.0 / (ry * ry)) + (dc * dc) * (1.0 / (rx * rx))
        s = np.clip((1.0 - e) / edge_w + 0.5, 0.0, 1.0)
        fields.append(s * s * (3.0 - 2.0 * s))
        gt[e <= 1.0] = k + 1
    return fields[0], fields[1], gt


_lung_fields_nb = accel.maybe_njit(_lung_fields_loop)


def lung_fields(h, w, ells, edge_w):
    """Soft membership of each lung plus the hard label mask.

    Membership is a smoothstep of the ellipse implicit function over a band
    of width ``edge_w``; the hard mask thresholds at the exact boundary
    (e <= 1), so gt labels never depend on the softness.
    """
    ells = np.ascontiguousarray(ells, dtype=np.float64)
    if accel.use_numba():
        return _lung_fields_nb(h, w, ells, float(edge_w))
    return _lung_fields_np(h, w, ells, float(edge_w))


# ---------------------------------------------------------------------------
# basal effusion overlay
# ---------------------------------------------------------------------------


def _effusion_overlay_loop(m_right, m_left, ells, severity, amp_right, amp_left):
    h, w = m_right.shape
    out = np.zeros((h, w), dtype=np.float64)
    for k in range(2):
        cy = ells[k, 0]
        ry = ells[k, 2]
        bot = cy + ry
        top = bot - severity * (2.0 * ry)
        span = bot - top
        if span <= 0.0:
            continue
        amp = amp_right if k == 0 else amp_left
        for r in range(h):
            t = (r - top) / span
            if t < 0.0:
                continue
            if t > 1.0:
                t = 1.0
            a = t * t * (3.0 - 2.0 * t)
            for c in range(w):
                m = m_right[r, c] if k == 0 else m_left[r, c]
                out[r, c] += a * amp * m
    return out


def _effusion_overlay_np(m_right, m_left, ells, severity, amp_right, amp_left):
    h, w = m_right.shape
    rows = np.arange(h, dtype=np.float64)
    out = np.zeros((h, w), dtype=np.float64)
    for k, (field, amp) in enumerate(((m_right, amp_right), (m_left, amp_left))):
        cy, ry = ells[k, 0], ells[k, 2]
        bot = cy + ry
        top = bot - severity * (2.0 * ry)
        span = bot - top
        if span <= 0.0:
            continue
        t = (rows - top) / span
        live = t >= 0.0
        t = np.minimum(t, 1.0)
        a = np.where(live, t * t * (3.0 - 2.0 * t), 0.0)
        out += (a[:, None] * amp) * field
    return out


_effusion_overlay_nb = accel.maybe_njit(_effusion_overlay_loop)


def effusion_overlay(m_right, m_left, ells, severity, amp_right, amp_left):
    """Additive opacity ramp over the bottom ``severity`` fraction of each
    lung's height, weighted by lung membership. Ramp is zero at the top of
    the affected zone and ``amp`` at the lung base."""
    ells = np.ascontiguousarray(ells, dtype=np.float64)
    if accel.use_numba():
        return _effusion_overlay_nb(
            m_right, m_left, ells, float(severity), float(amp_right), float(amp_left)
        )
    return _effusion_overlay_np(
        m_right, m_left, ells, float(severity), float(amp_right), float(amp_left)
    )


# ---------------------------------------------------------------------------
# smooth value-noise texture (bilinear upsample of a coarse grid)
# ---------------------------------------------------------------------------


def _value_noise_loop(h, w, grid):
    gh, gw = grid.shape
    out = np.empty((h, w), dtype=np.float64)
    sr = (gh - 1.0) / (h - 1.0) if h > 1 else 0.0
    sc = (gw - 1.0) / (w - 1.0) if w > 1 else 0.0
    for r in range(h):
        gr = r * sr
        i0 = int(gr)
        if i0 > gh - 2:
            i0 = gh - 2
        tr = gr - i0
        for c in range(w):
            gc = c * sc
            j0 = int(gc)
            if j0 > gw - 2:
                j0 = gw - 2
            tc = gc - j0
            v0 = grid[i0, j0] + (grid[i0, j0 + 1] - grid[i0, j0]) * tc
            v1 = grid[i0 + 1, j0] + (grid[i0 + 1, j0 + 1] - grid[i0 + 1, j0]) * tc
            out[r, c] = v0 + (v1 - v0) * tr
    return out


def _value_noise_np(h, w, grid):
    gh, gw = grid.shape
    sr = (gh - 1.0) / (h - 1.0) if h > 1 else 0.0
    sc = (gw - 1.0) / (w - 1.0) if w > 1 else 0.0
    gr = np.arange(h, dtype=np.float64) * sr
    gc = np.arange(w, dtype=np.float64) * sc
    i0 = np.minimum(gr.astype(np.int64), gh - 2)
    j0 = np.minimum(gc.astype(np.int64), gw - 2)
    tr = (gr - i0)[:, None]
    tc = (gc - j0)[None, :]
    g00 = grid[np.ix_(i0, j0)]
    g01 = grid[np.ix_(i0, j0 + 1)]
    g10 = grid[np.ix_(i0 + 1, j0)]
    g11 = grid[np.ix_(i0 + 1, j0 + 1)]
    v0 = g00 + (g01 - g00) * tc
    v1 = g10 + (g11 - g10) * tc
    return v0 + (v1 - v0) * tr


_value_noise_nb = accel.maybe_njit(_value_noise_loop)


def value_noise(h, w, grid):
    """Bilinear upsample of a coarse noise grid to (h, w). Grid must be at
    least 2x2."""
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if grid.shape[0] < 2 or grid.shape[1] < 2:
        raise ValueError("noise grid must be at least 2x2")
    if accel.use_numba():
        return _value_noise_nb(h, w, grid)
    return _value_noise_np(h, w, grid)


# ---------------------------------------------------------------------------
# silver-mask degradation: clear label pixels below a jittered row cut
# ---------------------------------------------------------------------------


def _clip_mask_rows_loop(mask, label, cut_row, jitter):
    h, w = mask.shape
    out = mask.copy()
    for c in range(w):
        cut = cut_row + jitter[c]
        for r in range(h):
            if r >= cut and out[r, c] == label:
                out[r, c] = 0
    return out


def _clip_mask_rows_np(mask, label, cut_row, jitter):
    h, w = mask.shape
    rows = np.arange(h, dtype=np.int64)[:, None]
    drop = (mask == label) & (rows >= cut_row + jitter[None, :])
    out = mask.copy()
    out[drop] = 0
    return out


_clip_mask_rows_nb = accel.maybe_njit(_clip_mask_rows_loop)


def clip_mask_rows(mask, label, cut_row, jitter):
    """Copy of ``mask`` with pixels of ``label`` at rows >= cut_row +
    jitter[col] cleared. Only removes pixels, never adds."""
    jitter = np.ascontiguousarray(jitter, dtype=np.int64)
    if accel.use_numba():
        return _clip_mask_rows_nb(mask, np.uint8(label), int(cut_row), jitter)
    return _clip_mask_rows_np(mask, int(label), int(cut_row), jitter)


# ---------------------------------------------------------------------------
# overlap counts for Dice / volume
# ---------------------------------------------------------------------------
# Returns int64[9]: (|A1|, |B1|, |A1&B1|, |A2|, |B2|, |A2&B2|,
#                    |A>0|, |B>0|, |A>0 & B>0|)


def _overlap_counts_loop(a, b):
    out = np.zeros(9, dtype=np.int64)
    h, w = a.shape
    for r in range(h):
        for c in range(w):
            va = a[r, c]
            vb = b[r, c]
            if va == 1:
                out[0] += 1
            if vb == 1:
                out[1] += 1
            if va == 1 and vb == 1:
                out[2] += 1
            if va == 2:
                out[3] += 1
            if vb == 2:
                out[4] += 1
            if va == 2 and vb == 2:
                out[5] += 1
            if va > 0:
                out[6] += 1
            if vb > 0:
                out[7] += 1
            if va > 0 and vb > 0:
                out[8] += 1
    return out


def _overlap_counts_np(a, b):
    out = np.zeros(9, dtype=np.int64)
    for k, lab in enumerate((1, 2)):
        am = a == lab
        bm = b == lab
        out[3 * k] = am.sum()
        out[3 * k + 1] = bm.sum()
        out[3 * k + 2] = (am & bm).sum()
    af = a > 0
    bf = b > 0
    out[6] = af.sum()
    out[7] = bf.sum()
    out[8] = (af & bf).sum()
    return out


_overlap_counts_nb = accel.maybe_njit(_overlap_counts_loop)


def overlap_counts(a, b):
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = np.ascontiguousarray(a, dtype=np.uint8)
    b = np.ascontiguousarray(b, dtype=np.uint8)
    if accel.use_numba():
        return _overlap_counts_nb(a, b)
    return _overlap_counts_np(a, b)
