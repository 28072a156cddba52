"""Numba kernels for the bandwidth-bound inner stages.

Each kernel has exact numpy semantics defined by its caller's fallback path;
kernels fuse the elementwise chains into single passes. All loops are serial,
so results are deterministic.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn
        return deco if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def expert_merge_forward(z, q, bias, s):  # pragma: no cover - jitted
    bsz, n, p, d = z.shape
    y = np.empty_like(z)
    out = np.zeros((bsz, n, d))
    for b in range(bsz):
        for j in range(n):
            for e in range(p):
                qv = q[b, j, e]
                sv = s[b, e]
                for k in range(d):
                    yv = np.tanh(z[b, j, e, k] * qv + bias[e, k])
                    y[b, j, e, k] = yv
                    out[b, j, k] += sv * yv
    return y, out


@njit(cache=True)
def expert_merge_backward(g, y, z, q, s):  # pragma: no cover - jitted
    bsz, n, p, d = z.shape
    ds = np.zeros((bsz, p))
    dq = np.zeros((bsz, n, p))
    dbias = np.zeros((p, d))
    dz = np.empty_like(z)
    for b in range(bsz):
        for j in range(n):
            for e in range(p):
                qv = q[b, j, e]
                sv = s[b, e]
                accq = 0.0
                for k in range(d):
                    yv = y[b, j, e, k]
                    gv = g[b, j, k]
                    ds[b, e] += yv * gv
                    dpre = sv * gv * (1.0 - yv * yv)
                    accq += dpre * z[b, j, e, k]
                    dbias[e, k] += dpre
                    dz[b, j, e, k] = dpre * qv
                dq[b, j, e] = accq
    return ds, dq, dbias, dz


@njit(cache=True)
def pd_embed_forward(bv, dv, ts, pts, inv2s2, lines, lbias, mu0, mu1, r):  # pragma: no cover
    m = bv.shape[0]
    nt = ts.shape[0]
    ng = pts.shape[0]
    nl = lines.shape[0]
    width = nt + ng + nl + 1
    out = np.empty((m, width))
    for i in range(m):
        b = bv[i]
        d = dv[i]
        for t in range(nt):
            v = d - abs(ts[t] - b)
            out[i, t] = v if v > 0.0 else 0.0
        for t in range(ng):
            gb = b - pts[t, 0]
            gd = d - pts[t, 1]
            out[i, nt + t] = np.exp(-(gb * gb + gd * gd) * inv2s2)
        for t in range(nl):
            out[i, nt + ng + t] = b * lines[t, 0] + d * lines[t, 1] + lbias[t]
        hb = b - mu0
        hd = d - mu1
        dist = np.sqrt(hb * hb + hd * hd + 1e-30)
        out[i, width - 1] = 1.0 / (1.0 + dist) - 1.0 / (1.0 + abs(r - dist))
    return out


@njit(cache=True)
def pd_embed_backward(g, bv, dv, ts, pts, inv2s2, lines, lbias, mu0, mu1, r):  # pragma: no cover
    m = bv.shape[0]
    nt = ts.shape[0]
    ng = pts.shape[0]
    nl = lines.shape[0]
    width = nt + ng + nl + 1
    db = np.zeros(m)
    dd = np.zeros(m)
    for i in range(m):
        b = bv[i]
        d = dv[i]
        for t in range(nt):
            diff = ts[t] - b
            if d - abs(diff) > 0.0:
                gv = g[i, t]
                if diff > 0.0:
                    db[i] += gv
                elif diff < 0.0:
                    db[i] -= gv
                dd[i] += gv
        for t in range(ng):
            gb = b - pts[t, 0]
            gd = d - pts[t, 1]
            val = np.exp(-(gb * gb + gd * gd) * inv2s2)
            scale = 2.0 * inv2s2 * val * g[i, nt + t]
            db[i] -= scale * gb
            dd[i] -= scale * gd
        for t in range(nl):
            gv = g[i, nt + ng + t]
            db[i] += gv * lines[t, 0]
            dd[i] += gv * lines[t, 1]
        hb = b - mu0
        hd = d - mu1
        dist = np.sqrt(hb * hb + hd * hd + 1e-30)
        rd = r - dist
        srd = 1.0 if rd > 0.0 else (-1.0 if rd < 0.0 else 0.0)
        ddist = -1.0 / (1.0 + dist) ** 2 - srd / (1.0 + abs(rd)) ** 2
        gv = g[i, width - 1]
        db[i] += gv * ddist * hb / dist
        dd[i] += gv * ddist * hd / dist
    return db, dd


@njit(cache=True)
def masked_softmax_forward(lv, mask, slope):  # pragma: no cover - jitted
    bsz, h, n, _ = lv.shape
    out = np.zeros_like(lv)
    for b in range(bsz):
        for hh in range(h):
            for j in range(n):
                hi = -np.inf
                for k in range(n):
                    if mask[b, j, k]:
                        v = lv[b, hh, j, k]
                        if v < 0.0:
                            v *= slope
                        out[b, hh, j, k] = v
                        if v > hi:
                            hi = v
                total = 0.0
                for k in range(n):
                    if mask[b, j, k]:
                        e = np.exp(out[b, hh, j, k] - hi)
                        out[b, hh, j, k] = e
                        total += e
                for k in range(n):
                    if mask[b, j, k]:
                        out[b, hh, j, k] /= total
    return out


@njit(cache=True)
def masked_softmax_backward(g, out, lv, mask, slope):  # pragma: no cover - jitted
    bsz, h, n, _ = lv.shape
    dl = np.zeros_like(lv)
    for b in range(bsz):
        for hh in range(h):
            for j in range(n):
                dot = 0.0
                for k in range(n):
                    if mask[b, j, k]:
                        dot += g[b, hh, j, k] * out[b, hh, j, k]
                for k in range(n):
                    if mask[b, j, k]:
                        ds = out[b, hh, j, k] * (g[b, hh, j, k] - dot)
                        dl[b, hh, j, k] = ds if lv[b, hh, j, k] >= 0.0 else slope * ds
    return dl
