"""Compiled per-pixel kernels for warping, compositing, and rasterization.

Everything here is deterministic. Parallel loops only split image rows, and
each pixel walks its planes front to back in index order with float64
accumulators, so results do not depend on the thread count or schedule.

Bilinear sampling uses zero padding: neighbors outside the source raster
contribute zero, which makes warped alpha fade out within one pixel of the
source border instead of smearing edge values.
"""

from __future__ import annotations

import math
import os

import numpy as np
from numba import njit, prange, set_num_threads

from .validate import ValidationError

ENV_THREADS = "AMPI_THREADS"


def threads_from_env() -> None:
    """Apply the AMPI_THREADS override. Positive integer; 0 or unset = auto."""
    raw = os.environ.get(ENV_THREADS, "").strip()
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValidationError(f"{ENV_THREADS} must be >= 0, got {n}")
    if n > 0:
        from numba import config

        set_num_threads(min(n, config.NUMBA_NUM_THREADS))


@njit(cache=True, parallel=True, fastmath=True)
def warp_image(src, hom, out_h, out_w):
    """Backward-warp src by the pixel homography (target -> source).

    src: (H, W, C) float32; hom: (3, 3) float64. Returns (out_h, out_w, C).
    """
    h, w, c = src.shape
    out = np.zeros((out_h, out_w, c), dtype=np.float32)
    for v in prange(out_h):
        for u in range(out_w):
            x = hom[0, 0] * u + hom[0, 1] * v + hom[0, 2]
            y = hom[1, 0] * u + hom[1, 1] * v + hom[1, 2]
            z = hom[2, 0] * u + hom[2, 1] * v + hom[2, 2]
            if z == 0.0:
                continue
            us = x / z
            vs = y / z
            if not (math.isfinite(us) and math.isfinite(vs)):
                continue
            if us <= -1.0 or us >= w or vs <= -1.0 or vs >= h:
                continue
            x0 = math.floor(us)
            y0 = math.floor(vs)
            fx = us - x0
            fy = vs - y0
            ix = int(x0)
            iy = int(y0)
            w00 = (1.0 - fx) * (1.0 - fy)
            w10 = fx * (1.0 - fy)
            w01 = (1.0 - fx) * fy
            w11 = fx * fy
            if 0 <= ix and ix + 1 < w and 0 <= iy and iy + 1 < h:
                for k in range(c):
                    out[v, u, k] = np.float32(
                        w00 * src[iy, ix, k]
                        + w10 * src[iy, ix + 1, k]
                        + w01 * src[iy + 1, ix, k]
                        + w11 * src[iy + 1, ix + 1, k]
                    )
            else:
                in00 = 0 <= ix < w and 0 <= iy < h
                in10 = 0 <= ix + 1 < w and 0 <= iy < h
                in01 = 0 <= ix < w and 0 <= iy + 1 < h
                in11 = 0 <= ix + 1 < w and 0 <= iy + 1 < h
                for k in range(c):
                    acc = 0.0
                    if in00:
                        acc += w00 * src[iy, ix, k]
                    if in10:
                        acc += w10 * src[iy, ix + 1, k]
                    if in01:
                        acc += w01 * src[iy + 1, ix, k]
                    if in11:
                        acc += w11 * src[iy + 1, ix + 1, k]
                    out[v, u, k] = np.float32(acc)
    return out


@njit(cache=True, parallel=True, fastmath=True)
def composite_over(colors, alphas, depths):
    """Front-to-back over-composite of pre-warped planes.

    colors: (N, H, W, 3) float32, alphas: (N, H, W) float32, depths: (N,)
    float64. Returns (color, weightsum, depthraw) where depthraw is the
    unnormalized depth expectation sum_i w_i d_i in float64.
    """
    n, h, w, _ = colors.shape
    out_color = np.empty((h, w, 3), dtype=np.float32)
    out_weight = np.empty((h, w), dtype=np.float32)
    out_depth = np.empty((h, w), dtype=np.float64)
    for v in prange(h):
        for u in range(w):
            trans = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            ws = 0.0
            ds = 0.0
            for i in range(n):
                a = float(alphas[i, v, u])
                wi = a * trans
                c0 += wi * colors[i, v, u, 0]
                c1 += wi * colors[i, v, u, 1]
                c2 += wi * colors[i, v, u, 2]
                ws += wi
                ds += wi * depths[i]
                trans *= 1.0 - a
            out_color[v, u, 0] = np.float32(c0)
            out_color[v, u, 1] = np.float32(c1)
            out_color[v, u, 2] = np.float32(c2)
            out_weight[v, u] = np.float32(ws)
            out_depth[v, u] = ds
    return out_color, out_weight, out_depth


@njit(cache=True, parallel=True, fastmath=True)
def alpha_from_sigma(sigma, gaps, ray):
    """alpha = exp(-sigma * delta) with delta factored as gaps[i] * ray[v, u]."""
    n, h, w = sigma.shape
    out = np.empty((n, h, w), dtype=np.float32)
    for v in prange(h):
        for i in range(n):
            g = gaps[i]
            for u in range(w):
                out[i, v, u] = np.float32(math.exp(-float(sigma[i, v, u]) * g * ray[v, u]))
    return out


@njit(cache=True, parallel=True, fastmath=True)
def render_planes(layers, homs, depths, out_h, out_w):
    """Fused warp + over-composite across all planes.

    layers: (N, H, W, 4) float32 with channels [r, g, b, alpha]; homs:
    (N, 3, 3) float64 target->source pixel homographies; depths: (N,)
    float64. Per output pixel the planes are sampled bilinearly (zero
    padding) and accumulated front to back in float64, identical in exact
    arithmetic to warp_image + composite_over.
    """
    n, h, w, _ = layers.shape
    out_color = np.empty((out_h, out_w, 3), dtype=np.float32)
    out_weight = np.empty((out_h, out_w), dtype=np.float32)
    out_depth = np.empty((out_h, out_w), dtype=np.float64)
    for v in prange(out_h):
        for u in range(out_w):
            trans = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            ws = 0.0
            ds = 0.0
            for i in range(n):
                if trans == 0.0:
                    break
                x = homs[i, 0, 0] * u + homs[i, 0, 1] * v + homs[i, 0, 2]
                y = homs[i, 1, 0] * u + homs[i, 1, 1] * v + homs[i, 1, 2]
                z = homs[i, 2, 0] * u + homs[i, 2, 1] * v + homs[i, 2, 2]
                if z == 0.0:
                    continue
                us = x / z
                vs = y / z
                if not (math.isfinite(us) and math.isfinite(vs)):
                    continue
                if us <= -1.0 or us >= w or vs <= -1.0 or vs >= h:
                    continue
                x0 = math.floor(us)
                y0 = math.floor(vs)
                fx = us - x0
                fy = vs - y0
                ix = int(x0)
                iy = int(y0)
                w00 = (1.0 - fx) * (1.0 - fy)
                w10 = fx * (1.0 - fy)
                w01 = (1.0 - fx) * fy
                w11 = fx * fy
                r = 0.0
                g = 0.0
                b = 0.0
                a = 0.0
                if 0 <= ix and ix + 1 < w and 0 <= iy and iy + 1 < h:
                    r = (
                        w00 * layers[i, iy, ix, 0]
                        + w10 * layers[i, iy, ix + 1, 0]
                        + w01 * layers[i, iy + 1, ix, 0]
                        + w11 * layers[i, iy + 1, ix + 1, 0]
                    )
                    g = (
                        w00 * layers[i, iy, ix, 1]
                        + w10 * layers[i, iy, ix + 1, 1]
                        + w01 * layers[i, iy + 1, ix, 1]
                        + w11 * layers[i, iy + 1, ix + 1, 1]
                    )
                    b = (
                        w00 * layers[i, iy, ix, 2]
                        + w10 * layers[i, iy, ix + 1, 2]
                        + w01 * layers[i, iy + 1, ix, 2]
                        + w11 * layers[i, iy + 1, ix + 1, 2]
                    )
                    a = (
                        w00 * layers[i, iy, ix, 3]
                        + w10 * layers[i, iy, ix + 1, 3]
                        + w01 * layers[i, iy + 1, ix, 3]
                        + w11 * layers[i, iy + 1, ix + 1, 3]
                    )
                else:
                    if 0 <= ix < w and 0 <= iy < h:
                        r += w00 * layers[i, iy, ix, 0]
                        g += w00 * layers[i, iy, ix, 1]
                        b += w00 * layers[i, iy, ix, 2]
                        a += w00 * layers[i, iy, ix, 3]
                    if 0 <= ix + 1 < w and 0 <= iy < h:
                        r += w10 * layers[i, iy, ix + 1, 0]
                        g += w10 * layers[i, iy, ix + 1, 1]
                        b += w10 * layers[i, iy, ix + 1, 2]
                        a += w10 * layers[i, iy, ix + 1, 3]
                    if 0 <= ix < w and 0 <= iy + 1 < h:
                        r += w01 * layers[i, iy + 1, ix, 0]
                        g += w01 * layers[i, iy + 1, ix, 1]
                        b += w01 * layers[i, iy + 1, ix, 2]
                        a += w01 * layers[i, iy + 1, ix, 3]
                    if 0 <= ix + 1 < w and 0 <= iy + 1 < h:
                        r += w11 * layers[i, iy + 1, ix + 1, 0]
                        g += w11 * layers[i, iy + 1, ix + 1, 1]
                        b += w11 * layers[i, iy + 1, ix + 1, 2]
                        a += w11 * layers[i, iy + 1, ix + 1, 3]
                wi = a * trans
                c0 += wi * r
                c1 += wi * g
                c2 += wi * b
                ws += wi
                ds += wi * depths[i]
                trans *= 1.0 - a
            out_color[v, u, 0] = np.float32(c0)
            out_color[v, u, 1] = np.float32(c1)
            out_color[v, u, 2] = np.float32(c2)
            out_weight[v, u] = np.float32(ws)
            out_depth[v, u] = ds
    return out_color, out_weight, out_depth


@njit(cache=True)
def rasterize_triangles(px, py, pz, colors, tris, near, out_h, out_w):
    """Serial z-buffered triangle rasterizer with top/left fill rule.

    px, py: (V,) float64 projected pixel coordinates (pre-snapped); pz: (V,)
    float64 camera-space depths; colors: (V, 3) float32; tris: (M, 3) int32.
    Triangles with any vertex at z <= near are discarded whole. Coverage:
    a pixel center is in when every edge function is positive, or zero on a
    top/left edge, or the center coincides exactly with a projected vertex.
    Depth ties keep the first (lowest index) triangle. Attributes are
    interpolated perspective-correctly via 1/z weighting.
    """
    out_color = np.zeros((out_h, out_w, 3), dtype=np.float32)
    out_depth = np.full((out_h, out_w), np.inf, dtype=np.float64)
    out_cover = np.zeros((out_h, out_w), dtype=np.uint8)
    for t in range(tris.shape[0]):
        i0 = tris[t, 0]
        i1 = tris[t, 1]
        i2 = tris[t, 2]
        z0 = pz[i0]
        z1 = pz[i1]
        z2 = pz[i2]
        if z0 <= near or z1 <= near or z2 <= near:
            continue
        ax = px[i0]
        ay = py[i0]
        bx = px[i1]
        by = py[i1]
        cx = px[i2]
        cy = py[i2]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        if area < 0.0:
            # Normalize to positive orientation so edge functions are >= 0
            # inside; swap vertices b and c.
            bx, cx = cx, bx
            by, cy = cy, by
            z1, z2 = z2, z1
            i1, i2 = i2, i1
            area = -area
        xmin = min(ax, min(bx, cx))
        xmax = max(ax, max(bx, cx))
        ymin = min(ay, min(by, cy))
        ymax = max(ay, max(by, cy))
        ux0 = max(0, int(math.ceil(xmin)))
        ux1 = min(out_w - 1, int(math.floor(xmax)))
        uy0 = max(0, int(math.ceil(ymin)))
        uy1 = min(out_h - 1, int(math.floor(ymax)))
        if ux0 > ux1 or uy0 > uy1:
            continue
        # Top/left classification per edge (y-down screen, positive area):
        # an edge accepts a zero edge-function value when it is horizontal
        # pointing +x (top) or pointing upward in y (left).
        e0x = bx - ax
        e0y = by - ay
        e1x = cx - bx
        e1y = cy - by
        e2x = ax - cx
        e2y = ay - cy
        tl0 = (e0y == 0.0 and e0x > 0.0) or e0y < 0.0
        tl1 = (e1y == 0.0 and e1x > 0.0) or e1y < 0.0
        tl2 = (e2y == 0.0 and e2x > 0.0) or e2y < 0.0
        iz0 = 1.0 / z0
        iz1 = 1.0 / z1
        iz2 = 1.0 / z2
        for vpix in range(uy0, uy1 + 1):
            fvy = float(vpix)
            for upix in range(ux0, ux1 + 1):
                fux = float(upix)
                eab = e0x * (fvy - ay) - e0y * (fux - ax)
                ebc = e1x * (fvy - by) - e1y * (fux - bx)
                eca = e2x * (fvy - cy) - e2y * (fux - cx)
                ok = (
                    (eab > 0.0 or (eab == 0.0 and tl0))
                    and (ebc > 0.0 or (ebc == 0.0 and tl1))
                    and (eca > 0.0 or (eca == 0.0 and tl2))
                )
                if not ok:
                    # A pixel center exactly on a projected vertex is always
                    # covered; needed so grid meshes cover their last
                    # row/column, whose centers sit on right/bottom edges.
                    if not (
                        (fux == ax and fvy == ay)
                        or (fux == bx and fvy == by)
                        or (fux == cx and fvy == cy)
                    ):
                        continue
                    if eab < 0.0 or ebc < 0.0 or eca < 0.0:
                        continue
                # Barycentric weights: the edge function opposite a vertex.
                w0 = ebc / area
                w1 = eca / area
                w2 = eab / area
                denom = w0 * iz0 + w1 * iz1 + w2 * iz2
                if denom <= 0.0:
                    continue
                zp = 1.0 / denom
                if zp < out_depth[vpix, upix]:
                    out_depth[vpix, upix] = zp
                    out_cover[vpix, upix] = 1
                    s0 = w0 * iz0 * zp
                    s1 = w1 * iz1 * zp
                    s2 = w2 * iz2 * zp
                    out_color[vpix, upix, 0] = np.float32(
                        s0 * colors[i0, 0] + s1 * colors[i1, 0] + s2 * colors[i2, 0]
                    )
                    out_color[vpix, upix, 1] = np.float32(
                        s0 * colors[i0, 1] + s1 * colors[i1, 1] + s2 * colors[i2, 1]
                    )
                    out_color[vpix, upix, 2] = np.float32(
                        s0 * colors[i0, 2] + s1 * colors[i1, 2] + s2 * colors[i2, 2]
                    )
    return out_color, out_depth, out_cover


@njit(cache=True)
def relax_fill(padded, active, inv, lo, hi, omega, tol, max_sweeps):
    """Successive over-relaxation sweeps for the masked diffusion fill.

    padded holds participating values in its interior with a zero border;
    active marks fill pixels with at least one participating neighbor and
    inv their reciprocal neighbor counts. Updates are clamped to [lo, hi]
    per channel, which keeps every iterate inside the source value range.
    Sweeps stop when the largest update falls below tol. Serial on purpose:
    the rowwise update order is part of the fixed-point iteration.
    """
    h, w = active.shape
    c = padded.shape[2]
    for sweep in range(max_sweeps):
        delta = 0.0
        for y in range(h):
            for x in range(w):
                if active[y, x] == 0:
                    continue
                r = inv[y, x]
                for ch in range(c):
                    s = (
                        padded[y, x + 1, ch]
                        + padded[y + 2, x + 1, ch]
                        + padded[y + 1, x, ch]
                        + padded[y + 1, x + 2, ch]
                    )
                    cur = padded[y + 1, x + 1, ch]
                    upd = cur + omega * (s * r - cur)
                    if upd < lo[ch]:
                        upd = lo[ch]
                    elif upd > hi[ch]:
                        upd = hi[ch]
                    d = abs(upd - cur)
                    if d > delta:
                        delta = d
                    padded[y + 1, x + 1, ch] = upd
        if delta < tol:
            break
