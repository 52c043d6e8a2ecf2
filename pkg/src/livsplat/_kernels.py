"""Numba kernels for the splatting forward/backward passes.

Layout: splats arrive pre-sorted by ascending camera depth. A pixel-major CSR
(pixel -> splat list, already in depth order) drives compositing; a parallel
splat-major index permits race-free per-Gaussian gradient accumulation.
Parallelism is across pixels (forward, per-entry backward) and across splats
(accumulation); per-element loops are strictly ordered, so results are
bit-identical for any thread count.

alpha_cut drops contributions below a fixed alpha (0 disables the cut and
makes compositing exact over each splat's bounding box); the same test runs
in every pass so forward and backward stay consistent.
"""

import numpy as np
from numba import njit, prange

F8 = np.float64


@njit(cache=True)
def build_csr(bboxes, height, width):
    """Pixel-major CSR plus the splat-major view of the same entries.

    bboxes: (M, 4) int64 half-open [x0, x1, y0, y1] per sorted splat.
    Returns (offsets, entry_splat, splat_offsets, entry_pos, entry_pix).
    """
    m = bboxes.shape[0]
    npx = height * width
    counts = np.zeros(npx + 1, dtype=np.int64)
    splat_offsets = np.zeros(m + 1, dtype=np.int64)
    for s in range(m):
        x0, x1, y0, y1 = bboxes[s, 0], bboxes[s, 1], bboxes[s, 2], bboxes[s, 3]
        area = (x1 - x0) * (y1 - y0)
        splat_offsets[s + 1] = splat_offsets[s] + area
        for y in range(y0, y1):
            base = y * width
            for x in range(x0, x1):
                counts[base + x + 1] += 1
    offsets = np.cumsum(counts)
    total = offsets[npx]
    entry_splat = np.empty(total, dtype=np.int64)
    entry_pos = np.empty(total, dtype=np.int64)
    entry_pix = np.empty(total, dtype=np.int64)
    fill = offsets[:npx].copy()
    k = 0
    for s in range(m):
        x0, x1, y0, y1 = bboxes[s, 0], bboxes[s, 1], bboxes[s, 2], bboxes[s, 3]
        for y in range(y0, y1):
            base = y * width
            for x in range(x0, x1):
                p = base + x
                pos = fill[p]
                fill[p] = pos + 1
                entry_splat[pos] = s
                entry_pos[k] = pos
                entry_pix[k] = p
                k += 1
    return offsets, entry_splat, splat_offsets, entry_pos, entry_pix


@njit(inline="always")
def _alpha_of(mx, my, ca, cb, cc, op, ux, uy, alpha_clamp):
    dx = ux - mx
    dy = uy - my
    q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
    g = np.exp(-0.5 * q)
    a = op * g
    if a > alpha_clamp:
        a = alpha_clamp
    return g, a


@njit(cache=True, parallel=True, fastmath=True)
def forward(offsets, entry_splat, means2d, conics, opac, colors, bg,
            height, width, alpha_clamp, t_min, alpha_cut):
    """Front-to-back compositing; also emits per-entry (G, alpha, T-in-front)
    scratch values so the backward pass never re-evaluates the exponentials."""
    npx = height * width
    total = offsets[npx]
    image = np.empty((npx, 3), dtype=F8)
    t_final = np.empty(npx, dtype=F8)
    n_proc = np.zeros(npx, dtype=np.int64)
    g_scr = np.zeros(total, dtype=F8)
    a_scr = np.zeros(total, dtype=F8)
    t_scr = np.zeros(total, dtype=F8)
    for p in prange(npx):
        y = p // width
        x = p - y * width
        ux = F8(x)
        uy = F8(y)
        T = 1.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        count = 0
        for idx in range(offsets[p], offsets[p + 1]):
            if T < t_min:
                break
            s = entry_splat[idx]
            g, alpha = _alpha_of(means2d[s, 0], means2d[s, 1], conics[s, 0],
                                 conics[s, 1], conics[s, 2], opac[s], ux, uy, alpha_clamp)
            count += 1
            if alpha < alpha_cut:
                continue
            g_scr[idx] = g
            a_scr[idx] = alpha
            t_scr[idx] = T
            w = T * alpha
            c0 += w * colors[s, 0]
            c1 += w * colors[s, 1]
            c2 += w * colors[s, 2]
            T = T * (1.0 - alpha)
        image[p, 0] = c0 + T * bg[0]
        image[p, 1] = c1 + T * bg[1]
        image[p, 2] = c2 + T * bg[2]
        t_final[p] = T
        n_proc[p] = count
    return image, t_final, n_proc, g_scr, a_scr, t_scr


@njit(cache=True, parallel=True, fastmath=True)
def backward_per_entry(offsets, entry_splat, n_proc, t_final, grad_image,
                       colors, bg, a_scr, t_scr,
                       height, width, sel_mask):
    """Per-entry compositing derivatives from the forward scratch values.

    Entries past a pixel's cutoff (or below alpha_cut) keep zeros.
    """
    npx = height * width
    total = offsets[npx]
    d_alpha = np.zeros(total, dtype=F8)
    w_out = np.zeros(total, dtype=F8)
    for p in prange(npx):
        if not sel_mask[p]:
            continue
        count = n_proc[p]
        if count == 0:
            continue
        start = offsets[p]
        g0 = grad_image[p, 0]
        g1 = grad_image[p, 1]
        g2 = grad_image[p, 2]
        tfin = t_final[p]
        s0 = bg[0] * tfin
        s1 = bg[1] * tfin
        s2 = bg[2] * tfin
        for k in range(count - 1, -1, -1):
            pos = start + k
            alpha = a_scr[pos]
            if alpha == 0.0:
                continue
            s = entry_splat[pos]
            Ti = t_scr[pos]
            w = alpha * Ti
            inv = 1.0 / (1.0 - alpha)
            da = g0 * (colors[s, 0] * Ti - s0 * inv)
            da += g1 * (colors[s, 1] * Ti - s1 * inv)
            da += g2 * (colors[s, 2] * Ti - s2 * inv)
            d_alpha[pos] = da
            w_out[pos] = w
            s0 += w * colors[s, 0]
            s1 += w * colors[s, 1]
            s2 += w * colors[s, 2]
    return d_alpha, w_out


@njit(cache=True, parallel=True, fastmath=True)
def accumulate_splat_grads(splat_offsets, entry_pos, entry_pix, d_alpha, w_out,
                           g_scr, a_scr, grad_image, means2d, conics, opac,
                           width, alpha_clamp):
    """Race-free per-splat accumulation over each splat's own pixels.

    Returns d_color (M,3), d_opac (M,), d_mean2d (M,2), d_cov2d (M,3) where
    d_cov2d holds the symmetric (s00, s01, s11) gradient of the 2D covariance.
    """
    m = splat_offsets.shape[0] - 1
    d_color = np.zeros((m, 3), dtype=F8)
    d_opac = np.zeros(m, dtype=F8)
    d_mean2d = np.zeros((m, 2), dtype=F8)
    d_cov2d = np.zeros((m, 3), dtype=F8)
    for s in prange(m):
        mx = means2d[s, 0]
        my = means2d[s, 1]
        ca = conics[s, 0]
        cb = conics[s, 1]
        cc = conics[s, 2]
        op = opac[s]
        for k in range(splat_offsets[s], splat_offsets[s + 1]):
            pos = entry_pos[k]
            da = d_alpha[pos]
            w = w_out[pos]
            if da == 0.0 and w == 0.0:
                continue
            p = entry_pix[k]
            g = g_scr[pos]
            a = a_scr[pos]
            d_color[s, 0] += w * grad_image[p, 0]
            d_color[s, 1] += w * grad_image[p, 1]
            d_color[s, 2] += w * grad_image[p, 2]
            if a < alpha_clamp:  # clamp gate: saturated alpha passes no gradient
                y = p // width
                x = p - y * width
                dx = F8(x) - mx
                dy = F8(y) - my
                d_opac[s] += g * da
                dg = op * da
                v0 = ca * dx + cb * dy
                v1 = cb * dx + cc * dy
                gg = dg * g
                d_mean2d[s, 0] += gg * v0
                d_mean2d[s, 1] += gg * v1
                d_cov2d[s, 0] += 0.5 * gg * v0 * v0
                d_cov2d[s, 1] += 0.5 * gg * v0 * v1
                d_cov2d[s, 2] += 0.5 * gg * v1 * v1
    return d_color, d_opac, d_mean2d, d_cov2d


@njit(cache=True, fastmath=True)
def per_entry_screen_grads(entry_pos, entry_pix, entry_splat_of_pos, d_alpha, w_out,
                           g_scr, a_scr, means2d, conics, opac, width,
                           alpha_clamp, sel_mask):
    """Per-entry screen-space gradient pieces for selected pixels only.

    For each splat-major entry k with sel_mask[pixel] true and a nonzero
    contribution, emits: splat id, pixel id, d_mean2d (2,), d_cov2d (3,), and
    the blend weight (for the color path).
    """
    total = entry_pos.shape[0]
    keep = np.zeros(total, dtype=np.bool_)
    out_mu = np.zeros((total, 2), dtype=F8)
    out_cov = np.zeros((total, 3), dtype=F8)
    out_w = np.zeros(total, dtype=F8)
    out_splat = np.zeros(total, dtype=np.int64)
    out_pix = np.zeros(total, dtype=np.int64)
    for k in range(total):
        p = entry_pix[k]
        if not sel_mask[p]:
            continue
        pos = entry_pos[k]
        da = d_alpha[pos]
        w = w_out[pos]
        if da == 0.0 and w == 0.0:
            continue
        s = entry_splat_of_pos[pos]
        g = g_scr[pos]
        a = a_scr[pos]
        keep[k] = True
        out_splat[k] = s
        out_pix[k] = p
        out_w[k] = w
        if a < alpha_clamp:
            y = p // width
            x = p - y * width
            dx = F8(x) - means2d[s, 0]
            dy = F8(y) - means2d[s, 1]
            ca = conics[s, 0]
            cb = conics[s, 1]
            cc = conics[s, 2]
            dg = opac[s] * da
            v0 = ca * dx + cb * dy
            v1 = cb * dx + cc * dy
            gg = dg * g
            out_mu[k, 0] = gg * v0
            out_mu[k, 1] = gg * v1
            out_cov[k, 0] = 0.5 * gg * v0 * v0
            out_cov[k, 1] = 0.5 * gg * v0 * v1
            out_cov[k, 2] = 0.5 * gg * v1 * v1
    return keep, out_splat, out_pix, out_mu, out_cov, out_w
