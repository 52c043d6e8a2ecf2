"""Independent reference implementations used as test oracles.

These deliberately share no code with the library paths they check: plain
per-pixel loops, no footprint culling, no CSR machinery.
"""

import numpy as np


def brute_force_render(means, rots, scales, opacities, colors, T_cw_R, T_cw_t,
                       fx, fy, cx, cy, width, height,
                       near=0.01, dilation=0.3, alpha_clamp=0.99, t_min=1e-4,
                       bg=(0.0, 0.0, 0.0)):
    """Composite every Gaussian at every pixel in depth order.

    colors are the already-evaluated RGB values per Gaussian (the oracle does
    not re-derive spherical harmonics).
    """
    n = len(means)
    entries = []
    for i in range(n):
        mu_c = T_cw_R @ means[i] + T_cw_t
        if mu_c[2] <= near:
            continue
        x, y, z = mu_c
        mu_i = np.array([fx * x / z + cx, fy * y / z + cy])
        J = np.array([[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]])
        B = rots[i] @ np.diag(scales[i])
        cov_w = B @ B.T
        M = J @ T_cw_R
        cov_i = M @ cov_w @ M.T + dilation * np.eye(2)
        entries.append((z, i, mu_i, np.linalg.inv(cov_i)))
    entries.sort(key=lambda e: (e[0], e[1]))

    img = np.zeros((height, width, 3))
    t_final = np.ones((height, width))
    bg = np.asarray(bg, dtype=float)
    for py in range(height):
        for px in range(width):
            T = 1.0
            acc = np.zeros(3)
            for z, i, mu_i, inv_cov in entries:
                if T < t_min:
                    break
                d = np.array([px, py], dtype=float) - mu_i
                g = np.exp(-0.5 * d @ inv_cov @ d)
                alpha = min(opacities[i] * g, alpha_clamp)
                acc += T * alpha * colors[i]
                T *= 1.0 - alpha
            img[py, px] = acc + T * bg
            t_final[py, px] = T
    return img, t_final


def tile_sorted_render(means, rots, scales, opacities, colors, T_cw_R, T_cw_t,
                       fx, fy, cx, cy, width, height, tile=16,
                       near=0.01, dilation=0.3, alpha_clamp=0.99, t_min=1e-4,
                       bg=(0.0, 0.0, 0.0)):
    """Deliberately degraded comparator: each splat is binned only into the
    tile containing its center, so footprints spanning tile borders are
    dropped in neighbouring tiles and the background bleeds through."""
    n = len(means)
    tiles = {}
    for i in range(n):
        mu_c = T_cw_R @ means[i] + T_cw_t
        if mu_c[2] <= near:
            continue
        x, y, z = mu_c
        mu_i = np.array([fx * x / z + cx, fy * y / z + cy])
        J = np.array([[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]])
        B = rots[i] @ np.diag(scales[i])
        M = J @ T_cw_R
        cov_i = M @ (B @ B.T) @ M.T + dilation * np.eye(2)
        tx, ty = int(mu_i[0] // tile), int(mu_i[1] // tile)
        tiles.setdefault((tx, ty), []).append((z, i, mu_i, np.linalg.inv(cov_i)))
    for lst in tiles.values():
        lst.sort(key=lambda e: (e[0], e[1]))

    img = np.zeros((height, width, 3))
    bg = np.asarray(bg, dtype=float)
    for py in range(height):
        for px in range(width):
            T = 1.0
            acc = np.zeros(3)
            for z, i, mu_i, inv_cov in tiles.get((px // tile, py // tile), []):
                if T < t_min:
                    break
                d = np.array([px, py], dtype=float) - mu_i
                g = np.exp(-0.5 * d @ inv_cov @ d)
                alpha = min(opacities[i] * g, alpha_clamp)
                acc += T * alpha * colors[i]
                T *= 1.0 - alpha
            img[py, px] = acc + T * bg
    return img


def numeric_jacobian(f, x, eps=1e-6):
    """Central finite differences of a vector function, column per input."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        d = np.zeros_like(x)
        d[k] = eps
        fp = np.asarray(f(x + d)).ravel()
        fm = np.asarray(f(x - d)).ravel()
        J[:, k] = (fp - fm) / (2 * eps)
    return J
