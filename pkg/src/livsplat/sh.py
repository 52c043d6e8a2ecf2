"""Real spherical-harmonic color basis up to degree 3, with direction gradients.

Colors are stored as per-channel coefficient stacks of shape ((deg+1)^2, 3).
The rendered color is clamp(0.5 + sum_i basis_i(dir) * sh_i, 0, 1); degree 0
is view-independent.
"""

from __future__ import annotations

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def eval_basis(degree: int, dirs: np.ndarray) -> np.ndarray:
    """Basis values b (N, K) for unit directions (N, 3)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    b = np.empty((n, num_coeffs(degree)))
    b[:, 0] = SH_C0
    if degree >= 1:
        b[:, 1] = -SH_C1 * y
        b[:, 2] = SH_C1 * z
        b[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        b[:, 4] = SH_C2[0] * x * y
        b[:, 5] = SH_C2[1] * y * z
        b[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        b[:, 7] = SH_C2[3] * x * z
        b[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        b[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        b[:, 10] = SH_C3[1] * x * y * z
        b[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        b[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        b[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        b[:, 14] = SH_C3[5] * z * (xx - yy)
        b[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return b


def eval_basis_grad(degree: int, dirs: np.ndarray) -> np.ndarray:
    """d basis / d direction, shape (N, K, 3) (unnormalized direction ignored)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    g = np.zeros((n, num_coeffs(degree), 3))
    if degree >= 1:
        g[:, 1, 1] = -SH_C1
        g[:, 2, 2] = SH_C1
        g[:, 3, 0] = -SH_C1
    if degree >= 2:
        g[:, 4, 0] = SH_C2[0] * y
        g[:, 4, 1] = SH_C2[0] * x
        g[:, 5, 1] = SH_C2[1] * z
        g[:, 5, 2] = SH_C2[1] * y
        g[:, 6, 0] = SH_C2[2] * (-2.0 * x)
        g[:, 6, 1] = SH_C2[2] * (-2.0 * y)
        g[:, 6, 2] = SH_C2[2] * (4.0 * z)
        g[:, 7, 0] = SH_C2[3] * z
        g[:, 7, 2] = SH_C2[3] * x
        g[:, 8, 0] = SH_C2[4] * (2.0 * x)
        g[:, 8, 1] = SH_C2[4] * (-2.0 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        g[:, 9, 0] = SH_C3[0] * 6.0 * x * y
        g[:, 9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
        g[:, 10, 0] = SH_C3[1] * y * z
        g[:, 10, 1] = SH_C3[1] * x * z
        g[:, 10, 2] = SH_C3[1] * x * y
        g[:, 11, 0] = SH_C3[2] * (-2.0 * x * y)
        g[:, 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
        g[:, 11, 2] = SH_C3[2] * (8.0 * y * z)
        g[:, 12, 0] = SH_C3[3] * (-6.0 * x * z)
        g[:, 12, 1] = SH_C3[3] * (-6.0 * y * z)
        g[:, 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        g[:, 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
        g[:, 13, 1] = SH_C3[4] * (-2.0 * x * y)
        g[:, 13, 2] = SH_C3[4] * (8.0 * x * z)
        g[:, 14, 0] = SH_C3[5] * (2.0 * x * z)
        g[:, 14, 1] = SH_C3[5] * (-2.0 * y * z)
        g[:, 14, 2] = SH_C3[5] * (xx - yy)
        g[:, 15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
        g[:, 15, 1] = SH_C3[6] * (-6.0 * x * y)
    return g


def eval_color(degree: int, sh: np.ndarray, dirs: np.ndarray):
    """Colors (N, 3) plus the in-range mask used to gate gradients.

    sh has shape (N, K, 3) with K >= num_coeffs(degree); extra coefficients
    are ignored.
    """
    k = num_coeffs(degree)
    b = eval_basis(degree, dirs)  # (N, K)
    raw = 0.5 + np.einsum("nk,nkc->nc", b, sh[:, :k, :])
    color = np.clip(raw, 0.0, 1.0)
    interior = (raw > 0.0) & (raw < 1.0)
    return color, interior


def color_from_target(target: np.ndarray) -> np.ndarray:
    """Degree-0 coefficient triple whose rendered color equals target."""
    return (np.asarray(target, dtype=float) - 0.5) / SH_C0
