"""LiDAR-camera joint initialization of new Gaussians.

Geometry comes from the voxel level (footprint) and the fitted surface normal
(orientation); appearance is bootstrapped by bilinear sampling of the camera
image into the view-independent color coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh
from .errors import Degenerate, OutOfBounds
from .geometry import Gaussian3D, PinholeCamera, SE3, project

EX = np.array([1.0, 0.0, 0.0])
EY = np.array([0.0, 1.0, 0.0])


def init_scale(level: int, v_s: float, kappa: float = 0.5, delta: float = 1e-3) -> np.ndarray:
    """Diagonal scaling matrix diag(delta, s, s) with s = kappa * leaf edge."""
    s = kappa * (v_s / (1 << level))
    return np.diag([delta, s, s])


def init_rotation(n: np.ndarray) -> np.ndarray:
    """Orientation whose third column is the surface normal.

    Built from the world x-axis; falls back to the y-axis when n is parallel
    to x (the stated Degenerate case is handled internally).
    """
    n = np.asarray(n, dtype=float)
    u = np.cross(EX, n)
    nu = np.linalg.norm(u)
    if nu < 1e-6:
        u = np.cross(EY, n)
        nu = np.linalg.norm(u)
        if nu < 1e-6:
            raise Degenerate("normal parallel to both axis seeds")
    u = u / nu
    return np.column_stack([u, np.cross(n, u), n])


def covariance(rot: np.ndarray, S: np.ndarray) -> np.ndarray:
    """World covariance (R S)(R S)^T; positive definite by construction."""
    B = rot @ S
    return B @ B.T


def slab_frame(n: np.ndarray) -> np.ndarray:
    """Orientation pairing the thin (first) scale axis with the normal.

    init_rotation puts the normal in the last column while the scale vector
    puts the slice thickness first; composing them verbatim would thin the
    Gaussian along an arbitrary in-plane direction.  Cycling the columns to
    (n, u, n x u) keeps a proper rotation and makes the slab hug the surface.
    """
    R = init_rotation(n)
    return np.column_stack([R[:, 2], R[:, 0], R[:, 1]])


@dataclass
class BilinearWeights:
    """Four (pixel, area-weight) pairs; weights are non-negative and sum to 1."""

    pixels: list
    weights: np.ndarray

    @staticmethod
    def at(uv: np.ndarray, width: int, height: int) -> "BilinearWeights":
        u, v = float(uv[0]), float(uv[1])
        if not (1.0 <= u <= width - 2 and 1.0 <= v <= height - 2):
            raise OutOfBounds(f"uv=({u:.2f},{v:.2f}) outside interior of {width}x{height}")
        x0, y0 = int(np.floor(u)), int(np.floor(v))
        fx, fy = u - x0, v - y0
        pixels = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)]
        weights = np.array([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
        return BilinearWeights(pixels, weights)


def bilinear_color(img: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Area-weighted color at a sub-pixel location (pixel centers at integers)."""
    h, w = img.shape[:2]
    bw = BilinearWeights.at(uv, w, h)
    out = np.zeros(3)
    for (py, px), a in zip(bw.pixels, bw.weights):
        out += a * img[py, px]
    return out


def init_gaussian(
    p_w: np.ndarray,
    normal: np.ndarray,
    level: int,
    image: np.ndarray,
    T_WC: SE3,
    cam: PinholeCamera,
    v_s: float,
    kappa: float = 0.5,
    delta: float = 1e-3,
    opacity: float = 0.9,
    sh_degree: int = 0,
    near: float = 0.01,
) -> Gaussian3D:
    """Rough Gaussian for a surface point seen by LiDAR and the camera.

    Raises BehindCamera / OutOfBounds when the point is not observable; the
    caller skips such points.
    """
    uv = project(cam, T_WC.inverse().apply(p_w), near=near)
    color = bilinear_color(image, uv)
    coeffs = np.zeros((sh.num_coeffs(sh_degree), 3))
    coeffs[0] = sh.color_from_target(color)
    S = init_scale(level, v_s, kappa=kappa, delta=delta)
    return Gaussian3D(
        mean_w=np.asarray(p_w, dtype=float),
        rot=slab_frame(normal),
        scale=np.diag(S),
        opacity=opacity,
        sh=coeffs,
        level=level,
    )
