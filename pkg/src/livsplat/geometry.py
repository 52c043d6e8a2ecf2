"""Rigid-body math, pinhole projection, and the Gaussian primitive types.

Pose perturbation conventions used throughout the project (documented once,
here):

* IMU-style pose ``T`` (body w.r.t. world) is perturbed on the right for the
  rotation and additively for the translation::

      T boxplus (rho, tau) = (R @ Exp(rho^), t + tau)

  This is the convention the filter's error state lives in.

* A world-to-camera pose is perturbed on the left::

      left_perturb(T_CW, rho, tau) = (Exp(rho^) @ R_CW, Exp(rho^) @ t_CW + tau)

``se3_exp`` / ``se3_log`` are the full exponential map (with the coupled
translation term), used for twist round-trips and interpolation, not for the
filter retraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera

_EPS = 1e-12


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(a) @ b == cross(a, b)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S: np.ndarray) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a series fallback for small angles."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    S = hat(phi)
    if theta < 1e-8:
        # 2nd-order series keeps orthonormality to machine precision here.
        return np.eye(3) + S + 0.5 * (S @ S)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * S + b * (S @ S)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Inverse of so3_exp; branch with theta in [0, pi].

    Near theta = pi the off-diagonal formula degenerates, so the axis is
    recovered from the dominant diagonal entry of (R + I) / 2.
    """
    tr = float(np.trace(R))
    cos_theta = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-8:
        return vee(0.5 * (R - R.T))
    if np.pi - theta > 1e-6:
        return vee((theta / (2.0 * np.sin(theta))) * (R - R.T))
    # theta close to pi: axis from B = (R + I)/2 = I*cos + (1-cos) n n^T + ...
    B = 0.5 * (R + np.eye(3))
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(max(B[k, k], _EPS))
    axis = axis / np.linalg.norm(axis)
    # fix the sign using the (still informative) skew part
    w = vee(R - R.T)
    if np.dot(w, axis) < 0.0:
        axis = -axis
    return theta * axis


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    S = hat(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * S + (S @ S) / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * S + b * (S @ S)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    S = hat(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * S + (S @ S) / 12.0
    cot_half = 1.0 / np.tan(0.5 * theta)
    b = (1.0 / theta**2) - 0.5 * cot_half / theta
    return np.eye(3) - 0.5 * S + b * (S @ S)


def so3_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    return so3_left_jacobian_inv(-np.asarray(phi, dtype=float))


@dataclass
class Twist:
    """Tangent-space perturbation: rho rotates (rad), tau translates (m)."""

    rho: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float).reshape(3)
        self.tau = np.asarray(self.tau, dtype=float).reshape(3)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.tau])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return Twist(v[:3], v[3:])


@dataclass
class SE3:
    """Rigid transform: p_out = R @ p_in + t."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)

    @staticmethod
    def identity() -> "SE3":
        return SE3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(M: np.ndarray) -> "SE3":
        M = np.asarray(M, dtype=float)
        return SE3(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> "SE3":
        Rt = self.R.T
        return SE3(Rt, -Rt @ self.t)

    def __matmul__(self, other: "SE3") -> "SE3":
        return SE3(self.R @ other.R, self.R @ other.t + self.t)

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack of points (N, 3)."""
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            return self.R @ p + self.t
        return p @ self.R.T + self.t

    def orthonormality_error(self) -> float:
        return float(
            max(
                np.abs(self.R @ self.R.T - np.eye(3)).max(),
                abs(np.linalg.det(self.R) - 1.0),
            )
        )


def se3_exp(xi: Twist) -> SE3:
    R = so3_exp(xi.rho)
    t = so3_left_jacobian(xi.rho) @ xi.tau
    return SE3(R, t)


def se3_log(T: SE3) -> Twist:
    rho = so3_log(T.R)
    tau = so3_left_jacobian_inv(rho) @ T.t
    return Twist(rho, tau)


def boxplus(T: SE3, xi: Twist) -> SE3:
    """Filter retraction: right-multiplied rotation, additive translation."""
    return SE3(T.R @ so3_exp(xi.rho), T.t + xi.tau)


def boxminus(Ta: SE3, Tb: SE3) -> Twist:
    """Inverse of boxplus: boxminus(boxplus(T, xi), T) == xi."""
    return Twist(so3_log(Tb.R.T @ Ta.R), Ta.t - Tb.t)


def left_perturb(T_cw: SE3, rho: np.ndarray, tau: np.ndarray) -> SE3:
    """Left perturbation of a world-to-camera pose (see module docstring)."""
    E = so3_exp(rho)
    return SE3(E @ T_cw.R, E @ T_cw.t + np.asarray(tau, dtype=float))


def imu_camera_tangent_blocks(R_cw: np.ndarray, T_ic: SE3):
    """Blocks of the linear map from an IMU-pose perturbation to the induced
    left perturbation of T_CW = (T_WI @ T_IC)^-1.

    Returns (d_rho, d_tau, d_tau_cross) with

        rho_l = d_rho @ rho_r            d_rho       = -R_CI
        tau_l = d_tau @ tau_r            d_tau       = -R_CW
              + d_tau_cross @ rho_r      d_tau_cross = -hat(t_CI) @ R_CI

    rho_l carries no dependence on tau_r.
    """
    T_ci = T_ic.inverse()
    d_rho = -T_ci.R
    d_tau = -np.asarray(R_cw, dtype=float)
    d_tau_cross = -hat(T_ci.t) @ T_ci.R
    return d_rho, d_tau, d_tau_cross


def imu_camera_adjoint(R_cw: np.ndarray, T_ic: SE3) -> np.ndarray:
    """6x6 matrix A with (rho_l, tau_l) = A @ (rho_r, tau_r)."""
    d_rho, d_tau, d_tau_cross = imu_camera_tangent_blocks(R_cw, T_ic)
    A = np.zeros((6, 6))
    A[:3, :3] = d_rho
    A[3:, :3] = d_tau_cross
    A[3:, 3:] = d_tau
    return A


@dataclass
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")


def project(cam: PinholeCamera, p_c: np.ndarray, near: float = 0.01) -> np.ndarray:
    """Pinhole projection of a camera-frame point to pixel coordinates."""
    p_c = np.asarray(p_c, dtype=float)
    z = p_c[2]
    if z <= near:
        raise BehindCamera(f"z={z} <= near plane {near}")
    return np.array([cam.fx * p_c[0] / z + cam.cx, cam.fy * p_c[1] / z + cam.cy])


def projection_jacobian(cam: PinholeCamera, p_c: np.ndarray, near: float = 0.01) -> np.ndarray:
    """2x3 derivative of project() w.r.t. the camera-frame point."""
    p_c = np.asarray(p_c, dtype=float)
    x, y, z = p_c
    if z <= near:
        raise BehindCamera(f"z={z} <= near plane {near}")
    return np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x / z**2],
            [0.0, cam.fy / z, -cam.fy * y / z**2],
        ]
    )


@dataclass
class Gaussian3D:
    """Planar-slice Gaussian primitive owned by one octree leaf.

    The 3x3 world covariance is never stored; it is reconstructed as
    (rot @ diag(scale)) @ (rot @ diag(scale)).T when needed.
    """

    mean_w: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity: float
    sh: np.ndarray  # ((degree+1)^2, 3) coefficients per channel
    level: int = 0

    def __post_init__(self):
        self.mean_w = np.asarray(self.mean_w, dtype=float).reshape(3)
        self.rot = np.asarray(self.rot, dtype=float).reshape(3, 3)
        self.scale = np.asarray(self.scale, dtype=float).reshape(3)
        self.sh = np.asarray(self.sh, dtype=float).reshape(-1, 3)

    def covariance(self) -> np.ndarray:
        B = self.rot * self.scale[None, :]
        return B @ B.T

    def validate(self) -> None:
        if not np.all(self.scale > 0):
            raise ValueError("scale components must be positive")
        if self.scale[0] > min(self.scale[1], self.scale[2]) + 1e-12:
            raise ValueError("slice thickness must not exceed in-plane scales")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValueError("opacity outside [0, 1]")
        err = max(
            np.abs(self.rot @ self.rot.T - np.eye(3)).max(),
            abs(np.linalg.det(self.rot) - 1.0),
        )
        if err > 1e-6:
            raise ValueError(f"rotation not orthonormal (err={err:.2e})")


@dataclass
class Gaussian2D:
    """Screen-space footprint of a splatted Gaussian."""

    mean_i: np.ndarray
    cov_i: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float

    def __post_init__(self):
        self.mean_i = np.asarray(self.mean_i, dtype=float).reshape(2)
        self.cov_i = np.asarray(self.cov_i, dtype=float).reshape(2, 2)
        self.color = np.asarray(self.color, dtype=float).reshape(3)
