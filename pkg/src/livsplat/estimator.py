"""IESKF odometry: IMU propagation, point-to-plane LiDAR update, and the
photometric visual update, fused by an iterated error-state Kalman filter.

The 15-dim error state is ordered (d_rho, d_tau, d_v, d_bg, d_ba) with the
pose retraction of geometry.boxplus (right-multiplied rotation, additive
translation).  Gravity is a fixed constant, not a state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import NoAssociations, NonMonotonicTime, SingularGain, TooFewPixels
from .geometry import (
    SE3,
    Twist,
    boxminus,
    boxplus,
    hat,
    imu_camera_tangent_blocks,
    PinholeCamera,
    so3_exp,
    so3_left_jacobian,
    so3_right_jacobian_inv,
)
from .raster import RasterSettings, pose_rows, render
from .voxmap import HashOctree, keys_of_points
from .window import GaussianWindow

GRAVITY = np.array([0.0, 0.0, -9.81])

DIM = 15
I_RHO = slice(0, 3)
I_TAU = slice(3, 6)
I_VEL = slice(6, 9)
I_BG = slice(9, 12)
I_BA = slice(12, 15)


@dataclass
class NavState:
    T_WI: SE3 = field(default_factory=SE3.identity)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def gravity(self) -> np.ndarray:
        return GRAVITY

    def clone(self) -> "NavState":
        return NavState(
            SE3(self.T_WI.R.copy(), self.T_WI.t.copy()),
            self.velocity.copy(),
            self.bias_gyro.copy(),
            self.bias_accel.copy(),
        )

    def boxplus(self, xi: np.ndarray, bias_limit: float = 0.5) -> "NavState":
        xi = np.asarray(xi, dtype=float)
        return NavState(
            boxplus(self.T_WI, Twist(xi[I_RHO], xi[I_TAU])),
            self.velocity + xi[I_VEL],
            np.clip(self.bias_gyro + xi[I_BG], -bias_limit, bias_limit),
            np.clip(self.bias_accel + xi[I_BA], -bias_limit, bias_limit),
        )

    def boxminus(self, other: "NavState") -> np.ndarray:
        tw = boxminus(self.T_WI, other.T_WI)
        return np.concatenate(
            [
                tw.rho,
                tw.tau,
                self.velocity - other.velocity,
                self.bias_gyro - other.bias_gyro,
                self.bias_accel - other.bias_accel,
            ]
        )


@dataclass
class Measurement:
    """Stacked residuals with pose Jacobian rows padded to the full state."""

    z: np.ndarray
    H: np.ndarray
    R_diag: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(-1)
        self.H = np.asarray(self.H, dtype=float).reshape(len(self.z), DIM)
        self.R_diag = np.asarray(self.R_diag, dtype=float).reshape(len(self.z))


@dataclass
class FilterConfig:
    gyro_noise: float = 1e-3        # rad/s/sqrt(Hz)
    accel_noise: float = 1e-2       # m/s^2/sqrt(Hz)
    gyro_bias_rw: float = 1e-5
    accel_bias_rw: float = 1e-4
    lidar_sigma: float = 0.02       # m, point-to-plane
    photo_sigma: float = 0.1        # intensity units
    lidar_gate: float = 1.0         # m, residual rejection
    pixel_budget: int = 1024
    grad_threshold: float = 0.05
    photo_gate: float = 0.15        # intensity residual rejection
    min_pixels: int = 50
    max_iter: int = 5
    visual_max_iter: int = 2   # each visual iteration re-renders the window
    step_tol: float = 1e-6
    bias_limit: float = 0.5
    coverage_max_transmittance: float = 0.9


def initial_covariance(pos_sigma=1e-4, rot_sigma=1e-4, vel_sigma=1e-3,
                       bg_sigma=1e-4, ba_sigma=1e-3) -> np.ndarray:
    d = np.concatenate(
        [
            np.full(3, rot_sigma**2),
            np.full(3, pos_sigma**2),
            np.full(3, vel_sigma**2),
            np.full(3, bg_sigma**2),
            np.full(3, ba_sigma**2),
        ]
    )
    return np.diag(d)


def imu_propagate(state: NavState, cov: np.ndarray, stamps: np.ndarray,
                  gyro: np.ndarray, accel: np.ndarray, cfg: FilterConfig):
    """Midpoint integration of bias-corrected rates with covariance transport."""
    stamps = np.asarray(stamps, dtype=float)
    if len(stamps) < 2:
        return state.clone(), cov.copy()
    if np.any(np.diff(stamps) <= 0):
        raise NonMonotonicTime("IMU timestamps must strictly increase")
    st = state.clone()
    cov = cov.copy()
    R = st.T_WI.R
    p = st.T_WI.t
    v = st.velocity
    for j in range(len(stamps) - 1):
        dt = stamps[j + 1] - stamps[j]
        w = 0.5 * (gyro[j] + gyro[j + 1]) - st.bias_gyro
        a = 0.5 * (accel[j] + accel[j + 1]) - st.bias_accel
        R_mid = R @ so3_exp(w * (0.5 * dt))
        a_w = R_mid @ a + GRAVITY
        p = p + v * dt + 0.5 * a_w * dt**2
        v = v + a_w * dt
        R = R @ so3_exp(w * dt)

        F = np.eye(DIM)
        F[I_RHO, I_RHO] = so3_exp(-w * dt)
        F[I_RHO, I_BG] = -np.eye(3) * dt
        F[I_TAU, I_VEL] = np.eye(3) * dt
        F[I_VEL, I_RHO] = -R_mid @ hat(a) * dt
        F[I_VEL, I_BA] = -R_mid * dt
        Q = np.zeros((DIM, DIM))
        Q[I_RHO, I_RHO] = np.eye(3) * cfg.gyro_noise**2 * dt
        Q[I_VEL, I_VEL] = np.eye(3) * cfg.accel_noise**2 * dt
        Q[I_BG, I_BG] = np.eye(3) * cfg.gyro_bias_rw**2 * dt
        Q[I_BA, I_BA] = np.eye(3) * cfg.accel_bias_rw**2 * dt
        cov = F @ cov @ F.T + Q
    st.T_WI = SE3(R, p)
    st.velocity = v
    cov = 0.5 * (cov + cov.T)
    return st, cov


def camera_imu_jacobians(T_wi: SE3, T_ic: SE3) -> dict:
    """Closed-form tangent blocks of T_CW w.r.t. the IMU pose perturbation.

    Note: the cross block is the response of the camera translation tangent
    to the IMU rotation tangent (the camera rotation tangent has no
    translation response).
    """
    R_cw = (T_wi @ T_ic).inverse().R
    d_rho, d_tau, d_cross = imu_camera_tangent_blocks(R_cw, T_ic)
    return {
        "dRcw_dRwi": d_rho,
        "dtcw_dtwi": d_tau,
        "dtcw_dRwi": d_cross,
    }


def lidar_measurement(state: NavState, points_l: np.ndarray, vmap: HashOctree,
                      T_il: SE3, cfg: FilterConfig,
                      plane_cache: dict = None) -> Measurement:
    """Point-to-plane residuals against the map's accumulated local planes.

    plane_cache (leaf key -> plane or None) persists fits across the
    re-linearization iterations of one update; the map does not change
    between them.
    """
    pts = np.atleast_2d(np.asarray(points_l, dtype=float))
    T_wl = state.T_WI @ T_il
    origin = T_wl.t
    p_i = T_il.apply(pts)                       # LiDAR points in the IMU frame
    p_w = state.T_WI.apply(p_i)
    keys = keys_of_points(p_w, vmap.leaf_len, vmap.max_level)
    R_wi = state.T_WI.R
    if plane_cache is None:
        plane_cache = {}
    missing = sorted({k for k in keys if k not in plane_cache})
    if missing:
        plane_cache.update(vmap.fit_planes(missing, origin))
    normals = np.zeros((len(keys), 3))
    anchors = np.zeros((len(keys), 3))
    valid = np.zeros(len(keys), dtype=bool)
    for i, key in enumerate(keys):
        plane = plane_cache[key]
        if plane is None:
            continue
        normals[i], anchors[i] = plane
        valid[i] = True
    if not np.any(valid):
        raise NoAssociations("no scan point matched a plane")
    n_v = normals[valid]
    res = np.einsum("ij,ij->i", n_v, p_w[valid] - anchors[valid])
    gate = np.abs(res) <= cfg.lidar_gate
    if not np.any(gate):
        raise NoAssociations("all residuals gated out")
    n_v = n_v[gate]
    res = res[gate]
    p_iv = p_i[valid][gate]
    m = len(res)
    H = np.zeros((m, DIM))
    # d r / d rho = -n^T R_WI hat(p_imu);  hat(p) contraction vectorized
    nR = n_v @ R_wi
    H[:, 0] = -(nR[:, 1] * p_iv[:, 2] - nR[:, 2] * p_iv[:, 1])
    H[:, 1] = -(nR[:, 2] * p_iv[:, 0] - nR[:, 0] * p_iv[:, 2])
    H[:, 2] = -(nR[:, 0] * p_iv[:, 1] - nR[:, 1] * p_iv[:, 0])
    H[:, 3:6] = n_v
    return Measurement(res, H, np.full(m, cfg.lidar_sigma**2))


def select_semi_dense_pixels(observed: np.ndarray, coverage_t: np.ndarray,
                             cfg: FilterConfig) -> np.ndarray:
    """High-gradient pixels of the observed image, uniformly subsampled.

    Pixels the rendered model does not cover (high transmittance) are
    excluded so residuals compare like with like.
    """
    gray = observed.mean(axis=2)
    gx = ndimage.sobel(gray, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(gray, axis=0, mode="nearest") / 8.0
    mag = np.hypot(gx, gy)
    cand = (mag > cfg.grad_threshold) & (coverage_t < cfg.coverage_max_transmittance)
    ids = np.nonzero(cand.ravel())[0]
    if len(ids) > cfg.pixel_budget:
        take = np.round(np.linspace(0, len(ids) - 1, cfg.pixel_budget)).astype(int)
        ids = ids[np.unique(take)]
    return ids


def visual_measurement(state: NavState, observed: np.ndarray, window: GaussianWindow,
                       cam: PinholeCamera, T_ic: SE3, cfg: FilterConfig,
                       settings: RasterSettings) -> Measurement:
    """Photometric residuals I(u) - I_hat(u) on semi-dense pixels."""
    T_wc = state.T_WI @ T_ic
    out = render(window, T_wc, cam, settings)
    ids = select_semi_dense_pixels(observed, out.final_transmittance, cfg)
    if len(ids) < cfg.min_pixels:
        raise TooFewPixels(f"{len(ids)} < {cfg.min_pixels}")
    gray_obs = observed.mean(axis=2).ravel()[ids]
    gray_hat = out.image.mean(axis=2).ravel()[ids]
    res = gray_obs - gray_hat
    ok = np.abs(res) <= cfg.photo_gate  # robust gate against unmodelled pixels
    if int(ok.sum()) < cfg.min_pixels:
        raise TooFewPixels(f"{int(ok.sum())} < {cfg.min_pixels} after gating")
    ids = ids[ok]
    res = res[ok]
    rows6 = pose_rows(out, ids, T_ic=T_ic)
    H = np.zeros((len(ids), DIM))
    H[:, :6] = -rows6
    return Measurement(res, H, np.full(len(ids), cfg.photo_sigma**2))


def _boxminus_jacobian(delta_rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(H, H^-1) of xi -> (x_hat boxplus xi) boxminus x_bar at xi = 0."""
    Hj = np.eye(DIM)
    Hj_inv = np.eye(DIM)
    Hj[I_RHO, I_RHO] = so3_right_jacobian_inv(delta_rho)
    Hj_inv[I_RHO, I_RHO] = so3_left_jacobian(-delta_rho)  # right Jacobian
    return Hj, Hj_inv


def ieskf_update(state: NavState, cov: np.ndarray, meas_fn: Callable,
                 max_iter: int = 5, step_tol: float = 1e-6,
                 bias_limit: float = 0.5):
    """Iterated EKF update: re-linearizes meas_fn about the running estimate.

    meas_fn(state) -> Measurement (or raises NoAssociations / TooFewPixels,
    which callers treat as a skipped update).  Falls back to the prior on a
    numerically singular gain.
    """
    x_bar = state
    x_hat = state.clone()
    K = H = P = None
    for _ in range(max_iter):
        meas = meas_fn(x_hat)
        if meas is None or meas.z.size == 0:
            if K is None:
                return state.clone(), cov.copy()
            break
        delta = x_hat.boxminus(x_bar)
        Hj, Hj_inv = _boxminus_jacobian(delta[I_RHO])
        P = Hj_inv @ cov @ Hj_inv.T
        H = meas.H
        HtRi = H.T / meas.R_diag[None, :]
        try:
            P_inv = np.linalg.inv(P)
            S = HtRi @ H + P_inv
            K = np.linalg.solve(S, HtRi)
        except np.linalg.LinAlgError as exc:
            raise SingularGain(str(exc)) from exc
        if not np.all(np.isfinite(K)):
            raise SingularGain("non-finite gain")
        xi = -K @ meas.z - (np.eye(DIM) - K @ H) @ (Hj_inv @ delta)
        x_hat = x_hat.boxplus(xi, bias_limit=bias_limit)
        if np.linalg.norm(xi) < step_tol:
            break
    if K is None:
        return state.clone(), cov.copy()
    cov_post = (np.eye(DIM) - K @ H) @ P
    cov_post = 0.5 * (cov_post + cov_post.T)
    return x_hat, cov_post


def covariance_is_psd(cov: np.ndarray, floor: float = -1e-9) -> bool:
    return bool(np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() >= floor)
