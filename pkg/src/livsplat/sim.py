"""Synthetic scenes, trajectories, and sensor streams.

Scenes are textured axis-aligned rectangles (boxes decompose into six).
Camera images are produced by the project's own rasterizer from ground-truth
Gaussians, so the photometric model is exactly realizable; LiDAR is exact
ray-triangle casting against the same geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from . import sh as shmod
from .dataset import Calibration, DatasetWriter
from .geometry import Gaussian3D, PinholeCamera, SE3, vee
from .initialize import init_scale, slab_frame
from .raster import GaussianArrays, RasterSettings, render
from .voxmap import leaf_key

GRAVITY = np.array([0.0, 0.0, -9.81])


# -- textures ----------------------------------------------------------------


@dataclass
class Checker:
    color_a: tuple = (0.85, 0.85, 0.85)
    color_b: tuple = (0.15, 0.15, 0.15)
    cells: int = 8

    def sample(self, u, v):
        flag = ((np.floor(u * self.cells) + np.floor(v * self.cells)) % 2).astype(bool)
        a = np.asarray(self.color_a, dtype=float)
        b = np.asarray(self.color_b, dtype=float)
        return np.where(flag[..., None], a, b)


@dataclass
class GradientTex:
    color_a: tuple = (0.1, 0.2, 0.7)
    color_b: tuple = (0.9, 0.8, 0.2)
    axis: int = 0  # 0 along u, 1 along v

    def sample(self, u, v):
        w = np.asarray(u if self.axis == 0 else v, dtype=float)[..., None]
        a = np.asarray(self.color_a, dtype=float)
        b = np.asarray(self.color_b, dtype=float)
        return a + (b - a) * np.clip(w, 0.0, 1.0)


@dataclass
class NoiseTex:
    base: tuple = (0.5, 0.5, 0.5)
    amplitude: float = 0.25
    seed: int = 0
    cells: int = 16

    def sample(self, u, v):
        iu = np.floor(np.asarray(u) * self.cells)
        iv = np.floor(np.asarray(v) * self.cells)
        out = np.empty(np.broadcast(iu, iv).shape + (3,))
        for c in range(3):
            h = np.sin(iu * 12.9898 + iv * 78.233 + self.seed * 0.618 + c * 3.7) * 43758.5453
            out[..., c] = self.base[c] + self.amplitude * (2.0 * (h - np.floor(h)) - 1.0)
        return np.clip(out, 0.05, 0.95)


# -- geometry ----------------------------------------------------------------


@dataclass
class Rect:
    """Axis-aligned rectangle: origin corner plus two edge vectors."""

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    texture: object = field(default_factory=Checker)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.edge_u = np.asarray(self.edge_u, dtype=float)
        self.edge_v = np.asarray(self.edge_v, dtype=float)

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)

    def triangles(self) -> np.ndarray:
        o, u, v = self.origin, self.edge_u, self.edge_v
        return np.array([[o, o + u, o + u + v], [o, o + u + v, o + v]])


def box_rects(center, half, texture, inward: bool = False) -> list[Rect]:
    """Six rectangles of an axis-aligned box; inward flips the normals."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(half, dtype=float)
    rects = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            n = np.zeros(3)
            n[axis] = sign
            ua = np.zeros(3)
            va = np.zeros(3)
            a1, a2 = (axis + 1) % 3, (axis + 2) % 3
            ua[a1] = 2 * h[a1]
            va[a2] = 2 * h[a2]
            if (sign < 0) != inward:
                ua, va = va, ua  # flip winding so the normal points out/in
            origin = c + n * h[axis] - 0.5 * (ua + va)
            rects.append(Rect(origin, ua, va, texture))
    return rects


@dataclass
class SceneSpec:
    rects: list = field(default_factory=list)
    scale: float = 1.0  # characteristic extent in meters

    def add_box(self, center, half, texture, inward=False):
        self.rects.extend(box_rects(center, half, texture, inward))
        return self


def bake_scene(scene: SceneSpec, v_s: float, max_level: int = 2, kappa: float = 0.8,
               delta: float = 1e-3, opacity: float = 0.9, sh_degree: int = 0):
    """Tessellate the scene and emit one ground-truth Gaussian per surface
    leaf voxel (exact normals, texture-sampled colors)."""
    tris = []
    tri_normals = []
    gaussians = []
    seen = set()
    edge = v_s / (1 << max_level)
    scale_vec = np.diag(init_scale(max_level, v_s, kappa=kappa, delta=delta))
    k = shmod.num_coeffs(sh_degree)
    for rect in scene.rects:
        tris.append(rect.triangles())
        tri_normals.extend([rect.normal, rect.normal])
        lu = np.linalg.norm(rect.edge_u)
        lv = np.linalg.norm(rect.edge_v)
        nu = max(1, int(np.ceil(lu / edge)))
        nv = max(1, int(np.ceil(lv / edge)))
        uu = (np.arange(nu) + 0.5) / nu
        vv = (np.arange(nv) + 0.5) / nv
        rot = slab_frame(rect.normal)
        for ui in uu:
            for vi in vv:
                p = rect.origin + ui * rect.edge_u + vi * rect.edge_v
                key = leaf_key(p, v_s, max_level)
                if key in seen:
                    continue
                seen.add(key)
                color = rect.texture.sample(np.array(ui), np.array(vi))
                coeffs = np.zeros((k, 3))
                coeffs[0] = shmod.color_from_target(color)
                gaussians.append(
                    Gaussian3D(
                        mean_w=p, rot=rot, scale=scale_vec, opacity=opacity,
                        sh=coeffs, level=max_level,
                    )
                )
    tris = np.concatenate(tris, axis=0) if tris else np.zeros((0, 3, 3))
    return tris, np.asarray(tri_normals), gaussians


# -- trajectory ----------------------------------------------------------------

_DRZ = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
_DRY = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
_DRX = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


@dataclass
class TrajectorySpec:
    """C2 position and yaw/pitch/roll splines through timed control points."""

    times: np.ndarray
    positions: np.ndarray
    yaw: np.ndarray
    pitch: Optional[np.ndarray] = None
    roll: Optional[np.ndarray] = None
    bc: str = "clamped"
    imu_rate: float = 200.0
    frame_rate: float = 10.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("control timestamps must strictly increase")
        self.positions = np.asarray(self.positions, dtype=float)
        self.yaw = np.asarray(self.yaw, dtype=float)
        if self.pitch is None:
            self.pitch = np.zeros_like(self.yaw)
        if self.roll is None:
            self.roll = np.zeros_like(self.yaw)


class Trajectory:
    def __init__(self, spec: TrajectorySpec):
        self.spec = spec
        bc = spec.bc
        self._pos = CubicSpline(spec.times, spec.positions, bc_type=bc)
        self._yaw = CubicSpline(spec.times, spec.yaw, bc_type=bc)
        self._pitch = CubicSpline(spec.times, spec.pitch, bc_type=bc)
        self._roll = CubicSpline(spec.times, spec.roll, bc_type=bc)

    @property
    def t0(self):
        return float(self.spec.times[0])

    @property
    def t1(self):
        return float(self.spec.times[-1])

    def rotation(self, t: float) -> np.ndarray:
        return _rz(self._yaw(t)) @ _ry(self._pitch(t)) @ _rx(self._roll(t))

    def pose(self, t: float) -> SE3:
        return SE3(self.rotation(t), self._pos(t))

    def velocity(self, t: float) -> np.ndarray:
        return self._pos(t, 1)

    def acceleration(self, t: float) -> np.ndarray:
        return self._pos(t, 2)

    def angular_velocity_body(self, t: float) -> np.ndarray:
        """Exact body rate from the analytic derivative of R(t)."""
        y, p, r = self._yaw(t), self._pitch(t), self._roll(t)
        dy, dp, dr = self._yaw(t, 1), self._pitch(t, 1), self._roll(t, 1)
        Rz, Ry, Rx = _rz(y), _ry(p), _rx(r)
        Rdot = (
            (_DRZ @ Rz) * dy @ Ry @ Rx
            + Rz @ ((_DRY @ Ry) * dp) @ Rx
            + Rz @ Ry @ ((_DRX @ Rx) * dr)
        )
        R = Rz @ Ry @ Rx
        W = R.T @ Rdot
        return vee(0.5 * (W - W.T))


def simulate_imu(traj: Trajectory, t0: float, t1: float, rate: Optional[float] = None,
                 gyro_noise: float = 0.0, accel_noise: float = 0.0,
                 gyro_bias=None, accel_bias=None, rng: Optional[np.random.Generator] = None):
    """Gyro and specific-force samples on a uniform grid over [t0, t1]."""
    rate = traj.spec.imu_rate if rate is None else rate
    n = int(round((t1 - t0) * rate))
    t = t0 + np.arange(n + 1) / rate
    gyro = np.stack([traj.angular_velocity_body(tt) for tt in t])
    accel = np.stack(
        [traj.rotation(tt).T @ (traj.acceleration(tt) - GRAVITY) for tt in t]
    )
    if gyro_bias is not None:
        gyro = gyro + np.asarray(gyro_bias, dtype=float)
    if accel_bias is not None:
        accel = accel + np.asarray(accel_bias, dtype=float)
    if gyro_noise > 0 or accel_noise > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        gyro = gyro + rng.normal(scale=gyro_noise * np.sqrt(rate), size=gyro.shape)
        accel = accel + rng.normal(scale=accel_noise * np.sqrt(rate), size=accel.shape)
    return t, gyro, accel


# -- LiDAR ----------------------------------------------------------------------


@dataclass
class ScanPattern:
    """Azimuth/elevation ray grid in the sensor frame (x forward, z up)."""

    n_azimuth: int = 64
    n_elevation: int = 24
    azimuth_span: float = np.pi / 2
    elevation_span: float = np.pi / 3

    def directions(self) -> np.ndarray:
        az = np.linspace(-self.azimuth_span / 2, self.azimuth_span / 2, self.n_azimuth)
        el = np.linspace(-self.elevation_span / 2, self.elevation_span / 2, self.n_elevation)
        aa, ee = np.meshgrid(az, el, indexing="ij")
        d = np.stack(
            [np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=-1
        )
        return d.reshape(-1, 3)

    @staticmethod
    def from_directions(dirs) -> "ScanPattern":
        p = ScanPattern()
        p._dirs = np.asarray(dirs, dtype=float)
        return p


@dataclass
class LidarScan:
    points_w: np.ndarray
    points_l: np.ndarray
    ranges: np.ndarray
    normals_w: np.ndarray
    hit_mask: np.ndarray


def raycast(origin: np.ndarray, dirs_w: np.ndarray, tris: np.ndarray, tri_normals: np.ndarray):
    """Nearest-hit ray casting over all triangles (Moeller-Trumbore)."""
    r = dirs_w.shape[0]
    if tris.shape[0] == 0:
        inf = np.full(r, np.inf)
        return inf, np.full(r, -1, dtype=int)
    v0 = tris[:, 0]
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    pvec = np.cross(dirs_w[:, None, :], e2[None, :, :])
    det = np.einsum("tj,rtj->rt", e1, pvec)
    ok = np.abs(det) > 1e-12
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origin[None, :] - v0
    u = np.einsum("tj,rtj->rt", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)[None, :, :]
    v = np.einsum("rj,rtj->rt", dirs_w, np.broadcast_to(qvec, pvec.shape)) * inv_det
    t = np.einsum("tj,rtj->rt", e2, np.broadcast_to(qvec, pvec.shape)) * inv_det
    valid = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12) & (t > 1e-6)
    t = np.where(valid, t, np.inf)
    idx = np.argmin(t, axis=1)
    best = t[np.arange(r), idx]
    idx = np.where(np.isfinite(best), idx, -1)
    return best, idx


def simulate_lidar(T_wl: SE3, tris: np.ndarray, tri_normals: np.ndarray,
                   pattern: ScanPattern, range_noise: float = 0.0,
                   rng: Optional[np.random.Generator] = None) -> LidarScan:
    dirs_l = getattr(pattern, "_dirs", None)
    if dirs_l is None:
        dirs_l = pattern.directions()
    dirs_w = dirs_l @ T_wl.R.T
    ranges, idx = raycast(T_wl.t, dirs_w, tris, tri_normals)
    hit = idx >= 0
    ranges_hit = ranges[hit]
    if range_noise > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        ranges_hit = ranges_hit + rng.normal(scale=range_noise, size=ranges_hit.shape)
    pts_w = T_wl.t[None, :] + dirs_w[hit] * ranges_hit[:, None]
    pts_l = (pts_w - T_wl.t[None, :]) @ T_wl.R
    normals = tri_normals[idx[hit]]
    # orient normals toward the sensor
    flip = np.einsum("ij,ij->i", normals, T_wl.t[None, :] - pts_w) < 0
    normals = np.where(flip[:, None], -normals, normals)
    return LidarScan(pts_w, pts_l, ranges_hit, normals, hit)


def simulate_camera(T_wc: SE3, gt_arrays: GaussianArrays, cam: PinholeCamera,
                    settings: RasterSettings = RasterSettings()):
    return render(gt_arrays, T_wc, cam, settings, retain_cache=False).image


# -- dataset export ----------------------------------------------------------------


def export_dataset(
    outdir,
    scene: SceneSpec,
    traj_spec: TrajectorySpec,
    cam: PinholeCamera,
    T_li: SE3,
    T_ic: SE3,
    pattern: ScanPattern = None,
    v_s: float = 0.4,
    max_level: int = 2,
    kappa: float = 0.8,
    delta: float = 1e-3,
    opacity: float = 0.9,
    seed: int = 0,
    gyro_noise: float = 0.0,
    accel_noise: float = 0.0,
    range_noise: float = 0.0,
    settings: RasterSettings = RasterSettings(),
):
    """Bake, fly, and write the on-disk dataset; returns a small manifest."""
    rng = np.random.default_rng(seed)
    pattern = pattern or ScanPattern()
    traj = Trajectory(traj_spec)
    tris, tri_normals, gts = bake_scene(
        scene, v_s, max_level, kappa=kappa, delta=delta, opacity=opacity,
        sh_degree=settings.sh_degree,
    )
    gt_arrays = GaussianArrays.from_gaussians(gts)

    writer = DatasetWriter(outdir)
    writer.calib(Calibration(cam, T_li, T_ic))

    t_imu, gyro, accel = simulate_imu(
        traj, traj.t0, traj.t1, gyro_noise=gyro_noise, accel_noise=accel_noise, rng=rng
    )
    writer.imu(t_imu, gyro, accel)

    n_frames = int(round((traj.t1 - traj.t0) * traj_spec.frame_rate))
    stamps = traj.t0 + np.arange(n_frames + 1) / traj_spec.frame_rate
    poses = []
    for t in stamps:
        T_wi = traj.pose(t)
        poses.append(T_wi)
        scan = simulate_lidar(T_wi @ T_li, tris, tri_normals, pattern,
                              range_noise=range_noise, rng=rng)
        image = simulate_camera(T_wi @ T_ic, gt_arrays, cam, settings)
        writer.frame(t, image, scan.points_l)
    writer.ground_truth(stamps, poses)
    return {
        "frames": len(stamps),
        "gaussians": len(gts),
        "triangles": len(tris),
        "imu_samples": len(t_imu),
    }


def default_room(scale: float = 4.0) -> SceneSpec:
    """Closed textured box room with a couple of interior obstacles."""
    s = scale
    scene = SceneSpec(scale=s)
    scene.add_box([0, 0, s / 4], [s / 2, s / 2, s / 4], Checker(cells=10), inward=True)
    scene.add_box([s / 5, s / 8, 0.3], [0.3, 0.3, 0.3],
                  GradientTex((0.8, 0.3, 0.2), (0.9, 0.8, 0.3), axis=0))
    scene.add_box([-s / 5, -s / 6, 0.25], [0.25, 0.25, 0.25],
                  NoiseTex((0.4, 0.5, 0.6), 0.2, seed=3))
    return scene
