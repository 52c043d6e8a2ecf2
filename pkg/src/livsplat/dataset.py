"""On-disk dataset format and trajectory file I/O.

Layout::

    dataset/
      calib.txt        flat key=value camera intrinsics and extrinsics
      imu.csv          t,gx,gy,gz,ax,ay,az (one header line)
      lidar/<t>.bin    u32 count, then count * 4 f32 (x, y, z, intensity),
                       little-endian, points in the LiDAR frame
      images/<t>.ppm   binary P6
      gt_traj.txt      optional TUM ground truth

Extrinsic semantics (chosen so that T_WC = T_WI @ T_IC holds):
``T_LI`` maps LiDAR-frame points into the IMU frame, ``T_IC`` maps
camera-frame points into the IMU frame; both are stored as row-major 4x4.
Trajectory files are TUM format: ``t tx ty tz qx qy qz qw`` with a Hamilton
quaternion in (x, y, z, w) order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DatasetError
from .geometry import PinholeCamera, SE3
from .raster import read_ppm, write_ppm


@dataclass
class Calibration:
    cam: PinholeCamera
    T_li: SE3  # LiDAR -> IMU
    T_ic: SE3  # camera -> IMU


@dataclass
class Frame:
    t: float
    image: np.ndarray
    points_l: np.ndarray
    intensities: np.ndarray
    imu_t: np.ndarray
    imu_gyro: np.ndarray
    imu_accel: np.ndarray


def _stamp(t: float) -> str:
    return f"{t:012.6f}"


def write_calib(path, calib: Calibration) -> None:
    cam = calib.cam
    lines = [
        f"fx={float(cam.fx)!r}", f"fy={float(cam.fy)!r}",
        f"cx={float(cam.cx)!r}", f"cy={float(cam.cy)!r}",
        f"width={cam.width}", f"height={cam.height}",
        "T_LI=" + " ".join(repr(float(v)) for v in calib.T_li.matrix().ravel()),
        "T_IC=" + " ".join(repr(float(v)) for v in calib.T_ic.matrix().ravel()),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_calib(path) -> Calibration:
    kv = {}
    try:
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
        cam = PinholeCamera(
            fx=float(kv["fx"]), fy=float(kv["fy"]),
            cx=float(kv["cx"]), cy=float(kv["cy"]),
            width=int(kv["width"]), height=int(kv["height"]),
        )
        t_li = SE3.from_matrix(np.array(kv["T_LI"].split(), dtype=float).reshape(4, 4))
        t_ic = SE3.from_matrix(np.array(kv["T_IC"].split(), dtype=float).reshape(4, 4))
    except (KeyError, ValueError) as exc:
        raise DatasetError(f"bad calibration file {path}: {exc}") from exc
    return Calibration(cam, t_li, t_ic)


def write_scan(path, points_l: np.ndarray, intensities: np.ndarray = None) -> None:
    pts = np.asarray(points_l, dtype=np.float32).reshape(-1, 3)
    if intensities is None:
        intensities = np.ones(len(pts), dtype=np.float32)
    rec = np.column_stack([pts, np.asarray(intensities, dtype=np.float32)])
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(rec)))
        f.write(rec.astype("<f4").tobytes())


def read_scan(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise DatasetError(f"truncated scan {path}")
    (count,) = struct.unpack("<I", raw[:4])
    body = np.frombuffer(raw, dtype="<f4", count=count * 4, offset=4).reshape(count, 4)
    return body[:, :3].astype(np.float64), body[:, 3].astype(np.float64)


def write_imu(path, t, gyro, accel) -> None:
    with open(path, "w") as f:
        f.write("t,gx,gy,gz,ax,ay,az\n")
        for i in range(len(t)):
            row = [t[i], *gyro[i], *accel[i]]
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_imu(path):
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    return data[:, 0], data[:, 1:4], data[:, 4:7]


def rotation_to_quat_xyzw(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_quat()


def quat_xyzw_to_rotation(q: np.ndarray) -> np.ndarray:
    return Rotation.from_quat(np.asarray(q, dtype=float)).as_matrix()


def write_tum(path, stamps, poses: list[SE3]) -> None:
    with open(path, "w") as f:
        for t, T in zip(stamps, poses):
            q = rotation_to_quat_xyzw(T.R)
            vals = [t, *T.t, *q]
            f.write(" ".join(f"{v:.9f}" for v in vals) + "\n")


def read_tum(path):
    stamps, poses = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 8:
            raise DatasetError(f"bad TUM line: {line!r}")
        stamps.append(vals[0])
        poses.append(SE3(quat_xyzw_to_rotation(vals[4:8]), np.array(vals[1:4])))
    return np.array(stamps), poses


class DatasetWriter:
    def __init__(self, root):
        self.root = Path(root)
        (self.root / "lidar").mkdir(parents=True, exist_ok=True)
        (self.root / "images").mkdir(parents=True, exist_ok=True)

    def calib(self, calib: Calibration) -> None:
        write_calib(self.root / "calib.txt", calib)

    def imu(self, t, gyro, accel) -> None:
        write_imu(self.root / "imu.csv", t, gyro, accel)

    def frame(self, t: float, image, points_l, intensities=None) -> None:
        stamp = _stamp(t)
        write_ppm(self.root / "images" / f"{stamp}.ppm", image)
        write_scan(self.root / "lidar" / f"{stamp}.bin", points_l, intensities)

    def ground_truth(self, stamps, poses) -> None:
        write_tum(self.root / "gt_traj.txt", stamps, poses)


class DatasetReader:
    """Validates the layout and replays frames with their IMU segments."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DatasetError(f"{root} is not a directory")
        calib_path = self.root / "calib.txt"
        if not calib_path.exists():
            raise DatasetError("missing calib.txt")
        self.calib = read_calib(calib_path)
        imu_path = self.root / "imu.csv"
        if not imu_path.exists():
            raise DatasetError("missing imu.csv")
        self.imu_t, self.imu_gyro, self.imu_accel = read_imu(imu_path)
        if np.any(np.diff(self.imu_t) <= 0):
            raise DatasetError("imu timestamps not strictly increasing")

        imgs = {p.stem: p for p in sorted((self.root / "images").glob("*.ppm"))}
        scans = {p.stem: p for p in sorted((self.root / "lidar").glob("*.bin"))}
        stamps = sorted(set(imgs) & set(scans))
        if not stamps:
            raise DatasetError("no paired image/lidar frames")
        if sorted(stamps, key=float) != stamps:
            raise DatasetError("frame stamps not monotone")
        self._stamps = stamps
        self._imgs = imgs
        self._scans = scans

    def __len__(self):
        return len(self._stamps)

    @property
    def stamps(self):
        return [float(s) for s in self._stamps]

    def ground_truth(self):
        path = self.root / "gt_traj.txt"
        if not path.exists():
            return None
        return read_tum(path)

    def frames(self):
        prev_t = -np.inf
        for stamp in self._stamps:
            t = float(stamp)
            sel = (self.imu_t > prev_t) & (self.imu_t <= t) if prev_t > -np.inf else (self.imu_t <= t)
            # include the sample at the previous boundary so midpoint
            # integration spans the whole interval
            if prev_t > -np.inf:
                at_prev = np.nonzero(self.imu_t <= prev_t)[0]
                if len(at_prev):
                    sel[at_prev[-1]] = True
            idx = np.nonzero(sel)[0]
            pts, inten = read_scan(self._scans[stamp])
            yield Frame(
                t=t,
                image=read_ppm(self._imgs[stamp]),
                points_l=pts,
                intensities=inten,
                imu_t=self.imu_t[idx],
                imu_gyro=self.imu_gyro[idx],
                imu_accel=self.imu_accel[idx],
            )
            prev_t = t
