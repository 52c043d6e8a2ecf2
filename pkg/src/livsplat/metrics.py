"""Image fidelity (PSNR) and trajectory error (ATE) metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SE3


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio over [0, 1] images; inf when identical."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def psnr_from_mse(mse: float) -> float:
    if mse <= 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def associate(stamps_a, stamps_b, tol: float = 0.01):
    """Nearest-timestamp pairs (i, j) with |ta - tb| <= tol; greedy on a."""
    stamps_a = np.asarray(stamps_a, dtype=float)
    stamps_b = np.asarray(stamps_b, dtype=float)
    pairs = []
    used = set()
    for i, t in enumerate(stamps_a):
        j = int(np.argmin(np.abs(stamps_b - t)))
        if abs(stamps_b[j] - t) <= tol and j not in used:
            pairs.append((i, j))
            used.add(j)
    return pairs


def umeyama_se3(src: np.ndarray, dst: np.ndarray) -> SE3:
    """Closed-form rigid alignment (no scale) taking src points onto dst."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (dst - mu_d).T @ (src - mu_s)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    if np.linalg.det(U @ Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return SE3(R, mu_d - R @ mu_s)


@dataclass
class AteResult:
    rmse: float
    mean: float
    max: float
    matched: int


def ate(gt_stamps, gt_poses, est_stamps, est_poses, align: str = "none",
        tol: float = 0.01) -> AteResult:
    """Absolute trajectory error on translations after timestamp association."""
    pairs = associate(est_stamps, gt_stamps, tol=tol)
    if not pairs:
        raise ValueError("no associated trajectory pairs within tolerance")
    est = np.stack([est_poses[i].t for i, _ in pairs])
    gt = np.stack([gt_poses[j].t for _, j in pairs])
    if align == "se3":
        T = umeyama_se3(est, gt)
        est = est @ T.R.T + T.t
    elif align != "none":
        raise ValueError(f"unknown alignment {align!r}")
    err = np.linalg.norm(est - gt, axis=1)
    return AteResult(
        rmse=float(np.sqrt(np.mean(err**2))),
        mean=float(err.mean()),
        max=float(err.max()),
        matched=len(pairs),
    )
