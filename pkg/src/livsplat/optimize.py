"""Per-frame photometric refinement of the sliding-window Gaussians with Adam.

Optimization happens on the device copy of the window (the host copy is
refreshed by the next maintenance pass).  Parameters are stepped in storage
coordinates that keep them valid by construction: log scales, logit opacity,
and a local rotation tangent applied by exponential update.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask
from .geometry import PinholeCamera, SE3
from .raster import GaussianArrays, RasterSettings, backward, render
from .window import GaussianWindow


@dataclass
class OptimConfig:
    iters: int = 10
    lr_mean: float = 1.6e-4
    lr_sh: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rot: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    scene_scale: float = 1.0
    loss: str = "l1"  # or "l2"
    opacity_clip: float = 1e-4
    scale_floor: float = 1e-6


@dataclass
class LossReport:
    value: float
    residual: np.ndarray = field(repr=False)
    pixel_count: int = 0
    mse: float = 0.0
    t_ms: float = 0.0


def photometric_loss(rendered: np.ndarray, observed: np.ndarray, mask=None, kind: str = "l1"):
    """Masked mean per-channel photometric error and its image gradient."""
    rendered = np.asarray(rendered, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if rendered.shape != observed.shape:
        raise ValueError("image shapes differ")
    if mask is None:
        mask = np.ones(rendered.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    npix = int(mask.sum())
    if npix == 0:
        raise EmptyMask("mask selects no pixels")
    diff = rendered - observed
    m3 = mask[..., None]
    denom = npix * 3.0
    if kind == "l1":
        value = float(np.abs(diff[mask]).sum() / denom)
        grad = np.where(m3, np.sign(diff), 0.0) / denom
    elif kind == "l2":
        value = float((diff[mask] ** 2).sum() / denom)
        grad = np.where(m3, 2.0 * diff, 0.0) / denom
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    residual = np.where(mask, np.abs(diff).mean(axis=2), 0.0)
    mse = float((diff[mask] ** 2).sum() / denom)
    report = LossReport(value=value, residual=residual, pixel_count=npix, mse=mse)
    return report, grad


def _batch_so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula vectorized over (N, 3) tangents."""
    theta = np.linalg.norm(phi, axis=1)
    n = phi.shape[0]
    S = np.zeros((n, 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -phi[:, 2], phi[:, 1]
    S[:, 1, 0], S[:, 1, 2] = phi[:, 2], -phi[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -phi[:, 1], phi[:, 0]
    small = theta < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta**2))
    S2 = S @ S
    return np.eye(3)[None] + a[:, None, None] * S + b[:, None, None] * S2


def _orthonormalize(rots: np.ndarray) -> np.ndarray:
    """Column-wise Gram-Schmidt to shed accumulated round-off."""
    c0 = rots[:, :, 0]
    c0 = c0 / np.linalg.norm(c0, axis=1, keepdims=True)
    c1 = rots[:, :, 1] - np.sum(rots[:, :, 1] * c0, axis=1, keepdims=True) * c0
    c1 = c1 / np.linalg.norm(c1, axis=1, keepdims=True)
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=2)


class AdamState:
    """First/second moment accumulators per parameter group."""

    def __init__(self, shapes: dict, cfg: OptimConfig):
        self.cfg = cfg
        self.step = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def update(self, name: str, grad: np.ndarray, lr: float) -> np.ndarray:
        """Returns the additive step for this group (state already advanced)."""
        c = self.cfg
        m = self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * grad
        v = self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * grad**2
        m_hat = m / (1 - c.beta1**self.step)
        v_hat = v / (1 - c.beta2**self.step)
        return -lr * m_hat / (np.sqrt(v_hat) + c.eps)


def optimize_window(
    window: GaussianWindow,
    observed: np.ndarray,
    T_wc: SE3,
    cam: PinholeCamera,
    cfg: OptimConfig = OptimConfig(),
    settings: RasterSettings = RasterSettings(),
    iters: int = None,
    mask=None,
) -> list[LossReport]:
    """Renders, backpropagates, and steps the window parameters in place.

    The global map is untouched; only the window's device copy changes.
    Returns one LossReport per iteration (empty list for iters == 0).
    """
    iters = cfg.iters if iters is None else iters
    history: list[LossReport] = []
    if iters == 0 or window.n == 0:
        return history

    arrays = window.as_gaussian_arrays()
    n = len(arrays)
    means = arrays.means.copy()
    rots = arrays.rots.copy()
    scales = arrays.scales.copy()
    opac = arrays.opacities.copy()
    shs = arrays.shs.copy()
    touched_rot = np.zeros(n, dtype=bool)

    adam = AdamState(
        {
            "mean": (n, 3), "rot": (n, 3), "scale": (n, 3),
            "opacity": (n,), "sh": shs.shape,
        },
        cfg,
    )

    for it in range(iters):
        t0 = time.perf_counter()
        current = GaussianArrays(means, rots, scales, opac, shs)
        out = render(current, T_wc, cam, settings)
        report, grad_img = photometric_loss(out.image, observed, mask=mask, kind=cfg.loss)
        grads, _ = backward(out, grad_img)

        # steps are taken in storage coordinates (log scale, logit opacity,
        # local rotation tangent); untouched coordinates stay bit-identical,
        # so a zero gradient is an exact no-op
        adam.step += 1
        means = means + adam.update("mean", grads.mean, cfg.lr_mean * cfg.scene_scale)

        phi = adam.update("rot", grads.rot, cfg.lr_rot)
        rows = np.any(phi != 0.0, axis=1)
        if np.any(rows):
            rots[rows] = rots[rows] @ _batch_so3_exp(phi[rows])
            touched_rot |= rows

        step_s = adam.update("scale", grads.scale * scales, cfg.lr_scale)
        new_scale = np.maximum(np.exp(np.log(np.maximum(scales, cfg.scale_floor)) + step_s),
                               cfg.scale_floor)
        scales = np.where(step_s == 0.0, scales, new_scale)

        op_c = np.clip(opac, cfg.opacity_clip, 1.0 - cfg.opacity_clip)
        step_o = adam.update("opacity", grads.opacity * op_c * (1.0 - op_c), cfg.lr_opacity)
        new_op = 1.0 / (1.0 + np.exp(-(np.log(op_c / (1.0 - op_c)) + step_o)))
        opac = np.where(step_o == 0.0, opac, new_op)

        shs = shs + adam.update("sh", grads.sh, cfg.lr_sh)

        report.t_ms = (time.perf_counter() - t0) * 1e3
        history.append(report)

    if np.any(touched_rot):
        rots[touched_rot] = _orthonormalize(rots[touched_rot])
    dev = window.device
    dev.means[:n] = means
    dev.rots[:n] = rots.reshape(n, 9)
    dev.scales[:n] = scales
    dev.opacities[:n] = opac
    dev.shs[:n] = shs
    window.mark_device_dirty_live()
    return history
