"""Forward splatting with alpha blending, plus the analytic backward pass.

The forward pass projects every Gaussian, sorts all accepted splats globally
by ascending camera depth (ties broken by the stable input id), and composites
front-to-back per pixel with an alpha clamp and a transmittance cutoff.  The
backward pass produces gradients for every Gaussian parameter group and for
the 6-DoF pose, in both the camera tangent (left perturbation of T_CW) and
the IMU tangent (right-rotation / additive-translation perturbation of T_WI),
chained through the camera-IMU extrinsic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels, sh
from .errors import MissingCache
from .geometry import Gaussian2D, Gaussian3D, PinholeCamera, SE3, imu_camera_adjoint


@dataclass
class RasterSettings:
    near: float = 0.01
    dilation: float = 0.3           # px^2 added to both 2D covariance eigenvalues
    alpha_clamp: float = 0.99
    transmittance_min: float = 1e-4
    footprint_sigma: float = 6.0    # bbox half-width in units of the largest std-dev
    alpha_cut: float = 0.0          # drop contributions below this alpha (0 = exact)
    max_footprint_px: float = 512.0  # near-plane blow-up guard; such splats are culled
    background: tuple = (0.0, 0.0, 0.0)
    sh_degree: int = 0


@dataclass
class GaussianArrays:
    """Structure-of-arrays Gaussian parameters (always f64 for math)."""

    means: np.ndarray      # (N, 3)
    rots: np.ndarray       # (N, 3, 3)
    scales: np.ndarray     # (N, 3)
    opacities: np.ndarray  # (N,)
    shs: np.ndarray        # (N, K, 3)

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.rots = np.ascontiguousarray(self.rots, dtype=np.float64)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64)
        self.shs = np.ascontiguousarray(self.shs, dtype=np.float64)

    def __len__(self):
        return self.means.shape[0]

    @staticmethod
    def from_gaussians(gaussians: list[Gaussian3D]) -> "GaussianArrays":
        if not gaussians:
            k = 1
            return GaussianArrays(
                np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)),
                np.zeros(0), np.zeros((0, k, 3)),
            )
        k = max(g.sh.shape[0] for g in gaussians)
        shs = np.zeros((len(gaussians), k, 3))
        for i, g in enumerate(gaussians):
            shs[i, : g.sh.shape[0]] = g.sh
        return GaussianArrays(
            np.stack([g.mean_w for g in gaussians]),
            np.stack([g.rot for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.array([g.opacity for g in gaussians], dtype=float),
            shs,
        )


class Culled:
    """Normal outcome for a splat that cannot contribute to the image."""

    def __repr__(self):
        return "Culled()"


@dataclass
class ParamGradients:
    """Per-Gaussian gradients, aligned with the input arrays.

    Rotation gradients live in the right tangent of each Gaussian's own
    orientation (R <- R @ Exp(phi)).  Entries for Gaussians that contributed
    to no pixel stay zero.
    """

    mean: np.ndarray      # (N, 3)
    rot: np.ndarray       # (N, 3)
    scale: np.ndarray     # (N, 3)
    opacity: np.ndarray   # (N,)
    sh: np.ndarray        # (N, K, 3)


@dataclass
class PoseGradient:
    """Loss gradient w.r.t. the rendering pose.

    (rho, tau) is the IMU-pose tangent; (camera_rho, camera_tau) is the raw
    left-perturbation tangent of T_CW before the extrinsic chain.
    """

    rho: np.ndarray
    tau: np.ndarray
    camera_rho: np.ndarray
    camera_tau: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.tau])


@dataclass
class RenderOutput:
    image: np.ndarray                 # (H, W, 3) in [0, 1]
    final_transmittance: np.ndarray   # (H, W)
    contrib_count: np.ndarray         # (H, W) splats processed per pixel
    cache: Optional[dict] = field(default=None, repr=False)


def _as_arrays(source) -> GaussianArrays:
    if isinstance(source, GaussianArrays):
        return source
    if hasattr(source, "as_gaussian_arrays"):
        return source.as_gaussian_arrays()
    raise TypeError(f"cannot render from {type(source)!r}")


def _splat_geometry(arrays: GaussianArrays, T_cw: SE3, cam: PinholeCamera, settings: RasterSettings):
    """Vectorized projection of all Gaussians; returns per-splat geometry
    for the visible subset together with the original indices."""
    mu_c = arrays.means @ T_cw.R.T + T_cw.t
    vis = mu_c[:, 2] > settings.near
    idx = np.nonzero(vis)[0]
    mu_c = mu_c[idx]
    x, y, z = mu_c[:, 0], mu_c[:, 1], mu_c[:, 2]
    mu_i = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=1)

    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / z**2
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / z**2

    B = arrays.rots[idx] * arrays.scales[idx][:, None, :]
    cov_w = B @ np.swapaxes(B, 1, 2)
    M = np.einsum("nij,jk->nik", J, T_cw.R)
    cov_i = np.einsum("nij,njk,nlk->nil", M, cov_w, M)
    cov_i[:, 0, 0] += settings.dilation
    cov_i[:, 1, 1] += settings.dilation

    a, b, c = cov_i[:, 0, 0], cov_i[:, 0, 1], cov_i[:, 1, 1]
    det = a * c - b * b
    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    n_sigma = np.full(len(a), float(settings.footprint_sigma))
    if settings.alpha_cut > 0.0:
        # shrink the bbox to where alpha can still reach the cut
        ratio = np.maximum(arrays.opacities[idx] / settings.alpha_cut, 1.0)
        n_sigma = np.minimum(n_sigma, np.sqrt(2.0 * np.log(ratio)))
    radius = n_sigma * np.sqrt(np.maximum(mid + disc, 0.0))

    x0 = np.maximum(np.floor(mu_i[:, 0] - radius), 0).astype(np.int64)
    x1 = np.minimum(np.floor(mu_i[:, 0] + radius) + 1, cam.width).astype(np.int64)
    y0 = np.maximum(np.floor(mu_i[:, 1] - radius), 0).astype(np.int64)
    y1 = np.minimum(np.floor(mu_i[:, 1] + radius) + 1, cam.height).astype(np.int64)
    on_image = (x0 < x1) & (y0 < y1) & (radius <= settings.max_footprint_px)

    keep = np.nonzero(on_image)[0]
    conics = np.stack([c[keep] / det[keep], -b[keep] / det[keep], a[keep] / det[keep]], axis=1)
    return {
        "ids": idx[keep],
        "mu_c": mu_c[keep],
        "mu_i": mu_i[keep],
        "J": J[keep],
        "cov_w": cov_w[keep],
        "cov_i": cov_i[keep],
        "conics": conics,
        "bboxes": np.stack([x0[keep], x1[keep], y0[keep], y1[keep]], axis=1),
    }


def splat(g: Gaussian3D, T_cw: SE3, cam: PinholeCamera, settings: RasterSettings = RasterSettings()):
    """Project one Gaussian; returns a Gaussian2D or Culled."""
    arrays = GaussianArrays.from_gaussians([g])
    geo = _splat_geometry(arrays, T_cw, cam, settings)
    if len(geo["ids"]) == 0:
        return Culled()
    cam_center = -T_cw.R.T @ T_cw.t
    d = g.mean_w - cam_center
    n = np.linalg.norm(d)
    dirs = (d / n)[None, :] if n > 0 else np.array([[0.0, 0.0, 1.0]])
    color, _ = sh.eval_color(min(settings.sh_degree, _degree_of(arrays.shs)), arrays.shs, dirs)
    return Gaussian2D(
        mean_i=geo["mu_i"][0],
        cov_i=geo["cov_i"][0],
        depth=float(geo["mu_c"][0, 2]),
        color=color[0],
        opacity=float(g.opacity),
    )


def _degree_of(shs: np.ndarray) -> int:
    return int(np.sqrt(shs.shape[1])) - 1


def render(source, T_wc: SE3, cam: PinholeCamera,
           settings: RasterSettings = RasterSettings(), retain_cache: bool = True) -> RenderOutput:
    """Splat, globally depth-sort, and composite; see module docstring."""
    arrays = _as_arrays(source)
    T_cw = T_wc.inverse()
    h, w = cam.height, cam.width
    bg = np.asarray(settings.background, dtype=np.float64)

    geo = _splat_geometry(arrays, T_cw, cam, settings)
    order = np.argsort(geo["mu_c"][:, 2], kind="stable")
    ids = geo["ids"][order]
    mu_c = geo["mu_c"][order]
    mu_i = np.ascontiguousarray(geo["mu_i"][order])
    J = geo["J"][order]
    cov_w = geo["cov_w"][order]
    cov_i = geo["cov_i"][order]
    conics = np.ascontiguousarray(geo["conics"][order])
    bboxes = np.ascontiguousarray(geo["bboxes"][order])
    opac = np.ascontiguousarray(arrays.opacities[ids])

    degree = min(settings.sh_degree, _degree_of(arrays.shs))
    cam_center = -T_cw.R.T @ T_cw.t
    dvec = arrays.means[ids] - cam_center
    dnorm = np.linalg.norm(dvec, axis=1)
    dirs = np.where(dnorm[:, None] > 0, dvec / np.maximum(dnorm, 1e-30)[:, None], [0.0, 0.0, 1.0])
    colors, interior = sh.eval_color(degree, arrays.shs[ids], dirs)
    colors = np.ascontiguousarray(colors)

    offsets, entry_splat, splat_offsets, entry_pos, entry_pix = _kernels.build_csr(bboxes, h, w)
    image, t_final, n_proc, g_scr, a_scr, t_scr = _kernels.forward(
        offsets, entry_splat, mu_i, conics, opac, colors, bg,
        h, w, settings.alpha_clamp, settings.transmittance_min, settings.alpha_cut,
    )

    cache = None
    if retain_cache:
        cache = {
            "arrays": arrays, "T_cw": T_cw, "cam": cam, "settings": settings,
            "degree": degree, "ids": ids, "mu_c": mu_c, "mu_i": mu_i, "J": J,
            "cov_w": cov_w, "cov_i": cov_i, "conics": conics, "bboxes": bboxes,
            "opac": opac, "colors": colors, "interior": interior,
            "dirs": dirs, "dnorm": dnorm, "bg": bg,
            "offsets": offsets, "entry_splat": entry_splat,
            "splat_offsets": splat_offsets, "entry_pos": entry_pos,
            "entry_pix": entry_pix, "t_final": t_final, "n_proc": n_proc,
            "g_scr": g_scr, "a_scr": a_scr, "t_scr": t_scr,
        }
    return RenderOutput(
        image=image.reshape(h, w, 3),
        final_transmittance=t_final.reshape(h, w),
        contrib_count=n_proc.reshape(h, w),
        cache=cache,
    )


def _mu_c_grad_from_J(cache, d_J):
    """Contract dL/dJ with the projection-Jacobian's own dependence on mu_c."""
    cam = cache["cam"]
    mu_c = cache["mu_c"]
    x, y, z = mu_c[:, 0], mu_c[:, 1], mu_c[:, 2]
    gx = -cam.fx / z**2
    gy = -cam.fy / z**2
    out = np.zeros_like(mu_c)
    out[:, 0] = d_J[:, 0, 2] * gx
    out[:, 1] = d_J[:, 1, 2] * gy
    out[:, 2] = (
        d_J[:, 0, 0] * gx
        + d_J[:, 1, 1] * gy
        + d_J[:, 0, 2] * (2.0 * cam.fx * x / z**3)
        + d_J[:, 1, 2] * (2.0 * cam.fy * y / z**3)
    )
    return out


def _chain_cov2d(cache, d_cov2d_packed):
    """(s00, s01, s11) gradients -> (d_cov_w, d_M-path d_J, d_W per splat)."""
    M = np.einsum("nij,jk->nik", cache["J"], cache["T_cw"].R)
    d_sig = np.empty((len(d_cov2d_packed), 2, 2))
    d_sig[:, 0, 0] = d_cov2d_packed[:, 0]
    d_sig[:, 0, 1] = d_cov2d_packed[:, 1]
    d_sig[:, 1, 0] = d_cov2d_packed[:, 1]
    d_sig[:, 1, 1] = d_cov2d_packed[:, 2]
    d_cov_w = np.einsum("nji,njk,nkl->nil", M, d_sig, M)
    d_M = 2.0 * np.einsum("nij,njk,nkl->nil", d_sig, M, cache["cov_w"])
    d_J = np.einsum("nij,kj->nik", d_M, cache["T_cw"].R)
    d_W = np.einsum("nji,njk->nik", cache["J"], d_M)
    return d_cov_w, d_J, d_W


def _vee_diff(X):
    """vee(X - X^T) batched over the leading axis."""
    return np.stack(
        [X[:, 2, 1] - X[:, 1, 2], X[:, 0, 2] - X[:, 2, 0], X[:, 1, 0] - X[:, 0, 1]],
        axis=1,
    )


def backward(out: RenderOutput, grad_image: np.ndarray, T_ic: SE3 = None):
    """Analytic gradients of a scalar loss with image gradient grad_image.

    T_ic is the camera-to-IMU extrinsic used to express the pose gradient in
    the IMU tangent; identity means the IMU frame coincides with the camera.
    """
    cache = out.cache
    if cache is None:
        raise MissingCache("render() must be called with retain_cache=True")
    if T_ic is None:
        T_ic = SE3.identity()
    cam = cache["cam"]
    settings = cache["settings"]
    arrays = cache["arrays"]
    h, w = cam.height, cam.width
    g_img = np.ascontiguousarray(np.asarray(grad_image, dtype=np.float64).reshape(h * w, 3))

    d_alpha, w_out = _kernels.backward_per_entry(
        cache["offsets"], cache["entry_splat"], cache["n_proc"], cache["t_final"],
        g_img, cache["colors"], cache["bg"], cache["a_scr"], cache["t_scr"],
        h, w, np.ones(h * w, dtype=bool),
    )
    d_color, d_opac, d_mu2d, d_cov2d = _kernels.accumulate_splat_grads(
        cache["splat_offsets"], cache["entry_pos"], cache["entry_pix"], d_alpha, w_out,
        cache["g_scr"], cache["a_scr"], g_img, cache["mu_i"], cache["conics"],
        cache["opac"], w, settings.alpha_clamp,
    )

    ids = cache["ids"]
    rots = arrays.rots[ids]
    scales = arrays.scales[ids]

    # color clamp gates the appearance gradients
    d_color_eff = d_color * cache["interior"]

    # 2D covariance chain
    d_cov_w, d_J_cov, d_W = _chain_cov2d(cache, d_cov2d)

    # 2D mean chain
    d_mu_c = np.einsum("nji,nj->ni", cache["J"], d_mu2d)
    d_mu_c += _mu_c_grad_from_J(cache, d_J_cov)
    d_mean = d_mu_c @ cache["T_cw"].R  # R^T applied per splat

    # covariance -> (rotation tangent, scale)
    B = rots * scales[:, None, :]
    d_B = 2.0 * np.einsum("nij,njk->nik", d_cov_w, B)
    d_R_mat = d_B * scales[:, None, :]
    Y = np.einsum("nji,njk->nik", rots, d_R_mat)
    d_rot = _vee_diff(Y)
    d_scale = np.einsum("nij,nij->nj", rots, d_B)

    # appearance
    degree = cache["degree"]
    k = sh.num_coeffs(degree)
    basis = sh.eval_basis(degree, cache["dirs"])
    d_sh_local = np.einsum("nk,nc->nkc", basis, d_color_eff)
    d_cam_center = np.zeros(3)
    if degree >= 1:
        gbasis = sh.eval_basis_grad(degree, cache["dirs"])
        d_dir = np.einsum("nc,nkc,nkd->nd", d_color_eff, arrays.shs[ids][:, :k, :], gbasis)
        r = np.maximum(cache["dnorm"], 1e-30)
        proj = d_dir - cache["dirs"] * np.sum(cache["dirs"] * d_dir, axis=1, keepdims=True)
        d_point = proj / r[:, None]
        d_mean += d_point
        d_cam_center = -d_point.sum(axis=0)

    # pose (camera tangent): mu_c path, W path, and the SH view-direction path
    rho_cam = np.cross(cache["mu_c"], d_mu_c).sum(axis=0)
    Z = np.einsum("nij,kj->nik", d_W, cache["T_cw"].R)
    rho_cam += _vee_diff(Z).sum(axis=0)
    tau_cam = d_mu_c.sum(axis=0)
    tau_cam += -cache["T_cw"].R @ d_cam_center

    A = imu_camera_adjoint(cache["T_cw"].R, T_ic)
    imu = A.T @ np.concatenate([rho_cam, tau_cam])

    n = len(arrays)
    grads = ParamGradients(
        mean=np.zeros((n, 3)),
        rot=np.zeros((n, 3)),
        scale=np.zeros((n, 3)),
        opacity=np.zeros(n),
        sh=np.zeros_like(arrays.shs),
    )
    grads.mean[ids] = d_mean
    grads.rot[ids] = d_rot
    grads.scale[ids] = d_scale
    grads.opacity[ids] = d_opac
    grads.sh[ids, :k, :] = d_sh_local
    pose = PoseGradient(rho=imu[:3], tau=imu[3:], camera_rho=rho_cam, camera_tau=tau_cam)
    return grads, pose


def _pose_chain_matrices(cache):
    """Per-splat linear maps from screen-space gradients to the camera tangent.

    L_mu: (M, 6, 2) for d(mu_I); L_sig: (M, 6, 3) for packed d(cov_I).
    """
    mu_c = cache["mu_c"]
    J = cache["J"]
    m = len(mu_c)

    L_mu = np.zeros((m, 6, 2))
    for i in range(2):
        d_mu_c = J[:, i, :]  # response of mu_c-gradient to basis e_i
        L_mu[:, :3, i] = np.cross(mu_c, d_mu_c)
        L_mu[:, 3:, i] = d_mu_c

    Eb = np.zeros((3, 2, 2))
    Eb[0, 0, 0] = 1.0
    Eb[1, 0, 1] = Eb[1, 1, 0] = 1.0
    Eb[2, 1, 1] = 1.0
    M = np.einsum("nij,jk->nik", J, cache["T_cw"].R)
    d_M = 2.0 * np.einsum("bij,njk,nkl->nbil", Eb, M, cache["cov_w"])
    d_J = np.einsum("nbij,kj->nbik", d_M, cache["T_cw"].R)
    d_W = np.einsum("nji,nbjk->nbik", J, d_M)

    cam = cache["cam"]
    x, y, z = mu_c[:, 0], mu_c[:, 1], mu_c[:, 2]
    gx = (-cam.fx / z**2)[:, None]
    gy = (-cam.fy / z**2)[:, None]
    d_mu_c_b = np.zeros((m, 3, 3))  # (splat, basis, xyz)
    d_mu_c_b[:, :, 0] = d_J[:, :, 0, 2] * gx
    d_mu_c_b[:, :, 1] = d_J[:, :, 1, 2] * gy
    d_mu_c_b[:, :, 2] = (
        d_J[:, :, 0, 0] * gx
        + d_J[:, :, 1, 1] * gy
        + d_J[:, :, 0, 2] * (2.0 * cam.fx * x / z**3)[:, None]
        + d_J[:, :, 1, 2] * (2.0 * cam.fy * y / z**3)[:, None]
    )
    Z = np.einsum("nbij,kj->nbik", d_W, cache["T_cw"].R)
    rho_w = np.stack(
        [Z[:, :, 2, 1] - Z[:, :, 1, 2], Z[:, :, 0, 2] - Z[:, :, 2, 0], Z[:, :, 1, 0] - Z[:, :, 0, 1]],
        axis=2,
    )
    L_sig = np.zeros((m, 6, 3))
    L_sig[:, :3, :] = (np.cross(mu_c[:, None, :], d_mu_c_b) + rho_w).swapaxes(1, 2)
    L_sig[:, 3:, :] = d_mu_c_b.swapaxes(1, 2)
    return L_mu, L_sig


def pose_rows(out: RenderOutput, pixel_ids: np.ndarray, T_ic: SE3 = None) -> np.ndarray:
    """IMU-tangent derivative rows d(gray(I_hat(u)))/d(xi) for selected pixels.

    pixel_ids are flat row-major indices; gray is the channel mean.  Returns
    (len(pixel_ids), 6) with columns (rho, tau).
    """
    cache = out.cache
    if cache is None:
        raise MissingCache("render() must be called with retain_cache=True")
    if T_ic is None:
        T_ic = SE3.identity()
    cam = cache["cam"]
    settings = cache["settings"]
    h, w = cam.height, cam.width
    npx = h * w

    g_img = np.full((npx, 3), 1.0 / 3.0)
    sel_mask = np.zeros(npx, dtype=bool)
    sel_mask[np.asarray(pixel_ids, dtype=np.int64)] = True
    d_alpha, w_out = _kernels.backward_per_entry(
        cache["offsets"], cache["entry_splat"], cache["n_proc"], cache["t_final"],
        g_img, cache["colors"], cache["bg"], cache["a_scr"], cache["t_scr"],
        h, w, sel_mask,
    )
    keep, e_splat, e_pix, e_mu, e_cov, e_w = _kernels.per_entry_screen_grads(
        cache["entry_pos"], cache["entry_pix"], cache["entry_splat"], d_alpha, w_out,
        cache["g_scr"], cache["a_scr"], cache["mu_i"], cache["conics"], cache["opac"], w,
        settings.alpha_clamp, sel_mask,
    )
    e_splat, e_pix = e_splat[keep], e_pix[keep]
    e_mu, e_cov, e_w = e_mu[keep], e_cov[keep], e_w[keep]

    L_mu, L_sig = _pose_chain_matrices(cache)
    contrib = np.einsum("eij,ej->ei", L_mu[e_splat], e_mu)
    contrib += np.einsum("eik,ek->ei", L_sig[e_splat], e_cov)
    if cache["degree"] >= 1:
        # view-direction color path: tau response through the camera center
        k = sh.num_coeffs(cache["degree"])
        gbasis = sh.eval_basis_grad(cache["degree"], cache["dirs"])
        shs = cache["arrays"].shs[cache["ids"]][:, :k, :]
        P = np.einsum("nkc,nkd->ncd", shs, gbasis)  # d color_ch / d dir_d
        r = np.maximum(cache["dnorm"], 1e-30)
        dirs = cache["dirs"]
        dc = (e_w / 3.0)[:, None] * cache["interior"][e_splat]
        d_dir = np.einsum("ec,ecd->ed", dc, P[e_splat])
        proj = d_dir - dirs[e_splat] * np.sum(dirs[e_splat] * d_dir, axis=1, keepdims=True)
        d_point = proj / r[e_splat][:, None]
        # only the camera center moves with the pose here; its tau response
        # is -R_WC, and dL/dc_W = -d_point, leaving +R_CW @ d_point
        contrib[:, 3:] += d_point @ cache["T_cw"].R.T

    A = imu_camera_adjoint(cache["T_cw"].R, T_ic)
    contrib_imu = contrib @ A

    row_of = np.full(npx, -1, dtype=np.int64)
    row_of[np.asarray(pixel_ids, dtype=np.int64)] = np.arange(len(pixel_ids))
    rows = np.zeros((len(pixel_ids), 6))
    np.add.at(rows, row_of[e_pix], contrib_imu)
    return rows


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 export of an (H, W, 3) float image in [0, 1]."""
    img8 = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = img8.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img8.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise ValueError("not a binary PPM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    img = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    return img.reshape(h, w, 3).astype(np.float64) / float(maxval)


def dump_raw(path, image: np.ndarray) -> None:
    """Planar f32 dump (channel-major) for test harnesses."""
    arr = np.asarray(image, dtype=np.float32)
    np.transpose(arr, (2, 0, 1)).tofile(path)
