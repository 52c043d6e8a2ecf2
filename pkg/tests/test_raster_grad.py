import numpy as np
import pytest

from livsplat.geometry import SE3, Twist, boxplus, so3_exp
from livsplat.raster import GaussianArrays, RasterSettings, backward, pose_rows, render

from test_raster import CAM32, random_scene

SETTINGS = RasterSettings(background=(0.1, 0.2, 0.3))


def l1_loss_and_grad(image, target):
    diff = image - target
    loss = np.abs(diff).mean()
    grad = np.sign(diff) / diff.size
    return loss, grad


def render_loss(arrays, T_wc, target, settings=SETTINGS):
    out = render(arrays, T_wc, CAM32, settings, retain_cache=False)
    return l1_loss_and_grad(out.image, target)[0]


def perturbed_arrays(arrays, group, gi, k, eps):
    a = GaussianArrays(
        arrays.means.copy(), arrays.rots.copy(), arrays.scales.copy(),
        arrays.opacities.copy(), arrays.shs.copy(),
    )
    if group == "mean":
        a.means[gi, k] += eps
    elif group == "rot":
        step = np.zeros(3)
        step[k] = eps
        a.rots[gi] = a.rots[gi] @ so3_exp(step)
    elif group == "scale":
        a.scales[gi, k] += eps
    elif group == "opacity":
        a.opacities[gi] += eps
    elif group == "sh":
        a.shs[gi, k // 3, k % 3] += eps
    return a


def check_group(arrays, grads, target, group, eps=1e-5, tol=1e-4, settings=SETTINGS):
    n = len(arrays)
    if group == "mean":
        analytic = grads.mean
        dims = 3
    elif group == "rot":
        analytic = grads.rot
        dims = 3
    elif group == "scale":
        analytic = grads.scale
        dims = 3
    elif group == "opacity":
        analytic = grads.opacity[:, None]
        dims = 1
    elif group == "sh":
        analytic = grads.sh.reshape(n, -1)
        dims = analytic.shape[1]
    fd = np.zeros((n, dims))
    for gi in range(n):
        for k in range(dims):
            lp = render_loss(perturbed_arrays(arrays, group, gi, k, eps), SE3.identity(), target, settings)
            lm = render_loss(perturbed_arrays(arrays, group, gi, k, -eps), SE3.identity(), target, settings)
            fd[gi, k] = (lp - lm) / (2 * eps)
    scale = max(np.abs(fd).max(), 1e-8)
    rel = np.abs(np.asarray(analytic).reshape(n, dims) - fd).max() / scale
    assert rel <= tol, f"{group}: rel err {rel:.2e}"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_param_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    arrays = random_scene(rng, 12)
    target = rng.uniform(0, 1, size=(32, 32, 3))
    out = render(arrays, SE3.identity(), CAM32, SETTINGS)
    _, grad_img = l1_loss_and_grad(out.image, target)
    grads, _ = backward(out, grad_img)
    for group in ("mean", "rot", "scale", "opacity", "sh"):
        check_group(arrays, grads, target, group)


def test_param_gradients_with_view_dependent_color():
    rng = np.random.default_rng(9)
    settings = RasterSettings(background=(0.1, 0.2, 0.3), sh_degree=1)
    arrays = random_scene(rng, 6, sh_degree=1)
    target = rng.uniform(0, 1, size=(32, 32, 3))
    out = render(arrays, SE3.identity(), CAM32, settings)
    _, grad_img = l1_loss_and_grad(out.image, target)
    grads, _ = backward(out, grad_img)
    for group in ("mean", "sh", "opacity"):
        check_group(arrays, grads, target, group, settings=settings)


def test_zero_image_gradient_gives_zero_gradients():
    rng = np.random.default_rng(4)
    arrays = random_scene(rng, 10)
    out = render(arrays, SE3.identity(), CAM32, SETTINGS)
    grads, pose = backward(out, np.zeros((32, 32, 3)))
    assert np.all(grads.mean == 0)
    assert np.all(grads.rot == 0)
    assert np.all(grads.scale == 0)
    assert np.all(grads.opacity == 0)
    assert np.all(grads.sh == 0)
    assert np.all(pose.as_vector() == 0)


def random_extrinsic(rng):
    return SE3(so3_exp(rng.normal(size=3) * 0.3), rng.normal(size=3) * 0.2)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_pose_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    arrays = random_scene(rng, 15)
    target = rng.uniform(0, 1, size=(32, 32, 3))
    T_ic = random_extrinsic(rng) if seed % 2 else SE3.identity()
    T_wi = SE3(so3_exp(rng.normal(size=3) * 0.02), rng.normal(size=3) * 0.02)
    T_wc = T_wi @ T_ic

    out = render(arrays, T_wc, CAM32, SETTINGS)
    _, grad_img = l1_loss_and_grad(out.image, target)
    _, pose = backward(out, grad_img, T_ic=T_ic)

    eps = 1e-5
    fd = np.zeros(6)
    for k in range(6):
        d = np.zeros(6)
        d[k] = eps
        Tp = boxplus(T_wi, Twist(d[:3], d[3:])) @ T_ic
        Tm = boxplus(T_wi, Twist(-d[:3], -d[3:])) @ T_ic
        fd[k] = (render_loss(arrays, Tp, target) - render_loss(arrays, Tm, target)) / (2 * eps)
    rel = np.abs(pose.as_vector() - fd).max() / max(np.abs(fd).max(), 1e-8)
    assert rel <= 1e-4, f"pose rel err {rel:.2e}"


def test_pose_gradient_view_dependent_color():
    rng = np.random.default_rng(31)
    settings = RasterSettings(background=(0.05, 0.05, 0.05), sh_degree=1)
    arrays = random_scene(rng, 8, sh_degree=1)
    target = rng.uniform(0, 1, size=(32, 32, 3))
    T_ic = random_extrinsic(rng)
    T_wi = SE3.identity()
    out = render(arrays, T_wi @ T_ic, CAM32, settings)
    _, grad_img = l1_loss_and_grad(out.image, target)
    _, pose = backward(out, grad_img, T_ic=T_ic)
    eps = 1e-5
    fd = np.zeros(6)
    for k in range(6):
        d = np.zeros(6)
        d[k] = eps
        Tp = boxplus(T_wi, Twist(d[:3], d[3:])) @ T_ic
        Tm = boxplus(T_wi, Twist(-d[:3], -d[3:])) @ T_ic
        fd[k] = (render_loss(arrays, Tp, target, settings) - render_loss(arrays, Tm, target, settings)) / (2 * eps)
    rel = np.abs(pose.as_vector() - fd).max() / max(np.abs(fd).max(), 1e-8)
    assert rel <= 1e-4, f"pose rel err {rel:.2e}"


def test_pose_rows_match_per_pixel_finite_differences():
    rng = np.random.default_rng(55)
    arrays = random_scene(rng, 12)
    T_ic = random_extrinsic(rng)
    T_wi = SE3.identity()
    out = render(arrays, T_wi @ T_ic, CAM32, SETTINGS)
    pixels = np.array([16 * 32 + 16, 10 * 32 + 20, 25 * 32 + 7, 5 * 32 + 5])
    rows = pose_rows(out, pixels, T_ic=T_ic)

    eps = 1e-5
    for k in range(6):
        d = np.zeros(6)
        d[k] = eps
        op = render(arrays, boxplus(T_wi, Twist(d[:3], d[3:])) @ T_ic, CAM32, SETTINGS, retain_cache=False)
        om = render(arrays, boxplus(T_wi, Twist(-d[:3], -d[3:])) @ T_ic, CAM32, SETTINGS, retain_cache=False)
        gp = op.image.reshape(-1, 3).mean(axis=1)[pixels]
        gm = om.image.reshape(-1, 3).mean(axis=1)[pixels]
        fd = (gp - gm) / (2 * eps)
        rel = np.abs(rows[:, k] - fd).max() / max(np.abs(fd).max(), 1e-8)
        assert rel <= 1e-4, f"pose row col {k}: rel err {rel:.2e}"


def test_backward_deterministic_across_threads():
    import numba

    rng = np.random.default_rng(8)
    arrays = random_scene(rng, 20)
    target = rng.uniform(0, 1, size=(32, 32, 3))
    out = render(arrays, SE3.identity(), CAM32, SETTINGS)
    _, grad_img = l1_loss_and_grad(out.image, target)
    saved = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        g1, p1 = backward(out, grad_img)
        numba.set_num_threads(min(4, numba.config.NUMBA_NUM_THREADS))
        g2, p2 = backward(out, grad_img)
    finally:
        numba.set_num_threads(saved)
    assert np.array_equal(g1.mean, g2.mean)
    assert np.array_equal(g1.sh, g2.sh)
    assert np.array_equal(p1.as_vector(), p2.as_vector())
