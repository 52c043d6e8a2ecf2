import numpy as np
import pytest

from livsplat.errors import OutOfBounds
from livsplat.geometry import PinholeCamera, SE3
from livsplat.initialize import (
    BilinearWeights,
    bilinear_color,
    covariance,
    init_gaussian,
    init_rotation,
    init_scale,
)


def test_init_scale_level2():
    S = init_scale(level=2, v_s=1.0, kappa=0.5, delta=1e-3)
    assert np.allclose(np.diag(S), [1e-3, 0.125, 0.125])


def test_init_scale_slice_is_thinnest():
    for level in range(4):
        S = np.diag(init_scale(level, v_s=1.0))
        assert S[0] <= min(S[1], S[2])


def test_init_scale_doubling_level_halves_extent():
    s1 = np.diag(init_scale(1, v_s=2.0))
    s2 = np.diag(init_scale(2, v_s=2.0))
    assert np.allclose(s2[1:], 0.5 * s1[1:])


def test_init_rotation_z_normal():
    # hand evaluation: u = (e_x x n)/|..| = (0,-1,0); n x u = (1,0,0)
    R = init_rotation([0.0, 0.0, 1.0])
    assert np.allclose(R[:, 0], [0, -1, 0])
    assert np.allclose(R[:, 1], [1, 0, 0])
    assert np.allclose(R[:, 2], [0, 0, 1])


def test_init_rotation_x_normal_fallback():
    # fallback with e_y: u = (e_y x n)/|..| = (0,0,-1); n x u = (0,1,0)
    R = init_rotation([1.0, 0.0, 0.0])
    assert np.allclose(R[:, 0], [0, 0, -1])
    assert np.allclose(R[:, 1], [0, 1, 0])
    assert np.allclose(R[:, 2], [1, 0, 0])


def test_init_rotation_contract_for_random_normals():
    rng = np.random.default_rng(8)
    for _ in range(500):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        R = init_rotation(n)
        assert np.abs(R @ R.T - np.eye(3)).max() <= 1e-12
        assert abs(np.linalg.det(R) - 1.0) <= 1e-12
        assert np.allclose(R[:, 2], n, atol=1e-12)


def test_covariance_identity_rotation():
    S = np.diag([0.5, 2.0, 3.0])
    assert np.allclose(covariance(np.eye(3), S), np.diag([0.25, 4.0, 9.0]))


def test_covariance_spectrum_invariant_under_rotation():
    rng = np.random.default_rng(12)
    from livsplat.geometry import so3_exp

    for _ in range(200):
        R = so3_exp(rng.normal(size=3))
        s = rng.uniform(0.1, 2.0, size=3)
        cov = covariance(R, np.diag(s))
        evals = np.sort(np.linalg.eigvalsh(cov))
        assert np.allclose(evals, np.sort(s**2), rtol=1e-9, atol=1e-12)


def test_covariance_symmetry_random():
    rng = np.random.default_rng(1)
    from livsplat.geometry import so3_exp

    for _ in range(1000):
        R = so3_exp(rng.normal(size=3))
        S = np.diag(rng.uniform(0.01, 1.0, size=3))
        cov = covariance(R, S)
        assert np.abs(cov - cov.T).max() <= 1e-12


def _checker_image(h=16, w=16):
    img = np.zeros((h, w, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    img[..., 0] = (xx + yy) % 2
    img[..., 1] = xx / (w - 1)
    img[..., 2] = yy / (h - 1)
    return img


def test_bilinear_on_pixel_center():
    img = _checker_image()
    assert np.allclose(bilinear_color(img, [5.0, 7.0]), img[7, 5])


def test_bilinear_at_block_center():
    img = _checker_image()
    expected = 0.25 * (img[7, 5] + img[7, 6] + img[8, 5] + img[8, 6])
    assert np.allclose(bilinear_color(img, [5.5, 7.5]), expected)


def _bilinear_oracle(img, u, v):
    x0, y0 = int(np.floor(u)), int(np.floor(v))
    fx, fy = u - x0, v - y0
    out = np.zeros(3)
    for ch in range(3):
        out[ch] = (
            img[y0, x0, ch] * (1 - fx) * (1 - fy)
            + img[y0, x0 + 1, ch] * fx * (1 - fy)
            + img[y0 + 1, x0, ch] * (1 - fx) * fy
            + img[y0 + 1, x0 + 1, ch] * fx * fy
        )
    return out


def test_bilinear_matches_oracle_random():
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, size=(24, 32, 3))
    for _ in range(300):
        u = rng.uniform(1.0, 30.0)
        v = rng.uniform(1.0, 22.0)
        assert np.abs(bilinear_color(img, [u, v]) - _bilinear_oracle(img, u, v)).max() <= 1e-9


def test_bilinear_out_of_bounds():
    img = _checker_image()
    with pytest.raises(OutOfBounds):
        bilinear_color(img, [0.2, 5.0])
    with pytest.raises(OutOfBounds):
        bilinear_color(img, [5.0, 15.5])


def test_bilinear_weights_sum_to_one():
    rng = np.random.default_rng(6)
    for _ in range(200):
        bw = BilinearWeights.at(rng.uniform(1, 14, size=2), 16, 16)
        assert abs(bw.weights.sum() - 1.0) <= 1e-9
        assert np.all(bw.weights >= 0)


def test_init_gaussian_color_round_trip():
    # rendered view-independent color must equal the sampled image color
    from livsplat import sh as shmod

    img = _checker_image(32, 32)
    cam = PinholeCamera(fx=30.0, fy=30.0, cx=16.0, cy=16.0, width=32, height=32)
    T_WC = SE3.identity()
    g = init_gaussian(
        p_w=[0.1, -0.05, 1.5],
        normal=[0.0, 0.0, -1.0],
        level=2,
        image=img,
        T_WC=T_WC,
        cam=cam,
        v_s=0.5,
    )
    from livsplat.geometry import project

    uv = project(cam, np.array([0.1, -0.05, 1.5]))
    expected = bilinear_color(img, uv)
    rendered = np.clip(0.5 + shmod.SH_C0 * g.sh[0], 0.0, 1.0)
    assert np.abs(rendered - expected).max() <= 1e-9
    g.validate()
