import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from livsplat.errors import Degenerate, MissingVoxel
from livsplat.geometry import Gaussian3D
from livsplat.voxmap import (
    Full,
    HashOctree,
    Inserted,
    VoxelKey,
    hash_key,
    leaf_key,
    voxel_center,
)


def make_gaussian(p, sh0=(0.0, 0.0, 0.0)):
    coeffs = np.zeros((1, 3))
    coeffs[0] = sh0
    return Gaussian3D(
        mean_w=np.asarray(p, dtype=float),
        rot=np.eye(3),
        scale=[1e-3, 0.1, 0.1],
        opacity=0.9,
        sh=coeffs,
    )


def test_hash_key_interior_of_origin_voxel():
    assert hash_key([0.5, 0.5, 0.5], 1.0) == VoxelKey(0, 0, 0, 0)


def test_hash_key_floors_negatives():
    assert hash_key([-0.1, 2.3, 0.0], 1.0) == VoxelKey(-1, 2, 0, 0)


def test_hash_key_indoor_root_size():
    assert hash_key([0.13, 0.0, -0.05], 0.06) == VoxelKey(2, 0, -1, 0)


def test_locate_or_subdivide_simple():
    m = HashOctree(root_len=1.0, max_level=2)
    assert m.locate_or_subdivide([0.9, 0.1, 0.1]) == VoxelKey(3, 0, 0, 2)


def test_locate_is_idempotent():
    m = HashOctree(root_len=1.0, max_level=2)
    k1 = m.locate_or_subdivide([0.3, -0.7, 0.1])
    roots = len(m.table)
    k2 = m.locate_or_subdivide([0.3, -0.7, 0.1])
    assert k1 == k2
    assert len(m.table) == roots


def test_locate_matches_direct_hash_for_random_points():
    rng = np.random.default_rng(2)
    m = HashOctree(root_len=0.5, max_level=2)
    pts = rng.uniform(-4, 4, size=(10000, 3))
    for p in pts:
        assert m.locate_or_subdivide(p) == leaf_key(p, 0.5, 2)


def test_try_insert_until_full():
    m = HashOctree(root_len=1.0, max_level=1, leaf_capacity=2)
    p = [0.1, 0.1, 0.1]
    assert isinstance(m.try_insert(make_gaussian(p)), Inserted)
    assert isinstance(m.try_insert(make_gaussian(p)), Inserted)
    assert isinstance(m.try_insert(make_gaussian(p)), Full)
    assert m.gaussian_count() == 2


def test_fov_root_keys_empty_scan():
    m = HashOctree(root_len=1.0)
    assert m.fov_root_keys(np.zeros((0, 3))) == set()


def test_fov_root_keys_single_voxel():
    m = HashOctree(root_len=1.0)
    pts = np.random.default_rng(0).uniform(2.0, 2.9, size=(50, 3))
    assert m.fov_root_keys(pts) == {VoxelKey(2, 2, 2, 0)}


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_fov_root_keys_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3, 3, size=(rng.integers(1, 200), 3))
    m = HashOctree(root_len=0.7)
    expected = {hash_key(p, 0.7) for p in pts}
    assert m.fov_root_keys(pts) == expected
    # permutation / duplication invariance
    doubled = np.vstack([pts[::-1], pts])
    assert m.fov_root_keys(doubled) == expected


def test_write_back_replaces_leaf_params():
    m = HashOctree(root_len=1.0, max_level=1)
    g = make_gaussian([0.2, 0.2, 0.2], sh0=(0.1, 0.1, 0.1))
    m.try_insert(g)
    key = leaf_key(g.mean_w, 1.0, 1)
    g2 = make_gaussian([0.2, 0.2, 0.2], sh0=(0.9, 0.9, 0.9))
    m.write_back(key, [g2])
    assert np.allclose(m.get_leaf(key).gaussians[0].sh[0], g2.sh[0])


def test_write_back_missing_voxel_raises():
    m = HashOctree(root_len=1.0, max_level=1)
    with pytest.raises(MissingVoxel):
        m.write_back(VoxelKey(5, 5, 5, 1), [])


def test_hash_ownership_invariant():
    rng = np.random.default_rng(9)
    m = HashOctree(root_len=0.4, max_level=2)
    for p in rng.uniform(-2, 2, size=(300, 3)):
        m.try_insert(make_gaussian(p))
    for key, node in m.iter_leaves():
        for g in node.gaussians:
            assert hash_key(g.mean_w, 0.4) == key.root()
            assert leaf_key(g.mean_w, 0.4, 2) == key


def test_estimate_normal_flat_plane():
    m = HashOctree(root_len=0.5, max_level=1)
    rng = np.random.default_rng(4)
    pts = np.column_stack(
        [rng.uniform(0, 1.0, 200), rng.uniform(0, 1.0, 200), np.zeros(200)]
    )
    m.accumulate_points(pts)
    key = leaf_key([0.5, 0.5, 0.0], 0.5, 1)
    n = m.estimate_normal(key, sensor_origin=[0.5, 0.5, 2.0])
    assert np.allclose(n, [0, 0, 1], atol=1e-9)
    n_below = m.estimate_normal(key, sensor_origin=[0.5, 0.5, -2.0])
    assert np.allclose(n_below, [0, 0, -1], atol=1e-9)


def test_estimate_normal_degenerate_cases():
    m = HashOctree(root_len=0.5, max_level=1)
    with pytest.raises(Degenerate):
        m.estimate_normal(VoxelKey(0, 0, 0, 1), sensor_origin=[0, 0, 1])
    # collinear points: scatter rank 1
    pts = np.column_stack([np.linspace(0, 0.2, 10), np.zeros(10), np.zeros(10)])
    m.accumulate_points(pts)
    with pytest.raises(Degenerate):
        m.estimate_normal(leaf_key([0.1, 0, 0], 0.5, 1), sensor_origin=[0, 0, 1])


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(21)
    m = HashOctree(root_len=0.6, max_level=2)
    for p in rng.uniform(-1, 1, size=(40, 3)):
        m.try_insert(make_gaussian(p, sh0=rng.uniform(-0.5, 0.5, 3)))
    path = tmp_path / "map.bin"
    m.save(path)
    m2 = HashOctree.load(path)
    assert m2.root_len == m.root_len
    assert m2.max_level == m.max_level
    a = [(k, g) for k, node in m.iter_leaves() for g in node.gaussians]
    b = [(k, g) for k, node in m2.iter_leaves() for g in node.gaussians]
    assert len(a) == len(b)
    for (ka, ga), (kb, gb) in zip(a, b):
        assert ka == kb
        assert np.allclose(ga.mean_w, gb.mean_w, atol=1e-6)
        assert np.allclose(ga.sh, gb.sh, atol=1e-6)


def test_ply_export(tmp_path):
    m = HashOctree(root_len=1.0, max_level=1)
    m.try_insert(make_gaussian([0.1, 0.2, 0.3]))
    path = tmp_path / "map.ply"
    m.export_ply(path)
    text = path.read_text().splitlines()
    assert text[0] == "ply"
    assert "element vertex 1" in text[2]


def test_voxel_center():
    assert np.allclose(voxel_center(VoxelKey(0, 0, 0, 0), 1.0), [0.5, 0.5, 0.5])
    assert np.allclose(voxel_center(VoxelKey(-1, 0, 0, 1), 1.0), [-0.25, 0.25, 0.25])
