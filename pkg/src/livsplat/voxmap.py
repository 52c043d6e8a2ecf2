"""Global Gaussian map: spatial hash of root voxels, each a small octree.

Roots are indexed by flooring world coordinates by the root edge length.
Every root subdivides to a fixed maximum level; leaves own the Gaussians and
accumulate raw scan points (as second-moment statistics) for plane fitting.
"""

from __future__ import annotations

import struct
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .errors import Degenerate, MissingVoxel
from .geometry import Gaussian3D

_P1, _P2, _P3 = 73856093, 19349669, 83492791


class VoxelKey(NamedTuple):
    ix: int
    iy: int
    iz: int
    level: int

    def __hash__(self):  # large-prime multiply-XOR; dict resolves collisions
        return (self.ix * _P1) ^ (self.iy * _P2) ^ (self.iz * _P3) ^ self.level

    def child(self, bx: int, by: int, bz: int) -> "VoxelKey":
        return VoxelKey(2 * self.ix + bx, 2 * self.iy + by, 2 * self.iz + bz, self.level + 1)

    def parent(self) -> "VoxelKey":
        return VoxelKey(self.ix // 2, self.iy // 2, self.iz // 2, self.level - 1)

    def root(self) -> "VoxelKey":
        s = 1 << self.level
        return VoxelKey(self.ix // s, self.iy // s, self.iz // s, 0)


def hash_key(p: np.ndarray, v_s: float) -> VoxelKey:
    """Root-voxel key of a world point: componentwise floor(p / v_s)."""
    if v_s <= 0:
        raise ValueError("root voxel length must be positive")
    q = np.floor(np.asarray(p, dtype=float) / v_s)
    return VoxelKey(int(q[0]), int(q[1]), int(q[2]), 0)


def leaf_key(p: np.ndarray, v_s: float, max_level: int) -> VoxelKey:
    q = np.floor(np.asarray(p, dtype=float) / (v_s / (1 << max_level)))
    return VoxelKey(int(q[0]), int(q[1]), int(q[2]), max_level)


def voxel_center(key: VoxelKey, v_s: float) -> np.ndarray:
    edge = v_s / (1 << key.level)
    return (np.array([key.ix, key.iy, key.iz], dtype=float) + 0.5) * edge


def keys_of_points(points: np.ndarray, edge: float, level: int) -> list[VoxelKey]:
    """Vectorized flooring of an (N, 3) array into keys at the given level."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        return []
    idx = np.floor(pts / edge).astype(np.int64)
    return [VoxelKey(int(i), int(j), int(k), level) for i, j, k in idx]


class OctreeNode:
    """Internal node (8 optional children) or leaf (owning the Gaussians).

    Raw-point statistics for plane fitting live in the map's flat per-leaf
    table (HashOctree.leaf_stats), not on the node, so neighbour queries for
    normal estimation are O(1) dictionary lookups.
    """

    __slots__ = ("children", "gaussians")

    def __init__(self, leaf: bool):
        if leaf:
            self.children = None
            self.gaussians: list[Gaussian3D] = []
        else:
            self.children: Optional[list] = [None] * 8
            self.gaussians = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


class Inserted:
    pass


class Full:
    pass


class HashOctree:
    def __init__(self, root_len: float, max_level: int = 2, leaf_capacity: int = 1):
        if root_len <= 0:
            raise ValueError("root_len must be positive")
        self.root_len = float(root_len)
        self.max_level = int(max_level)
        self.leaf_capacity = int(leaf_capacity)
        self.table: dict[VoxelKey, OctreeNode] = {}
        # per-leaf accumulated point statistics: key -> [count, sum, outer-sum]
        self.leaf_stats: dict[VoxelKey, list] = {}

    @property
    def leaf_len(self) -> float:
        return self.root_len / (1 << self.max_level)

    # -- tree walking ------------------------------------------------------

    def _walk_create(self, leaf: VoxelKey) -> OctreeNode:
        if leaf.level != self.max_level:
            raise ValueError("expected a leaf-level key")
        chain = [leaf]
        while chain[-1].level > 0:
            chain.append(chain[-1].parent())
        chain.reverse()  # root .. leaf
        root = chain[0]
        node = self.table.get(root)
        if node is None:
            node = OctreeNode(leaf=(self.max_level == 0))
            self.table[root] = node
        for depth in range(1, len(chain)):
            k = chain[depth]
            pk = chain[depth - 1]
            oct_idx = (k.ix - 2 * pk.ix) | ((k.iy - 2 * pk.iy) << 1) | ((k.iz - 2 * pk.iz) << 2)
            child = node.children[oct_idx]
            if child is None:
                child = OctreeNode(leaf=(k.level == self.max_level))
                node.children[oct_idx] = child
            node = child
        return node

    def _walk(self, leaf: VoxelKey) -> Optional[OctreeNode]:
        chain = [leaf]
        while chain[-1].level > 0:
            chain.append(chain[-1].parent())
        chain.reverse()
        node = self.table.get(chain[0])
        for depth in range(1, len(chain)):
            if node is None or node.is_leaf:
                return None
            k = chain[depth]
            pk = chain[depth - 1]
            oct_idx = (k.ix - 2 * pk.ix) | ((k.iy - 2 * pk.iy) << 1) | ((k.iz - 2 * pk.iz) << 2)
            node = node.children[oct_idx]
        return node

    # -- public operations -------------------------------------------------

    def locate_or_subdivide(self, p: np.ndarray) -> VoxelKey:
        """Leaf key containing p, creating intermediate nodes as needed."""
        key = leaf_key(p, self.root_len, self.max_level)
        self._walk_create(key)
        return key

    def get_leaf(self, key: VoxelKey) -> Optional[OctreeNode]:
        node = self._walk(key)
        if node is not None and node.is_leaf:
            return node
        return None

    def ensure_leaf(self, key: VoxelKey) -> OctreeNode:
        return self._walk_create(key)

    def try_insert(self, g: Gaussian3D):
        """Insert into the leaf containing g.mean_w unless it is at capacity.

        A Full return is the normal downsampling outcome, not an error.
        """
        key = self.locate_or_subdivide(g.mean_w)
        node = self.get_leaf(key)
        if len(node.gaussians) >= self.leaf_capacity:
            return Full()
        g.level = self.max_level
        node.gaussians.append(g)
        return Inserted()

    def fov_root_keys(self, points_w: np.ndarray) -> set[VoxelKey]:
        return set(keys_of_points(points_w, self.root_len, 0))

    def fov_leaf_keys(self, points_w: np.ndarray) -> set[VoxelKey]:
        return set(keys_of_points(points_w, self.leaf_len, self.max_level))

    def write_back(self, key: VoxelKey, params: list[Gaussian3D]) -> None:
        node = self.get_leaf(key)
        if node is None:
            raise MissingVoxel(key)
        node.gaussians = list(params)

    def accumulate_points(self, points_w: np.ndarray) -> set[VoxelKey]:
        """Add scan points to leaf statistics; returns the touched leaf keys."""
        groups = self.group_by_leaf(points_w)
        for key, pts in groups.items():
            self._walk_create(key)
            self.add_leaf_stats(key, pts)
        return set(groups.keys())

    def add_leaf_stats(self, key: VoxelKey, pts: np.ndarray) -> None:
        stats = self.leaf_stats.get(key)
        if stats is None:
            stats = [0, np.zeros(3), np.zeros((3, 3))]
            self.leaf_stats[key] = stats
        stats[0] += len(pts)
        stats[1] += pts.sum(axis=0)
        stats[2] += pts.T @ pts

    def group_by_leaf(self, points_w: np.ndarray) -> dict[VoxelKey, np.ndarray]:
        """Leaf key -> stacked points, grouped with one vectorized pass."""
        pts = np.atleast_2d(np.asarray(points_w, dtype=float))
        if pts.size == 0:
            return {}
        idx = np.floor(pts / self.leaf_len).astype(np.int64)
        order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
        idx = idx[order]
        pts = pts[order]
        cuts = np.nonzero(np.any(np.diff(idx, axis=0) != 0, axis=1))[0] + 1
        groups = {}
        for chunk_idx, chunk_pts in zip(
            np.split(idx, cuts), np.split(pts, cuts)
        ):
            key = VoxelKey(int(chunk_idx[0, 0]), int(chunk_idx[0, 1]),
                           int(chunk_idx[0, 2]), self.max_level)
            groups[key] = chunk_pts
        return groups

    def leaf_keys_under_roots(self, root_keys) -> set[VoxelKey]:
        """All populated leaf keys inside the given root voxels."""

        def recurse(key: VoxelKey, node: OctreeNode, out: set):
            if node.is_leaf:
                if node.gaussians:
                    out.add(key)
                return
            for oct_idx in range(8):
                child = node.children[oct_idx]
                if child is not None:
                    ck = key.child(oct_idx & 1, (oct_idx >> 1) & 1, (oct_idx >> 2) & 1)
                    recurse(ck, child, out)

        out: set[VoxelKey] = set()
        for root in root_keys:
            node = self.table.get(root)
            if node is not None:
                recurse(root, node, out)
        return out

    _NEIGHBORHOOD = ((0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))

    def _neighborhood_stats(self, key: VoxelKey):
        n_tot = 0
        s = np.zeros(3)
        so = np.zeros((3, 3))
        for dx, dy, dz in self._NEIGHBORHOOD:
            st = self.leaf_stats.get(VoxelKey(key.ix + dx, key.iy + dy, key.iz + dz, key.level))
            if st is not None:
                n_tot += st[0]
                s = s + st[1]
                so = so + st[2]
        return n_tot, s, so

    def estimate_normal(self, key: VoxelKey, sensor_origin: np.ndarray) -> np.ndarray:
        """Plane-fit normal from the leaf and its 6 face neighbours.

        Smallest-scatter eigenvector, sign flipped to face the sensor.
        Raises Degenerate when fewer than 3 points or scatter rank < 2.
        """
        n_tot, s, so = self._neighborhood_stats(key)
        if n_tot < 3:
            raise Degenerate("fewer than 3 accumulated points")
        mean = s / n_tot
        scatter = so / n_tot - np.outer(mean, mean)
        w, v = np.linalg.eigh(scatter)
        if w[1] <= 1e-12 + 1e-6 * max(w[2], 0.0):
            raise Degenerate("scatter rank < 2")
        n = v[:, 0]
        if np.dot(n, np.asarray(sensor_origin, dtype=float) - mean) < 0:
            n = -n
        return n

    def plane_at(self, key: VoxelKey, sensor_origin: np.ndarray):
        """(normal, centroid) of the accumulated neighbourhood, or None."""
        st = self.leaf_stats.get(key)
        if st is None or st[0] == 0:
            return None
        try:
            n = self.estimate_normal(key, sensor_origin)
        except Degenerate:
            return None
        return n, st[1] / st[0]

    def fit_planes(self, keys: list, sensor_origin: np.ndarray) -> dict:
        """Batched plane fits for many leaf keys (one stacked eigh call).

        Returns {key: (normal, centroid) or None}; same acceptance rules as
        estimate_normal / plane_at.
        """
        origin = np.asarray(sensor_origin, dtype=float)
        out: dict = {}
        pend_keys = []
        counts, sums, outers, anchors = [], [], [], []
        for key in keys:
            st = self.leaf_stats.get(key)
            if st is None or st[0] == 0:
                out[key] = None
                continue
            n_tot, s, so = self._neighborhood_stats(key)
            if n_tot < 3:
                out[key] = None
                continue
            pend_keys.append(key)
            counts.append(n_tot)
            sums.append(s)
            outers.append(so)
            anchors.append(st[1] / st[0])
        if not pend_keys:
            return out
        n = np.asarray(counts, dtype=float)[:, None]
        s = np.stack(sums)
        so = np.stack(outers)
        mean = s / n
        scatter = so / n[:, :, None] - mean[:, :, None] * mean[:, None, :]
        w, v = np.linalg.eigh(scatter)
        ok = w[:, 1] > 1e-12 + 1e-6 * np.maximum(w[:, 2], 0.0)
        normals = v[:, :, 0]
        flip = np.einsum("ij,ij->i", normals, origin[None, :] - mean) < 0
        normals = np.where(flip[:, None], -normals, normals)
        for i, key in enumerate(pend_keys):
            out[key] = (normals[i], np.asarray(anchors[i])) if ok[i] else None
        return out

    # -- iteration and bookkeeping ------------------------------------------

    def iter_leaves(self) -> Iterator[tuple[VoxelKey, OctreeNode]]:
        """All leaves in deterministic (sorted-key) order."""

        def recurse(key: VoxelKey, node: OctreeNode):
            if node.is_leaf:
                yield key, node
                return
            for oct_idx in range(8):
                child = node.children[oct_idx]
                if child is not None:
                    ck = key.child(oct_idx & 1, (oct_idx >> 1) & 1, (oct_idx >> 2) & 1)
                    yield from recurse(ck, child)

        for root in sorted(self.table.keys()):
            yield from recurse(root, self.table[root])

    def gaussian_count(self) -> int:
        return sum(len(node.gaussians) for _, node in self.iter_leaves())

    # -- persistence ---------------------------------------------------------

    _MAGIC = b"LSMAP001"

    def save(self, path) -> None:
        """Binary snapshot: per-record key as i64x3 + u32 level, fields as f32."""
        records = [(k, g) for k, node in self.iter_leaves() for g in node.gaussians]
        sh_k = records[0][1].sh.shape[0] if records else 1
        with open(path, "wb") as f:
            f.write(self._MAGIC)
            f.write(struct.pack("<IdII Q", 1, self.root_len, self.max_level, sh_k, len(records)))
            for k, g in records:
                f.write(struct.pack("<qqqI", k.ix, k.iy, k.iz, k.level))
                payload = np.concatenate(
                    [g.mean_w, g.rot.reshape(9), g.scale, [g.opacity], g.sh[:sh_k].reshape(-1)]
                ).astype("<f4")
                f.write(payload.tobytes())

    @classmethod
    def load(cls, path) -> "HashOctree":
        with open(path, "rb") as f:
            magic = f.read(8)
            if magic != cls._MAGIC:
                raise ValueError("not a map snapshot")
            version, root_len, max_level, sh_k, n = struct.unpack("<IdII Q", f.read(struct.calcsize("<IdII Q")))
            if version != 1:
                raise ValueError(f"unsupported snapshot version {version}")
            m = cls(root_len, max_level)
            floats = 3 + 9 + 3 + 1 + 3 * sh_k
            for _ in range(n):
                ix, iy, iz, level = struct.unpack("<qqqI", f.read(28))
                vals = np.frombuffer(f.read(4 * floats), dtype="<f4").astype(float)
                g = Gaussian3D(
                    mean_w=vals[0:3],
                    rot=vals[3:12].reshape(3, 3),
                    scale=vals[12:15],
                    opacity=float(vals[15]),
                    sh=vals[16:].reshape(sh_k, 3),
                    level=level,
                )
                m.ensure_leaf(VoxelKey(ix, iy, iz, level)).gaussians.append(g)
        return m

    def export_ply(self, path) -> None:
        """ASCII PLY of Gaussian means and view-independent colors."""
        from .sh import SH_C0

        records = [g for _, node in self.iter_leaves() for g in node.gaussians]
        with open(path, "w") as f:
            f.write("ply\nformat ascii 1.0\n")
            f.write(f"element vertex {len(records)}\n")
            f.write("property float x\nproperty float y\nproperty float z\n")
            f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
            f.write("end_header\n")
            for g in records:
                rgb = np.clip(0.5 + SH_C0 * g.sh[0], 0.0, 1.0)
                r, gn, b = (np.round(rgb * 255).astype(int)).tolist()
                f.write(f"{g.mean_w[0]:.6f} {g.mean_w[1]:.6f} {g.mean_w[2]:.6f} {r} {gn} {b}\n")
