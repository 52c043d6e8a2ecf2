"""Sliding window of Gaussians: spatial hash, contiguous host arena, and a
mirrored (emulated) device arena with metered transfers.

Window slots are leaf-level voxel keys, one Gaussian per slot.  Maintenance is
the incremental protocol: diff the live key set against the current FoV, copy
parameters of departing voxels back to the global map, compact by swapping
with the rear, append new voxels at the rear, then upload dirty rows to the
device mirror.  All orders are deterministic (sorted keys, ascending delete
scan) so an incremental window is bit-identical to one rebuilt from scratch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import WindowFull
from .geometry import Gaussian3D
from .raster import GaussianArrays
from .voxmap import HashOctree, VoxelKey, voxel_center


@dataclass
class FrameDiff:
    overlap: list
    delete: list
    add: list


@dataclass
class MaintenanceReport:
    n_live: int = 0
    added: int = 0
    removed: int = 0
    moved: int = 0
    dropped: int = 0
    bytes_up: int = 0
    bytes_down: int = 0
    t_maintain_ms: float = 0.0


class _Arena:
    """f32 structure-of-arrays parameter store with per-slot dirty marks."""

    def __init__(self, capacity: int, sh_coeffs: int):
        self.capacity = capacity
        self.sh_coeffs = sh_coeffs
        self.means = np.zeros((capacity, 3), dtype=np.float32)
        self.rots = np.zeros((capacity, 9), dtype=np.float32)
        self.scales = np.zeros((capacity, 3), dtype=np.float32)
        self.opacities = np.zeros(capacity, dtype=np.float32)
        self.shs = np.zeros((capacity, sh_coeffs, 3), dtype=np.float32)
        self.dirty: set[int] = set()

    @property
    def row_bytes(self) -> int:
        return 4 * (3 + 9 + 3 + 1 + 3 * self.sh_coeffs)

    def groups(self):
        return (self.means, self.rots, self.scales, self.opacities, self.shs)

    def set_row(self, slot: int, g: Gaussian3D) -> None:
        self.means[slot] = g.mean_w
        self.rots[slot] = g.rot.reshape(9)
        self.scales[slot] = g.scale
        self.opacities[slot] = g.opacity
        self.shs[slot, : g.sh.shape[0]] = g.sh[: self.sh_coeffs]
        self.dirty.add(slot)

    def get_row(self, slot: int, level: int) -> Gaussian3D:
        return Gaussian3D(
            mean_w=self.means[slot].astype(np.float64),
            rot=self.rots[slot].astype(np.float64).reshape(3, 3),
            scale=self.scales[slot].astype(np.float64),
            opacity=float(self.opacities[slot]),
            sh=self.shs[slot].astype(np.float64),
            level=level,
        )

    def move_row(self, dst: int, src: int) -> None:
        for arr in self.groups():
            arr[dst] = arr[src]
        self.dirty.add(dst)


class GaussianWindow:
    def __init__(self, capacity: int = 100_000, sh_coeffs: int = 1):
        self.capacity = capacity
        self.n = 0
        self.sht: dict[VoxelKey, int] = {}
        self.key_of_slot: list[Optional[VoxelKey]] = [None] * capacity
        self.host = _Arena(capacity, sh_coeffs)
        self.device = _Arena(capacity, sh_coeffs)
        self.bytes_uploaded = 0
        self.bytes_downloaded = 0
        self._delete_marks: list[int] = []

    # -- queries -------------------------------------------------------------

    def live_keys(self) -> set[VoxelKey]:
        return set(self.sht.keys())

    def gaussian_at(self, key: VoxelKey, device: bool = False) -> Gaussian3D:
        slot = self.sht[key]
        arena = self.device if device else self.host
        return arena.get_row(slot, key.level)

    def as_gaussian_arrays(self) -> GaussianArrays:
        """f64 view of the device arena's live prefix (the render source)."""
        n = self.n
        return GaussianArrays(
            self.device.means[:n].astype(np.float64),
            self.device.rots[:n].astype(np.float64).reshape(n, 3, 3),
            self.device.scales[:n].astype(np.float64),
            self.device.opacities[:n].astype(np.float64),
            self.device.shs[:n].astype(np.float64),
        )

    def audit(self) -> None:
        """O(n) consistency check: prefix liveness and SHT bijectivity."""
        assert len(self.sht) == self.n, "SHT size != live count"
        seen = set()
        for key, slot in self.sht.items():
            assert 0 <= slot < self.n, f"slot {slot} outside live prefix"
            assert slot not in seen, f"slot {slot} mapped twice"
            seen.add(slot)
            assert self.key_of_slot[slot] == key, "back-reference mismatch"
        for slot in range(self.n):
            assert self.key_of_slot[slot] is not None

    # -- protocol steps --------------------------------------------------------

    def diff(self, fov_keys: Iterable[VoxelKey]) -> FrameDiff:
        fov = set(fov_keys)
        live = self.live_keys()
        return FrameDiff(
            overlap=sorted(live & fov),
            delete=sorted(live - fov),
            add=sorted(fov - live),
        )

    def writeback_deleted(self, vmap: HashOctree, diff: FrameDiff) -> None:
        self._delete_marks = []
        for key in diff.delete:
            slot = self.sht[key]
            vmap.write_back(key, [self.host.get_row(slot, key.level)])
            self._delete_marks.append((slot, key))

    def compact(self) -> int:
        """Swap each deleted slot with the rearmost live slot; returns moves.

        Deleted slots are processed in ascending order; the rear pointer
        skips over slots that are themselves deleted.
        """
        if not self._delete_marks:
            return 0
        marks = sorted(self._delete_marks)
        dele_set = {slot for slot, _ in marks}
        for slot, key in marks:
            del self.sht[key]
            self.key_of_slot[slot] = None
        rear = self.n - 1
        moved = 0
        for d, _ in marks:
            while rear in dele_set and rear > d:
                rear -= 1
            if rear <= d:
                break
            src_key = self.key_of_slot[rear]
            self.host.move_row(d, rear)
            self.sht[src_key] = d
            self.key_of_slot[d] = src_key
            self.key_of_slot[rear] = None
            rear -= 1
            moved += 1
        self.n -= len(marks)
        for slot in range(self.n, min(self.n + len(marks), self.capacity)):
            self.key_of_slot[slot] = None
        self._delete_marks = []
        return moved

    def append(self, vmap: HashOctree, add: list, init_fn: Optional[Callable] = None) -> int:
        """Pull map Gaussians (or synthesize brand-new ones) at the rear.

        Raises WindowFull before mutating anything if the batch cannot fit.
        """
        rows: list[tuple[VoxelKey, Gaussian3D]] = []
        for key in add:
            leaf = vmap.get_leaf(key)
            if leaf is not None and leaf.gaussians:
                gs = leaf.gaussians
            elif init_fn is not None:
                gs = init_fn(key) or []
                if gs:
                    node = vmap.ensure_leaf(key)
                    node.gaussians.extend(gs)
            else:
                gs = []
            if len(gs) > 1:
                raise ValueError("window requires leaf_capacity == 1")
            for g in gs:
                rows.append((key, g))
        if self.n + len(rows) > self.capacity:
            raise WindowFull(f"{self.n} + {len(rows)} > {self.capacity}")
        for key, g in rows:
            slot = self.n
            self.host.set_row(slot, g)
            self.sht[key] = slot
            self.key_of_slot[slot] = key
            self.n += 1
        return len(rows)

    def sync_to_device(self) -> int:
        moved = sorted(s for s in self.host.dirty if s < self.n)
        nbytes = len(moved) * self.host.row_bytes
        for slot in moved:
            for src, dst in zip(self.host.groups(), self.device.groups()):
                dst[slot] = src[slot]
        self.host.dirty.clear()
        self.bytes_uploaded += nbytes
        return nbytes

    def sync_to_host(self) -> int:
        moved = sorted(s for s in self.device.dirty if s < self.n)
        nbytes = len(moved) * self.device.row_bytes
        for slot in moved:
            for src, dst in zip(self.device.groups(), self.host.groups()):
                dst[slot] = src[slot]
        self.device.dirty.clear()
        self.bytes_downloaded += nbytes
        return nbytes

    def mark_device_dirty_live(self) -> None:
        """Record a device-side (optimizer) mutation of the live range."""
        self.device.dirty.update(range(self.n))

    # -- composed maintenance ---------------------------------------------------

    def maintain(
        self,
        vmap: HashOctree,
        fov_keys: Iterable[VoxelKey],
        init_fn: Optional[Callable] = None,
        sensor_pos: Optional[np.ndarray] = None,
    ) -> MaintenanceReport:
        t0 = time.perf_counter()
        report = MaintenanceReport()
        report.bytes_down = self.sync_to_host()

        d = self.diff(fov_keys)
        self.writeback_deleted(vmap, d)
        report.removed = len(d.delete)
        report.moved = self.compact()

        add = d.add
        # room check uses a worst-case one-row-per-key estimate
        if self.n + len(add) > self.capacity:
            if sensor_pos is None:
                raise WindowFull("capacity exceeded and no sensor position to rank drops")
            room = self.capacity - self.n
            origin = np.asarray(sensor_pos, dtype=float)
            ranked = sorted(
                add,
                key=lambda k: (float(np.linalg.norm(voxel_center(k, vmap.root_len) - origin)), k),
            )
            report.dropped = len(add) - room
            add = sorted(ranked[:room])
        report.added = self.append(vmap, add, init_fn)

        report.bytes_up = self.sync_to_device()
        report.n_live = self.n
        report.t_maintain_ms = (time.perf_counter() - t0) * 1e3
        return report
