"""Point-cloud spatial operations: bounding boxes, stratified splits, kNN, blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import AssignmentError, EmptyCloudError, NeighborError, ShapeError
from .numcore import Tensor, concat_rows, gather_rows


@dataclass
class PointCloud:
    """N x C points (xyz first, then color/extra channels) with optional labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] < 3:
            raise ShapeError(f"points must be N x C with C >= 3, got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise EmptyCloudError("point cloud has no points")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.points.shape[0],):
                raise ShapeError(f"labels shape {self.labels.shape} does not match {self.points.shape[0]} points")
            if (self.labels < 0).any():
                raise ShapeError("labels must be non-negative")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def xyz(self):
        return self.points[:, :3]

    def subset(self, idx):
        lab = None if self.labels is None else self.labels[idx]
        return PointCloud(self.points[idx], lab)

    def permuted(self, perm):
        return self.subset(np.asarray(perm))


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    @property
    def mid(self):
        return (self.min + self.max) / 2.0


@dataclass
class SplitAssignment:
    """Partition of point indices into G groups, each in increasing index order."""

    group_of_point: np.ndarray
    groups: list = field(default_factory=list)

    @classmethod
    def from_labels(cls, group_of_point, n_groups):
        gop = np.asarray(group_of_point, dtype=np.int64)
        groups = [np.flatnonzero(gop == g) for g in range(n_groups)]
        return cls(gop, groups)

    @property
    def n_groups(self):
        return len(self.groups)

    @property
    def sizes(self):
        return [len(g) for g in self.groups]

    def non_empty(self):
        return [g for g in range(self.n_groups) if len(self.groups[g])]


def _xyz(pc):
    xyz = pc.xyz if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)[:, :3]
    if xyz.shape[0] == 0:
        raise EmptyCloudError("point cloud has no points")
    return xyz


def bounding_box(pc) -> Aabb:
    xyz = _xyz(pc)
    return Aabb(xyz.min(axis=0), xyz.max(axis=0))


def octant_split(pc) -> SplitAssignment:
    """Eight groups by midpoint of the tight box; index = x_bit + 2*y_bit + 4*z_bit.

    A coordinate equal to the midpoint goes to the upper half.
    """
    xyz = _xyz(pc)
    upper = xyz >= bounding_box(xyz).mid
    gid = upper[:, 0] + 2 * upper[:, 1] + 4 * upper[:, 2]
    return SplitAssignment.from_labels(gid, 8)


def z_half_split(pc) -> SplitAssignment:
    """Group 0 below the z midpoint, group 1 at or above it."""
    xyz = _xyz(pc)
    gid = (xyz[:, 2] >= bounding_box(xyz).mid[2]).astype(np.int64)
    return SplitAssignment.from_labels(gid, 2)


def random_split(n, n_groups, rng) -> SplitAssignment:
    """Uniform random group per point, ignoring location."""
    return SplitAssignment.from_labels(rng.integers(0, n_groups, size=n), n_groups)


def reassemble(group_feats, asg: SplitAssignment):
    """Scatter per-group rows back into original point order.

    ``group_feats[g]`` holds the rows of group ``g`` (``None`` or a 0-row array
    for empty groups). Works on numpy arrays and on Tensors; with Tensors the
    result stays on the tape.
    """
    if len(group_feats) != asg.n_groups:
        raise AssignmentError(f"{len(group_feats)} feature blocks for {asg.n_groups} groups")
    for g, (f, idx) in enumerate(zip(group_feats, asg.groups)):
        rows = 0 if f is None else f.shape[0]
        if rows != len(idx):
            raise AssignmentError(f"group {g} has {rows} rows but {len(idx)} points")
    live = [g for g in range(asg.n_groups) if len(asg.groups[g])]
    order = np.concatenate([asg.groups[g] for g in live])
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    if any(isinstance(group_feats[g], Tensor) for g in live):
        stacked = concat_rows([group_feats[g] for g in live]) if len(live) > 1 else group_feats[live[0]]
        if np.array_equal(inverse, np.arange(inverse.size)):
            return stacked
        return gather_rows(stacked, inverse)
    stacked = np.concatenate([np.asarray(group_feats[g]) for g in live], axis=0)
    return stacked[inverse]


def split_features(feats, asg: SplitAssignment):
    """Per-group row selections of ``feats`` (``None`` for empty groups)."""
    out = []
    for idx in asg.groups:
        if not len(idx):
            out.append(None)
        elif isinstance(feats, Tensor):
            out.append(gather_rows(feats, idx))
        else:
            out.append(np.asarray(feats)[idx])
    return out


def knn(pc, k=20):
    """N x k indices of the k nearest other points (xyz distance, ties to lower index)."""
    xyz = _xyz(pc)
    n = xyz.shape[0]
    if k < 1 or k >= n:
        raise NeighborError(f"k={k} requires 1 <= k < N={n}")
    return kernels.knn_indices(xyz, k)


def sample_blocks(scene: PointCloud, window=1.0, n_points=2048, seed=0):
    """All non-empty xy grid cells, each resampled to exactly ``n_points``.

    The grid starts at the scene's min corner. Cells with fewer points than
    ``n_points`` are sampled with replacement, others without.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    xyz = scene.xyz
    cell = np.floor((xyz[:, :2] - xyz[:, :2].min(axis=0)) / window).astype(np.int64)
    keys = cell[:, 0] * (cell[:, 1].max() + 1) + cell[:, 1]
    order = np.argsort(keys, kind="stable")
    uniq, starts = np.unique(keys[order], return_index=True)
    bounds = list(starts) + [order.size]
    blocks = []
    for b in range(uniq.size):
        members = order[bounds[b]:bounds[b + 1]]
        pick = rng.choice(members, size=n_points, replace=members.size < n_points)
        blocks.append(scene.subset(np.sort(pick)))
    return blocks


def block_sample(scene: PointCloud, window=1.0, n_points=2048, class_id=None,
                 min_class_points=200, seed=0):
    """Sampled blocks holding more than ``min_class_points`` points of ``class_id``."""
    blocks = sample_blocks(scene, window, n_points, seed)
    if class_id is None:
        return blocks
    return [b for b in blocks if int((b.labels == class_id).sum()) > min_class_points]
