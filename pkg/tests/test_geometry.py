import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scatseg.errors import AssignmentError, EmptyCloudError, NeighborError, ShapeError
from scatseg.geometry import (
    PointCloud,
    SplitAssignment,
    block_sample,
    bounding_box,
    knn,
    octant_split,
    random_split,
    reassemble,
    sample_blocks,
    split_features,
    z_half_split,
)
from scatseg.numcore import Tape, Tensor, mul, sum_all

clouds = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)),
                elements=st.floats(-10, 10, allow_nan=False, width=32))


def cloud(n, seed=0, c=3):
    return PointCloud(np.random.default_rng(seed).uniform(-1, 2, size=(n, c)))


# ---------------------------------------------------------------- PointCloud

def test_pointcloud_validation():
    with pytest.raises(ShapeError):
        PointCloud(np.zeros((3, 2)))
    with pytest.raises(EmptyCloudError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ShapeError):
        PointCloud(np.zeros((3, 3)), labels=[0, 1])
    with pytest.raises(ShapeError):
        PointCloud(np.zeros((2, 3)), labels=[0, -1])


# ---------------------------------------------------------------- bounding box

def test_bbox_single_point():
    box = bounding_box(PointCloud([[1.0, 2.0, 3.0]]))
    assert box.min.tolist() == [1, 2, 3] and box.max.tolist() == [1, 2, 3]


def test_bbox_unit_cube_corners():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    box = bounding_box(PointCloud(corners))
    assert box.min.tolist() == [0, 0, 0] and box.max.tolist() == [1, 1, 1]


def test_bbox_matches_linear_scan():
    pts = cloud(100, 7).points
    lo, hi = [np.inf] * 3, [-np.inf] * 3
    for p in pts:
        for a in range(3):
            lo[a], hi[a] = min(lo[a], p[a]), max(hi[a], p[a])
    box = bounding_box(PointCloud(pts))
    assert box.min.tolist() == lo and box.max.tolist() == hi


def test_bbox_empty():
    with pytest.raises(EmptyCloudError):
        bounding_box(np.zeros((0, 3)))


# ---------------------------------------------------------------- splits

def test_octant_centers_one_each():
    centers = np.array([[x, y, z] for z in (0.25, 0.75) for y in (0.25, 0.75) for x in (0.25, 0.75)])
    pts = np.vstack([centers, [[0, 0, 0], [1, 1, 1]]])  # corners pin the box to the unit cube
    asg = octant_split(pts)
    for g in range(8):
        assert g in asg.groups[g]
    assert asg.group_of_point[:8].tolist() == list(range(8))


def test_octant_degenerate_all_in_group_7():
    asg = octant_split(np.ones((5, 3)))
    assert asg.sizes == [0] * 7 + [5]


def test_octant_matches_box_containment_oracle():
    pts = cloud(500, 3).points
    lo, hi = pts.min(0), pts.max(0)
    mid = (lo + hi) / 2
    asg = octant_split(pts)
    for g in range(8):
        bits = [(g >> a) & 1 for a in range(3)]
        box_lo = np.where(bits, mid, lo)
        box_hi = np.where(bits, hi, mid)
        inside = [i for i, p in enumerate(pts)
                  if all((box_lo[a] <= p[a] <= box_hi[a]) if bits[a] else (box_lo[a] <= p[a] < box_hi[a])
                         for a in range(3))]
        assert asg.groups[g].tolist() == inside


def test_zhalf_examples():
    asg = z_half_split(np.array([[0, 0, 0.0], [0, 0, 1.0]]))
    assert [g.tolist() for g in asg.groups] == [[0], [1]]
    assert z_half_split(np.full((4, 3), 2.0)).sizes == [0, 4]


def test_zhalf_matches_threshold_oracle():
    pts = cloud(300, 9).points
    thr = (pts[:, 2].min() + pts[:, 2].max()) / 2
    asg = z_half_split(pts)
    assert asg.groups[1].tolist() == [i for i in range(300) if pts[i, 2] >= thr]


@settings(max_examples=80, deadline=None)
@given(clouds)
def test_splits_partition(pts):
    for asg in (octant_split(pts), z_half_split(pts), random_split(len(pts), 8, np.random.default_rng(0))):
        allidx = np.concatenate(asg.groups)
        assert sorted(allidx.tolist()) == list(range(len(pts)))
        assert sum(asg.sizes) == len(pts)
        for g in asg.groups:
            assert np.all(np.diff(g) > 0)


# coordinates on a 1/64 grid, so dyadic shifts and scales stay exact
grid_clouds = arrays(np.int64, st.tuples(st.integers(1, 40), st.just(3)),
                     elements=st.integers(-640, 640)).map(lambda a: a / 64.0)


@settings(max_examples=60, deadline=None)
@given(grid_clouds, st.floats(-5, 5), st.floats(0.5, 4.0))
def test_octant_invariant_to_translation_and_scale(pts, shift, s):
    s = 2.0 ** round(np.log2(s))
    shift = round(shift * 4) / 4
    a = octant_split(pts).group_of_point
    b = octant_split(pts * s + shift).group_of_point
    assert np.array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(clouds, st.integers(1, 5))
def test_reassemble_inverts_split(pts, d):
    feats = np.random.default_rng(0).normal(size=(len(pts), d))
    for asg in (octant_split(pts), z_half_split(pts)):
        assert np.array_equal(reassemble(split_features(feats, asg), asg), feats)


def test_reassemble_hand_permutation():
    asg = SplitAssignment.from_labels([1, 0, 1], 2)
    out = reassemble([np.array([[10.0]]), np.array([[20.0], [30.0]])], asg)
    assert out[:, 0].tolist() == [20.0, 10.0, 30.0]


def test_reassemble_empty_groups_and_mismatch():
    asg = SplitAssignment.from_labels([2, 2, 0], 3)
    out = reassemble([np.ones((1, 2)), None, np.zeros((2, 2))], asg)
    assert out.shape == (3, 2)
    with pytest.raises(AssignmentError):
        reassemble([np.ones((2, 2)), None, np.zeros((2, 2))], asg)
    with pytest.raises(AssignmentError):
        reassemble([np.ones((1, 2))], asg)


def test_reassemble_tensor_gradient_routes_back():
    pts = cloud(20, 1).points
    asg = octant_split(pts)
    x = Tensor(np.random.default_rng(2).normal(size=(20, 3)), requires_grad=True)
    w = np.random.default_rng(3).normal(size=(20, 3))
    with Tape() as tape:
        tape.backward(sum_all(mul(reassemble(split_features(x, asg), asg), w)))
    assert np.array_equal(x.grad, w)


# ---------------------------------------------------------------- knn

def test_knn_collinear():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    assert knn(pts, 1)[:, 0].tolist() == [1, 0, 1]


def test_knn_all_others():
    nbr = knn(cloud(6), 5)
    for i, row in enumerate(nbr):
        assert sorted(row.tolist()) == [j for j in range(6) if j != i]


def test_knn_duplicates_tie_to_lower_index():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0]])
    assert knn(pts, 2)[0].tolist() == [1, 2]
    assert knn(pts, 1)[3].tolist() == [1]


def test_knn_k_too_large():
    with pytest.raises(NeighborError):
        knn(cloud(5), 5)


def test_knn_storage_order_independent():
    # distinct distances: result commutes with a permutation of storage order
    pts = cloud(50, 4).points
    perm = np.random.default_rng(5).permutation(50)
    inv = np.argsort(perm)
    a = knn(pts, 6)
    b = knn(pts[perm], 6)
    assert np.array_equal(perm[b], a[perm])
    assert np.array_equal(inv[a][perm], b)


# ---------------------------------------------------------------- blocks

def scene(n=3000, seed=0, extent=2.5, label=3):
    rng = np.random.default_rng(seed)
    pts = np.c_[rng.uniform(0, extent, size=(n, 2)), rng.uniform(0, 1, size=n)]
    return PointCloud(pts, np.full(n, label))


def test_block_defaults():
    import inspect
    sig = inspect.signature(block_sample)
    assert sig.parameters["n_points"].default == 2048
    assert sig.parameters["min_class_points"].default == 200


def test_single_window_single_block():
    blocks = block_sample(scene(500, extent=0.9), window=1.0, n_points=2048, class_id=3)
    assert len(blocks) == 1 and blocks[0].n == 2048


def test_no_class_points_empty():
    assert block_sample(scene(500), class_id=5) == []


def test_blocks_grid_and_sampling_rule():
    sc = scene(4000, extent=2.5)
    blocks = sample_blocks(sc, 1.0, 300, seed=1)
    assert len(blocks) == 9
    for b in blocks:
        assert b.n == 300
        cell = np.floor((b.xyz[:, :2] - sc.xyz[:, :2].min(0)) / 1.0)
        assert (cell == cell[0]).all()
    big = sample_blocks(sc, 1.0, 100, seed=1)
    for b in big:
        assert len(np.unique(b.points, axis=0)) == 100  # no replacement when the cell has enough points


def test_blocks_deterministic():
    a = sample_blocks(scene(), 1.0, 256, seed=4)
    b = sample_blocks(scene(), 1.0, 256, seed=4)
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a, b))
