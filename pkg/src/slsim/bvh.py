"""Bounding volume hierarchy over triangle soups.

Median split on the longest centroid axis with a stable sort, so the tree
layout is a pure function of the input geometry. Leaves keep at most
`leaf_size` triangles; sibling nodes are stored adjacently (right = left + 1)
which is what the traversal kernels assume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 8


@dataclass(frozen=True)
class BVH:
    """Flattened tree arrays shared by all traversal kernels."""

    node_min: np.ndarray    # (N, 3) float64
    node_max: np.ndarray    # (N, 3) float64
    node_left: np.ndarray   # (N,) int64, left child index (inner nodes)
    node_first: np.ndarray  # (N,) int64, first slot in `order` (leaves)
    node_count: np.ndarray  # (N,) int64, triangle count (0 for inner nodes)
    order: np.ndarray       # (T,) int64, triangle indices grouped by leaf

    @property
    def node_total(self) -> int:
        return self.node_min.shape[0]


def build_bvh(v0: np.ndarray, v1: np.ndarray, v2: np.ndarray,
              leaf_size: int = LEAF_SIZE) -> BVH:
    """Build the hierarchy from per-triangle vertex arrays, each (T, 3)."""
    v0 = np.ascontiguousarray(v0, dtype=np.float64)
    v1 = np.ascontiguousarray(v1, dtype=np.float64)
    v2 = np.ascontiguousarray(v2, dtype=np.float64)
    count = v0.shape[0]
    if count == 0:
        raise ValueError("cannot build a hierarchy over zero triangles")
    tri_min = np.minimum(np.minimum(v0, v1), v2)
    tri_max = np.maximum(np.maximum(v0, v1), v2)
    centroids = (tri_min + tri_max) * 0.5

    order = np.arange(count, dtype=np.int64)
    node_min: list[np.ndarray] = []
    node_max: list[np.ndarray] = []
    node_left: list[int] = []
    node_first: list[int] = []
    node_count: list[int] = []

    def new_node() -> int:
        node_min.append(np.zeros(3))
        node_max.append(np.zeros(3))
        node_left.append(-1)
        node_first.append(-1)
        node_count.append(0)
        return len(node_left) - 1

    root = new_node()
    todo = [(root, 0, count)]
    while todo:
        node, lo, hi = todo.pop()
        seg = order[lo:hi]
        node_min[node] = tri_min[seg].min(axis=0)
        node_max[node] = tri_max[seg].max(axis=0)
        n = hi - lo
        if n <= leaf_size:
            node_first[node] = lo
            node_count[node] = n
            continue
        cmin = centroids[seg].min(axis=0)
        cmax = centroids[seg].max(axis=0)
        axis = int(np.argmax(cmax - cmin))
        perm = np.argsort(centroids[seg, axis], kind="stable")
        order[lo:hi] = seg[perm]
        mid = lo + n // 2
        left = new_node()
        right = new_node()
        assert right == left + 1
        node_left[node] = left
        todo.append((right, mid, hi))
        todo.append((left, lo, mid))

    return BVH(
        node_min=np.ascontiguousarray(node_min, dtype=np.float64),
        node_max=np.ascontiguousarray(node_max, dtype=np.float64),
        node_left=np.asarray(node_left, dtype=np.int64),
        node_first=np.asarray(node_first, dtype=np.int64),
        node_count=np.asarray(node_count, dtype=np.int64),
        order=order,
    )
