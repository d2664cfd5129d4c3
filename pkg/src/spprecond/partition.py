"""Skeleton-set decomposition of the periodic grid and the separator tree.

Leaf boxes of width ``b`` have corners on the lattice ``b Z^d``. A grid point
whose coordinates are multiples of ``b`` along the axes ``A`` (and only those)
lies on an interface with normal axes ``A``; grouping such points by leaf box
yields cells (``A`` empty), faces, edges and vertices (``A`` = all axes).
Every set of a given class is a translate of one reference geometry, which
is what lets the sparsifier fit a single stencil per class.
"""

from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np

from .errors import IndivisibleGrid


def set_kind(d, m):
    if m == 0:
        return "cell"
    if m == d:
        return "vertex"
    if m == d - 1:
        return "edge"
    return "face"


@dataclass
class SkeletonSet:
    kind: str
    orientation: tuple
    anchor: tuple
    points: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray

    @property
    def block_columns(self):
        """Columns of this set's row block in the order ``(points, beta)``."""
        return np.concatenate([self.points, self.beta])


@dataclass
class SetClass:
    """All translates of one (kind, orientation) geometry.

    ``points`` and ``beta`` hold global flat indices, one row per set; the
    ``*_rel`` arrays are offsets from the anchor in canonical
    (lexicographic) order.
    """

    key: tuple
    kind: str
    points_rel: np.ndarray
    beta_rel: np.ndarray
    anchors: np.ndarray
    points: np.ndarray
    beta: np.ndarray
    set_ids: np.ndarray

    @property
    def gamma_size(self):
        return self.points_rel.shape[0] + self.beta_rel.shape[0]


@dataclass
class Partition:
    grid: object
    classes: dict
    owner: np.ndarray
    sets: list = field(repr=False)

    @property
    def boxes(self):
        """Corners of the leaf boxes in lexicographic order."""
        return next(iter(self.classes.values())).anchors


def _class_geometry(d, b, normal):
    pts_axes = [[0] if i in normal else list(range(1, b)) for i in range(d)]
    gam_axes = [[-1, 0, 1] if i in normal else list(range(0, b + 1)) for i in range(d)]
    pts = np.array(list(product(*pts_axes)), dtype=np.intp).reshape(-1, d)
    gam = np.array(list(product(*gam_axes)), dtype=np.intp).reshape(-1, d)
    inside = {tuple(p) for p in pts}
    beta = np.array([g for g in gam if tuple(g) not in inside], dtype=np.intp).reshape(-1, d)
    # itertools.product already enumerates in lexicographic order
    return pts, beta


def build_partition(grid):
    n, b, d = grid.n, grid.b, grid.d
    if n % b:
        raise IndivisibleGrid(f"n={n} is not a multiple of b={b}")
    m = n // b
    if b < 2 or m < 2:
        # smaller boxes leave cells empty; a single box makes gamma wrap onto itself
        raise ValueError(f"need b >= 2 and at least two boxes per axis, got n={n} b={b}")
    anchors = np.array(list(product(range(m), repeat=d)), dtype=np.intp).reshape(-1, d) * b
    owner = np.full(grid.N, -1, dtype=np.intp)
    classes = {}
    sets = []
    next_id = 0
    for size in range(d + 1):
        for normal in combinations(range(d), size):
            pts_rel, beta_rel = _class_geometry(d, b, normal)
            pts = grid.flat(anchors[:, None, :] + pts_rel[None, :, :])
            beta = grid.flat(anchors[:, None, :] + beta_rel[None, :, :])
            ids = np.arange(next_id, next_id + len(anchors))
            next_id += len(anchors)
            kind = set_kind(d, size)
            cls = SetClass((kind, normal), kind, pts_rel, beta_rel, anchors, pts, beta, ids)
            classes[cls.key] = cls
            owner[pts] = ids[:, None]
            for a, p, bt in zip(anchors, pts, beta):
                gamma = np.sort(np.concatenate([p, bt]))
                sets.append(SkeletonSet(kind, normal, tuple(int(x) for x in a), p, gamma, bt))
    if np.any(owner < 0):
        raise AssertionError("skeleton sets do not cover the grid")
    return Partition(grid, classes, owner, sets)


def dilate(grid, points):
    """Torus l-infinity dilation by one grid step, sorted flat indices."""
    coords = grid.coords(np.atleast_1d(points))
    shifts = np.array(list(product((-1, 0, 1), repeat=grid.d)), dtype=np.intp)
    return np.unique(grid.flat(coords[:, None, :] + shifts[None, :, :]).ravel())


def neighborhood(partition, j):
    """``mu(j)``: the dilation of the skeleton set owning point ``j``."""
    return partition.sets[partition.owner[j]].gamma


# --- separator tree ---------------------------------------------------------


@dataclass
class _Interval:
    lo: int
    hi: int
    depth: int
    parent: int


def _interval_tree(m):
    """Recursive bisection of leaf-box indices ``[0, m)``.

    Returns the node list and, per interface index ``t`` (interface at
    coordinate ``t*b``), the depth at which it splits its interval; interface
    0 is the torus seam and gets depth -1.
    """
    nodes = [_Interval(0, m, 0, -1)]
    split_depth = np.full(m, -1, dtype=np.intp)
    stack = [0]
    while stack:
        i = stack.pop()
        node = nodes[i]
        if node.hi - node.lo < 2:
            continue
        mid = (node.lo + node.hi) // 2
        split_depth[mid] = node.depth
        for lo, hi in ((node.lo, mid), (mid, node.hi)):
            nodes.append(_Interval(lo, hi, node.depth + 1, i))
            stack.append(len(nodes) - 1)
    return nodes, split_depth


@dataclass
class SeparatorTree:
    """Index groups in elimination order with parent links.

    ``groups[i]`` is eliminated before ``groups[j]`` whenever ``i < j``, and every
    group precedes its parent (the seam group is last, with parent -1).
    """

    groups: list
    parent: np.ndarray
    depth: list
    keys: list

    @property
    def order(self):
        return np.concatenate(self.groups)

    def children(self):
        kids = [[] for _ in self.groups]
        for i, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(i)
        return kids

    def group_of(self, N):
        out = np.empty(N, dtype=np.intp)
        for i, g in enumerate(self.groups):
            out[g] = i
        return out

    def ancestors(self, i):
        out = []
        p = self.parent[i]
        while p >= 0:
            out.append(int(p))
            p = self.parent[p]
        return out


def separator_tree(partition):
    """Nested-dissection groups for the periodic grid.

    Cells come first (one group per leaf box), then interface points grouped by
    the bisection depth at which they become interior to a merged box, from
    the deepest level up; points on the coordinate planes through the origin
    (the torus seam) form the final group. When ``n/b`` is not a power of two
    the bisection is as even as possible.
    """
    grid = partition.grid
    b, d = grid.b, grid.d
    m = grid.n // b
    nodes, split_depth = _interval_tree(m)
    leaf_level = 1 + max([nd.depth for nd in nodes if nd.hi - nd.lo >= 2], default=-1)

    # node_at[k, t]: deepest interval of depth <= k containing leaf box t
    node_at = np.zeros((leaf_level + 1, m), dtype=np.intp)
    for i in sorted(range(len(nodes)), key=lambda i: nodes[i].depth):
        nd = nodes[i]
        node_at[nd.depth:, nd.lo:nd.hi] = i

    coords = grid.coords(np.arange(grid.N))
    box = coords // b
    on_iface = coords % b == 0
    axis_depth = np.where(on_iface, split_depth[box], leaf_level)
    axis_depth[on_iface & (coords == 0)] = -1
    depth = axis_depth.min(axis=1)

    key_nodes = np.full((grid.N, d), -1, dtype=np.intp)
    for k in range(leaf_level + 1):
        sel = depth == k
        key_nodes[sel] = node_at[k][box[sel]]
    rows = np.column_stack([depth, key_nodes])
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    keys = [(int(r[0]), tuple(int(x) for x in r[1:]) if r[0] >= 0 else ()) for r in uniq]
    members = np.argsort(inverse, kind="stable")
    splits = np.cumsum(np.bincount(inverse, minlength=len(keys)))[:-1]
    buckets = dict(zip(keys, np.split(members, splits)))

    def parent_key(key):
        k, ids = key
        while k > 0:
            k -= 1
            ids = tuple(int(node_at[k][nodes[i].lo]) for i in ids)
            if (k, ids) in buckets:
                return (k, ids)
        return (-1, ())

    ordered = sorted(buckets, key=lambda key: (-key[0], key[1]))
    pos = {key: i for i, key in enumerate(ordered)}
    parent = np.array([pos[parent_key(key)] if key[0] >= 0 else -1 for key in ordered], dtype=np.intp)
    groups = [np.sort(buckets[key]).astype(np.intp) for key in ordered]
    return SeparatorTree(groups, parent, [key[0] for key in ordered], ordered)
