"""Adaptive quadtrees on a shared root square and their dual traversal."""

from dataclasses import dataclass

import numpy as np

MAX_DEPTH = 30


@dataclass(frozen=True)
class Root:
    """Square ``[cx - h, cx + h] x [cy - h, cy + h]`` shared by all trees of a scene."""

    cx: float
    cy: float
    h: float

    @classmethod
    def covering(cls, *point_sets, pad=1e-6):
        pts = np.concatenate([np.asarray(p, dtype=float).reshape(-1, 2) for p in point_sets])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        c = 0.5 * (lo + hi)
        h = 0.5 * float(np.max(hi - lo))
        h = max(h, 1e-3) * (1 + pad) + pad
        return cls(float(c[0]), float(c[1]), h)


class QuadTree:
    """Adaptive quadtree over a point set.

    Boxes are stored level by level.  Points are permuted so each box owns
    the contiguous range ``perm[start:end]``.

    Attributes
    ----------
    points : ndarray, shape (n, 2)
    perm : ndarray of int
        Point indices in box order.
    center : ndarray, shape (nb, 2)
    half : ndarray, shape (nb,)
        Box half-widths.
    radius : ndarray, shape (nb,)
        Largest distance from the box center to one of its points.
    level, parent : ndarray of int
    children : ndarray of int, shape (nb, 4)
        ``-1`` marks an absent child.
    start, end : ndarray of int
    leaf : ndarray of bool
    levels : list of ndarray
        Box indices per level.
    """

    def __init__(self, points, root, leaf_size=60, max_depth=MAX_DEPTH):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError("tree needs at least one point")
        if leaf_size < 1:
            raise ValueError("leaf_size must be positive")
        self.points = pts
        self.root = root
        self.leaf_size = leaf_size
        n = len(pts)
        # quadrant codes per level give a global box id path; build level by level
        perm = np.arange(n)
        centers = [np.array([[root.cx, root.cy]])]
        halves = [np.array([root.h])]
        starts = [np.array([0])]
        ends = [np.array([n])]
        parents = [np.array([-1])]
        quads = [np.array([-1])]
        level = 0
        while True:
            s, e = starts[-1], ends[-1]
            split = (e - s) > leaf_size
            if not split.any():
                break
            if level + 1 > max_depth:
                raise ValueError(
                    f"tree depth cap {max_depth} exceeded (duplicate or clustered points)"
                )
            c, h = centers[-1], halves[-1]
            new_c, new_h, new_s, new_e, new_p, new_q = [], [], [], [], [], []
            # boxes that split: reorder their points by quadrant
            sb = np.nonzero(split)[0]
            cnt_b = e[sb] - s[sb]
            box_of = np.repeat(sb, cnt_b)
            slots = np.concatenate([np.arange(s[b], e[b]) for b in sb])
            idx = perm[slots]
            p = pts[idx]
            q = (p[:, 0] >= c[box_of, 0]).astype(int) + 2 * (p[:, 1] >= c[box_of, 1]).astype(int)
            order = np.lexsort((q, box_of))
            perm = perm.copy()
            perm[slots] = idx[order]
            q_sorted = np.empty(n, dtype=int)
            q_sorted[slots] = q[order]
            for b in sb:
                qs = q_sorted[s[b]:e[b]]
                cnt = np.bincount(qs, minlength=4)
                off = s[b] + np.concatenate([[0], np.cumsum(cnt)])
                for k in range(4):
                    if cnt[k] == 0:
                        continue
                    dx = (k % 2) - 0.5
                    dy = (k // 2) - 0.5
                    new_c.append(c[b] + h[b] * np.array([dx, dy]))
                    new_h.append(0.5 * h[b])
                    new_s.append(off[k])
                    new_e.append(off[k + 1])
                    new_p.append(b)
                    new_q.append(k)
            centers.append(np.array(new_c))
            halves.append(np.array(new_h))
            starts.append(np.array(new_s))
            ends.append(np.array(new_e))
            parents.append(np.array(new_p))
            quads.append(np.array(new_q))
            level += 1
        # flatten with global ids
        offs = np.concatenate([[0], np.cumsum([len(x) for x in centers])])
        self.perm = perm
        self.center = np.concatenate(centers)
        self.half = np.concatenate(halves)
        self.start = np.concatenate(starts)
        self.end = np.concatenate(ends)
        self.level = np.concatenate([np.full(len(x), i) for i, x in enumerate(centers)])
        self.parent = np.concatenate(
            [np.where(p >= 0, p + offs[max(i - 1, 0)], -1) for i, p in enumerate(parents)]
        )
        self.quadrant = np.concatenate(quads)
        nb = len(self.center)
        self.children = -np.ones((nb, 4), dtype=int)
        has = self.parent >= 0
        self.children[self.parent[has], self.quadrant[has]] = np.nonzero(has)[0]
        self.leaf = np.all(self.children < 0, axis=1)
        self.levels = [np.arange(offs[i], offs[i + 1]) for i in range(len(centers))]
        # tight radii
        self.radius = np.zeros(nb)
        box_pts = self.points[self.perm]
        for lev in self.levels:
            box, slot = self._slots(lev)
            d = box_pts[slot] - self.center[box]
            np.maximum.at(self.radius, box, np.sum(d * d, axis=1))
        self.radius = np.sqrt(self.radius)
        self.leaves = np.nonzero(self.leaf)[0]
        # leaf index of every point
        self.leaf_of = np.empty(n, dtype=int)
        box, slot = self._slots(self.leaves)
        self.leaf_of[self.perm[slot]] = box

    def _slots(self, boxes):
        cnt = self.end[boxes] - self.start[boxes]
        box = np.repeat(boxes, cnt)
        slot = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt) + self.start[box]
        return box, slot

    @property
    def n_boxes(self):
        return len(self.center)

    @property
    def depth(self):
        return len(self.levels) - 1

    def box_points(self, b):
        return self.perm[self.start[b]:self.end[b]]


def build_tree(points, leaf_size=60, root=None, max_depth=MAX_DEPTH):
    """Adaptive quadtree with at most ``leaf_size`` points per leaf."""
    if root is None:
        root = Root.covering(points)
    return QuadTree(points, root, leaf_size, max_depth)


def dual_traversal(tc, td, admissible):
    """Pair up boxes of a charge tree ``tc`` and an evaluation tree ``td``.

    Parameters
    ----------
    admissible : callable
        ``admissible(c, d)`` on index arrays, returning a boolean mask of
        pairs that may interact through expansions.

    Returns
    -------
    far : tuple of ndarray
        ``(c, d)`` box pairs handled by expansions.
    near : tuple of ndarray
        ``(c, d)`` leaf pairs handled directly.
    """
    c = np.array([0])
    d = np.array([0])
    far_c, far_d, near_c, near_d = [], [], [], []
    while c.size:
        ok = admissible(c, d)
        far_c.append(c[ok])
        far_d.append(d[ok])
        c, d = c[~ok], d[~ok]
        lc, ld = tc.leaf[c], td.leaf[d]
        both = lc & ld
        near_c.append(c[both])
        near_d.append(d[both])
        c, d = c[~both], d[~both]
        lc, ld = lc[~both], ld[~both]
        # split the larger box (or the one that can be split)
        split_c = ~lc & (ld | (tc.half[c] >= td.half[d]))
        nc, nd = [], []
        ch = tc.children[c[split_c]]
        dd = np.repeat(d[split_c], 4)
        ch = ch.ravel()
        m = ch >= 0
        nc.append(ch[m])
        nd.append(dd[m])
        ch = td.children[d[~split_c]]
        cc = np.repeat(c[~split_c], 4)
        ch = ch.ravel()
        m = ch >= 0
        nc.append(cc[m])
        nd.append(ch[m])
        c = np.concatenate(nc)
        d = np.concatenate(nd)
    return (np.concatenate(far_c), np.concatenate(far_d)), (
        np.concatenate(near_c),
        np.concatenate(near_d),
    )


def near_pairs(tc, td, near):
    """Expand near leaf pairs into point pairs ``(charge index, eval index)``."""
    c, d = near
    if c.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    nc = tc.end[c] - tc.start[c]
    nd = td.end[d] - td.start[d]
    cnt = nc * nd
    total = int(cnt.sum())
    pair = np.repeat(np.arange(len(c)), cnt)
    local = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    ic = local // nd[pair]
    id_ = local % nd[pair]
    ci = tc.perm[tc.start[c][pair] + ic]
    di = td.perm[td.start[d][pair] + id_]
    return ci, di
