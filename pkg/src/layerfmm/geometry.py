"""Scatterer boundaries and their flat-panel discretization.

Curves are closed and counterclockwise.  ``panelize`` distributes panels
uniformly in arclength, keeps polygon corners as panel endpoints and
splits panels where they cross an interface, so every panel lies in a
single layer.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BoundaryCurve:
    """Closed counterclockwise scatterer boundary.

    Attributes
    ----------
    kind : {"star", "polygon"}
    params : dict
        ``center, a, b, k_star, theta0`` for a star
        ``r(theta) = a sin(k_star (theta - theta0)) + b``; ``vertices``
        (an ``(n, 2)`` list) for a polygon.
    """

    kind: str
    params: dict = field(hash=False)

    def __post_init__(self):
        if self.kind == "star":
            a, b = self.params["a"], self.params["b"]
            if not b > abs(a):
                raise ValueError(f"star radius not positive: need b > |a| (a={a}, b={b})")
        elif self.kind == "polygon":
            v = np.asarray(self.params["vertices"], dtype=float)
            if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
                raise ValueError("polygon needs at least three 2D vertices")
            if _signed_area(v) <= 0:
                raise ValueError("polygon vertices must be counterclockwise")
            if not _is_simple(v):
                raise ValueError("polygon is self-intersecting")
        else:
            raise ValueError(f"unknown curve kind {self.kind!r}")

    # star helpers
    def radius(self, theta):
        p = self.params
        return p["a"] * np.sin(p["k_star"] * (np.asarray(theta) - p["theta0"])) + p["b"]

    def star_point(self, theta):
        c = np.asarray(self.params["center"], dtype=float)
        r = self.radius(theta)
        return np.stack([c[0] + r * np.cos(theta), c[1] + r * np.sin(theta)], axis=-1)

    @property
    def vertices(self):
        return np.asarray(self.params["vertices"], dtype=float)

    def perimeter(self):
        if self.kind == "polygon":
            v = self.vertices
            return float(np.sum(np.hypot(*(np.roll(v, -1, axis=0) - v).T)))
        t = np.linspace(0, 2 * np.pi, 200001)
        p = self.star_point(t)
        return float(np.sum(np.hypot(*np.diff(p, axis=0).T)))

    def contains(self, pts):
        """Boolean mask of points strictly inside the curve."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "star":
            c = np.asarray(self.params["center"], dtype=float)
            d = pts - c
            rho = np.hypot(d[:, 0], d[:, 1])
            th = np.arctan2(d[:, 1], d[:, 0])
            return rho < self.radius(th)
        return _point_in_polygon(pts, self.vertices)

    def to_dict(self):
        if self.kind == "star":
            p = self.params
            return dict(
                kind="star",
                center=[float(p["center"][0]), float(p["center"][1])],
                a=float(p["a"]),
                b=float(p["b"]),
                k_star=int(p["k_star"]),
                theta0=float(p["theta0"]),
            )
        return dict(kind="polygon", vertices=[[float(x), float(y)] for x, y in self.vertices])


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _is_simple(v):
    n = len(v)
    segs = [(v[i], v[(i + 1) % n]) for i in range(n)]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            p1, p2 = segs[i]
            q1, q2 = segs[j]
            d1, d2 = cross(q1, q2, p1), cross(q1, q2, p2)
            d3, d4 = cross(p1, p2, q1), cross(p1, p2, q2)
            if d1 * d2 < 0 and d3 * d4 < 0:
                return False
    return True


def _point_in_polygon(pts, v):
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x1, y1 = v[:, 0][None, :], v[:, 1][None, :]
    x2, y2 = np.roll(v[:, 0], -1)[None, :], np.roll(v[:, 1], -1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = (y1 > y) != (y2 > y)
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        hits = cond & (x < xint)
    return (np.sum(hits, axis=1) % 2) == 1


def make_star(center, a, b, k_star, theta0=0.0):
    """Star-shaped curve ``r(theta) = a sin(k_star (theta - theta0)) + b`` about ``center``."""
    return BoundaryCurve(
        "star",
        dict(center=(float(center[0]), float(center[1])), a=float(a), b=float(b),
             k_star=int(k_star), theta0=float(theta0)),
    )


LSHAPE_VERTICES = (
    (0.75, 0.75),
    (-0.75, 0.75),
    (-0.75, -2.5),
    (2.25, -2.5),
    (2.25, -1.5),
    (0.75, -1.5),
)


def make_lshape():
    """The six-vertex L-shaped polygon used by the point-source benchmark."""
    return make_polygon(LSHAPE_VERTICES)


def make_polygon(vertices):
    return BoundaryCurve("polygon", dict(vertices=[list(map(float, p)) for p in vertices]))


# --------------------------------------------------------------------------
# panels


@dataclass
class PanelMesh:
    """Flat panels ordered layer-major.

    Attributes
    ----------
    start, end : ndarray, shape (N, 2)
        Panel endpoints (in curve orientation).
    centers : ndarray, shape (N, 2)
        Panel midpoints (collocation points).
    lengths : ndarray, shape (N,)
    tangents, normals : ndarray, shape (N, 2)
        Unit tangent along the curve and outward unit normal.
    layer : ndarray of int, shape (N,)
    scatterer : ndarray of int, shape (N,)
    position : ndarray of int, shape (N,)
        Index of the panel along its own curve.
    layer_offsets : ndarray of int, shape (L+2,)
        Panels of layer ``l`` occupy ``layer_offsets[l]:layer_offsets[l+1]``.
    curves : list of BoundaryCurve
    """

    start: np.ndarray
    end: np.ndarray
    layer: np.ndarray
    scatterer: np.ndarray
    position: np.ndarray
    layer_offsets: np.ndarray
    curves: list

    def __post_init__(self):
        d = self.end - self.start
        self.lengths = np.hypot(d[:, 0], d[:, 1])
        self.centers = 0.5 * (self.start + self.end)
        self.tangents = d / self.lengths[:, None]
        self.normals = np.stack([self.tangents[:, 1], -self.tangents[:, 0]], axis=1)

    @property
    def size(self):
        return len(self.lengths)

    def layer_slice(self, l):
        return slice(int(self.layer_offsets[l]), int(self.layer_offsets[l + 1]))

    def layer_count(self, l):
        return int(self.layer_offsets[l + 1] - self.layer_offsets[l])

    def inside(self, pts):
        """Mask of points inside any scatterer."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        m = np.zeros(len(pts), dtype=bool)
        for c in self.curves:
            m |= c.contains(pts)
        return m


def _curve_vertices(curve, n):
    """Arclength-uniform vertex loop (without repeating the first vertex)."""
    if curve.kind == "polygon":
        v = curve.vertices
        nxt = np.roll(v, -1, axis=0)
        lens = np.hypot(*(nxt - v).T)
        per = lens.sum()
        pts = []
        for p, q, ln in zip(v, nxt, lens):
            m = max(1, int(round(n * ln / per)))
            t = np.arange(m)[:, None] / m
            pts.append(p + t * (q - p))
        return np.concatenate(pts)
    t = np.linspace(0.0, 2 * np.pi, 64 * n + 1)
    p = curve.star_point(t)
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(p, axis=0).T))])
    ts = np.interp(np.arange(n) * s[-1] / n, s, t)
    return curve.star_point(ts)


def _split_at_interfaces(p, q, depths):
    """Split segment p->q at interface crossings; return list of points (incl. p, excl. q)."""
    pts = [p]
    ts = []
    for d in depths:
        a, b = p[1] + d, q[1] + d
        if a * b < 0:
            ts.append(a / (a - b))
        elif a == 0 and b == 0:
            raise ValueError("panel runs along an interface (degenerate configuration)")
    for t in sorted(ts):
        pts.append(p + t * (q - p))
    return pts


def panelize(curve, n_target, stack, scatterer_id=0, sliver=1e-3):
    """Split one curve into flat panels.

    Returns the panel endpoints ``(start, end)`` in curve order.

    Raises
    ------
    ValueError
        If ``n_target < 16`` or a boundary piece runs along an interface.
    """
    if n_target < 16:
        raise ValueError("need at least 16 panels per curve")
    v = _curve_vertices(curve, n_target)
    nxt = np.roll(v, -1, axis=0)
    pts = []
    for p, q in zip(v, nxt):
        pts.extend(_split_at_interfaces(p, q, stack.depths))
    pts = np.array(pts)
    pts = _merge_slivers(pts, stack, sliver)
    return pts, np.roll(pts, -1, axis=0)


def _merge_slivers(pts, stack, sliver):
    """Drop vertices that create slivers, keeping interface crossings intact."""
    depths = np.asarray(stack.depths)
    while True:
        q = np.roll(pts, -1, axis=0)
        lens = np.hypot(*(q - pts).T)
        thr = sliver * lens.mean()
        bad = np.nonzero(lens < thr)[0]
        if bad.size == 0:
            return pts
        i = bad[0]
        n = len(pts)
        # the sliver runs from vertex i to i+1; remove whichever endpoint is
        # not on an interface so the neighbouring panel absorbs it
        on_if = lambda k: np.any(np.isclose(pts[k % n, 1], -depths, rtol=0, atol=1e-14))
        drop = (i + 1) % n if on_if(i) else i
        if on_if(i) and on_if(i + 1):
            drop = (i + 1) % n
        pts = np.delete(pts, drop, axis=0)


def mesh_scene(curves, n_per_curve, stack):
    """Panelize several curves and order the panels layer-major.

    Parameters
    ----------
    curves : list of BoundaryCurve
    n_per_curve : int or list of int
    stack : LayerStack
    """
    if not curves:
        raise ValueError("nothing to solve: empty scatterer list")
    if np.ndim(n_per_curve) == 0:
        n_per_curve = [int(n_per_curve)] * len(curves)
    starts, ends, scat, pos = [], [], [], []
    for sid, (c, n) in enumerate(zip(curves, n_per_curve)):
        a, b = panelize(c, n, stack, sid)
        starts.append(a)
        ends.append(b)
        scat.append(np.full(len(a), sid))
        pos.append(np.arange(len(a)))
    start = np.concatenate(starts)
    end = np.concatenate(ends)
    scat = np.concatenate(scat)
    pos = np.concatenate(pos)
    layer = np.asarray(stack.layer_of(0.5 * (start[:, 1] + end[:, 1])))
    order = np.lexsort((pos, scat, layer))
    offsets = np.searchsorted(layer[order], np.arange(stack.n_layers + 1))
    return PanelMesh(
        start=start[order],
        end=end[order],
        layer=layer[order],
        scatterer=scat[order],
        position=pos[order],
        layer_offsets=offsets,
        curves=list(curves),
    )
