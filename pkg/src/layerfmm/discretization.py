"""Collocation system for the sound-soft layered scattering problem.

Unknowns are ``Phi_{li} = eta_l phi_{li}`` ordered layer-major.  Row ``i``
(collocation point ``c_i`` in layer ``l'``) and column ``e`` (panel in
layer ``l``) of the system matrix hold ``G_{l l'}(c_e, c_i) |Gamma_e|``;
the diagonal uses the integrated logarithmic singularity.
"""

import logging
import warnings

import numpy as np

from .layers import background_field, incident_field
from .sommerfeld import RuleBook, layered_green, reaction_green
from .special import EULER_GAMMA, hankel0

log = logging.getLogger(__name__)

DENSE_CAP = 6000


def singular_self_term(k, length):
    """Integral of ``(i/4) H_0(k|r - c|)`` over a flat panel of ``length`` centered at ``c``."""
    length = np.asarray(length, dtype=float)
    return (0.25j - (EULER_GAMMA + np.log(k * length / 4.0) - 1.0) / (2 * np.pi)) * length


def diagonal_entry(length, k, reaction=0.0):
    """Diagonal matrix entry of a panel.

    Parameters
    ----------
    length : float or ndarray
        Panel length ``|Gamma|``.
    k : float
        Wavenumber of the panel's layer.
    reaction : complex or ndarray
        Reaction part ``G^r_{ll}(c, c)`` at the panel center.
    """
    length = np.asarray(length, dtype=float)
    if np.any(length <= 0):
        raise ValueError("panel length must be positive")
    return reaction * length + singular_self_term(k, length)


def rhs(mesh, stack, wave):
    """Right-hand side ``eta_l (-u^inc - u^b)`` at the collocation points."""
    c = mesh.centers
    g = -background_field(stack, wave, c, layer=None)
    lay = mesh.layer
    g = np.where(lay == 0, g - incident_field(stack, wave, c), g)
    # background_field picks the layer from y, which equals the panel tag
    return np.asarray(stack.eta)[lay] * g


def point_source_rhs(mesh, stack, source, book=None):
    """Right-hand side for the manufactured problem ``u^s = G_{l, l0}(r, source)``.

    ``source`` is a point inside a scatterer; its layer ``l0`` is inferred.
    """
    source = np.asarray(source, dtype=float)
    l0 = stack.layer_of(source[1])
    book = book if book is not None else RuleBook(stack)
    b = np.empty(mesh.size, dtype=complex)
    for l in range(stack.n_layers):
        sl = mesh.layer_slice(l)
        if sl.stop == sl.start:
            continue
        g = layered_green(stack, l, l0, mesh.centers[sl], source[None, :], book)[:, 0]
        b[sl] = stack.eta[l] * g
    return b


def point_source_field(stack, source, points, book=None):
    """Exact manufactured scattered field ``G_{l, l0}(r, source)`` at ``points``."""
    source = np.asarray(source, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    l0 = stack.layer_of(source[1])
    lay = np.atleast_1d(stack.layer_of(pts[:, 1]))
    book = book if book is not None else RuleBook(stack)
    out = np.empty(len(pts), dtype=complex)
    for l in np.unique(lay):
        m = lay == l
        out[m] = layered_green(stack, int(l), l0, pts[m], source[None, :], book)[:, 0]
    return out


def self_reaction(mesh, stack, book):
    """``G^r_{ll}(c, c)`` for every panel center."""
    out = np.zeros(mesh.size, dtype=complex)
    if stack.is_homogeneous:
        return out
    from .sommerfeld import component_block, nonzero_components

    for l in range(stack.n_layers):
        sl = mesh.layer_slice(l)
        n = sl.stop - sl.start
        if n == 0:
            continue
        c = mesh.centers[sl]
        idx = np.arange(n)
        for cid in nonzero_components(stack, l, l):
            out[sl] += component_block(stack, cid, book, c, c, pairs=(idx, idx))
    return out


def assemble_dense(mesh, stack, book=None, cap=DENSE_CAP):
    """Dense system matrix (oracle for the fast matvec).

    Raises
    ------
    ValueError
        If the mesh has more than ``cap`` panels.
    """
    N = mesh.size
    if N > cap:
        raise ValueError(f"dense assembly capped at {cap} panels (got {N})")
    book = book if book is not None else RuleBook(stack)
    K = np.zeros((N, N), dtype=complex)
    c, h = mesh.centers, mesh.lengths
    for l in range(stack.n_layers):
        se = mesh.layer_slice(l)
        if se.stop == se.start:
            continue
        for lp in range(stack.n_layers):
            si = mesh.layer_slice(lp)
            if si.stop == si.start:
                continue
            G = reaction_green(stack, l, lp, c[se], c[si], book)
            K[si, se] = G.T * h[se][None, :]
        d = np.hypot(*(c[se][:, None, :] - c[se][None, :, :]).transpose(2, 0, 1))
        np.fill_diagonal(d, 1.0)
        H = 0.25j * hankel0(stack.k[l] * d) * h[se][None, :]
        idx = np.arange(se.start, se.stop)
        # reaction self values sit on the diagonal already
        diag = K[idx, idx].copy()
        np.fill_diagonal(H, 0.0)
        K[se, se] += H
        K[idx, idx] = diag + singular_self_term(stack.k[l], h[se])
    return K


def dense_matvec(K, phi):
    """Product of the dense system matrix with a density vector."""
    phi = np.asarray(phi)
    if K.shape[1] != phi.shape[0]:
        raise ValueError("dimension mismatch")
    return K @ phi


def scattered_field(mesh, stack, phi, points, book=None, return_flag=False):
    """Scattered field ``u^s`` represented by the density ``Phi`` at ``points``.

    Parameters
    ----------
    phi : ndarray
        Density vector ``Phi = eta phi`` in mesh order.
    points : ndarray, shape (n, 2)
        Evaluation points outside the scatterers.
    return_flag : bool
        Also return a mask of points closer to a panel center than that
        panel's length (where the midpoint rule is inaccurate).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    book = book if book is not None else RuleBook(stack)
    lay = np.atleast_1d(stack.layer_of(pts[:, 1]))
    q = np.asarray(phi) * mesh.lengths
    c = mesh.centers
    out = np.zeros(len(pts), dtype=complex)
    near = np.zeros(len(pts), dtype=bool)
    for lp in np.unique(lay):
        lp = int(lp)
        m = lay == lp
        p = pts[m]
        acc = np.zeros(len(p), dtype=complex)
        for l in range(stack.n_layers):
            se = mesh.layer_slice(l)
            if se.stop == se.start:
                continue
            acc += reaction_green(stack, l, lp, c[se], p, book).T @ q[se]
            if l == lp:
                d = np.hypot(p[:, None, 0] - c[se][None, :, 0], p[:, None, 1] - c[se][None, :, 1])
                near[np.nonzero(m)[0]] |= np.any(d < mesh.lengths[se][None, :], axis=1)
                d = np.maximum(d, 1e-300)
                acc += (0.25j * hankel0(stack.k[l] * d)) @ q[se]
        out[m] = acc / stack.eta[lp]
    if near.any():
        warnings.warn(
            f"{int(near.sum())} evaluation point(s) lie within a panel length of the boundary",
            stacklevel=2,
        )
    return (out, near) if return_flag else out


def offset_polygon(vertices, delta):
    """Mitered outward offset of a counterclockwise polygon by ``delta``."""
    v = np.asarray(vertices, dtype=float)
    e = np.roll(v, -1, axis=0) - v
    t = e / np.hypot(e[:, 0], e[:, 1])[:, None]
    n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    n_prev = np.roll(n, 1, axis=0)
    return v + delta * (n_prev + n) / (1.0 + np.sum(n_prev * n, axis=1))[:, None]


def probe_curve(curve, delta, n_points):
    """Points and arclength weights on a closed curve offset outward by ``delta``.

    Polygons use a mitered offset; stars are offset radially.
    """
    if curve.kind == "polygon":
        v = offset_polygon(curve.vertices, delta)
        nxt = np.roll(v, -1, axis=0)
        seg = np.hypot(*(nxt - v).T)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        t = (np.arange(n_points) + 0.5) * s[-1] / n_points
        j = np.searchsorted(s, t, side="right") - 1
        f = (t - s[j]) / seg[j]
        pts = v[j] + f[:, None] * (nxt[j] - v[j])
        return pts, np.full(n_points, s[-1] / n_points)
    th = 2 * np.pi * (np.arange(n_points) + 0.5) / n_points
    c = np.asarray(curve.params["center"])
    r = curve.radius(th) + delta
    pts = np.stack([c[0] + r * np.cos(th), c[1] + r * np.sin(th)], axis=1)
    nxt = np.roll(pts, -1, axis=0)
    seg = np.hypot(*(nxt - pts).T)
    w = 0.5 * (seg + np.roll(seg, 1))
    return pts, w


def error_norms(approx, exact, weights):
    """Relative ``(L_inf, L2)`` errors; L2 uses the quadrature ``weights``."""
    diff = np.abs(approx - exact)
    linf = diff.max() / np.abs(exact).max()
    l2 = np.sqrt(np.sum(weights * diff**2) / np.sum(weights * np.abs(exact) ** 2))
    return float(linf), float(l2)
