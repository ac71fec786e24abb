"""Spectral integrals for the reaction part of the layered Green's function.

The reaction field of a source in layer ``l'`` seen in layer ``l`` splits
into four components labelled by the direction in which the wave arrives
(``*``) and departs (``*'``).  After mapping the source and target to
reflected coordinates (``polarize_source`` / ``effective_target``) every
component is the integral

    G(r, r') = i/(4 pi) * int exp(i lam X + s i (k_l,y Yt - k_l',y Ys)) sigma(lam) / k_l',y dlam

with ``X = x_t - x_s`` and ``s`` the orientation sign, chosen so that the
effective vertical gap ``s (Yt - Ys)`` is non-negative.

Quadrature
----------
The integration path runs from ``-T`` to ``T`` below the positive real axis
and above the negative one (``lam = t - i D sin(pi t / T)``), which keeps
clear of branch points and guided-mode poles.  Beyond ``|lam| = T`` the path
follows two straight rays rotated by ``alpha`` into the half plane where
``exp(i lam X)`` decays, so each rule serves one sign of ``X``.  The rays
are cut into Gauss-Legendre panels; every tail panel records the largest
effective distance for which it still contributes above tolerance, which
lets block evaluation skip far-out panels for well separated pairs.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .layers import Coefficients

log = logging.getLogger(__name__)

UP = "up"
DOWN = "down"

_GL_ORDER = 16
NEGATIVE_TILT = np.pi / 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)


# --------------------------------------------------------------------------
# components and coordinate maps


@dataclass(frozen=True, order=True)
class ComponentId:
    """Reaction component ``(target layer, source layer, arrival, departure)``."""

    target: int
    source: int
    arrival: str
    departure: str

    def __post_init__(self):
        if self.arrival not in (UP, DOWN) or self.departure not in (UP, DOWN):
            raise ValueError("directions must be 'up' or 'down'")

    @property
    def case(self):
        if self.target == self.source:
            return 1
        return 2 if self.target < self.source else 3


def reflect(stack, m, a):
    """Mirror height(s) ``a`` about interface ``m``: ``-2 d_m - a``."""
    if not 0 <= m < stack.n_interfaces:
        raise IndexError(f"interface index {m} out of range")
    return -2.0 * stack.depths[m] - np.asarray(a)


def is_structural_zero(stack, cid):
    L = stack.n_interfaces
    return (
        (cid.target == 0 and cid.arrival == DOWN)
        or (cid.target == L and cid.arrival == UP)
        or (cid.source == 0 and cid.departure == UP)
        or (cid.source == L and cid.departure == DOWN)
    )


def all_components(stack, target=None, source=None):
    n = stack.n_layers
    out = []
    for l in range(n) if target is None else [target]:
        for lp in range(n) if source is None else [source]:
            for a in (UP, DOWN):
                for d in (UP, DOWN):
                    out.append(ComponentId(l, lp, a, d))
    return out


def nonzero_components(stack, target=None, source=None):
    """Components whose density is not identically zero."""
    return [c for c in all_components(stack, target, source) if not is_structural_zero(stack, c)]


def orientation(cid):
    """``+1`` when the effective target lies above the polarized source, else ``-1``."""
    if cid.target < cid.source or (cid.target == cid.source and cid.departure == DOWN):
        return 1
    return -1


def source_mirror(cid):
    """Interface index about which the source is reflected, or ``None``."""
    l, lp = cid.target, cid.source
    if cid.departure == DOWN:
        return lp if l <= lp else None
    return None if l < lp else lp - 1


def target_mirror(cid):
    """Interface index about which the target is reflected, or ``None``."""
    l, lp = cid.target, cid.source
    if cid.arrival == UP:
        below = l < lp if cid.departure == UP else l <= lp
        return None if below else l
    above = l < lp if cid.departure == UP else l <= lp
    return l - 1 if above else None


def _map_points(stack, m, pts):
    pts = np.array(pts, dtype=float, copy=True)
    if m is not None:
        pts[..., 1] = reflect(stack, m, pts[..., 1])
    return pts


def polarize_source(stack, cid, pts):
    """Polarized source coordinates of source point(s) in layer ``cid.source``."""
    return _map_points(stack, source_mirror(cid), pts)


def effective_target(stack, cid, pts):
    """Effective location of target point(s) in layer ``cid.target``."""
    return _map_points(stack, target_mirror(cid), pts)


def effective_distance(stack, cid, r, rp):
    """Distance between the effective target and the polarized source."""
    a = effective_target(stack, cid, r)
    b = polarize_source(stack, cid, rp)
    return np.hypot(a[..., 0] - b[..., 0], a[..., 1] - b[..., 1])


def mapped_slab(stack, layer, m):
    """``(bottom, top)`` of a layer after optional reflection about interface ``m``."""
    lo, hi = stack.slab(layer)
    if m is None:
        return lo, hi
    a, b = reflect(stack, m, hi), reflect(stack, m, lo)
    return float(a), float(b)


def facing_planes(stack, cid):
    """Facing edges ``(P_t, P_s)`` of the mapped target and source slabs.

    With orientation ``s`` every mapped target height ``Yt`` satisfies
    ``s (Yt - P_t) >= 0``, every mapped source height ``s (P_s - Ys) >= 0``
    and ``s (P_t - P_s) >= 0``.
    """
    s = orientation(cid)
    t_lo, t_hi = mapped_slab(stack, cid.target, target_mirror(cid))
    s_lo, s_hi = mapped_slab(stack, cid.source, source_mirror(cid))
    if s > 0:
        return t_lo, s_hi
    return t_hi, s_lo


# --------------------------------------------------------------------------
# densities


def _coeffs(stack, lam):
    return lam if isinstance(lam, Coefficients) else Coefficients(stack, lam)


def density(stack, cid, lam):
    """Spectral density of a reaction component at the node(s) ``lam``.

    ``lam`` may also be a precomputed :class:`Coefficients` table.
    """
    c = _coeffs(stack, lam)
    n = c.lam.size
    if is_structural_zero(stack, cid):
        return np.zeros(n, dtype=complex)
    l, lp = cid.target, cid.source
    # resonance of the source layer
    u = c.Rt_down[lp]
    v = c.Rt_up[lp]
    ph = c.thick_phase(lp)
    den = 1 - u * v * ph
    if np.any(np.abs(den) < 1e-12):
        log.warning("spectral node close to a guided-mode pole (|den|=%.2e)", np.abs(den).min())
    self_ud = u / den
    self_du = v / den
    self_same = u * v / den
    if l == lp:
        table = {
            (UP, DOWN): self_ud,
            (DOWN, UP): self_du,
            (UP, UP): self_same,
            (DOWN, DOWN): self_same,
        }
        return table[(cid.arrival, cid.departure)]
    t = c.transmission(lp, l)
    if l < lp:
        up_down = t * self_ud
        up_up = t * (1 + self_same * ph)
        table = {
            (UP, DOWN): up_down,
            (UP, UP): up_up,
            (DOWN, DOWN): c.Rt_up[l] * up_down,
            (DOWN, UP): c.Rt_up[l] * up_up,
        }
    else:
        down_up = t * self_du
        down_down = t * (1 + self_same * ph)
        table = {
            (DOWN, UP): down_up,
            (DOWN, DOWN): down_down,
            (UP, UP): c.Rt_down[l] * down_up,
            (UP, DOWN): c.Rt_down[l] * down_down,
        }
    return table[(cid.arrival, cid.departure)]


# --------------------------------------------------------------------------
# quadrature rules


@dataclass
class SommerfeldRule:
    """Quadrature nodes and weights on a deformed Sommerfeld path.

    Attributes
    ----------
    nodes, weights : ndarray of complex
        Path nodes ``lam_q`` and weights (including ``dlam/du``).
    reach : ndarray of float
        Per node, the largest effective distance for which the node's tail
        panel contributes above tolerance (``inf`` on the central part).
    side : int
        Sign of ``X = x_t - x_s`` the rule is valid for.
    alpha : float
        Rotation of the tails away from the real axis.
    s_min : float
        Guaranteed decay factor: the integrand on the tails decays at least
        like ``exp(-u R s_min)`` for every configuration the rule serves.
    lam_max : float
        Largest ``|lam|`` on the path.
    """

    stack: object
    nodes: np.ndarray
    weights: np.ndarray
    reach: np.ndarray
    side: int
    alpha: float
    s_min: float
    lam_max: float
    params: dict = field(default_factory=dict)
    _coeffs: object = field(default=None, repr=False)

    @property
    def size(self):
        return self.nodes.size

    @property
    def coefficients(self):
        if self._coeffs is None:
            self._coeffs = Coefficients(self.stack, self.nodes)
        return self._coeffs

    def ky(self, layer):
        return self.coefficients.ky[layer]

    def density(self, cid):
        return density(self.stack, cid, self.coefficients)

    def kernel_weights(self, cid):
        """Per-node weights of a component for heights measured from its facing planes.

        The kernel of ``cid`` equals ``sum_q kw_q exp(i lam_q X + s i (k_l,y (Yt - P_t)
        - k_l',y (Ys - P_s)))`` with ``(P_t, P_s) = facing_planes(stack, cid)``.
        """
        sig = self.density(cid)
        s = orientation(cid)
        Pt, Ps = facing_planes(self.stack, cid)
        shift = np.exp(s * 1j * (self.ky(cid.target) * Pt - self.ky(cid.source) * Ps))
        return self.weights * (1j / (4 * np.pi)) * sig * shift / self.ky(cid.source)


def _gl_panels(edges):
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    x = (0.5 * (a + b) + half * _GL_X).ravel()
    w = (half * _GL_W).ravel()
    lo = np.repeat(edges[:-1], _GL_ORDER)
    return x, w, lo


def _tail_edges(c, u_max, refine):
    w_exp = 6.0 / c
    h0 = min(1.0, w_exp)
    edges = [0.0]
    while edges[-1] < u_max:
        u = edges[-1]
        edges.append(u + min(max(u, h0), w_exp))
    edges = np.array(edges)
    for _ in range(refine):
        mid = 0.5 * (edges[:-1] + edges[1:])
        edges = np.sort(np.concatenate([edges, mid]))
    return edges


def _tail_length(c, order, lam0, k_min, tol):
    """Smallest ``u`` beyond which ``(2|lam|/k)^order exp(-c u)`` is below tol of its peak."""
    u = np.linspace(0.0, 1.0, 4001) * (order + math.log(1 / tol) + 40.0) * 4.0 / c
    f = order * np.log(2.0 * (lam0 + u) / k_min + 1.0) - c * u
    peak = np.argmax(f)
    target = f[peak] - math.log(1.0 / tol) - 4.0
    after = np.nonzero(f[peak:] < target)[0]
    if after.size == 0:
        return float(u[-1])
    return float(u[peak + after[0]])


def _assemble_rule(stack, T, D, n_central, c, u_max, side, alpha, tail_refine, tol):
    edges = np.linspace(-T, T, n_central + 1)
    t, wt, _ = _gl_panels(edges)
    lam_c = t - 1j * D * np.sin(np.pi * t / T)
    w_c = wt * (1 - 1j * D * (np.pi / T) * np.cos(np.pi * t / T))
    u, wu, ulo = _gl_panels(_tail_edges(c, u_max, tail_refine))
    e_r = np.exp(1j * side * alpha)
    e_l = np.exp(1j * side * (np.pi - alpha))
    lam_r = T + u * e_r
    lam_l = -T + u * e_l
    nodes = np.concatenate([lam_l[::-1], lam_c, lam_r])
    weights = np.concatenate([(-wu * e_l)[::-1], w_c, wu * e_r])
    s_min = c  # placeholder, replaced by caller
    with np.errstate(divide="ignore"):
        reach_t = np.where(ulo > 0, (math.log(1 / tol) + 6.0) / np.maximum(ulo, 1e-300), np.inf)
    reach = np.concatenate([reach_t[::-1], np.full(lam_c.size, np.inf), reach_t])
    return nodes, weights, reach, s_min


def _probe_values(stack, nodes, weights, probes, order):
    """Probe integrals and their absolute masses for rule self-convergence."""
    c = Coefficients(stack, nodes)
    L = stack.n_interfaces
    k_min = min(stack.k)
    dens = []
    for l in range(L + 1):
        cid_ud = ComponentId(l, l, UP, DOWN)
        cid_du = ComponentId(l, l, DOWN, UP)
        for cid in (cid_ud, cid_du):
            if not is_structural_zero(stack, cid):
                dens.append((l, density(stack, cid, c) / c.ky[l]))
    dens.append((L, c.transmission(0, L) / c.ky[0]))
    dens.append((0, c.transmission(L, 0) / c.ky[L]))
    if order:
        ky0 = np.sqrt(k_min**2 - nodes**2)
        ky0 = np.where(ky0.imag < 0, -ky0, ky0)
        grow = ((ky0 + 1j * nodes) / k_min) ** order
    else:
        grow = 1.0
    vals, mass = [], []
    for X, Y in probes:
        for l, g in dens:
            f = weights * np.exp(1j * nodes * X + 1j * c.ky[l] * Y) * g * grow
            vals.append(f.sum())
            mass.append(np.abs(f).sum())
    return np.array(vals), np.array(mass)


def build_rule(
    stack,
    r_min,
    x_max,
    side=1,
    alpha=np.pi / 4,
    phi_range=(0.0, np.pi / 2),
    order=0,
    tol=1e-10,
    max_refine=6,
):
    """Build a Sommerfeld quadrature rule.

    Parameters
    ----------
    stack : LayerStack
    r_min : float
        Smallest effective distance the rule must serve.
    x_max : float
        Largest horizontal offset ``|X|`` the rule must serve.
    side : {+1, -1}
        Sign of ``X``.
    alpha : float
        Tail rotation; ``phi_range`` bounds the direction ``atan2(Y, |X|)``
        of the served configurations, giving the decay factor
        ``s_min = min sin(alpha + phi)``.
    order : int
        Degree of polynomial growth (``2p`` for expansion translations).
    tol : float
        Target accuracy relative to the integrand's absolute mass.

    Raises
    ------
    RuntimeError
        If the probe integrals fail to settle within ``max_refine`` doublings.
    """
    if r_min <= 0:
        raise ValueError("r_min must be positive")
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    x_max = max(float(x_max), 0.0)
    k_max, k_min = max(stack.k), min(stack.k)
    T = 1.15 * k_max + 0.5
    D = min(0.5 * T, 8.0 / max(x_max, 1e-12))
    h_c = min(D, 20.0 / max(x_max, 1e-12), 2.0)
    n_central = max(4, int(math.ceil(2 * T / h_c)))
    s_min = min(math.sin(alpha + phi_range[0]), math.sin(alpha + phi_range[1]))
    if s_min <= 0.05:
        raise ValueError("tail rotation gives no decay for the requested directions")
    c = r_min * s_min
    u_max = _tail_length(c, order, T, k_min, tol)

    probes = []
    for phi in np.linspace(phi_range[0], phi_range[1], 3):
        for scale in (1.0, 3.0):
            R = r_min * scale
            X = R * math.cos(phi)
            if X <= x_max * (1 + 1e-12):
                probes.append((side * X, R * math.sin(phi)))
    if x_max > r_min and phi_range[0] < 1e-12:
        probes.append((side * x_max, r_min * 0.5 + 0.0))

    prev = None
    for it in range(max_refine + 1):
        nodes, weights, reach, _ = _assemble_rule(
            stack, T, D, n_central * 2**it, c, u_max, side, alpha, it, tol
        )
        vals, mass = _probe_values(stack, nodes, weights, probes, order)
        if prev is not None:
            err = np.abs(vals - prev[0])
            if np.all(err <= tol * np.maximum(mass, 1e-300)):
                nodes, weights, reach = prev[1:]
                break
        prev = (vals, nodes, weights, reach)
    else:
        resid = float(np.max(err / np.maximum(mass, 1e-300)))
        raise RuntimeError(f"Sommerfeld rule did not converge (probe residual {resid:.2e})")
    reach = reach / s_min
    return SommerfeldRule(
        stack=stack,
        nodes=nodes,
        weights=weights,
        reach=reach,
        side=side,
        alpha=float(alpha),
        s_min=s_min,
        lam_max=float(np.abs(nodes).max()),
        params=dict(r_min=r_min, x_max=x_max, order=order, tol=tol, T=T, D=D, u_max=u_max),
    )


def _bucket_down(v):
    return 2.0 ** (math.floor(2 * math.log2(v)) / 2)


def _bucket_up(v):
    return 2.0 ** (math.ceil(2 * math.log2(max(v, 1e-3))) / 2)


class RuleBook:
    """Cache of quadrature rules for one stack.

    Requests are rounded (``r_min`` down, ``x_max`` up, by factors of
    ``sqrt 2``) so nearby requests share a rule.
    """

    def __init__(self, stack, tol=1e-10, n_direction_classes=4):
        self.stack = stack
        self.tol = tol
        self.n_classes = n_direction_classes
        self._rules = {}

    def _get(self, key, **kw):
        rule = self._rules.get(key)
        if rule is None:
            rule = build_rule(self.stack, tol=self.tol, **kw)
            self._rules[key] = rule
        return rule

    def direct(self, r_min, x_max):
        """Pair of rules ``(X >= 0, X < 0)`` for direct kernel evaluation."""
        r, x = _bucket_down(r_min), _bucket_up(x_max)
        return tuple(self._get(("d", r, x, s), r_min=r, x_max=x, side=s) for s in (1, -1))

    def direction_class(self, phi):
        """Index of the direction class of ``phi = atan2(Y, |X|)``."""
        j = np.floor(np.asarray(phi) / (np.pi / 2) * self.n_classes).astype(int)
        return np.clip(j, 0, self.n_classes - 1)

    def translation(self, r_min, x_max, side, cls, order):
        """Rule for expansion translations in one direction class."""
        width = (np.pi / 2) / self.n_classes
        lo, hi = cls * width, (cls + 1) * width
        alpha = np.pi / 2 - 0.5 * (lo + hi)
        if cls == 0:
            # admit box pairs whose centers sit slightly below the horizontal
            lo = -NEGATIVE_TILT
        r, x = _bucket_down(r_min), _bucket_up(x_max)
        key = ("t", r, x, side, cls, order)
        return self._get(
            key, r_min=r, x_max=x, side=side, alpha=alpha, phi_range=(lo, hi), order=order
        )

    def __len__(self):
        return len(self._rules)


def translation_integral(rule, n, m, k, kp, x, y, yp, sigma, orientation_sign=1):
    """Quadrature of ``exp(i lam x + s i (k_y y - k'_y y')) omega(k)^n omega(k')^m sigma``.

    ``sigma`` is an array of density values at the rule nodes or a
    :class:`ComponentId`.  Prefactors are left to the caller.
    """
    lam = rule.nodes
    if isinstance(sigma, ComponentId):
        sigma = rule.density(sigma)
    ky = np.sqrt(k * k - lam * lam)
    ky = np.where(ky.imag < 0, -ky, ky)
    kyp = np.sqrt(kp * kp - lam * lam)
    kyp = np.where(kyp.imag < 0, -kyp, kyp)
    s = orientation_sign
    E = np.exp(1j * lam * x + s * 1j * (ky * y - kyp * yp))
    om = (ky + 1j * lam) / k
    omp = (kyp + 1j * lam) / kp
    return complex(np.sum(rule.weights * E * om**n * omp**m * sigma))


# --------------------------------------------------------------------------
# direct evaluation


_EXP_LIMIT = 600.0


def _prepared(stack, cid, tgt, src):
    t = effective_target(stack, cid, tgt)
    s = polarize_source(stack, cid, src)
    return t, s


def component_block(stack, cid, book, tgt, src, pairs=None):
    """Matrix ``G[i, j]`` of one reaction component.

    Parameters
    ----------
    stack : LayerStack
    cid : ComponentId
    book : RuleBook
    tgt : ndarray, shape (n, 2)
        Points of layer ``cid.target`` (first Green's-function argument).
    src : ndarray, shape (m, 2)
        Points of layer ``cid.source`` (second argument).
    pairs : tuple of index arrays, optional
        If given, only these ``(i, j)`` entries are returned (as a vector).
    """
    tgt = np.atleast_2d(np.asarray(tgt, dtype=float))
    src = np.atleast_2d(np.asarray(src, dtype=float))
    nt, ns = len(tgt), len(src)
    if is_structural_zero(stack, cid) or nt == 0 or ns == 0:
        return np.zeros(nt * ns if pairs is None else len(pairs[0]), dtype=complex).reshape(
            (nt, ns) if pairs is None else -1
        )
    t, s = _prepared(stack, cid, tgt, src)
    sgn = orientation(cid)
    Pt, Ps = facing_planes(stack, cid)
    kt, ks = cid.target, cid.source

    if pairs is not None:
        i, j = pairs
        d = np.hypot(t[i, 0] - s[j, 0], t[i, 1] - s[j, 1])
        X = t[i, 0] - s[j, 0]
        rules = book.direct(d.min(), np.abs(X).max())
        out = np.empty(len(i), dtype=complex)
        for rule, mask in ((rules[0], X >= 0), (rules[1], X < 0)):
            if not mask.any():
                continue
            kw = rule.kernel_weights(cid)
            out[mask] = _chunked_pairs(
                rule, kw, rule.ky(kt), rule.ky(ks), sgn, Pt, Ps,
                t[i[mask], 0], t[i[mask], 1], s[j[mask], 0], s[j[mask], 1], None,
            )
        return out

    tree = cKDTree(s)
    dmin, _ = tree.query(t)
    r_min = float(dmin.min())
    X_all_max = max(t[:, 0].max() - s[:, 0].min(), s[:, 0].max() - t[:, 0].min())
    rules = book.direct(r_min, abs(X_all_max))
    x0 = 0.5 * (min(t[:, 0].min(), s[:, 0].min()) + max(t[:, 0].max(), s[:, 0].max()))
    x_ext = max(np.abs(t[:, 0] - x0).max(), np.abs(s[:, 0] - x0).max(), 1e-12)
    X = t[:, 0][:, None] - s[:, 0][None, :]
    G = np.zeros((nt, ns), dtype=complex)
    sparse_parts = []
    for rule, pos in ((rules[0], True), (rules[1], False)):
        kw = rule.kernel_weights(cid)
        ky_t, ky_s = rule.ky(kt), rule.ky(ks)
        lam = rule.nodes
        u_cap = _EXP_LIMIT / x_ext
        # whole tail panels go to the matrix product while their
        # exponentials stay representable; the rest is summed per pair
        dense_sel = _whole_panels(np.abs(lam.imag) <= u_cap)
        A = np.exp(1j * lam[dense_sel][None, :] * (t[:, 0] - x0)[:, None]
                   + sgn * 1j * ky_t[dense_sel][None, :] * (t[:, 1] - Pt)[:, None])
        B = np.exp(-1j * lam[dense_sel][None, :] * (s[:, 0] - x0)[:, None]
                   - sgn * 1j * ky_s[dense_sel][None, :] * (s[:, 1] - Ps)[:, None])
        # entries on the other side of X = 0 may overflow; they are discarded
        with np.errstate(over="ignore", invalid="ignore"):
            Gs = (A * kw[dense_sel]) @ B.T
        mask = X >= 0 if pos else X < 0
        G[mask] = Gs[mask]
        rest = ~dense_sel
        if rest.any():
            sparse_parts.append((rule, kw, ky_t, ky_s, rest, pos))
    for rule, kw, ky_t, ky_s, rest, pos in sparse_parts:
        reach = float(rule.reach[rest].max())
        pr = tree.sparse_distance_matrix(cKDTree(t), reach, output_type="coo_matrix")
        j, i = pr.row, pr.col
        keep = (X[i, j] >= 0) if pos else (X[i, j] < 0)
        i, j = i[keep], j[keep]
        if i.size == 0:
            continue
        G[i, j] += _chunked_pairs(
            rule, kw, ky_t, ky_s, sgn, Pt, Ps, t[i, 0], t[i, 1], s[j, 0], s[j, 1], rest
        )
    return G


def _whole_panels(sel):
    m = sel.reshape(-1, _GL_ORDER) if sel.size % _GL_ORDER == 0 else None
    if m is None:
        return sel
    return np.repeat(m.all(axis=1), _GL_ORDER)


def _chunked_pairs(rule, kw, ky_t, ky_s, sgn, Pt, Ps, tx, ty, sx, sy, sel, chunk=4096):
    if sel is None:
        sel = np.ones(rule.size, dtype=bool)
    n = len(tx)
    out = np.empty(n, dtype=complex)
    reach = rule.reach[sel]
    d = np.hypot(tx - sx, ty - sy)
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        vals = np.zeros(b - a, dtype=complex)
        # only nodes whose reach covers the pair contribute
        dd = d[a:b]
        lam = rule.nodes[sel]
        active = reach >= dd.min()
        if active.any():
            e = np.exp(
                1j * lam[active][None, :] * (tx[a:b] - sx[a:b])[:, None]
                + sgn * 1j * (ky_t[sel][active][None, :] * (ty[a:b] - Pt)[:, None]
                              - ky_s[sel][active][None, :] * (sy[a:b] - Ps)[:, None])
            )
            e[dd[:, None] > reach[active][None, :]] = 0.0
            vals = e @ kw[sel][active]
        out[a:b] = vals
    return out


def reaction_green(stack, l, lp, r, rp, book=None):
    """Reaction part ``G^r_{l l'}(r, r')`` for point arrays ``r`` (layer l) and ``rp`` (layer l').

    Returns the matrix over all pairs; scalar inputs give a scalar.  On a
    matched stack the same-layer part is exactly zero and the cross-layer
    part is the free-space kernel.
    """
    scalar = np.ndim(r) == 1 and np.ndim(rp) == 1
    r = np.atleast_2d(np.asarray(r, dtype=float))
    rp = np.atleast_2d(np.asarray(rp, dtype=float))
    _check_layers(stack, l, r)
    _check_layers(stack, lp, rp)
    if book is None:
        book = RuleBook(stack)
    G = np.zeros((len(r), len(rp)), dtype=complex)
    if stack.is_homogeneous:
        if l != lp:
            # one medium: the cross-layer field is the free-space one, in closed form
            from .special import hankel0

            d = np.hypot(r[:, None, 0] - rp[None, :, 0], r[:, None, 1] - rp[None, :, 1])
            G = 0.25j * hankel0(stack.k[l] * d)
    else:
        for cid in nonzero_components(stack, l, lp):
            G += component_block(stack, cid, book, r, rp)
    return complex(G[0, 0]) if scalar else G


def layered_green(stack, l, lp, r, rp, book=None):
    """Full layered Green's function ``delta_{l l'} (i/4) H_0(k_l |r-r'|) + G^r``."""
    from .special import hankel0

    scalar = np.ndim(r) == 1 and np.ndim(rp) == 1
    r2 = np.atleast_2d(np.asarray(r, dtype=float))
    rp2 = np.atleast_2d(np.asarray(rp, dtype=float))
    G = reaction_green(stack, l, lp, r2, rp2, book)
    if l == lp:
        d = np.hypot(r2[:, None, 0] - rp2[None, :, 0], r2[:, None, 1] - rp2[None, :, 1])
        if np.any(d == 0):
            raise ValueError("Green's function is singular at coincident points")
        G = G + 0.25j * hankel0(stack.k[l] * d)
    return complex(G[0, 0]) if scalar else G


def _check_layers(stack, layer, pts):
    """Points must lie in the closed slab of ``layer`` (interfaces give one-sided limits)."""
    lo, hi = stack.slab(layer)
    y = pts[:, 1]
    if np.any(y < lo) or np.any(y > hi):
        raise ValueError(f"points are not inside layer {layer}")


def component_leaf_blocks(stack, cid, book, tgt, src, blocks, t_anchor, s_anchor):
    """Entries of one component over a list of point blocks.

    Parameters
    ----------
    tgt, src : ndarray, shape (n, 2) and (m, 2)
        Points of layers ``cid.target`` and ``cid.source``.
    blocks : list of (ndarray, ndarray)
        Index sets ``(it, is)``; block ``b`` asks for ``G[it, is]``.
    t_anchor, s_anchor : ndarray
        Per point, the x-coordinate its exponentials are referenced to
        (typically its leaf center); points of one block should share
        nearby anchors.

    Returns
    -------
    list of ndarray
        One ``(len(it), len(is))`` matrix per block.
    """
    tgt = np.atleast_2d(np.asarray(tgt, dtype=float))
    src = np.atleast_2d(np.asarray(src, dtype=float))
    if is_structural_zero(stack, cid) or not blocks:
        return [np.zeros((len(a), len(b)), dtype=complex) for a, b in blocks]
    t, s = _prepared(stack, cid, tgt, src)
    sgn = orientation(cid)
    Pt, Ps = facing_planes(stack, cid)
    kt, ks = cid.target, cid.source
    ti = np.concatenate([np.repeat(a, len(b)) for a, b in blocks])
    si = np.concatenate([np.tile(b, len(a)) for a, b in blocks])
    d = np.hypot(t[ti, 0] - s[si, 0], t[ti, 1] - s[si, 1])
    X = t[ti, 0] - s[si, 0]
    rules = book.direct(float(d.min()), float(np.abs(X).max()))
    ext = max(np.abs(t[:, 0] - t_anchor).max(), np.abs(s[:, 0] - s_anchor).max(), 1e-12)
    u_cap = 0.5 * _EXP_LIMIT / ext
    out = [np.zeros((len(a), len(b)), dtype=complex) for a, b in blocks]
    offs = np.concatenate([[0], np.cumsum([len(a) * len(b) for a, b in blocks])])
    for rule, pos in ((rules[0], True), (rules[1], False)):
        kw = rule.kernel_weights(cid)
        ky_t, ky_s = rule.ky(kt), rule.ky(ks)
        lam = rule.nodes
        sel = _whole_panels(np.abs(lam.imag) <= u_cap)
        ls, kts, kss = lam[sel], ky_t[sel], ky_s[sel]
        with np.errstate(over="ignore", under="ignore"):
            A = np.exp(1j * ls[None, :] * (t[:, 0] - t_anchor)[:, None]
                       + sgn * 1j * kts[None, :] * (t[:, 1] - Pt)[:, None])
            B = np.exp(-1j * ls[None, :] * (s[:, 0] - s_anchor)[:, None]
                       - sgn * 1j * kss[None, :] * (s[:, 1] - Ps)[:, None])
        for b, (it, is_) in enumerate(blocks):
            Xb = t[it, 0][:, None] - s[is_, 0][None, :]
            mask = Xb >= 0 if pos else Xb < 0
            if not mask.any():
                continue
            xa, xb = t_anchor[it], s_anchor[is_]
            if np.ptp(xa) == 0 and np.ptp(xb) == 0:
                F = kw[sel] * np.exp(1j * ls * (xa[0] - xb[0]))
                with np.errstate(over="ignore", invalid="ignore"):
                    Gb = (A[it] * F) @ B[is_].T
            else:
                raise ValueError("points of a block must share their anchors")
            out[b][mask] = Gb[mask]
        rest = ~sel
        if rest.any():
            reach = float(rule.reach[rest].max())
            side_ok = X >= 0 if pos else X < 0
            near = np.nonzero(side_ok & (d <= reach))[0]
            if near.size:
                vals = _chunked_pairs(
                    rule, kw, ky_t, ky_s, sgn, Pt, Ps,
                    t[ti[near], 0], t[ti[near], 1], s[si[near], 0], s[si[near], 1], rest,
                )
                blk = np.searchsorted(offs, near, side="right") - 1
                loc = near - offs[blk]
                for b in np.unique(blk):
                    m = blk == b
                    nb = len(blocks[b][1])
                    out[b][loc[m] // nb, loc[m] % nb] += vals[m]
    return out
