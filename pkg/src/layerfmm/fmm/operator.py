"""Fast matrix-vector product for the layered collocation system.

The product splits into

* a sparse near-field matrix holding every directly summed interaction
  (free-space and reaction), including the diagonal;
* a free-space FMM per layer (Graf translations between multipole and
  local expansions);
* one reaction pass per nonzero component ``(l, l', *, *')``.  Charges sit
  at the effective target coordinates of the panels of layer ``l``,
  evaluation points at the polarized coordinates of the collocation points
  of layer ``l'``.  Multipoles are turned into plane-wave amplitudes on
  the nodes of a Sommerfeld rule, translated diagonally and turned back
  into local expansions.

Local expansions of all passes that share an evaluation tree are summed
before one downward pass per tree.
"""

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import sparse, special

from ..discretization import singular_self_term
from ..sommerfeld import (
    NEGATIVE_TILT,
    RuleBook,
    component_leaf_blocks,
    facing_planes,
    nonzero_components,
    orientation,
    reflect,
    source_mirror,
    target_mirror,
)
from ..special import hankel0
from . import expansions as ex
from .tree import QuadTree, Root, dual_traversal, near_pairs

log = logging.getLogger(__name__)


@dataclass
class FMMParams:
    """Tuning knobs of the fast matvec.

    Attributes
    ----------
    p : int
        Expansion order.
    leaf_size : int
        Maximum points per leaf box.
    theta : float
        Separation parameter: box pairs interact through expansions when
        their center distance is at least ``(1 + theta)`` times the sum of
        their radii.
    kappa : float
        Boxes with ``k * radius > kappa * p`` never carry expansions.
    growth : float
        Largest tolerated exponential growth ``T * |Y|`` when the centers
        of a reaction box pair sit slightly on the wrong side.
    tol : float
        Sommerfeld rule tolerance.
    rank_tol : float
        Relative truncation level of the low-rank reaction translations,
        measured on the translation matrix scaled by the largest attainable
        expansion coefficients; ``0`` keeps the full matrices.
    """

    p: int = 25
    leaf_size: int = 60
    theta: float = 1.0
    kappa: float = 0.5
    growth: float = 3.0
    tol: float = 1e-10
    rank_tol: float = 1e-11

    def validate(self):
        errors = []
        if self.p < 1:
            errors.append("p must be positive")
        if self.leaf_size < 1:
            errors.append("leaf_size must be positive")
        if self.theta < 0:
            errors.append("theta must be non-negative")
        if not 0 < self.tol < 1:
            errors.append("tol must lie in (0, 1)")
        if not 0 <= self.rank_tol < 1:
            errors.append("rank_tol must lie in [0, 1)")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class _TreeData:
    tree: QuadTree
    layer: int
    k: float
    global_index: np.ndarray
    offsets: np.ndarray = None  # point offsets from their leaf center, in perm order
    leaf_perm: np.ndarray = None
    leaf_order: np.ndarray = None
    reaction_basis: np.ndarray = None
    free_basis: np.ndarray = None


@dataclass
class _ReactionPass:
    cid: object
    charge_key: tuple
    eval_key: tuple
    boxes_c: np.ndarray
    boxes_d: np.ndarray
    T: np.ndarray  # (pairs, 2p+1, 2p+1); beta_d += alpha_c @ T


class FMMOperator:
    """Fast matvec reproducing :func:`layerfmm.discretization.assemble_dense`.

    Parameters
    ----------
    mesh : PanelMesh
    stack : LayerStack
    params : FMMParams, optional
    book : RuleBook, optional
    reaction : bool
        Include the reaction passes (disable for testing).
    """

    def __init__(self, mesh, stack, params=None, book=None, reaction=True):
        self.params = params or FMMParams()
        self.params.validate()
        self.mesh = mesh
        self.stack = stack
        self.book = book if book is not None else RuleBook(stack, tol=self.params.tol)
        self.N = mesh.size
        self.timings = {}
        self.stats = {}
        t0 = time.perf_counter()
        self.layers = [l for l in range(stack.n_layers) if mesh.layer_count(l) > 0]
        self.passes_cid = []
        if reaction and not stack.is_homogeneous:
            for l in self.layers:
                for lp in self.layers:
                    self.passes_cid.extend(nonzero_components(stack, l, lp))
        # a matched stack is one medium: a single free-space tree spans every layer
        if stack.is_homogeneous:
            self.free_layers = self.layers[:1]
            spans = {(self.layers[0], None): slice(0, self.N)}
        else:
            self.free_layers = list(self.layers)
            spans = {(l, None): mesh.layer_slice(l) for l in self.layers}
        keys = set(spans)
        for cid in self.passes_cid:
            keys.add((cid.target, target_mirror(cid)))
            keys.add((cid.source, source_mirror(cid)))
        self.keys = sorted(keys, key=lambda k: (k[0], -1 if k[1] is None else k[1]))
        mapped = {}
        for l, m in self.keys:
            pts = mesh.centers[spans.get((l, m), mesh.layer_slice(l))].copy()
            if m is not None:
                pts[:, 1] = reflect(stack, m, pts[:, 1])
            mapped[(l, m)] = pts
        self.root = Root.covering(*mapped.values())
        p = self.params.p
        self.trees = {}
        for key in self.keys:
            l = key[0]
            t = QuadTree(mapped[key], self.root, self.params.leaf_size)
            sl = spans.get(key, mesh.layer_slice(l))
            td = _TreeData(t, l, stack.k[l], np.arange(sl.start, sl.stop))
            pos = t.perm
            td.offsets = t.points[pos] - t.center[t.leaf_of[pos]]
            td.leaf_order = t.leaves[np.argsort(t.start[t.leaves])]
            td.reaction_basis = ex.regular_basis(td.k, td.offsets, p, sign=1)
            if key[1] is None:
                td.free_basis = ex.regular_basis(td.k, td.offsets, p, sign=-1)
            self.trees[key] = td
        self.timings["trees"] = time.perf_counter() - t0

        self._mat_cache = {}
        self._conv_cache = {}
        rows, cols, vals = [], [], []
        t0 = time.perf_counter()
        self._setup_free(rows, cols, vals)
        self.timings["free_setup"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        self.passes = [self._setup_pass(cid, rows, cols, vals) for cid in self.passes_cid]
        self.timings["reaction_setup"] = time.perf_counter() - t0
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
        vals = np.concatenate(vals) if vals else np.zeros(0, dtype=complex)
        self.near = sparse.csr_matrix((vals, (rows, cols)), shape=(self.N, self.N))
        self.near.sum_duplicates()
        self.stats["near_nnz"] = int(self.near.nnz)
        self.stats["passes"] = len(self.passes)
        self.stats["rules"] = len(self.book)
        self._conv_cache = {}
        self._compile()

    # ------------------------------------------------------------------
    # setup

    def _free_admissible(self, t, k):
        th, kap, p = self.params.theta, self.params.kappa, self.params.p

        def adm(c, d):
            R = np.hypot(*(t.center[c] - t.center[d]).T)
            rc, rd = t.radius[c], t.radius[d]
            return (R >= (1 + th) * (rc + rd)) & (k * np.maximum(rc, rd) <= kap * p) & (R > 0)

        return adm

    def _setup_free(self, rows, cols, vals):
        mesh = self.mesh
        self.free = {}
        for l in self.free_layers:
            td = self.trees[(l, None)]
            t = td.tree
            far, near = dual_traversal(t, t, self._free_admissible(t, td.k))
            ci, di = near_pairs(t, t, near)
            gi, gd = td.global_index[ci], td.global_index[di]
            same = ci == di
            c = mesh.centers
            d = np.hypot(*(c[gi[~same]] - c[gd[~same]]).T)
            rows.append(gd[~same])
            cols.append(gi[~same])
            vals.append(0.25j * hankel0(td.k * d) * mesh.lengths[gi[~same]])
            h = mesh.lengths[td.global_index]
            rows.append(td.global_index)
            cols.append(td.global_index)
            vals.append(singular_self_term(td.k, h))
            # group far pairs by translation vector
            shift = t.center[far[1]] - t.center[far[0]]
            key = np.round(shift / (t.root.h * 2.0**-40)).astype(np.int64)
            _, inv = np.unique(key, axis=0, return_inverse=True)
            inv = inv.ravel()
            groups = []
            order = np.argsort(inv, kind="stable")
            bounds = np.flatnonzero(np.diff(inv[order])) + 1
            for g in np.split(order, bounds):
                if g.size == 0:
                    continue
                M = ex.m2l_free_matrix(td.k, shift[g[0]], self.params.p)
                groups.append((far[0][g], far[1][g], M.T.copy()))
            self.free[l] = groups
            self.stats[f"free_far_pairs_{l}"] = int(far[0].size)

    def _reaction_admissible(self, tc, tdv, kc, kd, sgn):
        th, kap, p = self.params.theta, self.params.kappa, self.params.p
        T = 1.15 * max(self.stack.k) + 0.5
        ymin = self.params.growth / T

        def adm(c, d):
            v = tc.center[c] - tdv.center[d]
            R = np.hypot(v[:, 0], v[:, 1])
            Y = sgn * v[:, 1]
            rc, rd = tc.radius[c], tdv.radius[d]
            ok = R >= (1 + th) * (rc + rd)
            ok &= (kc * rc <= kap * p) & (kd * rd <= kap * p)
            ok &= Y >= -np.minimum(ymin, R * math.sin(NEGATIVE_TILT))
            return ok & (R > 0)

        return adm

    def _setup_pass(self, cid, rows, cols, vals):
        stack, mesh, p = self.stack, self.mesh, self.params.p
        ck = (cid.target, target_mirror(cid))
        ek = (cid.source, source_mirror(cid))
        tdc, tde = self.trees[ck], self.trees[ek]
        tc, tdv = tdc.tree, tde.tree
        sgn = orientation(cid)
        far, near = dual_traversal(tc, tdv, self._reaction_admissible(tc, tdv, tdc.k, tde.k, sgn))
        if near[0].size:
            blocks = [(tc.box_points(c), tdv.box_points(d)) for c, d in zip(*near)]
            pc = mesh.centers[tdc.global_index]
            pe = mesh.centers[tde.global_index]
            ta = tc.center[tc.leaf_of, 0]
            sa = tdv.center[tdv.leaf_of, 0]
            mats = component_leaf_blocks(stack, cid, self.book, pc, pe, blocks, ta, sa)
            for (it, is_), G in zip(blocks, mats):
                gi, gd = tdc.global_index[it], tde.global_index[is_]
                rows.append(np.repeat(gd[None, :], len(gi), axis=0).ravel())
                cols.append(np.repeat(gi, len(gd)))
                vals.append((G * mesh.lengths[gi][:, None]).ravel())
        n = 2 * p + 1
        T = np.zeros((far[0].size, n, n), dtype=complex)
        if far[0].size:
            c, d = far
            v = tc.center[c] - tdv.center[d]
            R = np.hypot(v[:, 0], v[:, 1])
            X = v[:, 0]
            Y = sgn * v[:, 1]
            side = np.where(X >= 0, 1, -1)
            cls = self.book.direction_class(np.arctan2(np.maximum(Y, 0.0), np.abs(X)))
            rb = np.round(np.log2(R) * 2).astype(int)
            key = np.stack([side, cls, rb], axis=1)
            _, inv = np.unique(key, axis=0, return_inverse=True)
            inv = inv.ravel()
            for g in range(inv.max() + 1):
                sel = np.nonzero(inv == g)[0]
                cc, dc = tc.center[c[sel]], tdv.center[d[sel]]
                rule = translation_rule(self.book, cid, cc, dc, p)
                W = self._conversion(rule, tdc.k, sgn, "charge")
                V = self._conversion(rule, tde.k, sgn, "eval")
                T[sel] = translation_matrices(stack, cid, rule, cc, dc, W, V)
        self.stats.setdefault("reaction_far_pairs", 0)
        self.stats["reaction_far_pairs"] += int(far[0].size)
        return _ReactionPass(cid, ck, ek, far[0], far[1], T)

    def _conversion(self, rule, k, sgn, side):
        key = (id(rule), k, sgn, side)
        M = self._conv_cache.get(key)
        if M is None:
            M = ex.plane_wave_factors(k, rule.nodes, self.params.p, sgn, side)
            self._conv_cache[key] = M
        return M

    # ------------------------------------------------------------------
    # compiled product

    def _compile(self):
        """Flatten all trees, passes and translations into global index arrays.

        Multipole coefficients of every (tree, kind) instance live in one
        array ``alpha`` and local coefficients of every evaluation tree in
        one array ``beta``, so each stage of the product is a handful of
        vectorized operations independent of the number of passes.
        """
        p = self.params.p
        n = np.arange(-p, p + 1)
        self._far = None
        if not any(self.free.get(l) for l in self.free_layers) and not any(
            ps.boxes_c.size for ps in self.passes
        ):
            return
        # upward instances: free multipoles on identity trees, reaction multipoles on charge trees
        inst = [((l, None), -1) for l in self.free_layers if self.free.get(l)]
        inst += sorted({(ps.charge_key, 1) for ps in self.passes if ps.boxes_c.size},
                       key=lambda v: self.keys.index(v[0]))
        a_off, off = {}, 0
        for key, s in inst:
            a_off[(key, s)] = off
            off += self.trees[key].tree.n_boxes
        n_alpha = off
        e_keys = [(l, None) for l in self.free_layers if self.free.get(l)]
        e_keys += [ps.eval_key for ps in self.passes if ps.boxes_c.size]
        e_keys = sorted(set(e_keys), key=self.keys.index)
        b_off, off = {}, 0
        for key in e_keys:
            b_off[key] = off
            off += self.trees[key].tree.n_boxes
        n_beta = off

        # leaf P2M and L2P
        def leaf_maps(items, offs, key_of, basis_of):
            gidx, basis, seg_start, seg_row = [], [], [], []
            pos = 0
            for item in items:
                td = self.trees[key_of(item)]
                t = td.tree
                gidx.append(td.global_index[t.perm])
                basis.append(basis_of(item, td))
                seg_start.append(pos + t.start[td.leaf_order])
                seg_row.append(offs[item] + td.leaf_order)
                pos += len(t.perm)
            return (np.concatenate(gidx), np.concatenate(basis),
                    np.concatenate(seg_start), np.concatenate(seg_row))

        w = 2 * p + 1
        gidx, basis, seg_start, seg_row = leaf_maps(
            inst, a_off, lambda it: it[0],
            lambda it, td: td.free_basis if it[1] < 0 else td.reaction_basis,
        )
        # P2M as one sparse map phi -> alpha (panel lengths folded in)
        row = np.repeat(seg_row, np.diff(np.append(seg_start, len(gidx))))
        self._p2m = sparse.csr_matrix(
            ((basis * self.mesh.lengths[gidx][:, None]).ravel(),
             ((row[:, None] * w + np.arange(w)).ravel(), np.repeat(gidx, w))),
            shape=(n_alpha * w, self.N),
        )
        gidx, basis, seg_start, seg_row = leaf_maps(
            e_keys, b_off, lambda it: it, lambda it, td: td.reaction_basis
        )
        # L2P as one sparse map beta -> y
        row = np.repeat(seg_row, np.diff(np.append(seg_start, len(gidx))))
        self._l2p = sparse.csr_matrix(
            (basis.ravel(), (np.repeat(gidx, w), (row[:, None] * w + np.arange(w)).ravel())),
            shape=(self.N, n_beta * w),
        )

        # per-level shifts; child - parent = h_child * (+-1, +-1) for every tree
        depth = max(self.trees[key].tree.depth for key in self.keys)
        ang = np.arctan2([-1, -1, 1, 1], [-1, 1, -1, 1])
        kvals = sorted({self.trees[key].k for key in self.keys})

        def level_plan(items, offs, lev, key_of, sign_of):
            rows_c, rows_p, q, sg, kk = [], [], [], [], []
            for item in items:
                td = self.trees[key_of(item)]
                t = td.tree
                if lev > t.depth:
                    continue
                boxes = t.levels[lev]
                rows_c.append(offs[item] + boxes)
                rows_p.append(offs[item] + t.parent[boxes])
                q.append(t.quadrant[boxes])
                sg.append(np.full(len(boxes), sign_of(item)))
                kk.append(np.full(len(boxes), kvals.index(td.k)))
            if not rows_c:
                return None
            rows_c, rows_p, q, sg, kk = map(np.concatenate, (rows_c, rows_p, q, sg, kk))
            order = np.argsort(kk, kind="stable")
            rows_c, rows_p, q, sg, kk = (v[order] for v in (rows_c, rows_p, q, sg, kk))
            a = ang[q]
            inner = np.exp(-1j * (sg * a)[:, None] * n[None, :])
            outer = np.conj(inner)
            h = self.root.h * 2.0 ** -lev
            groups = []
            for g in np.unique(kk):
                sl = np.flatnonzero(kk == g)
                x = kvals[g] * h * math.sqrt(2.0)
                groups.append((slice(sl[0], sl[-1] + 1), sp_jv_matrix(p, x)))
            return rows_c, rows_p, inner, outer, groups

        self._m2m = []
        for lev in range(depth, 0, -1):
            plan = level_plan(inst, a_off, lev, lambda it: it[0], lambda it: it[1])
            if plan is not None:
                rows_c, rows_p, inner, outer, groups = plan
                # reduce children into parents: sort by parent
                order = np.argsort(rows_p, kind="stable")
                starts = np.flatnonzero(np.r_[True, np.diff(rows_p[order]) != 0])
                self._m2m.append((rows_c, inner, outer, groups, order, starts, rows_p[order][starts]))
        self._l2l = []
        for lev in range(1, depth + 1):
            plan = level_plan(e_keys, b_off, lev, lambda it: it, lambda it: -1)
            if plan is not None:
                # beta_child = ((beta_parent * e^{i m a}) @ J^T) * e^{-i j a}
                self._l2l.append(plan)

        # far translations: free-space pairs as full matrices, reaction pairs as
        # low-rank factors U @ Vh bucketed by rank
        src, dst, mats = [], [], []
        for l in self.free_layers:
            for c, d, MT in self.free.get(l, []):
                src.append(a_off[((l, None), -1)] + c)
                dst.append(b_off[(l, None)] + d)
                mats.append(np.broadcast_to(MT, (len(c),) + MT.shape))
        n_full = sum(len(v) for v in src)
        r_src, r_dst, r_mats, wa, wb = [], [], [], [], []
        for ps in self.passes:
            if ps.boxes_c.size:
                tc, td = self.trees[ps.charge_key], self.trees[ps.eval_key]
                r_src.append(a_off[(ps.charge_key, 1)] + ps.boxes_c)
                r_dst.append(b_off[ps.eval_key] + ps.boxes_d)
                r_mats.append(ps.T)
                wa.append(coefficient_bounds(tc.k * tc.tree.radius[ps.boxes_c], p))
                wb.append(coefficient_bounds(td.k * td.tree.radius[ps.boxes_d], p))
                ps.T = None  # now owned by the batch
        buckets = []
        if r_mats:
            RT = np.concatenate(r_mats)
            if self.params.rank_tol > 0:
                buckets = low_rank_buckets(RT, np.concatenate(wa), np.concatenate(wb),
                                           self.params.rank_tol, offset=n_full)
                RT = RT[:0]
            mats.append(RT)
            src += r_src
            dst += r_dst
        src, dst = np.concatenate(src), np.concatenate(dst)
        T = np.concatenate(mats)
        order = np.argsort(dst, kind="stable")
        starts = np.flatnonzero(np.r_[True, np.diff(dst[order]) != 0])
        self._far = (src, T, buckets, order, starts, dst[order][starts])
        self.stats["reaction_ranks"] = [U.shape[2] for _, U, _ in buckets]
        self._n_alpha, self._n_beta = n_alpha, n_beta

    def matvec(self, phi):
        """Apply the system matrix to a density vector."""
        phi = np.asarray(phi, dtype=complex)
        if phi.shape != (self.N,):
            raise ValueError(f"expected a vector of length {self.N}")
        y = self.near @ phi
        if self._far is None:
            return y
        p = self.params.p
        alpha = (self._p2m @ phi).reshape(self._n_alpha, 2 * p + 1)
        for rows_c, inner, outer, groups, order, starts, parents in self._m2m:
            tmp = alpha[rows_c] * inner
            for sl, J in groups:
                tmp[sl] = tmp[sl] @ J
            tmp *= outer
            alpha[parents] += np.add.reduceat(tmp[order], starts, axis=0)
        src, T, buckets, order, starts, dst = self._far
        contrib = np.empty((len(src), 2 * p + 1), dtype=complex)
        nf = len(T)
        contrib[:nf] = np.matmul(alpha[src[:nf]][:, None, :], T)[:, 0, :]
        for idx, U, Vh in buckets:
            contrib[idx] = np.matmul(np.matmul(alpha[src[idx]][:, None, :], U), Vh)[:, 0, :]
        contrib = contrib[order]
        beta = np.zeros((self._n_beta, 2 * p + 1), dtype=complex)
        beta[dst] = np.add.reduceat(contrib, starts, axis=0)
        for rows_c, rows_p, inner, outer, groups in self._l2l:
            tmp = beta[rows_p] * inner
            for sl, J in groups:
                tmp[sl] = tmp[sl] @ J.T
            beta[rows_c] += tmp * outer
        y += self._l2p @ beta.ravel()
        return y

    __call__ = matvec


def coefficient_bounds(kr, p):
    """Bounds ``min(1, (kr/2)^|n| / |n|!)`` of ``|J_n|`` on ``[0, kr]``, shape (len(kr), 2p+1)."""
    n = np.abs(np.arange(-p, p + 1))
    logb = n[None, :] * np.log(np.maximum(np.asarray(kr, float), 1e-300)[:, None] / 2) - special.gammaln(n + 1)[None, :]
    # floored so the factors can be unscaled again without overflow
    return np.exp(np.clip(logb, -300.0, 0.0))


def low_rank_buckets(T, wa, wb, tol, offset=0, step=4):
    """Truncated SVD factors of translation matrices, grouped by rank.

    Each ``T[i]`` is replaced by ``U @ Vh`` with the rank chosen so that
    ``diag(wa[i]) (T[i] - U Vh) diag(wb[i])`` stays below ``tol`` times its
    largest singular value. Ranks are rounded up to multiples of ``step``
    so pairs batch into few groups.

    Returns
    -------
    list of (idx, U, Vh)
        ``idx`` are pair indices shifted by ``offset``; ``U`` has shape
        (len(idx), m, r), ``Vh`` (len(idx), r, m).
    """
    m = T.shape[1]
    A = wa[:, :, None] * T * wb[:, None, :]
    Ua, s, Vha = np.linalg.svd(A)
    rank = np.sum(s > tol * s[:, :1], axis=1)
    rank = np.minimum(np.maximum(-(-rank // step) * step, step), m)
    out = []
    for r in np.unique(rank):
        i = np.flatnonzero(rank == r)
        U = Ua[i, :, :r] * s[i, None, :r] / wa[i, :, None]
        Vh = Vha[i, :r, :] / wb[i, None, :]
        out.append((i + offset, U, Vh))
    return out


def translation_rule(book, cid, c_centers, d_centers, p):
    """Rule serving reaction translations between charge and evaluation box centers.

    All pairs must share one side (sign of ``X``) and one direction class.
    """
    v = np.atleast_2d(c_centers) - np.atleast_2d(d_centers)
    X = v[:, 0]
    Y = orientation(cid) * v[:, 1]
    R = np.hypot(X, v[:, 1])
    side = np.where(X >= 0, 1, -1)
    cls = book.direction_class(np.arctan2(np.maximum(Y, 0.0), np.abs(X)))
    if np.any(side != side[0]) or np.any(cls != cls[0]):
        raise ValueError("box pairs of one rule must share side and direction class")
    return book.translation(float(R.min()), float(np.abs(X).max()), int(side[0]), int(cls[0]), 2 * p)


def translation_matrices(stack, cid, rule, c_centers, d_centers, W=None, V=None, p=None, chunk=64):
    """Reaction M2L matrices ``T`` with ``beta_d += alpha_c @ T`` for each box pair.

    Parameters
    ----------
    c_centers : ndarray, shape (n, 2)
        Charge box centers in effective target coordinates.
    d_centers : ndarray, shape (n, 2)
        Evaluation box centers in polarized source coordinates.
    W, V : ndarray, optional
        Precomputed conversion factors; built from ``p`` when omitted.
    """
    sgn = orientation(cid)
    if W is None:
        W = ex.plane_wave_factors(stack.k[cid.target], rule.nodes, p, sgn, "charge")
        V = ex.plane_wave_factors(stack.k[cid.source], rule.nodes, p, sgn, "eval")
    Pt, Ps = facing_planes(stack, cid)
    lam = rule.nodes
    kw = rule.kernel_weights(cid)
    ky_t, ky_s = rule.ky(cid.target), rule.ky(cid.source)
    c_centers, d_centers = np.atleast_2d(c_centers), np.atleast_2d(d_centers)
    X = c_centers[:, 0] - d_centers[:, 0]
    Yc, Yd = c_centers[:, 1], d_centers[:, 1]
    out = np.empty((len(X), W.shape[0], V.shape[1]), dtype=complex)
    for a in range(0, len(X), chunk):
        b = min(len(X), a + chunk)
        with np.errstate(over="ignore", under="ignore"):
            f = kw * np.exp(
                1j * lam[None, :] * X[a:b, None]
                + sgn * 1j * ky_t[None, :] * (Yc[a:b] - Pt)[:, None]
                - sgn * 1j * ky_s[None, :] * (Yd[a:b] - Ps)[:, None]
            )
        out[a:b] = (W[None, :, :] * f[:, None, :]) @ V
    return out


def sp_jv_matrix(p, x):
    """``A[m, n] = J_{n-m}(x)`` for ``m, n = -p..p``."""
    n = np.arange(-p, p + 1)
    return special.jv(n[None, :] - n[:, None], x)


def fmm_matvec(op, phi):
    """Fast product of the system matrix prepared in ``op`` with ``phi``."""
    return op.matvec(phi)
