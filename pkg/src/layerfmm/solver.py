"""GMRES driver and the overlapping leaf-box preconditioner."""

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.spatial import cKDTree

from .discretization import singular_self_term
from .special import hankel0

log = logging.getLogger(__name__)


@dataclass
class LeafBlock:
    """Local free-space system of one leaf box and its touching neighbours.

    Attributes
    ----------
    box : int
        Leaf index in its layer's tree.
    layer : int
    owned : ndarray of int
        Global indices of the panels in the leaf.
    halo : ndarray of int
        Global indices of the panels in the leaf and its neighbours; the
        owned panels come first.
    solve_rows : ndarray
        Rows of the local inverse belonging to the owned panels
        (``len(owned) x len(halo)``).
    fallback : bool
        True when the local matrix was singular and only its diagonal is used.
    """

    box: int
    layer: int
    owned: np.ndarray
    halo: np.ndarray
    solve_rows: np.ndarray
    fallback: bool = False


class Preconditioner:
    """Sum over leaf blocks of ``S_B Q_B P_B^{-1} R_B`` as one sparse operator."""

    def __init__(self, blocks, n):
        self.blocks = blocks
        self.n = n
        rows, cols, vals = [], [], []
        for b in blocks:
            rows.append(np.repeat(b.owned, len(b.halo)))
            cols.append(np.tile(b.halo, len(b.owned)))
            vals.append(b.solve_rows.ravel())
        if blocks:
            rows, cols, vals = map(np.concatenate, (rows, cols, vals))
        else:
            rows = cols = np.zeros(0, dtype=int)
            vals = np.zeros(0, dtype=complex)
        self.matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def __call__(self, v):
        return self.matrix @ v

    @property
    def n_fallback(self):
        return sum(b.fallback for b in self.blocks)


def leaf_neighbours(tree):
    """For every leaf, the leaves whose boxes touch it (itself included)."""
    leaves = tree.leaves
    c = tree.center[leaves]
    h = tree.half[leaves]
    kd = cKDTree(c)
    hmax = h.max()
    out = {}
    for i, b in enumerate(leaves):
        cand = kd.query_ball_point(c[i], r=h[i] + hmax + 1e-12 * hmax, p=np.inf)
        cand = np.asarray(cand)
        gap = np.max(np.abs(c[cand] - c[i]), axis=1) - (h[cand] + h[i])
        out[b] = leaves[cand[gap <= 1e-9 * hmax]]
    return out


def build_preconditioner(op):
    """Leaf-block preconditioner from the free-space trees of an :class:`FMMOperator`."""
    mesh, stack = op.mesh, op.stack
    blocks = []
    for l in op.free_layers:
        td = op.trees[(l, None)]
        t = td.tree
        k = stack.k[l]
        nbrs = leaf_neighbours(t)
        for b in t.leaves:
            own_loc = t.box_points(b)
            others = [t.box_points(o) for o in nbrs[b] if o != b]
            halo_loc = np.concatenate([own_loc] + others) if others else own_loc
            owned = td.global_index[own_loc]
            halo = td.global_index[halo_loc]
            c = mesh.centers[halo]
            h = mesh.lengths[halo]
            d = np.hypot(c[:, None, 0] - c[None, :, 0], c[:, None, 1] - c[None, :, 1])
            np.fill_diagonal(d, 1.0)
            P = 0.25j * hankel0(k * d) * h[None, :]
            np.fill_diagonal(P, singular_self_term(k, h))
            n_own = len(owned)
            fallback = False
            try:
                lu = linalg.lu_factor(P, check_finite=True)
                rhs = np.zeros((len(halo), n_own), dtype=complex)
                rhs[np.arange(n_own), np.arange(n_own)] = 1.0
                # rows of P^{-1} for the owned panels: solve with P^T
                rows = linalg.lu_solve(lu, rhs, trans=1).T
                if not np.all(np.isfinite(rows)):
                    raise linalg.LinAlgError("non-finite local inverse")
            except (linalg.LinAlgError, ValueError) as err:
                log.warning("leaf block %d of layer %d singular (%s); using its diagonal", b, l, err)
                rows = np.zeros((n_own, len(halo)), dtype=complex)
                rows[np.arange(n_own), np.arange(n_own)] = 1.0 / np.diag(P)[:n_own]
                fallback = True
            blocks.append(LeafBlock(int(b), l, owned, halo, rows, fallback))
    return Preconditioner(blocks, mesh.size)


def apply_preconditioner(pre, v):
    """Apply the preconditioner to ``v``."""
    return pre(np.asarray(v))


@dataclass
class SolveReport:
    """Outcome of a GMRES run.

    Attributes
    ----------
    iterations : int
    residual_history : list of float
        Relative (preconditioned, if applicable) residual after each iteration,
        starting with the initial one.
    final_relative_residual : float
        True residual ``||b - K x|| / ||b||``.
    converged : bool
    preconditioned : bool
    timings : dict
        Seconds spent per phase.
    """

    iterations: int = 0
    residual_history: list = field(default_factory=list)
    final_relative_residual: float = float("nan")
    converged: bool = False
    preconditioned: bool = False
    timings: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(
            iterations=self.iterations,
            residual_history=[float(r) for r in self.residual_history],
            final_relative_residual=float(self.final_relative_residual),
            converged=bool(self.converged),
            preconditioned=bool(self.preconditioned),
            timings={k: float(v) for k, v in self.timings.items()},
        )


def gmres(matvec, b, tol=1e-8, max_iter=500, preconditioner=None, restart=None, x0=None):
    """Left-preconditioned GMRES with modified Gram-Schmidt and Givens rotations.

    Parameters
    ----------
    matvec : callable
        ``x -> K x``.
    b : ndarray
    tol : float
        Stop when the (preconditioned) relative residual drops below ``tol``.
    max_iter : int
        Total iteration budget.
    preconditioner : callable, optional
        ``v -> M^{-1} v``.
    restart : int, optional
        Krylov dimension before a restart; ``None`` disables restarts.

    Returns
    -------
    x : ndarray
    report : SolveReport
    """
    b = np.asarray(b, dtype=complex)
    n = b.size
    rep = SolveReport(preconditioned=preconditioner is not None)
    t_mv = t_pc = 0.0

    def op(v):
        nonlocal t_mv, t_pc
        t0 = time.perf_counter()
        w = matvec(v)
        t1 = time.perf_counter()
        t_mv += t1 - t0
        if preconditioner is not None:
            w = preconditioner(w)
            t_pc += time.perf_counter() - t1
        return w

    def prec(v):
        nonlocal t_pc
        if preconditioner is None:
            return v
        t0 = time.perf_counter()
        w = preconditioner(v)
        t_pc += time.perf_counter() - t0
        return w

    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    bnorm = np.linalg.norm(prec(b))
    if bnorm == 0:
        rep.converged = True
        rep.final_relative_residual = 0.0
        rep.residual_history = [0.0]
        return x, rep
    m = max_iter if restart is None else min(restart, max_iter)
    total = 0
    r = prec(b - matvec(x)) if x0 is not None else prec(b)
    beta = np.linalg.norm(r)
    rep.residual_history.append(beta / bnorm)
    while True:
        if beta / bnorm <= tol:
            rep.converged = True
            break
        if total >= max_iter:
            break
        V = np.zeros((m + 1, n), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m, dtype=complex)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(m):
            if total >= max_iter:
                break
            w = op(V[j])
            for i in range(j + 1):
                H[i, j] = np.vdot(V[i], w)
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] != 0:
                V[j + 1] = w / H[j + 1, j]
            # unitary rotations [[conj(c), conj(s)], [-s, c]]
            for i in range(j):
                t = np.conj(cs[i]) * H[i, j] + np.conj(sn[i]) * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            a, c = H[j, j], H[j + 1, j]
            den = np.sqrt(abs(a) ** 2 + abs(c) ** 2)
            if den == 0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = a / den
                sn[j] = c / den
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = np.conj(cs[j]) * g[j]
            total += 1
            j_done = j + 1
            res = abs(g[j + 1]) / bnorm
            rep.residual_history.append(float(res))
            if res <= tol or H[j, j] == 0:
                break
        y = linalg.solve_triangular(H[:j_done, :j_done], g[:j_done])
        x = x + V[:j_done].T @ y
        if rep.residual_history[-1] <= tol:
            rep.converged = True
            break
        if total >= max_iter:
            break
        r = prec(b - matvec(x))
        beta = np.linalg.norm(r)
    rep.iterations = total
    true_res = np.linalg.norm(b - matvec(x)) / np.linalg.norm(b)
    rep.final_relative_residual = float(true_res)
    rep.timings["matvec"] = t_mv
    rep.timings["preconditioner"] = t_pc
    if not rep.converged:
        log.warning("GMRES stopped after %d iterations without converging", total)
    return x, rep


@dataclass
class SceneResult:
    """Everything produced by :func:`solve_scene`."""

    phi: object
    report: SolveReport
    mesh: object
    operator: object
    rhs: object
    errors: dict = field(default_factory=dict)
    grid: dict = None


def _probe_set(cfg, mesh, stack):
    from .discretization import probe_curve

    curves = cfg.curves()
    m = cfg.output.probe_points
    per = [c.perimeter() for c in curves]
    pts, wts = [], []
    for c, pl in zip(curves, per):
        n = max(16, int(round(m * pl / sum(per))))
        p, w = probe_curve(c, cfg.output.probe_offset, n)
        pts.append(p)
        wts.append(w)
    pts = np.concatenate(pts)
    wts = np.concatenate(wts)
    keep = ~mesh.inside(pts)
    return pts[keep], wts[keep]


def evaluate_grid(mesh, stack, phi, book, bounds, nx, ny):
    """Scattered field on a regular grid; points inside scatterers are masked."""
    from .discretization import scattered_field

    xs = np.linspace(bounds[0], bounds[1], nx)
    ys = np.linspace(bounds[2], bounds[3], ny)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    mask = mesh.inside(pts)
    u = np.zeros(len(pts), dtype=complex)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if (~mask).any():
            u[~mask] = scattered_field(mesh, stack, phi, pts[~mask], book)
    return dict(points=pts, u=u, mask=mask, bounds=list(bounds), nx=nx, ny=ny)


def default_bounds(cfg, margin=1.0):
    """Box around the scatterers padded by ``margin``."""
    pts = []
    for c in cfg.curves():
        if c.kind == "polygon":
            pts.append(c.vertices)
        else:
            ctr = np.asarray(c.params["center"])
            r = c.params["b"] + abs(c.params["a"])
            pts.append(ctr + np.array([[-r, -r], [r, r]]))
    p = np.concatenate(pts)
    lo, hi = p.min(axis=0) - margin, p.max(axis=0) + margin
    return [float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])]


def solve_scene(cfg, n_total=None, precondition=None, grid=None, book=None, tol=None):
    """Run mesh, rule, trees, preconditioner, GMRES and optional field evaluation.

    Parameters
    ----------
    cfg : SceneConfig
    n_total : int, optional
        Override the panel target of the configuration.
    precondition : bool, optional
        Override the configured preconditioning switch.
    grid : bool, optional
        Override the configured grid output switch.
    tol : float, optional
        Override the configured GMRES tolerance.

    Raises
    ------
    ValueError
        If the scene has no scatterers.
    """
    from .discretization import error_norms, point_source_field, point_source_rhs, rhs, scattered_field
    from .fmm.operator import FMMOperator, FMMParams
    from .geometry import mesh_scene
    from .sommerfeld import RuleBook

    if not cfg.scatterers:
        raise ValueError("nothing to solve: empty scatterer list")
    timings = {}
    stack = cfg.layer_stack()
    t0 = time.perf_counter()
    mesh = mesh_scene(cfg.curves(), cfg.panel_counts(n_total), stack)
    timings["mesh"] = time.perf_counter() - t0
    book = book if book is not None else RuleBook(stack, tol=cfg.quad_tol)
    t0 = time.perf_counter()
    if cfg.incidence.kind == "point":
        b = point_source_rhs(mesh, stack, cfg.incidence.source, book)
    else:
        wave = cfg.plane_wave()
        wave.check(stack)
        b = rhs(mesh, stack, wave)
    timings["rhs"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    params = FMMParams(p=cfg.fmm.p, leaf_size=cfg.fmm.leaf_size, theta=cfg.fmm.theta, tol=cfg.quad_tol)
    op = FMMOperator(mesh, stack, params, book)
    timings["assembly"] = time.perf_counter() - t0
    timings.update({f"assembly_{k}": v for k, v in op.timings.items()})
    use_pc = cfg.gmres.precondition if precondition is None else precondition
    pre = None
    if use_pc:
        t0 = time.perf_counter()
        pre = build_preconditioner(op)
        timings["preconditioner_build"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    phi, rep = gmres(
        op.matvec, b,
        tol=cfg.gmres.tol if tol is None else tol,
        max_iter=cfg.gmres.max_iter,
        preconditioner=pre,
        restart=cfg.gmres.restart or None,
    )
    timings["gmres"] = time.perf_counter() - t0
    timings["matvec_total"] = rep.timings.get("matvec", 0.0)
    timings["preconditioner_apply_total"] = rep.timings.get("preconditioner", 0.0)
    rep.timings = timings
    res = SceneResult(phi, rep, mesh, op, b)
    if cfg.incidence.kind == "point":
        t0 = time.perf_counter()
        pts, w = _probe_set(cfg, mesh, stack)
        exact = point_source_field(stack, cfg.incidence.source, pts, book)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            approx = scattered_field(mesh, stack, phi, pts, book)
        linf, l2 = error_norms(approx, exact, w)
        res.errors = dict(linf=linf, l2=l2, probes=int(len(pts)))
        timings["probe_errors"] = time.perf_counter() - t0
    want_grid = cfg.output.grid if grid is None else grid
    if want_grid:
        t0 = time.perf_counter()
        bounds = cfg.output.bounds or default_bounds(cfg)
        res.grid = evaluate_grid(mesh, stack, phi, book, bounds, cfg.output.nx, cfg.output.ny)
        timings["grid"] = time.perf_counter() - t0
    return res
