"""Estimator-style facade over the scene solver."""

import os

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .config import SceneConfig, from_dict, parse_config


def _as_config(scene):
    if isinstance(scene, SceneConfig):
        return scene
    if isinstance(scene, dict):
        return from_dict(scene)
    if isinstance(scene, (str, os.PathLike)):
        return parse_config(scene)
    raise TypeError(f"scene must be a SceneConfig, a mapping or a path, got {type(scene).__name__}")


class LayeredScatteringSolver(BaseEstimator):
    """Sound-soft scattering in a layered medium.

    ``fit`` solves the boundary integral equation for a scene and
    ``predict`` evaluates the scattered field at points.

    Parameters
    ----------
    n : int, optional
        Total panel target; ``None`` keeps the scene value.
    p : int
        Expansion order.
    leaf_size : int
        Maximum panels per leaf box.
    theta : float
        Separation parameter of the far-field test.
    tol : float
        GMRES relative residual tolerance.
    max_iter : int
        GMRES iteration cap.
    precondition : bool
        Use the overlapping leaf-box preconditioner.

    Attributes
    ----------
    phi_ : ndarray of complex
        Panel densities.
    mesh_ : PanelMesh
    report_ : SolveReport
    n_iter_ : int
    errors_ : dict
        Probe errors for point-source scenes, empty otherwise.
    """

    def __init__(self, n=None, p=25, leaf_size=60, theta=1.0, tol=1e-8, max_iter=500, precondition=True):
        self.n = n
        self.p = p
        self.leaf_size = leaf_size
        self.theta = theta
        self.tol = tol
        self.max_iter = max_iter
        self.precondition = precondition

    def fit(self, scene, y=None):
        """Solve for the boundary density of ``scene``.

        Parameters
        ----------
        scene : SceneConfig, dict or path
        y : ignored

        Returns
        -------
        self
        """
        from .sommerfeld import RuleBook
        from .solver import solve_scene

        base = _as_config(scene)
        raw = base.to_dict()
        raw["fmm"].update(p=self.p, leaf_size=self.leaf_size, theta=self.theta)
        raw["gmres"].update(tol=self.tol, max_iter=self.max_iter, precondition=bool(self.precondition))
        if self.n is not None:
            raw["discretization"]["n"] = self.n
        cfg = from_dict(raw)
        self.config_ = cfg
        self.stack_ = cfg.layer_stack()
        self.book_ = RuleBook(self.stack_, tol=cfg.quad_tol)
        res = solve_scene(cfg, grid=False, book=self.book_)
        self.phi_ = res.phi
        self.mesh_ = res.mesh
        self.report_ = res.report
        self.n_iter_ = res.report.iterations
        self.errors_ = res.errors
        return self

    def predict(self, points):
        """Scattered field at ``points``, shape (m, 2); points inside a scatterer give ``nan``."""
        from .discretization import scattered_field

        check_is_fitted(self, "phi_")
        pts = check_array(points, dtype=np.float64)
        if pts.shape[1] != 2:
            raise ValueError(f"points must have two columns, got {pts.shape[1]}")
        u = np.full(len(pts), np.nan + 0j)
        out = ~self.mesh_.inside(pts)
        if out.any():
            u[out] = scattered_field(self.mesh_, self.stack_, self.phi_, pts[out], self.book_)
        return u

    def score(self, points, u_true):
        """Negative relative L2 error of :meth:`predict` against ``u_true``."""
        u = self.predict(points)
        u_true = np.asarray(u_true)
        ok = np.isfinite(u)
        return -float(np.linalg.norm(u[ok] - u_true[ok]) / np.linalg.norm(u_true[ok]))
