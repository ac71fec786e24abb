"""Multipole and local expansions of the 2D Helmholtz kernel.

Coefficient vectors hold orders ``-p..p`` (``2p + 1`` entries).

Free-space multipoles use ``alpha_n = sum_j Q_j J_n(k rho_j) exp(-i n theta_j)``
so that the far field is ``(i/4) sum_n alpha_n H_n(k r) exp(i n theta)``.
Reaction multipoles use ``exp(+i n theta_j)``, matching the plane-wave
expansion ``exp(i(lam x + k_y y)) = sum_n J_n(k rho) exp(i n theta) omega^n``.
Local expansions are ``sum_m beta_m J_m(k rho) exp(i m theta)`` for both.
"""

import numpy as np
from scipy import special as sp

from ..special import hn_table, jn_table


def _polar(d):
    d = np.asarray(d, dtype=float)
    return np.hypot(d[..., 0], d[..., 1]), np.arctan2(d[..., 1], d[..., 0])


def regular_basis(k, offsets, p, sign=1):
    """``J_n(k rho) exp(sign i n theta)`` for ``n = -p..p``; shape ``(n_pts, 2p+1)``."""
    rho, th = _polar(offsets)
    n = np.arange(-p, p + 1)
    return jn_table(p, k * rho) * np.exp(sign * 1j * n * th[..., None])


def p2m_free(k, offsets, q, p):
    """Free-space multipole of charges ``q`` at ``offsets`` from the center."""
    return np.asarray(q) @ regular_basis(k, offsets, p, sign=-1)


def p2m_reaction(k, offsets, q, p, orientation=1):
    """Reaction multipole ``alpha^+`` (or ``alpha^-`` with the ``(-1)^n`` factor)."""
    a = np.asarray(q) @ regular_basis(k, offsets, p, sign=1)
    if orientation < 0:
        a = a * (-1.0) ** np.abs(np.arange(-p, p + 1))
    return a


def m2m_matrix(k, shift, p, sign=1):
    """Matrix ``M`` with ``alpha_parent = M @ alpha_child``.

    ``shift`` is ``child center - parent center``; ``sign = -1`` for
    free-space multipoles, ``+1`` for reaction multipoles.
    """
    rho, th = _polar(shift)
    n = np.arange(-p, p + 1)
    diff = n[:, None] - n[None, :]
    return sp.jv(diff, k * rho) * np.exp(sign * 1j * diff * th)


def l2l_matrix(k, shift, p):
    """Matrix ``M`` with ``beta_child = M @ beta_parent``; ``shift = child - parent``."""
    rho, th = _polar(shift)
    n = np.arange(-p, p + 1)
    diff = n[None, :] - n[:, None]  # m - j
    return sp.jv(diff, k * rho) * np.exp(1j * diff * th)


def m2l_free_matrix(k, shift, p):
    """Matrix ``M`` with ``beta = M @ alpha`` including the ``i/4`` factor.

    ``shift`` is ``target center - source center``.
    """
    rho, th = _polar(shift)
    n = np.arange(-p, p + 1)
    diff = n[None, :] - n[:, None]  # n - m, rows m, cols n
    h = hn_table(2 * p, k * rho)  # orders -2p..2p
    return 0.25j * h[diff + 2 * p] * np.exp(1j * diff * th)


def m2p_free(k, alpha, offsets, p):
    """Evaluate a free-space multipole at ``offsets`` from its center."""
    rho, th = _polar(offsets)
    n = np.arange(-p, p + 1)
    h = hn_table(p, k * rho)
    return 0.25j * (h * np.exp(1j * n * th[..., None])) @ alpha


def l2p(k, beta, offsets, p):
    """Evaluate a local expansion at ``offsets`` from its center."""
    return regular_basis(k, offsets, p, sign=1) @ beta


def plane_wave_factors(k, lam, p, orientation, side):
    """Conversion matrices between expansion coefficients and plane-wave amplitudes.

    ``side="charge"`` gives ``W`` with ``a = alpha @ W`` (``alpha`` of the
    ``+`` form); ``side="eval"`` gives ``V`` with ``beta = b @ V``.
    Shapes are ``(2p+1, nq)`` and ``(nq, 2p+1)``.
    """
    ky = np.sqrt(k * k - lam * lam)
    ky = np.where(ky.imag < 0, -ky, ky)
    om = (ky + 1j * lam) / k
    n = np.arange(-p, p + 1)
    if side == "charge":
        if orientation > 0:
            return om[None, :] ** n[:, None]
        return (-1.0) ** np.abs(n)[:, None] * om[None, :] ** (-n[:, None])
    if orientation > 0:
        return (-1.0) ** np.abs(n)[None, :] * om[:, None] ** n[None, :]
    return om[:, None] ** (-n[None, :])
