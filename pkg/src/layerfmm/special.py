"""Cylindrical Bessel and Hankel functions of integer order.

Scalar entry points validate their arguments and enforce an order cap.
The array helpers ``jn_table`` and ``hn_table`` are the vectorized forms
used by the expansion code; they accept ``x = 0`` for ``J_n`` because a
source sitting exactly on a box center is routine there.

Values come from ``scipy.special`` (AMOS / Cephes), which meets the
accuracy targets of this module; the tests check them against
independent power-series oracles.
"""

import numpy as np
from scipy import special as _sp

EULER_GAMMA = float(np.euler_gamma)

ORDER_CAP = 128


def _check(n, x, order_cap):
    n = int(n)
    if abs(n) > order_cap:
        raise ValueError(f"order |n|={abs(n)} exceeds cap {order_cap}")
    x = float(x)
    if not np.isfinite(x) or x <= 0.0:
        raise ValueError(f"argument must be positive and finite, got x={x}")
    return n, x


def bessel_j(n, x, order_cap=ORDER_CAP):
    """Bessel function of the first kind ``J_n(x)`` for ``x > 0``.

    Raises
    ------
    ValueError
        If ``x <= 0`` or ``|n|`` exceeds ``order_cap``.
    """
    n, x = _check(n, x, order_cap)
    return float(_sp.jv(n, x))


def bessel_y(n, x, order_cap=ORDER_CAP):
    """Bessel function of the second kind ``Y_n(x)`` for ``x > 0``."""
    n, x = _check(n, x, order_cap)
    return float(_sp.yv(n, x))


def hankel1(n, x, order_cap=ORDER_CAP):
    """Hankel function of the first kind ``H_n(x) = J_n(x) + i Y_n(x)``."""
    n, x = _check(n, x, order_cap)
    return complex(_sp.hankel1(n, x))


def jn_table(p, x):
    """Return ``J_n(x)`` for ``n = -p..p`` as an array of shape ``x.shape + (2p+1,)``.

    ``x`` may contain zeros.
    """
    x = np.asarray(x, dtype=float)
    n = np.arange(-p, p + 1)
    return _sp.jv(n, x[..., None])


def hn_table(nmax, x):
    """Return ``H_n(x)`` for ``n = -nmax..nmax``; ``x`` must be positive."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("Hankel functions need positive arguments")
    n = np.arange(0, nmax + 1)
    pos = _sp.hankel1(n, x[..., None])
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    neg = (pos[..., 1:] * sign[1:])[..., ::-1]
    return np.concatenate([neg, pos], axis=-1)


def hankel0(x):
    """Vectorized ``H_0(x)`` for positive ``x``."""
    return _sp.hankel1(0, np.asarray(x, dtype=float))
