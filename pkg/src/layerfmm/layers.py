"""Layer stack, vertical wavenumbers and reflection/transmission coefficients.

Interfaces sit at ``y = -d_l`` for ``0 <= l < L``; layer 0 is the top
half-plane and layer ``L`` the bottom one.  All coefficient functions are
vectorized over the spectral variable ``lam`` (real or complex).

Coefficients are referenced to absolute coordinates: a down-going wave of
unit amplitude in layer 0, ``exp(i(lam x - k_0y y))``, produces the
down-going wave ``Tt[0, l] * exp(i(lam x - k_ly y))`` in layer ``l``.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LayerStack:
    """Horizontally stratified medium.

    Attributes
    ----------
    depths : tuple of float
        Interface depths ``d_0 < d_1 < ... < d_{L-1}``; interface ``l`` is
        the line ``y = -d_l``.
    k : tuple of float
        Wavenumbers ``k_0 .. k_L``.
    eta : tuple of float
        Material indices ``eta_0 .. eta_L`` entering the flux condition.
    """

    depths: tuple
    k: tuple
    eta: tuple

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(float(v) for v in self.depths))
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))
        object.__setattr__(self, "eta", tuple(float(v) for v in self.eta))
        self.validate()

    def validate(self):
        errors = []
        L = len(self.depths)
        if L < 1:
            errors.append("depths: need at least one interface")
        if len(self.k) != L + 1:
            errors.append(f"k: expected {L + 1} values (len(depths)+1), got {len(self.k)}")
        if len(self.eta) != L + 1:
            errors.append(f"eta: expected {L + 1} values (len(depths)+1), got {len(self.eta)}")
        if any(b <= a for a, b in zip(self.depths, self.depths[1:])):
            errors.append("depths: must be strictly increasing")
        if any(not np.isfinite(v) or v <= 0 for v in self.k):
            errors.append("k: all wavenumbers must be positive")
        if any(not np.isfinite(v) or v <= 0 for v in self.eta):
            errors.append("eta: all indices must be positive")
        if errors:
            raise ValueError("invalid layer stack: " + "; ".join(errors))

    @property
    def n_interfaces(self):
        return len(self.depths)

    @property
    def n_layers(self):
        return len(self.depths) + 1

    @property
    def is_homogeneous(self):
        return len(set(self.k)) == 1 and len(set(self.eta)) == 1

    def layer_of(self, y):
        """Layer index of height(s) ``y``; a point on an interface goes to the layer above."""
        y = np.asarray(y, dtype=float)
        out = np.sum(y[..., None] < -np.asarray(self.depths), axis=-1)
        return int(out) if out.ndim == 0 else out

    def thickness(self, layer):
        """Thickness of an interior layer, 0 for the two half-planes."""
        if 1 <= layer <= self.n_interfaces - 1:
            return self.depths[layer] - self.depths[layer - 1]
        return 0.0

    def slab(self, layer):
        """``(bottom, top)`` y-range of a layer (infinite for the half-planes)."""
        top = np.inf if layer == 0 else -self.depths[layer - 1]
        bottom = -np.inf if layer == self.n_interfaces else -self.depths[layer]
        return bottom, top


def vertical_wavenumber(lam, k):
    """``sqrt(k^2 - lam^2)`` on the branch with non-negative imaginary part."""
    lam = np.asarray(lam, dtype=complex)
    ky = np.sqrt(k * k - lam * lam)
    ky = np.where(ky.imag < 0, -ky, ky)
    return ky if ky.ndim else complex(ky)


def omega(lam, k, ky=None):
    """Generating-function variable ``(k_y + i lam) / k``."""
    if ky is None:
        ky = vertical_wavenumber(lam, k)
    return (ky + 1j * np.asarray(lam)) / k


def _denominator_check(den, what):
    if np.any(den == 0):
        raise ZeroDivisionError(f"degenerate denominator in {what}")


class Coefficients:
    """Fresnel and generalized coefficients of a stack at a set of spectral nodes.

    Parameters
    ----------
    stack : LayerStack
    lam : array_like
        Spectral nodes (complex allowed).

    Attributes
    ----------
    ky : ndarray, shape (L+1, n)
        Vertical wavenumbers per layer.
    R_down, T_down : ndarray, shape (L, n)
        ``R_{l,l+1}`` and ``T_{l,l+1}``: wave in layer ``l`` hitting interface ``l``.
    R_up, T_up : ndarray, shape (L, n)
        ``R_{l+1,l}`` and ``T_{l+1,l}``: wave in layer ``l+1`` hitting interface ``l``.
    Rt_down : ndarray, shape (L+1, n)
        Generalized reflection ``Rt_{l,l+1}`` seen from layer ``l`` looking
        down (zero for the bottom layer).
    Rt_up : ndarray, shape (L+1, n)
        Generalized reflection ``Rt_{l,l-1}`` seen from layer ``l`` looking
        up (zero for the top layer).
    """

    def __init__(self, stack, lam):
        self.stack = stack
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        self.lam = lam
        L = stack.n_interfaces
        self.ky = np.array([vertical_wavenumber(lam, k) for k in stack.k]).reshape(L + 1, -1)
        eta = np.asarray(stack.eta)[:, None]
        imp = eta * self.ky
        den = imp[:-1] + imp[1:]
        _denominator_check(den, "Fresnel coefficients")
        self.R_down = (imp[:-1] - imp[1:]) / den
        self.T_down = 2 * imp[:-1] / den
        self.R_up = -self.R_down
        self.T_up = 2 * imp[1:] / den
        self._thick_phase = np.array(
            [np.exp(2j * self.ky[l] * stack.thickness(l)) for l in range(L + 1)]
        )
        self.Rt_up = np.zeros((L + 1, lam.size), dtype=complex)
        for l in range(L):
            q = self.Rt_up[l] * self._thick_phase[l]
            d = 1 + self.R_up[l] * q
            _denominator_check(d, "upward generalized reflection")
            self.Rt_up[l + 1] = (self.R_up[l] + q) / d
        self.Rt_down = np.zeros((L + 1, lam.size), dtype=complex)
        for l in range(L - 1, -1, -1):
            q = self.Rt_down[l + 1] * self._thick_phase[l + 1]
            d = 1 + self.R_down[l] * q
            _denominator_check(d, "downward generalized reflection")
            self.Rt_down[l] = (self.R_down[l] + q) / d
        self._tt = {}

    def thick_phase(self, layer):
        """``exp(2 i k_ly t_l)`` for the layer thickness ``t_l``."""
        return self._thick_phase[layer]

    def transmission(self, src, tgt):
        """Generalized transmission ``Tt_{src,tgt}`` at every node."""
        key = (src, tgt)
        if key in self._tt:
            return self._tt[key]
        d = self.stack.depths
        ky = self.ky
        t = np.ones(self.lam.size, dtype=complex)
        if tgt > src:
            for l in range(src + 1, tgt + 1):
                den = 1 + self.R_down[l - 1] * self.Rt_down[l] * self._thick_phase[l]
                _denominator_check(den, "generalized transmission")
                t = self.T_down[l - 1] * np.exp(1j * (ky[l - 1] - ky[l]) * d[l - 1]) * t / den
        elif tgt < src:
            for l in range(src - 1, tgt - 1, -1):
                den = 1 + self.R_up[l] * self.Rt_up[l] * self._thick_phase[l]
                _denominator_check(den, "generalized transmission")
                t = self.T_up[l] * np.exp(1j * (ky[l] - ky[l + 1]) * d[l]) * t / den
        self._tt[key] = t
        return t


def _scalar_or_array(v, like):
    return complex(v[0]) if np.ndim(like) == 0 else v.reshape(np.shape(like))


def fresnel(stack, interface, lam):
    """Return ``(R_{l,l+1}, T_{l,l+1}, R_{l+1,l}, T_{l+1,l})`` for interface ``l``."""
    if not 0 <= interface < stack.n_interfaces:
        raise IndexError(f"interface index {interface} out of range")
    c = Coefficients(stack, lam)
    l = interface
    return tuple(
        _scalar_or_array(a[l], lam) for a in (c.R_down, c.T_down, c.R_up, c.T_up)
    )


def general_reflection(stack, lam):
    """Generalized reflections.

    Returns
    -------
    down : list
        ``Rt_{l,l+1}`` for ``l = 0..L-1``.
    up : list
        ``Rt_{l+1,l}`` for ``l = 0..L-1``.
    """
    c = Coefficients(stack, lam)
    L = stack.n_interfaces
    down = [_scalar_or_array(c.Rt_down[l], lam) for l in range(L)]
    up = [_scalar_or_array(c.Rt_up[l + 1], lam) for l in range(L)]
    return down, up


def general_transmission(stack, src, tgt, lam):
    """Generalized transmission from layer ``src`` to layer ``tgt``."""
    n = stack.n_layers
    if not (0 <= src < n and 0 <= tgt < n):
        raise IndexError("layer index out of range")
    return _scalar_or_array(Coefficients(stack, lam).transmission(src, tgt), lam)


@dataclass(frozen=True)
class PlaneWave:
    """Incident plane wave ``exp(i(kx x - ky y))`` travelling downward in layer 0."""

    kx: float
    ky: float

    @classmethod
    def from_angle(cls, k0, theta):
        """Incidence angle measured from the downward vertical; ``kx = k0 sin(theta)``."""
        return cls(k0 * np.sin(theta), k0 * np.cos(theta))

    def check(self, stack, rtol=1e-10):
        k0 = stack.k[0]
        if self.ky <= 0:
            raise ValueError("incident wave must travel downward (ky > 0)")
        if abs(self.kx**2 + self.ky**2 - k0**2) > rtol * k0**2:
            raise ValueError("incident wave vector does not match k_0")


def background_amplitudes(stack, wave):
    """Up- and down-going amplitudes ``(A_l, B_l)`` of the background field.

    ``A_L`` and ``B_0`` are returned as zero.
    """
    c = Coefficients(stack, wave.kx)
    L = stack.n_interfaces
    d = stack.depths
    A = np.zeros(L + 1, dtype=complex)
    B = np.zeros(L + 1, dtype=complex)
    for l in range(L + 1):
        t0l = c.transmission(0, l)[0]
        if l > 0:
            B[l] = t0l
        if l < L:
            A[l] = c.Rt_down[l, 0] * t0l * np.exp(2j * c.ky[l, 0] * d[l])
    return A, B, c.ky[:, 0]


def background_field(stack, wave, points, derivative=False, layer=None):
    """Background field ``u^b`` of the bare stack at ``points`` (shape ``(..., 2)``).

    With ``derivative=True`` also return ``d u^b / d y``.  ``layer`` forces
    the layer whose expression is used (handy exactly on an interface).
    """
    pts = np.asarray(points, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    A, B, ky = background_amplitudes(stack, wave)
    lay = np.asarray(stack.layer_of(y)) if layer is None else np.full(np.shape(y), layer)
    kyl = ky[lay]
    up = A[lay] * np.exp(1j * (wave.kx * x + kyl * y))
    dn = B[lay] * np.exp(1j * (wave.kx * x - kyl * y))
    u = up + dn
    if derivative:
        return u, 1j * kyl * (up - dn)
    return u


def incident_field(stack, wave, points, derivative=False, layer=None):
    """Incident plane wave in layer 0, zero below the first interface."""
    pts = np.asarray(points, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    if layer is None:
        inside = y > -stack.depths[0]
    else:
        inside = np.full(np.shape(y), layer == 0)
    u = np.where(inside, np.exp(1j * (wave.kx * x - wave.ky * y)), 0.0)
    if derivative:
        return u, -1j * wave.ky * u
    return u
