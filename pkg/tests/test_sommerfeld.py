import numpy as np
import pytest
from scipy import integrate

from layerfmm.layers import LayerStack
from layerfmm.sommerfeld import (
    DOWN,
    UP,
    ComponentId,
    RuleBook,
    all_components,
    build_rule,
    component_block,
    density,
    effective_distance,
    effective_target,
    layered_green,
    nonzero_components,
    orientation,
    polarize_source,
    reaction_green,
    reflect,
    translation_integral,
)
from layerfmm.layers import general_reflection
from layerfmm.special import hankel0

from conftest import make_stack


def contour_oracle(stack, cid, r, rp, a=0.3):
    """Component value by adaptive quadrature on lam = t - i a tanh(t)."""
    t = effective_target(stack, cid, np.asarray(r, float))
    s = polarize_source(stack, cid, np.asarray(rp, float))
    sg = orientation(cid)
    X = t[0] - s[0]
    gap = sg * (t[1] - s[1])
    kt, ks = stack.k[cid.target], stack.k[cid.source]

    def ky(k, lam):
        v = np.sqrt(k * k - lam * lam + 0j)
        return -v if v.imag < 0 else v

    def f(u):
        lam = u - 1j * a * np.tanh(u)
        dlam = 1 - 1j * a / np.cosh(u) ** 2
        sig = density(stack, cid, np.array([lam]))[0]
        e = np.exp(1j * lam * X + sg * 1j * (ky(kt, lam) * t[1] - ky(ks, lam) * s[1]))
        return 1j / (4 * np.pi) * e * sig / ky(ks, lam) * dlam

    lim = max(stack.k) + 45.0 / max(gap, 0.05)
    pts = sorted({0.0, *[v for k in stack.k for v in (-k, k)]})
    edges = [-lim] + pts + [lim]
    tot = 0j
    for lo, hi in zip(edges[:-1], edges[1:]):
        re = integrate.quad(lambda u: f(u).real, lo, hi, limit=400, epsabs=1e-14, epsrel=1e-12)[0]
        im = integrate.quad(lambda u: f(u).imag, lo, hi, limit=400, epsabs=1e-14, epsrel=1e-12)[0]
        tot += re + 1j * im
    return tot


def test_reflect_values_and_involution():
    st = make_stack("ex1")
    assert reflect(st, 0, 0.5) == pytest.approx(-0.5)
    assert reflect(st, 1, -1.0) == pytest.approx(-1.0)
    a = np.linspace(-5, 5, 11)
    for m in range(st.n_interfaces):
        assert np.array_equal(reflect(st, m, reflect(st, m, a)), a)
    with pytest.raises(IndexError):
        reflect(st, 4, 0.0)


def test_polarized_coordinates_case_table():
    st = make_stack("ex1")
    c = ComponentId(1, 1, UP, DOWN)
    assert np.allclose(polarize_source(st, c, [0.3, -0.4]), [0.3, -1.6])
    c = ComponentId(1, 2, UP, UP)
    assert np.allclose(polarize_source(st, c, [0.3, -1.4]), [0.3, -1.4])
    c = ComponentId(1, 1, DOWN, DOWN)
    assert np.allclose(effective_target(st, c, [1.0, -0.25]), [1.0, 0.25])
    c = ComponentId(1, 2, UP, UP)
    assert np.allclose(effective_target(st, c, [1.0, -0.25]), [1.0, -0.25])
    c = ComponentId(2, 1, DOWN, UP)
    assert np.allclose(effective_target(st, c, [1.0, -1.25]), [1.0, -1.25])
    c = ComponentId(1, 1, UP, DOWN)
    assert effective_distance(st, c, [0.0, -0.2], [0.0, -0.4]) == pytest.approx(1.4)


def test_effective_distance_properties():
    st = make_stack("ex1")
    for c in nonzero_components(st, 1, 2):
        d = [effective_distance(st, c, [x, -0.3], [0.0, -1.6]) for x in (0.0, 0.5, 1.0, 2.0)]
        assert np.all(np.diff(d) > 0)
        t = effective_target(st, c, [0.0, -0.3])
        s = polarize_source(st, c, [0.0, -1.6])
        assert d[0] >= abs(t[1] - s[1]) - 1e-15
        assert orientation(c) * (t[1] - s[1]) >= 0


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_component_count(name):
    st = make_stack(name)
    L = st.n_interfaces
    assert len(nonzero_components(st)) == 4 * L * L
    zeros = [c for c in all_components(st) if c not in nonzero_components(st)]
    lam = np.array([0.4, 3.0 + 0.1j])
    for c in zeros:
        assert np.all(density(st, c, lam) == 0)
    assert ComponentId(0, 2, DOWN, UP) in zeros and ComponentId(0, 2, DOWN, DOWN) in zeros


def test_two_layer_self_density_is_reflection():
    st = LayerStack((0.0,), (2.0, 3.0), (1.0, 2.0))
    lam = np.array([0.1, 1.5, 4.0 - 0.2j])
    down, _ = general_reflection(st, lam)
    assert np.allclose(density(st, ComponentId(0, 0, UP, DOWN), lam), down[0])


def test_matched_stack_reaction_vanishes():
    st = LayerStack((0.0, 1.0), (2.0,) * 3, (1.0,) * 3)
    lam = np.array([0.3, 2.5])
    for c in all_components(st):
        if c.target == c.source:
            assert np.all(density(st, c, lam) == 0)
    r, rp = np.array([0.1, 0.2]), np.array([0.5, -0.5])
    assert reaction_green(st, 0, 0, r, np.array([0.4, 0.9])) == 0
    assert reaction_green(st, 1, 1, np.array([0.1, -0.2]), rp) == 0
    h = 0.25j * hankel0(2.0 * np.hypot(0.4, 0.7))
    assert layered_green(st, 0, 1, r, rp) == pytest.approx(h, rel=1e-15)
    g = layered_green(st, 1, 1, np.array([0.1, -0.2]), rp)
    assert g == pytest.approx(0.25j * hankel0(2.0 * np.hypot(0.4, 0.3)), rel=1e-15)


def test_matched_stack_cross_layer_integral_is_free_space():
    st = LayerStack((0.0,), (2.0, 2.0), (1.0, 1.0))
    r, rp = np.array([0.3, 0.4]), np.array([-0.2, -0.5])
    total = sum(contour_oracle(st, c, r, rp) for c in nonzero_components(st, 0, 1))
    assert abs(total - 0.25j * hankel0(2.0 * np.hypot(0.5, 0.9))) < 1e-9


CASES = [
    (0, 0, [0.3, 0.5], [-0.2, 0.8]),
    (1, 1, [0.2, -0.3], [-0.4, -0.7]),
    (1, 3, [0.2, -0.4], [1.0, -2.6]),
    (3, 1, [1.0, -2.6], [0.2, -0.4]),
]


@pytest.mark.parametrize("l,lp,r,rp", CASES)
def test_components_match_contour_oracle(ex1_stack, ex1_book, l, lp, r, rp):
    for c in nonzero_components(ex1_stack, l, lp):
        got = component_block(ex1_stack, c, ex1_book, np.array([r]), np.array([rp]))[0, 0]
        ref = contour_oracle(ex1_stack, c, r, rp)
        assert abs(got - ref) < 1e-8 * max(abs(ref), 1e-3), c


def test_translation_integral_zero_order_matches_component(ex1_stack, ex1_book):
    st, book = ex1_stack, ex1_book
    c = ComponentId(1, 3, UP, UP)
    r, rp = np.array([0.4, -0.5]), np.array([-0.3, -2.5])
    t, s = effective_target(st, c, r), polarize_source(st, c, rp)
    rule = build_rule(st, r_min=float(np.hypot(*(t - s))), x_max=abs(t[0] - s[0]), side=1)
    sig = rule.density(c) / rule.ky(c.source)
    val = 1j / (4 * np.pi) * translation_integral(
        rule, 0, 0, st.k[1], st.k[3], t[0] - s[0], t[1], s[1], sig, orientation(c)
    )
    ref = component_block(st, c, book, r[None], rp[None])[0, 0]
    assert abs(val - ref) < 1e-8 * abs(ref)


def test_translation_integral_omega_powers_unit_modulus(ex1_stack):
    rule = build_rule(ex1_stack, r_min=1.0, x_max=1.0)
    lam = rule.nodes[np.abs(rule.nodes.imag) < 1e-14]
    lam = lam[np.abs(lam.real) < 3.2]
    ky = np.sqrt(3.2**2 - lam**2)
    assert np.allclose(np.abs((ky + 1j * lam) / 3.2), 1.0)


def test_rule_self_convergence(ex1_stack):
    st = ex1_stack
    rng = np.random.default_rng(4)
    coarse, fine = RuleBook(st, tol=1e-10), RuleBook(st, tol=1e-13)
    r = np.stack([rng.uniform(-1, 1, 20), rng.uniform(-0.9, -0.1, 20)], axis=1)
    rp = np.stack([rng.uniform(-1, 1, 20), rng.uniform(-1.9, -1.1, 20)], axis=1)
    a = np.array([reaction_green(st, 1, 2, x, y, coarse) for x, y in zip(r, rp)])
    b = np.array([reaction_green(st, 1, 2, x, y, fine) for x, y in zip(r, rp)])
    assert np.max(np.abs(a - b)) < 1e-9 * np.max(np.abs(b))


def test_rule_truncation_decay(ex1_stack):
    rule = build_rule(ex1_stack, r_min=0.5, x_max=0.5, tol=1e-10)
    c = ComponentId(1, 1, UP, DOWN)
    kw = rule.kernel_weights(c)
    far = np.argmax(np.abs(rule.nodes))
    # worst served configuration: gap and offset at r_min
    lam = rule.nodes[far]
    ky = rule.ky(1)[far]
    mag = abs(kw[far] * np.exp(1j * lam * 0.5 * np.cos(0.0) - 2j * ky * 0.0)) * np.exp(
        -abs(lam) * 0.5 * rule.s_min
    )
    assert mag < 1e-10 * np.sum(np.abs(kw[np.abs(rule.nodes) < 10]))


def test_build_rule_validates():
    st = make_stack("ex1")
    with pytest.raises(ValueError):
        build_rule(st, r_min=0.0, x_max=1.0)
    with pytest.raises(ValueError):
        build_rule(st, r_min=1.0, x_max=1.0, side=0)


def test_layered_green_rejects_wrong_layer_and_coincidence(ex1_stack):
    with pytest.raises(ValueError):
        layered_green(ex1_stack, 0, 0, np.array([0.0, -0.5]), np.array([0.0, 0.5]))
    with pytest.raises(ValueError):
        layered_green(ex1_stack, 0, 0, np.array([0.0, 0.5]), np.array([0.0, 0.5]))


def test_decay_with_horizontal_separation(ex1_stack, ex1_book):
    vals = [
        abs(layered_green(ex1_stack, 1, 1, np.array([x, -0.5]), np.array([0.0, -0.5]), ex1_book))
        for x in (1.0, 2.0, 4.0, 8.0, 16.0)
    ]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def one_sided_dy(f, y, h, direction):
    """Second-order one-sided difference stepping into ``direction`` (+1 up, -1 down)."""
    s = direction
    return s * (-3 * f(y) + 4 * f(y + s * h) - f(y + 2 * s * h)) / (2 * h)


@pytest.mark.parametrize("name", ["ex1", "ex2", "ex3"])
def test_transmission_conditions(name):
    st = make_stack(name)
    book = RuleBook(st)
    src_layer = 1
    lo, hi = st.slab(src_layer)
    src = np.array([0.1, 0.5 * (lo + hi)])
    xs = np.array([-0.7, 0.35, 1.4])
    for m, d in enumerate(st.depths[:3]):
        for x in xs:
            def g(layer):
                return lambda y: layered_green(st, layer, src_layer, np.array([x, y]), src, book)
            up, dn = g(m), g(m + 1)
            jump = abs(up(-d) - dn(-d))
            assert jump < 1e-7 * max(abs(up(-d)), 1e-3)
            fu = st.eta[m] * one_sided_dy(up, -d, 1e-4, +1)
            fd = st.eta[m + 1] * one_sided_dy(dn, -d, 1e-4, -1)
            assert abs(fu - fd) < 1e-5 * max(abs(fu), 1e-2)
