import numpy as np
import pytest
from scipy import integrate, special

from layerfmm.discretization import (
    assemble_dense,
    dense_matvec,
    diagonal_entry,
    error_norms,
    point_source_field,
    point_source_rhs,
    probe_curve,
    rhs,
    scattered_field,
    self_reaction,
    singular_self_term,
)
from layerfmm.geometry import make_lshape, make_star, mesh_scene
from layerfmm.layers import LayerStack, PlaneWave
from layerfmm.sommerfeld import RuleBook, layered_green

from conftest import make_stack

MATCHED = LayerStack((0.0, 1.0), (2.0,) * 3, (1.5,) * 3)


@pytest.fixture(scope="module")
def small_scene():
    st = make_stack("ex1")
    book = RuleBook(st)
    mesh = mesh_scene([make_lshape()], 120, st)
    return st, book, mesh, assemble_dense(mesh, st, book)


def test_diagonal_entry_value():
    assert diagonal_entry(0.1, 2.0) == pytest.approx(0.0544077 + 0.025j, abs=5e-7)


def test_diagonal_entry_against_quadrature():
    # the small-argument form drops O((kh)^2) relative terms
    k = 2.0

    def rel_err(h):
        def part(f):
            return 2 * integrate.quad(lambda t: f(k * t), 0, h / 2, limit=200)[0]

        exact = 0.25j * (part(special.j0) + 1j * part(special.y0))
        return abs(singular_self_term(k, h) - exact) / abs(exact)

    errs = [rel_err(h) for h in (0.1, 0.05, 0.025)]
    assert errs[0] < 2e-3
    assert errs[1] / errs[0] < 0.3 and errs[2] / errs[1] < 0.3


def test_diagonal_entry_rejects_degenerate_panel():
    with pytest.raises(ValueError):
        diagonal_entry(0.0, 2.0)
    assert diagonal_entry(0.1, 2.0, reaction=1.0) == pytest.approx(diagonal_entry(0.1, 2.0) + 0.1)


def test_rhs_on_matched_stack_is_incident_wave():
    wave = PlaneWave.from_angle(2.0, 0.3)
    mesh = mesh_scene([make_lshape()], 80, MATCHED)
    c = mesh.centers
    expect = -1.5 * np.exp(1j * (wave.kx * c[:, 0] - wave.ky * c[:, 1]))
    assert np.allclose(rhs(mesh, MATCHED, wave), expect, rtol=1e-12, atol=1e-12)


def test_dense_entries_match_green(small_scene):
    st, book, mesh, K = small_scene
    rng = np.random.default_rng(1)
    for i, e in rng.integers(0, mesh.size, size=(25, 2)):
        if i == e:
            continue
        g = layered_green(st, mesh.layer[e], mesh.layer[i], mesh.centers[e], mesh.centers[i], book)
        assert K[i, e] == pytest.approx(g * mesh.lengths[e], rel=1e-10)
    gr = self_reaction(mesh, st, book)
    d = diagonal_entry(mesh.lengths, np.asarray(st.k)[mesh.layer], gr)
    assert np.allclose(np.diag(K), d, rtol=1e-12)


def test_free_space_kernel_symmetric():
    mesh = mesh_scene([make_lshape()], 100, MATCHED)
    K = assemble_dense(mesh, MATCHED)
    S = K / mesh.lengths[None, :]
    assert np.allclose(S, S.T, rtol=1e-12, atol=0)


def test_dense_matvec_columns(small_scene):
    _, _, mesh, K = small_scene
    assert np.all(dense_matvec(K, np.zeros(mesh.size)) == 0)
    e = np.zeros(mesh.size)
    e[7] = 1
    assert np.array_equal(dense_matvec(K, e), K[:, 7])
    with pytest.raises(ValueError):
        dense_matvec(K, np.zeros(mesh.size + 1))


def test_dense_cap():
    mesh = mesh_scene([make_lshape()], 40, MATCHED)
    with pytest.raises(ValueError, match="capped"):
        assemble_dense(mesh, MATCHED, cap=10)


def test_point_source_rhs_matches_field(small_scene):
    st, book, mesh, _ = small_scene
    src = np.array([0.0, 0.375])
    b = point_source_rhs(mesh, st, src, book)
    u = point_source_field(st, src, mesh.centers, book)
    assert np.allclose(b, np.asarray(st.eta)[mesh.layer] * u)


def test_scattered_field_far_decay():
    mesh = mesh_scene([make_star((0, 0.5), 0.2, 0.4, 3)], 64, MATCHED)
    phi = np.ones(mesh.size)
    R = np.array([20.0, 40.0, 80.0])
    u = scattered_field(mesh, MATCHED, phi, np.stack([R, np.full(3, 0.5)], axis=1))
    ratio = np.abs(u[1:]) / np.abs(u[:-1])
    assert np.allclose(ratio, 2**-0.5, rtol=0.02)


def test_scattered_field_flags_near_points(small_scene):
    st, book, mesh, _ = small_scene
    phi = np.ones(mesh.size)
    p = mesh.centers[:1] + 1e-3 * mesh.normals[:1]
    with pytest.warns(UserWarning, match="panel length"):
        _, near = scattered_field(mesh, st, phi, p, book, return_flag=True)
    assert near.all()


def test_scattered_field_reproduces_point_source(small_scene):
    # the density solving K phi = b represents the manufactured field away from the boundary
    st, book, mesh, K = small_scene
    src = np.array([0.0, 0.375])
    phi = np.linalg.solve(K, point_source_rhs(mesh, st, src, book))
    pts, w = probe_curve(make_lshape(), 0.5, 200)
    u = scattered_field(mesh, st, phi, pts, book)
    linf, l2 = error_norms(u, point_source_field(st, src, pts, book), w)
    assert linf < 0.1 and l2 < 0.1


def test_probe_curves_lie_outside():
    for c in (make_lshape(), make_star((0, -1), 0.5, 1.0, 2, np.pi / 4)):
        pts, w = probe_curve(c, 0.25, 400)
        assert len(pts) == 400 and np.all(w > 0)
        assert not c.contains(pts).any()
        assert w.sum() > c.perimeter()


def test_error_norms():
    ex = np.array([1.0, 2.0, -2.0])
    assert error_norms(ex, ex, np.ones(3)) == (0.0, 0.0)
    linf, l2 = error_norms(ex + np.array([0, 0.2, 0]), ex, np.ones(3))
    assert linf == pytest.approx(0.1)
    assert l2 == pytest.approx(0.2 / 3)
