import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from layerfmm import LayeredScatteringSolver
from layerfmm.config import parse_config
from layerfmm.discretization import point_source_field

from conftest import CONFIGS


def test_params_round_trip():
    est = LayeredScatteringSolver(n=300, p=20)
    params = est.get_params()
    assert params["n"] == 300 and params["p"] == 20 and params["precondition"] is True
    assert clone(est).get_params() == params
    est.set_params(tol=1e-6)
    assert est.tol == 1e-6


@pytest.fixture(scope="module")
def fitted():
    return LayeredScatteringSolver(n=400).fit(CONFIGS / "example1.toml")


def test_fit_predict_manufactured_field(fitted):
    assert fitted.n_iter_ > 0 and fitted.report_.converged
    assert fitted.mesh_.size >= 400
    pts = np.array([[-1.5, 1.0], [1.5, 0.5], [3.0, -2.0], [0.0, -3.2]])
    u = fitted.predict(pts)
    exact = point_source_field(fitted.stack_, [0.0, 0.375], pts, fitted.book_)
    assert np.all(np.abs(u - exact) < 0.05 * np.abs(exact).max())
    assert fitted.score(pts, exact) > -0.05


def test_predict_inside_is_nan(fitted):
    u = fitted.predict([[0.0, 0.0], [5.0, 0.5]])
    assert np.isnan(u[0]) and np.isfinite(u[1])


def test_predict_validates_input(fitted):
    with pytest.raises(ValueError):
        fitted.predict([[0.0, 1.0, 2.0]])
    with pytest.raises(ValueError):
        fitted.predict([[np.nan, 1.0]])
    with pytest.raises(ValueError):
        fitted.predict(np.zeros((0, 2)))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        LayeredScatteringSolver().predict([[0.0, 1.0]])


def test_fit_accepts_config_and_mapping():
    cfg = parse_config(CONFIGS / "example3.toml")
    raw = cfg.to_dict()
    a = LayeredScatteringSolver(n=200, tol=1e-6).fit(cfg)
    b = LayeredScatteringSolver(n=200, tol=1e-6).fit(raw)
    assert np.array_equal(a.phi_, b.phi_)
    assert a.config_.gmres.tol == 1e-6 and a.errors_ == {}
    with pytest.raises(TypeError):
        LayeredScatteringSolver().fit(42)
