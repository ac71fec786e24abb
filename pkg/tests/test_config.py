import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from layerfmm.config import ConfigError, dumps_config, from_dict, parse_config, write_config

from conftest import CONFIGS


@pytest.mark.parametrize("name", ["example1", "example2", "example3"])
def test_examples_parse(name):
    cfg = parse_config(CONFIGS / f"{name}.toml")
    stack = cfg.layer_stack()
    assert stack.n_layers == len(cfg.stack.k)
    assert len(cfg.curves()) == len(cfg.scatterers)


def test_example1_contents():
    cfg = parse_config(CONFIGS / "example1.toml")
    assert cfg.stack.k == [3.2, 2.5, 5.1, 8.6, 6.9]
    assert cfg.incidence.kind == "point" and cfg.incidence.source == [0.0, 0.375]
    assert cfg.n == 2000 and cfg.fmm.p == 25


def test_example2_wave_matches_top_layer():
    cfg = parse_config(CONFIGS / "example2.toml")
    w = cfg.plane_wave()
    assert math.hypot(w.kx, w.ky) == pytest.approx(cfg.stack.k[0])
    w.check(cfg.layer_stack())


def base():
    return {
        "stack": {"interfaces": [0.0, -1.0], "k": [1.0, 2.0, 3.0], "eta": [1.0, 1.0, 2.0]},
        "scatterers": [{"kind": "star", "center": [0.0, -0.5], "a": 0.2, "b": 0.7, "k_star": 5}],
        "incidence": {"kind": "plane", "angle": 0.3},
    }


def test_mismatched_lengths_name_both_fields():
    raw = base()
    raw["stack"]["k"] = [1.0, 2.0]
    with pytest.raises(ConfigError) as err:
        from_dict(raw)
    msg = str(err.value)
    assert "stack.k" in msg and "stack.interfaces" in msg


def test_all_errors_reported_together():
    raw = base()
    raw["stack"]["eta"] = [1.0, -1.0, 1.0]
    raw["fmm"] = {"p": 0, "bogus": 1}
    raw["scatterers"][0]["a"] = 0.9
    with pytest.raises(ConfigError) as err:
        from_dict(raw)
    paths = " ".join(err.value.errors)
    for p in ("stack.eta", "fmm.p", "fmm.bogus", "scatterers[0].b"):
        assert p in paths


def test_empty_scene_rejected():
    raw = base()
    raw["scatterers"] = []
    with pytest.raises(ConfigError, match="empty"):
        from_dict(raw)


def test_wave_vector_must_match_top_wavenumber():
    raw = base()
    raw["incidence"] = {"kind": "plane", "kx": 0.5, "ky": 0.5}
    with pytest.raises(ConfigError, match="stack.k\\[0\\]"):
        from_dict(raw)


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        parse_config(tmp_path / "absent.toml")


def test_parse_error_has_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[stack]\nk = [1.0,\n")
    with pytest.raises(ConfigError, match="line"):
        parse_config(p)


def test_write_then_parse(tmp_path):
    cfg = parse_config(CONFIGS / "example3.toml")
    write_config(cfg, tmp_path / "x.toml")
    assert parse_config(tmp_path / "x.toml") == cfg


_loads = tomllib.loads

finite = st.floats(-5, 5, allow_nan=False)
positive = st.floats(0.1, 10, allow_nan=False)


@st.composite
def scenes(draw):
    L = draw(st.integers(1, 4))
    gaps = draw(st.lists(st.floats(0.1, 3), min_size=L - 1, max_size=L - 1))
    top = draw(finite)
    ints = [top]
    for g in gaps:
        ints.append(ints[-1] - g)
    k = draw(st.lists(positive, min_size=L + 1, max_size=L + 1))
    eta = draw(st.lists(positive, min_size=L + 1, max_size=L + 1))
    b = draw(st.floats(0.2, 2))
    star = {
        "kind": "star",
        "center": [draw(finite), draw(finite)],
        "a": draw(st.floats(-0.9, 0.9)) * b,
        "b": b,
        "k_star": draw(st.integers(0, 8)),
        "theta0": draw(finite),
    }
    if draw(st.booleans()):
        inc = {"kind": "plane", "angle": draw(st.floats(-1.5, 1.5))}
    else:
        inc = {"kind": "point", "source": [draw(finite), draw(finite)]}
    return {
        "stack": {"interfaces": ints, "k": k, "eta": eta},
        "scatterers": [star],
        "incidence": inc,
        "discretization": {"n": draw(st.integers(16, 100000))},
        "fmm": {"p": draw(st.integers(1, 40)), "leaf_size": draw(st.integers(1, 200)),
                "theta": draw(st.floats(0, 3))},
        "gmres": {"tol": draw(st.floats(1e-14, 0.5)), "max_iter": draw(st.integers(1, 1000)),
                  "restart": draw(st.integers(0, 50)), "precondition": draw(st.booleans())},
        "output": {"grid": draw(st.booleans()), "nx": draw(st.integers(2, 300)),
                   "ny": draw(st.integers(2, 300))},
    }


@settings(max_examples=60, deadline=None)
@given(scenes())
def test_round_trip(raw):
    cfg = from_dict(raw)
    text = dumps_config(cfg)
    again = from_dict(_loads(text))
    assert again == cfg
    assert dumps_config(again) == text
