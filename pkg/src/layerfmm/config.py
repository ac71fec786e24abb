"""Scene configuration: TOML reading, writing and validation.

Layout::

    [stack]
    interfaces = [0.0, -1.0]      # interface heights y, top to bottom
    k = [1.0, 2.0, 3.0]
    eta = [1.0, 1.0, 1.0]

    [[scatterers]]
    kind = "star"                 # or "polygon" with vertices = [[x, y], ...]
    center = [0.0, -0.5]
    a = 0.2
    b = 0.7
    k_star = 5
    theta0 = 0.0

    [incidence]
    kind = "plane"                # or "point" (manufactured solution)
    angle = 0.3                   # from the downward vertical, or give kx, ky
    # source = [0.0, 0.375]       # for kind = "point"

    [discretization]
    n = 1000                      # total panel target, split by perimeter

    [fmm]
    p = 25
    leaf_size = 60
    theta = 1.0

    [quadrature]
    tol = 1e-10

    [gmres]
    tol = 1e-8
    max_iter = 500
    restart = 0                   # 0 disables restarts
    precondition = true

    [output]
    grid = true
    nx = 81
    ny = 81
    bounds = [xmin, xmax, ymin, ymax]   # optional, defaults to the scatterers' box
    probe_offset = 0.25           # manufactured mode: probe curve offset
    probe_points = 2000

Omitted sections take the defaults above.
"""

import math
import sys
from dataclasses import asdict, dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .geometry import make_polygon, make_star
from .layers import LayerStack, PlaneWave


class ConfigError(ValueError):
    """Invalid scene configuration; ``errors`` lists every failure with its field path."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration: " + "; ".join(self.errors))


@dataclass
class StackConfig:
    interfaces: list
    k: list
    eta: list


@dataclass
class IncidenceConfig:
    kind: str = "plane"
    angle: float = None
    kx: float = None
    ky: float = None
    source: list = None


@dataclass
class FMMConfig:
    p: int = 25
    leaf_size: int = 60
    theta: float = 1.0
    deterministic: bool = False


@dataclass
class GMRESConfig:
    tol: float = 1e-8
    max_iter: int = 500
    restart: int = 0
    precondition: bool = True


@dataclass
class OutputConfig:
    grid: bool = True
    nx: int = 81
    ny: int = 81
    bounds: list = None
    probe_offset: float = 0.25
    probe_points: int = 2000


@dataclass
class SceneConfig:
    """Validated scene description."""

    stack: StackConfig
    scatterers: list
    incidence: IncidenceConfig = field(default_factory=IncidenceConfig)
    n: int = 1000
    fmm: FMMConfig = field(default_factory=FMMConfig)
    quad_tol: float = 1e-10
    gmres: GMRESConfig = field(default_factory=GMRESConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # derived objects
    def layer_stack(self):
        return LayerStack(tuple(-y for y in self.stack.interfaces), self.stack.k, self.stack.eta)

    def curves(self):
        out = []
        for s in self.scatterers:
            if s["kind"] == "star":
                out.append(make_star(s["center"], s["a"], s["b"], s["k_star"], s.get("theta0", 0.0)))
            else:
                out.append(make_polygon(s["vertices"]))
        return out

    def plane_wave(self):
        inc = self.incidence
        if inc.kx is not None and inc.ky is not None:
            return PlaneWave(float(inc.kx), float(inc.ky))
        return PlaneWave.from_angle(self.stack.k[0], float(inc.angle))

    def panel_counts(self, n_total=None):
        """Split a total panel target over the scatterers by perimeter (at least 16 each)."""
        n_total = self.n if n_total is None else n_total
        per = [c.perimeter() for c in self.curves()]
        tot = sum(per)
        return [max(16, int(round(n_total * p / tot))) for p in per]

    def to_dict(self):
        inc = {k: v for k, v in asdict(self.incidence).items() if v is not None}
        out = {k: v for k, v in asdict(self.output).items() if v is not None}
        return {
            "stack": asdict(self.stack),
            "scatterers": [dict(s) for s in self.scatterers],
            "incidence": inc,
            "discretization": {"n": self.n},
            "fmm": asdict(self.fmm),
            "quadrature": {"tol": self.quad_tol},
            "gmres": asdict(self.gmres),
            "output": out,
        }


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_list(d, key, path, errors, length=None):
    v = d.get(key)
    if not isinstance(v, list) or not all(_num(x) for x in v):
        errors.append(f"{path}.{key}: expected a list of numbers")
        return None
    if length is not None and len(v) != length:
        errors.append(f"{path}.{key}: expected {length} entries, got {len(v)}")
    return [float(x) for x in v]


def _section(raw, name, cls, errors, rename=None):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        errors.append(f"{name}: expected a table")
        return cls()
    rename = rename or {}
    known = {f for f in cls.__dataclass_fields__}
    kwargs = {}
    for k, v in sec.items():
        k2 = rename.get(k, k)
        if k2 not in known:
            errors.append(f"{name}.{k}: unknown key")
            continue
        kwargs[k2] = v
    return cls(**kwargs)


def from_dict(raw):
    """Build and validate a :class:`SceneConfig` from a parsed mapping.

    Raises
    ------
    ConfigError
        Listing every validation failure with its field path.
    """
    errors = []
    unknown = set(raw) - {
        "stack", "scatterers", "incidence", "discretization", "fmm", "quadrature", "gmres", "output"
    }
    errors += [f"{u}: unknown section" for u in sorted(unknown)]
    st = raw.get("stack")
    stack = None
    if not isinstance(st, dict):
        errors.append("stack: missing section")
    else:
        ints = _check_list(st, "interfaces", "stack", errors)
        k = _check_list(st, "k", "stack", errors)
        eta = _check_list(st, "eta", "stack", errors)
        if ints is not None:
            if not ints:
                errors.append("stack.interfaces: need at least one interface")
            if any(b >= a for a, b in zip(ints, ints[1:])):
                errors.append("stack.interfaces: heights must decrease strictly (top to bottom)")
            for name, v in (("k", k), ("eta", eta)):
                if v is not None and len(v) != len(ints) + 1:
                    errors.append(
                        f"stack.{name} and stack.interfaces: need len({name}) = "
                        f"len(interfaces) + 1, got {len(v)} and {len(ints)}"
                    )
        for name, v in (("k", k), ("eta", eta)):
            if v is not None and any(x <= 0 for x in v):
                errors.append(f"stack.{name}: values must be positive")
        stack = StackConfig(ints or [], k or [], eta or [])

    scat = raw.get("scatterers", [])
    if not isinstance(scat, list) or not scat:
        errors.append("scatterers: nothing to solve (empty scatterer list)")
        scat = []
    clean = []
    for i, s in enumerate(scat):
        path = f"scatterers[{i}]"
        if not isinstance(s, dict):
            errors.append(f"{path}: expected a table")
            continue
        kind = s.get("kind")
        if kind == "star":
            c = _check_list(s, "center", path, errors, 2)
            ok = True
            for key in ("a", "b", "k_star"):
                if not _num(s.get(key)):
                    errors.append(f"{path}.{key}: expected a number")
                    ok = False
            if "theta0" in s and not _num(s["theta0"]):
                errors.append(f"{path}.theta0: expected a number")
                ok = False
            if ok and not s["b"] > abs(s["a"]):
                errors.append(f"{path}.b: star radius must stay positive (need b > |a|)")
            if ok and (int(s["k_star"]) != s["k_star"] or s["k_star"] < 0):
                errors.append(f"{path}.k_star: expected a non-negative integer")
            if c is not None and ok:
                clean.append(dict(kind="star", center=c, a=float(s["a"]), b=float(s["b"]),
                                  k_star=int(s["k_star"]), theta0=float(s.get("theta0", 0.0))))
        elif kind == "polygon":
            v = s.get("vertices")
            if (not isinstance(v, list) or len(v) < 3
                    or not all(isinstance(p, list) and len(p) == 2 and all(map(_num, p)) for p in v)):
                errors.append(f"{path}.vertices: expected a list of at least three [x, y] pairs")
            else:
                verts = [[float(x), float(y)] for x, y in v]
                try:
                    make_polygon(verts)
                    clean.append(dict(kind="polygon", vertices=verts))
                except ValueError as err:
                    errors.append(f"{path}.vertices: {err}")
        else:
            errors.append(f"{path}.kind: expected 'star' or 'polygon'")

    inc = _section(raw, "incidence", IncidenceConfig, errors)
    if inc.kind not in ("plane", "point"):
        errors.append("incidence.kind: expected 'plane' or 'point'")
    elif inc.kind == "plane":
        has_k = inc.kx is not None and inc.ky is not None
        if not has_k and inc.angle is None:
            errors.append("incidence: give angle or both kx and ky")
        if has_k and stack is not None and stack.k:
            if not (_num(inc.kx) and _num(inc.ky)):
                errors.append("incidence.kx/ky: expected numbers")
            elif inc.ky <= 0:
                errors.append("incidence.ky: must be positive (wave travels downward)")
            elif abs(math.hypot(inc.kx, inc.ky) - stack.k[0]) > 1e-8 * stack.k[0]:
                errors.append("incidence.kx/ky: |(kx, ky)| must equal stack.k[0]")
        elif inc.angle is not None and not (_num(inc.angle) and abs(inc.angle) < math.pi / 2):
            errors.append("incidence.angle: expected a number in (-pi/2, pi/2)")
    else:
        src = inc.source
        if not (isinstance(src, list) and len(src) == 2 and all(map(_num, src))):
            errors.append("incidence.source: expected [x, y]")

    disc = raw.get("discretization", {})
    n = disc.get("n", 1000) if isinstance(disc, dict) else None
    if not (isinstance(n, int) and not isinstance(n, bool)) or n < 16:
        errors.append("discretization.n: expected an integer >= 16")
    fmm = _section(raw, "fmm", FMMConfig, errors)
    if not (isinstance(fmm.p, int) and fmm.p >= 1):
        errors.append("fmm.p: expected a positive integer")
    if not (isinstance(fmm.leaf_size, int) and fmm.leaf_size >= 1):
        errors.append("fmm.leaf_size: expected a positive integer")
    if not (_num(fmm.theta) and fmm.theta >= 0):
        errors.append("fmm.theta: expected a non-negative number")
    quad = raw.get("quadrature", {})
    qtol = quad.get("tol", 1e-10) if isinstance(quad, dict) else None
    if not (_num(qtol) and 0 < qtol < 1):
        errors.append("quadrature.tol: expected a number in (0, 1)")
    gm = _section(raw, "gmres", GMRESConfig, errors)
    if not (_num(gm.tol) and 0 < gm.tol < 1):
        errors.append("gmres.tol: expected a number in (0, 1)")
    if not (isinstance(gm.max_iter, int) and gm.max_iter >= 1):
        errors.append("gmres.max_iter: expected a positive integer")
    if not (isinstance(gm.restart, int) and gm.restart >= 0):
        errors.append("gmres.restart: expected a non-negative integer")
    out = _section(raw, "output", OutputConfig, errors)
    if out.bounds is not None:
        b = out.bounds
        if not (isinstance(b, list) and len(b) == 4 and all(map(_num, b)) and b[0] < b[1] and b[2] < b[3]):
            errors.append("output.bounds: expected [xmin, xmax, ymin, ymax] with min < max")
    for key in ("nx", "ny", "probe_points"):
        v = getattr(out, key)
        if not (isinstance(v, int) and v >= 2):
            errors.append(f"output.{key}: expected an integer >= 2")
    if errors:
        raise ConfigError(errors)
    if inc.source is not None:
        inc.source = [float(x) for x in inc.source]
    return SceneConfig(stack, clean, inc, int(n), fmm, float(qtol), gm, out)


def parse_config(path):
    """Read and validate a TOML scene file.

    Raises
    ------
    OSError
        If the file cannot be read.
    ConfigError
        On a syntax error (with line information) or failed validation.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        raw = tomllib.loads(data.decode("utf-8"))
    except tomllib.TOMLDecodeError as err:
        raise ConfigError([f"{path}: parse error: {err}"]) from err
    return from_dict(raw)


def dumps_config(cfg):
    return tomli_w.dumps(cfg.to_dict())


def write_config(cfg, path):
    """Write a scene configuration as TOML."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))
