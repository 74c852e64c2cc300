"""Run configuration: an INI-style key/value file with sections.

Grammar (``#`` and ``;`` start comments, keys are case-insensitive)::

    [cloud]          source = generate | file
                     boundary = x0 y0, x1 y1, ...   (generate)
                     spacing = <m>                  (generate)
                     file = <cloud file>            (file)
                     loops = <loop file>            (file; default <file>.loops)
                     thickness = <m>
    [connectivity]   method = radius | triangulation
                     radius = <m>  |  triangles = <file>
                     min_neighbors = <int>
    [discretization] weight = w1 | w2;  cv_weighting = plain | empirical;  G = <float>
                     corner_fill = true | false;  virtual_spacing = <m>
    [rock]           phi, c_r, k (mD) or k_file (one value per real node), p_ref
    [fluid]          mu_o, mu_w, c_o, c_w, B_o, B_w, p_ref
    [relperm]        file = <Sw krw kro table>
    [initial]        p, sw
    [well.<name>]    x, y (or node), kind, control, value, r_w, skin
    [bc.<name>]      region = xmin xmax ymin ymax;  type = closed | dirichlet | neumann | robin
                     p, sw (dirichlet);  flux (neumann);  alpha, beta, gamma (robin)
    [solver]         dt_max, dt_min, max_newton_iters, tolerance, eta_p, eta_sw, dt_init
    [schedule]       end_time;  report_times = t1 t2 ...
    [output]         dir

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .control_volume import CvConfig
from .errors import ConfigError
from .flow_model import FluidProps, RockProps
from .gfdm import WeightKind
from .solver import NewtonConfig

SECTIONS = {
    "cloud": {"source", "boundary", "spacing", "file", "loops", "thickness"},
    "connectivity": {"method", "radius", "triangles", "min_neighbors"},
    "discretization": {"weight", "cv_weighting", "g", "corner_fill", "virtual_spacing"},
    "rock": {"phi", "c_r", "k", "k_file", "p_ref"},
    "fluid": {"mu_o", "mu_w", "c_o", "c_w", "b_o", "b_w", "p_ref"},
    "relperm": {"file"},
    "initial": {"p", "sw"},
    "solver": {"dt_max", "dt_min", "max_newton_iters", "tolerance", "eta_p", "eta_sw", "dt_init"},
    "schedule": {"end_time", "report_times"},
    "output": {"dir"},
}
WELL_KEYS = {"x", "y", "node", "kind", "control", "value", "r_w", "skin"}
BC_KEYS = {"region", "type", "p", "sw", "flux", "alpha", "beta", "gamma"}


@dataclass(frozen=True)
class WellEntry:
    name: str
    kind: str
    control: str
    value: float
    r_w: float = 0.1
    skin: float = 0.0
    x: float | None = None
    y: float | None = None
    node: int | None = None


@dataclass(frozen=True)
class BcEntry:
    name: str
    region: tuple[float, float, float, float]
    kind: str
    p: float | None = None
    sw: float | None = None
    flux: float = 0.0
    alpha: float = 0.0
    beta: float = 1.0
    gamma: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    base_dir: Path
    cloud_source: str = "generate"
    boundary: tuple[tuple[float, float], ...] = ()
    spacing: float | None = None
    cloud_file: Path | None = None
    loops_file: Path | None = None
    thickness: float = 3.0
    connectivity: str = "radius"
    radius: float | None = None
    triangles_file: Path | None = None
    min_neighbors: int = 5
    weight: WeightKind = WeightKind.INVERSE_CUBIC
    cv: CvConfig = field(default_factory=CvConfig)
    corner_fill: bool = True
    virtual_spacing: float | None = None
    rock: RockProps = field(default_factory=RockProps)
    k_file: Path | None = None
    fluid: FluidProps = field(default_factory=FluidProps)
    relperm_file: Path | None = None
    p_init: float = 15.0
    sw_init: float = 0.2
    wells: tuple[WellEntry, ...] = ()
    bcs: tuple[BcEntry, ...] = ()
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    end_time: float | None = None
    report_times: tuple[float, ...] = ()
    output_dir: Path | None = None


def _line_index(text: str) -> dict[tuple[str, str], int]:
    out = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            out[(section, "")] = lineno
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = lineno
    return out


class _Reader:
    def __init__(self, cp, lines, base):
        self.cp = cp
        self.lines = lines
        self.base = base

    def err(self, section, key, msg):
        return ConfigError(msg, key=f"{section}.{key}" if key else section, line=self.lines.get((section, key or "")))

    def has(self, section, key):
        return self.cp.has_section(section) and self.cp.has_option(section, key)

    def raw(self, section, key, default=None, required=False):
        if self.has(section, key):
            return self.cp.get(section, key).strip()
        if required:
            raise self.err(section, key, f"missing required key '{key}' in [{section}]")
        return default

    def num(self, section, key, default=None, required=False, cast=float, lo=None, hi=None, strict_lo=False):
        v = self.raw(section, key, None, required)
        if v is None:
            return default
        try:
            x = cast(v)
        except ValueError:
            raise self.err(section, key, f"'{v}' is not a valid {cast.__name__}") from None
        if lo is not None and (x < lo or (strict_lo and x == lo)):
            raise self.err(section, key, f"value {x} must be {'>' if strict_lo else '>='} {lo}")
        if hi is not None and x > hi:
            raise self.err(section, key, f"value {x} must be <= {hi}")
        return x

    def choice(self, section, key, options, default):
        v = self.raw(section, key, default, required=default is None)
        v = v.lower() if isinstance(v, str) else v
        if v not in options:
            raise self.err(section, key, f"invalid value '{v}'; expected one of {', '.join(options)}")
        return v

    def flag(self, section, key, default):
        if not self.has(section, key):
            return default
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            raise self.err(section, key, "expected true or false") from None

    def path(self, section, key, required=False, must_exist=True):
        v = self.raw(section, key, None, required)
        if v is None:
            return None
        p = Path(v)
        if not p.is_absolute():
            p = self.base / p
        if must_exist and not p.exists():
            raise self.err(section, key, f"file '{p}' does not exist")
        return p

    def floats(self, section, key, n=None):
        v = self.raw(section, key)
        if v is None:
            return None
        try:
            vals = tuple(float(t) for t in re.split(r"[\s,]+", v) if t)
        except ValueError:
            raise self.err(section, key, f"'{v}' is not a list of numbers") from None
        if n is not None and len(vals) != n:
            raise self.err(section, key, f"expected {n} numbers")
        return vals


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"syntax error: {exc.message if hasattr(exc, 'message') else exc}", line=line) from None
    lines = _line_index(text)
    r = _Reader(cp, lines, path.parent)

    for section in cp.sections():
        if section.startswith("well."):
            allowed = WELL_KEYS
        elif section.startswith("bc."):
            allowed = BC_KEYS
        elif section in SECTIONS:
            allowed = SECTIONS[section]
        else:
            raise r.err(section, None, f"unknown section [{section}]")
        for key in cp.options(section):
            if key not in allowed:
                raise r.err(section, key, f"unknown key '{key}' in [{section}]")

    kw: dict = {"base_dir": path.parent}

    # cloud
    src = r.choice("cloud", "source", ("generate", "file"), "generate")
    kw["cloud_source"] = src
    kw["thickness"] = r.num("cloud", "thickness", 3.0, lo=0, strict_lo=True)
    if src == "generate":
        pts = r.floats("cloud", "boundary")
        if pts is None:
            raise r.err("cloud", "boundary", "missing required key 'boundary' in [cloud]")
        if len(pts) % 2 or len(pts) < 6:
            raise r.err("cloud", "boundary", "boundary needs at least three 'x y' points")
        kw["boundary"] = tuple(zip(pts[0::2], pts[1::2]))
        kw["spacing"] = r.num("cloud", "spacing", required=True, lo=0, strict_lo=True)
    else:
        kw["cloud_file"] = r.path("cloud", "file", required=True)
        loops = r.path("cloud", "loops")
        kw["loops_file"] = loops or Path(f"{kw['cloud_file']}.loops")

    # connectivity
    method = r.choice("connectivity", "method", ("radius", "triangulation"), "radius")
    kw["connectivity"] = method
    if method == "radius":
        kw["radius"] = r.num("connectivity", "radius", required=True, lo=0, strict_lo=True)
    else:
        kw["triangles_file"] = r.path("connectivity", "triangles", required=True)
    kw["min_neighbors"] = r.num("connectivity", "min_neighbors", 5, cast=int, lo=4)

    # discretization
    weight = r.raw("discretization", "weight", "w2")
    try:
        kw["weight"] = WeightKind.parse(weight)
    except ValueError as exc:
        raise r.err("discretization", "weight", str(exc)) from None
    cvw = r.choice("discretization", "cv_weighting", ("plain", "empirical"), "empirical")
    G = r.num("discretization", "g", 1.0e6, lo=1.0)
    kw["cv"] = CvConfig(cvw, G)
    kw["corner_fill"] = r.flag("discretization", "corner_fill", True)
    kw["virtual_spacing"] = r.num("discretization", "virtual_spacing", None, lo=0, strict_lo=True)

    # rock and fluid
    k_file = r.path("rock", "k_file")
    try:
        kw["rock"] = RockProps(
            phi_ref=r.num("rock", "phi", 0.2, lo=0, hi=1, strict_lo=True),
            c_r=r.num("rock", "c_r", 1.0e-4, lo=0),
            k=r.num("rock", "k", 100.0, lo=0),
            thickness=kw["thickness"],
            p_ref=r.num("rock", "p_ref", 15.0),
        )
    except Exception as exc:
        raise r.err("rock", None, str(exc)) from None
    kw["k_file"] = k_file
    try:
        kw["fluid"] = FluidProps(
            mu_o=r.num("fluid", "mu_o", 2.0, lo=0, strict_lo=True),
            mu_w=r.num("fluid", "mu_w", 0.6, lo=0, strict_lo=True),
            c_o=r.num("fluid", "c_o", 3.0e-3, lo=0),
            c_w=r.num("fluid", "c_w", 4.0e-4, lo=0),
            B_o_ref=r.num("fluid", "b_o", 1.0, lo=0, strict_lo=True),
            B_w_ref=r.num("fluid", "b_w", 1.0, lo=0, strict_lo=True),
            p_ref=r.num("fluid", "p_ref", 15.0),
        )
    except Exception as exc:
        raise r.err("fluid", None, str(exc)) from None
    kw["relperm_file"] = r.path("relperm", "file")
    kw["p_init"] = r.num("initial", "p", 15.0)
    kw["sw_init"] = r.num("initial", "sw", 0.2, lo=0, hi=1)

    # wells
    wells = []
    for section in cp.sections():
        if not section.startswith("well."):
            continue
        name = section[5:]
        kind = r.choice(section, "kind", ("producer", "injector"), None)
        control = r.choice(section, "control", ("rate", "bhp"), "rate")
        value = r.num(section, "value", required=True)
        if control == "rate" and value <= 0:
            raise r.err(section, "value", "rate-controlled wells need a positive rate")
        node = r.num(section, "node", None, cast=int, lo=0)
        x = r.num(section, "x", None)
        y = r.num(section, "y", None)
        if node is None and (x is None or y is None):
            raise r.err(section, None, f"well '{name}' needs either 'node' or both 'x' and 'y'")
        wells.append(WellEntry(name, kind, control, value, r.num(section, "r_w", 0.1, lo=0, strict_lo=True),
                               r.num(section, "skin", 0.0), x, y, node))
    kw["wells"] = tuple(wells)

    # boundary conditions
    bcs = []
    for section in cp.sections():
        if not section.startswith("bc."):
            continue
        region = r.floats(section, "region", 4)
        if region is None:
            raise r.err(section, "region", f"missing required key 'region' in [{section}]")
        kind = r.choice(section, "type", ("closed", "dirichlet", "neumann", "robin"), None)
        p = r.num(section, "p", None)
        if kind == "dirichlet" and p is None:
            raise r.err(section, "p", "dirichlet condition needs 'p'")
        beta = r.num(section, "beta", 1.0)
        if kind == "robin" and beta == 0:
            raise r.err(section, "beta", "robin condition needs a non-zero 'beta'")
        bcs.append(BcEntry(section[3:], region, kind, p, r.num(section, "sw", None, lo=0, hi=1),
                           r.num(section, "flux", 0.0), r.num(section, "alpha", 0.0), beta,
                           r.num(section, "gamma", 0.0)))
    kw["bcs"] = tuple(bcs)

    # solver and schedule
    d = NewtonConfig()
    try:
        kw["newton"] = NewtonConfig(
            dt_max=r.num("solver", "dt_max", d.dt_max, lo=0, strict_lo=True),
            dt_min=r.num("solver", "dt_min", d.dt_min, lo=0, strict_lo=True),
            max_newton_iters=r.num("solver", "max_newton_iters", d.max_newton_iters, cast=int, lo=1),
            residual_tolerance=r.num("solver", "tolerance", d.residual_tolerance, lo=0, strict_lo=True),
            eta_p=r.num("solver", "eta_p", d.eta_p, lo=0, strict_lo=True),
            eta_sw=r.num("solver", "eta_sw", d.eta_sw, lo=0, strict_lo=True),
            dt_init=r.num("solver", "dt_init", None, lo=0, strict_lo=True),
        )
    except ValueError as exc:
        raise r.err("solver", None, str(exc)) from None
    kw["end_time"] = r.num("schedule", "end_time", None, lo=0, strict_lo=True)
    rt = r.floats("schedule", "report_times") or ()
    if list(rt) != sorted(rt) or (kw["end_time"] is not None and any(t > kw["end_time"] or t < 0 for t in rt)):
        raise r.err("schedule", "report_times", "report times must be sorted and lie in [0, end_time]")
    kw["report_times"] = tuple(rt)
    out = r.raw("output", "dir")
    if out is not None:
        p = Path(out)
        kw["output_dir"] = p if p.is_absolute() else path.parent / p
    return RunConfig(**kw)
