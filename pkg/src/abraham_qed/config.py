"""INI run configuration with line-level validation.

See ``configs/SCHEMA.md`` for the full key list.  Lists are comma separated;
vectors within a list are separated by ``;``.  Complex numbers use Python
syntax (``0.05j``, ``0.1-0.2j``).
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .beta import EnsembleSpec
from .fock import DIMENSION_CAP, ModeSet
from .kernels import Cutoff

SCHEMA = {
    "run": {"name", "out", "seed", "workers"},
    "cutoff": {"family", "scale", "sigma", "table"},
    "grid": {"n_radial", "n_theta", "n_phi", "k_max"},
    "modes": {"k", "lam", "weights", "alpha"},
    "particles": {"n", "q0", "p0"},
    "field": {"profile", "amplitude", "width"},
    "quantum": {"hbar", "n_max", "g", "x_min", "x_max", "periodic", "derivative",
                "krylov_dim", "krylov_tol", "leakage_bound", "sample_dt"},
    "time": {"dt", "t_end", "stride", "scheme", "checkpoints"},
    "flags": {"collinear", "v_on", "coupling_on"},
    "ensemble": {"weights", "q0", "p0", "alpha"},
}


class ConfigError(ValueError):
    def __init__(self, msg, line=None, path=None):
        loc = f"{path or '<config>'}:{line}: " if line else f"{path or '<config>'}: "
        super().__init__(loc + msg)
        self.line = line


@dataclass
class RunConfig:
    path: str = "<config>"
    name: str = "run"
    out: str = "out"
    seed: int = 0
    workers: int = 1
    cutoff: Cutoff = field(default_factory=Cutoff)
    grid: Optional[dict] = None
    modes: Optional[ModeSet] = None
    alpha_modes: Optional[np.ndarray] = None
    N: int = 1
    q0: np.ndarray = None
    p0: np.ndarray = None
    profile: str = "zero"
    amplitude: tuple = (0.0, 0.0)
    width: float = 1.0
    hbars: list = field(default_factory=list)
    n_max: int = 8
    G: int = 128
    x_min: float = -5.0
    x_max: float = 5.0
    periodic: bool = True
    derivative: str = "spectral"
    krylov_dim: int = 20
    krylov_tol: float = 1e-10
    leakage_bound: float = 1e-6
    sample_dt: float = 0.05
    dt: float = 1e-3
    t_end: float = 1.0
    stride: int = 10
    scheme: str = "strang"
    checkpoints: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    collinear: bool = False
    V_on: bool = True
    coupling_on: bool = True
    ensemble: Optional[EnsembleSpec] = None

    @property
    def axis(self):
        return 0 if self.collinear else None

    def tensor_size(self):
        if self.modes is None:
            return 0
        return self.G**self.N * (self.n_max + 1) ** self.modes.M


def _line_map(text):
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, None), no)
            continue
        m = re.match(r"([^=:#\s][^=:]*?)\s*[=:]", s)
        if m and section is not None and not raw[:1].isspace():
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def _complex(s):
    return complex(s.replace(" ", ""))


class _Reader:
    def __init__(self, cp, lines, path):
        self.cp, self.lines, self.path = cp, lines, path

    def err(self, sec, key, msg):
        raise ConfigError(msg, self.lines.get((sec, key), self.lines.get((sec, None))), self.path)

    def has(self, sec, key=None):
        return self.cp.has_section(sec) and (key is None or self.cp.has_option(sec, key))

    def get(self, sec, key, conv, default=None, required=False):
        if not self.has(sec, key):
            if required:
                raise ConfigError(f"missing required key [{sec}] {key}", self.lines.get((sec, None)), self.path)
            return default
        raw = self.cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, TypeError, SyntaxError) as exc:
            self.err(sec, key, f"bad value for {key!r}: {raw!r} ({exc})")

    def floats(self, sec, key, default=None, required=False):
        return self.get(sec, key, lambda s: [float(v) for v in s.split(",") if v.strip()], default, required)

    def complexes(self, sec, key, default=None, required=False):
        return self.get(sec, key, lambda s: [_complex(v) for v in s.split(",") if v.strip()], default, required)

    def vectors(self, sec, key, default=None, required=False):
        return self.get(sec, key, lambda s: [[float(c) for c in v.split(",")] for v in s.split(";") if v.strip()],
                        default, required)

    def boolean(self, sec, key, default):
        if not self.has(sec, key):
            return default
        try:
            return self.cp.getboolean(sec, key)
        except ValueError:
            self.err(sec, key, f"{key} must be a boolean")


def _particle_data(rd, sec, key, N, collinear, required=True):
    if collinear:
        vals = rd.floats(sec, key, required=required)
        if vals is None:
            return None
        if len(vals) != N:
            rd.err(sec, key, f"{key} needs {N} value(s) in collinear mode")
        out = np.zeros((N, 3))
        out[:, 0] = vals
        return out
    vals = rd.vectors(sec, key, required=required)
    if vals is None:
        return None
    if len(vals) != N or any(len(v) != 3 for v in vals):
        rd.err(sec, key, f"{key} needs {N} three-vector(s) separated by ';'")
    return np.asarray(vals, dtype=float)


def load_config(path):
    """Parse and validate a run configuration; raises ``ConfigError``."""
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, path)
    return parse_config(text, path)


def parse_config(text, path="<config>"):
    lines = _line_map(text)
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text, source=path)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", exc.lineno, path)
    except configparser.ParsingError as exc:
        no = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", no, path)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, path)
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, path)
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)), path)
        for key in cp.options(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", lines.get((sec, key)), path)
    rd = _Reader(cp, lines, path)
    c = RunConfig(path=path)

    c.name = rd.get("run", "name", str, "run")
    c.out = rd.get("run", "out", str, "out")
    c.seed = rd.get("run", "seed", int, 0)
    if not 0 <= c.seed < 2**64:
        rd.err("run", "seed", "seed must be an unsigned 64-bit integer")
    c.workers = rd.get("run", "workers", int, 1)
    if c.workers < 1:
        rd.err("run", "workers", "workers must be >= 1")

    family = rd.get("cutoff", "family", lambda s: s.strip().lower(), "sharp")
    if family not in ("sharp", "gaussian", "table"):
        rd.err("cutoff", "family", f"unknown cutoff family {family!r}")
    table = None
    if family == "table":
        pairs = rd.vectors("cutoff", "table", required=True)
        if any(len(p) != 2 for p in pairs):
            rd.err("cutoff", "table", "table entries are 'r, value' pairs separated by ';'")
        table = (tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))
    scale = rd.get("cutoff", "scale", float, 1.0)
    sigma = rd.get("cutoff", "sigma", float, 0.5)
    try:
        c.cutoff = Cutoff(family, scale, sigma, table=table)
    except ValueError as exc:
        rd.err("cutoff", None, str(exc))

    if rd.has("grid"):
        c.grid = {
            "n_radial": rd.get("grid", "n_radial", int, 8),
            "n_theta": rd.get("grid", "n_theta", int, 6),
            "n_phi": rd.get("grid", "n_phi", int, 12),
            "k_max": rd.get("grid", "k_max", float, c.cutoff.radius() if np.isfinite(c.cutoff.radius()) else 4.0),
        }
        for key in ("n_radial", "n_theta", "n_phi"):
            if c.grid[key] < 1:
                rd.err("grid", key, f"{key} must be positive")
        if c.grid["n_phi"] % 2:
            rd.err("grid", "n_phi", "n_phi must be even")
        if c.grid["k_max"] <= 0:
            rd.err("grid", "k_max", "k_max must be positive")

    c.collinear = rd.boolean("flags", "collinear", False)
    c.V_on = rd.boolean("flags", "v_on", True)
    c.coupling_on = rd.boolean("flags", "coupling_on", True)

    if rd.has("modes"):
        k = rd.vectors("modes", "k", required=True)
        lam = rd.get("modes", "lam", lambda s: [int(v) for v in s.split(",")], required=True)
        w = rd.floats("modes", "weights", required=True)
        if any(len(v) != 3 for v in k):
            rd.err("modes", "k", "wave-vectors must have three components")
        if any(v not in (1, 2) for v in lam):
            rd.err("modes", "lam", "polarization labels are 1 or 2")
        try:
            c.modes = ModeSet(k, [v - 1 for v in lam], w)
        except ValueError as exc:
            rd.err("modes", None, str(exc))
        alpha = rd.complexes("modes", "alpha", [0.0] * c.modes.M)
        if len(alpha) != c.modes.M:
            rd.err("modes", "alpha", "one amplitude per kept mode required")
        c.alpha_modes = np.asarray(alpha, dtype=complex)

    if c.grid is None and c.modes is None:
        raise ConfigError("need a [grid] or a [modes] section", None, path)

    c.N = rd.get("particles", "n", int, 1)
    if c.N not in (1, 2):
        rd.err("particles", "n", "N must be 1 or 2")
    c.q0 = _particle_data(rd, "particles", "q0", c.N, c.collinear)
    c.p0 = _particle_data(rd, "particles", "p0", c.N, c.collinear)

    c.profile = rd.get("field", "profile", lambda s: s.strip().lower(), "zero")
    if c.profile not in ("zero", "gaussian", "reference"):
        rd.err("field", "profile", f"unknown field profile {c.profile!r}")
    amp = rd.complexes("field", "amplitude", [0.0, 0.0])
    if len(amp) != 2:
        rd.err("field", "amplitude", "amplitude takes one value per polarization")
    c.amplitude = tuple(amp)
    c.width = rd.get("field", "width", float, 1.0)
    if c.width <= 0:
        rd.err("field", "width", "width must be positive")

    c.dt = rd.get("time", "dt", float, 1e-3)
    c.t_end = rd.get("time", "t_end", float, 1.0)
    c.stride = rd.get("time", "stride", int, 10)
    c.scheme = rd.get("time", "scheme", str, "strang")
    c.checkpoints = rd.floats("time", "checkpoints", [0.5, 1.0, 2.0])
    if c.dt <= 0:
        rd.err("time", "dt", "dt must be positive")
    if c.t_end <= 0:
        rd.err("time", "t_end", "t_end must be positive")
    if c.stride < 1:
        rd.err("time", "stride", "stride must be >= 1")
    if c.scheme not in ("strang", "rk4", "rk4-monolithic"):
        rd.err("time", "scheme", f"unknown scheme {c.scheme!r}")
    c.checkpoints = [t for t in c.checkpoints if t <= c.t_end + 1e-12]

    if rd.has("quantum"):
        if c.modes is None:
            rd.err("quantum", None, "quantum runs need a [modes] section")
        if not c.collinear:
            rd.err("quantum", None, "quantum runs require [flags] collinear = true")
        c.hbars = rd.floats("quantum", "hbar", required=True)
        if any(h <= 0 for h in c.hbars):
            rd.err("quantum", "hbar", "hbar values must be positive")
        c.n_max = rd.get("quantum", "n_max", int, 8)
        c.G = rd.get("quantum", "g", int, 128)
        c.x_min = rd.get("quantum", "x_min", float, -5.0)
        c.x_max = rd.get("quantum", "x_max", float, 5.0)
        c.periodic = rd.boolean("quantum", "periodic", True)
        c.derivative = rd.get("quantum", "derivative", str, "spectral")
        c.krylov_dim = rd.get("quantum", "krylov_dim", int, 20)
        c.krylov_tol = rd.get("quantum", "krylov_tol", float, 1e-10)
        c.leakage_bound = rd.get("quantum", "leakage_bound", float, 1e-6)
        c.sample_dt = rd.get("quantum", "sample_dt", float, 0.05)
        if c.n_max < 1:
            rd.err("quantum", "n_max", "n_max must be >= 1")
        if c.G < 8:
            rd.err("quantum", "g", "G must be >= 8")
        if c.x_max <= c.x_min:
            rd.err("quantum", "x_max", "x_max must exceed x_min")
        if c.derivative not in ("spectral", "central"):
            rd.err("quantum", "derivative", "derivative is 'spectral' or 'central'")
        if c.derivative == "spectral" and not c.periodic:
            rd.err("quantum", "derivative", "spectral derivative needs a periodic grid")
        if c.krylov_dim < 2:
            rd.err("quantum", "krylov_dim", "krylov_dim must be >= 2")
        ratio = c.sample_dt / c.dt
        if c.sample_dt <= 0 or abs(ratio - round(ratio)) > 1e-9:
            rd.err("quantum", "sample_dt", "sample_dt must be a positive multiple of dt")
        if c.tensor_size() > DIMENSION_CAP:
            rd.err("quantum", "g", f"tensor size {c.tensor_size()} exceeds the cap {DIMENSION_CAP}")
        span = c.x_max - c.x_min
        h = span / c.G if c.periodic else span / (c.G + 1)
        x_first = c.x_min if c.periodic else c.x_min + h
        x_last = c.x_min + (c.G - 1) * h if c.periodic else c.x_max - h
        for hb in c.hbars:
            s = 6 * np.sqrt(hb / 2)
            for q in c.q0[:, 0]:
                if q - s < x_first or q + s > x_last:
                    rd.err("particles", "q0", f"wave packet at q={q} does not fit the grid for hbar={hb}")

    if rd.has("ensemble"):
        if c.modes is None:
            rd.err("ensemble", None, "ensembles need a [modes] section")
        mu = rd.floats("ensemble", "weights", required=True)
        n = len(mu)
        qs = rd.get("ensemble", "q0", lambda s: [[float(v) for v in m.split(",")] for m in s.split("|")], required=True)
        ps = rd.get("ensemble", "p0", lambda s: [[float(v) for v in m.split(",")] for m in s.split("|")], required=True)
        al = rd.get("ensemble", "alpha", lambda s: [[_complex(v) for v in m.split(",")] for m in s.split("|")],
                    required=True)
        if not (len(qs) == len(ps) == len(al) == n):
            rd.err("ensemble", "weights", "weights, q0, p0 and alpha need one entry per member ('|' separated)")
        members = []
        for qv, pv, av in zip(qs, ps, al):
            if len(qv) != c.N or len(pv) != c.N or len(av) != c.modes.M:
                rd.err("ensemble", "alpha", "member shapes do not match N and the kept modes")
            members.append((np.asarray(qv), np.asarray(pv), np.asarray(av, dtype=complex)))
        try:
            c.ensemble = EnsembleSpec(mu, members)
        except ValueError as exc:
            rd.err("ensemble", "weights", str(exc))
    return c
