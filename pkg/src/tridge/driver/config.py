"""Line-oriented specification-file dialect.

Structure::

    project <name>
      dimension = 2
      width = 1.0, 1.0
      offset = 0.0, 0.0
      end-time = 1.0
      solver
        kind = limited-aderdg
        order = 3
        scenario = oscillating-lake
        ...
      end solver
      output
        directory = out
        vtk-every = 0.5
        probe = gauge, 0.0, 0.0, h, hu
      end output
    end project

Every ``key = value`` pair must be a known key of its block; unknown keys
are hard errors naming the nearest known key.  All parse errors carry the
line number.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field
from typing import Optional

from ..errors import ConfigurationError

SOLVER_KINDS = ("aderdg", "fv", "limited-aderdg")
FV_SCHEMES = ("godunov", "musclhancock")
BOUNDARY_KINDS = ("wall", "periodic", "exact", "outflow")
TERM_NAMES = ("flux", "ncp", "source")


@dataclass
class ProbeSpec:
    name: str
    position: tuple[float, ...]
    variables: tuple[str, ...]


@dataclass
class SimulationConfig:
    project: str
    dimension: int
    width: tuple[float, ...]
    offset: tuple[float, ...]
    end_time: float
    solver_kind: str = "limited-aderdg"
    order: int = 3
    scenario: str = ""
    system: str = ""
    terms: Optional[tuple[str, ...]] = None
    maximum_mesh_size: Optional[float] = None
    base_dims: Optional[tuple[int, ...]] = None
    max_refinement_depth: int = 0
    time_stepping: str = "global"
    cfl_factor: Optional[float] = None  # None: per-order stability table
    fv_scheme: str = "musclhancock"
    dry_tolerance: float = 1e-8
    dmp_delta0: float = 1e-4
    dmp_epsilon: float = 1e-3
    gravity: float = 9.81
    gamma: float = 1.4
    advection_velocity: Optional[tuple[float, ...]] = None
    cp: float = 4000.0
    cs: float = 2000.0
    rho: float = 2600.0
    boundary: Optional[tuple[str, ...]] = None
    remesh_interval: int = 5
    output_dir: str = "output"
    vtk_every: float = 0.0
    probes: list[ProbeSpec] = field(default_factory=list)

    def domain_max(self) -> tuple[float, ...]:
        return tuple(o + w for o, w in zip(self.offset, self.width))


_TOP_KEYS = {
    "dimension": int,
    "width": "floats",
    "offset": "floats",
    "end-time": float,
}
_SOLVER_KEYS = {
    "kind": str,
    "order": int,
    "scenario": str,
    "system": str,
    "terms": "strs",
    "maximum-mesh-size": float,
    "base-dims": "ints",
    "max-refinement-depth": int,
    "time-stepping": str,
    "cfl-factor": float,
    "fv-scheme": str,
    "dry-tolerance": float,
    "dmp-delta0": float,
    "dmp-epsilon": float,
    "gravity": float,
    "gamma": float,
    "advection-velocity": "floats",
    "cp": float,
    "cs": float,
    "rho": float,
    "boundary": "strs",
    "remesh-interval": int,
}
_OUTPUT_KEYS = {
    "directory": str,
    "vtk-every": float,
    "probe": "probe",
}


def _fail(lineno: int, msg: str) -> None:
    raise ConfigurationError(f"line {lineno}: {msg}")


def _convert(key: str, raw: str, kind, lineno: int):
    try:
        if kind is int:
            if "." in raw:
                raise ValueError
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw.strip()
        if kind == "floats":
            return tuple(float(p) for p in raw.split(","))
        if kind == "ints":
            return tuple(int(p) for p in raw.split(","))
        if kind == "strs":
            return tuple(p.strip() for p in raw.split(",") if p.strip())
    except ValueError:
        _fail(lineno, f"{key}: expected {getattr(kind, '__name__', kind)}, got '{raw}'")
    raise AssertionError(kind)


def _unknown(key: str, known, lineno: int) -> None:
    close = difflib.get_close_matches(key, list(known), n=1)
    hint = f"; nearest known key is '{close[0]}'" if close else ""
    _fail(lineno, f"unknown key '{key}'{hint}")


def parse_config(text: str) -> SimulationConfig:
    """Parse the dialect into a validated SimulationConfig."""
    top: dict = {}
    solver: dict = {}
    output: dict = {}
    probes: list[ProbeSpec] = []
    project_name = None
    block = None  # None | 'project' | 'solver' | 'output'
    probe_lines: list[tuple[int, str]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if block is None:
            parts = line.split()
            if len(parts) == 2 and parts[0] == "project":
                project_name = parts[1]
                block = "project"
                continue
            _fail(lineno, f"expected 'project <name>', got '{line}'")
        if line == "solver" and block == "project":
            block = "solver"
            continue
        if line == "output" and block == "project":
            block = "output"
            continue
        if line == "end solver" and block == "solver":
            block = "project"
            continue
        if line == "end output" and block == "output":
            block = "project"
            continue
        if line == "end project" and block == "project":
            block = "done"
            continue
        if block == "done":
            _fail(lineno, f"content after 'end project': '{line}'")
        if "=" not in line:
            _fail(lineno, f"expected 'key = value', got '{line}'")
        key, _, raw_val = line.partition("=")
        key = key.strip()
        raw_val = raw_val.strip()
        if block == "project":
            if key not in _TOP_KEYS:
                _unknown(key, _TOP_KEYS, lineno)
            top[key] = (_convert(key, raw_val, _TOP_KEYS[key], lineno), lineno)
        elif block == "solver":
            if key not in _SOLVER_KEYS:
                _unknown(key, _SOLVER_KEYS, lineno)
            solver[key] = (_convert(key, raw_val, _SOLVER_KEYS[key], lineno), lineno)
        elif block == "output":
            if key not in _OUTPUT_KEYS:
                _unknown(key, _OUTPUT_KEYS, lineno)
            if key == "probe":
                probe_lines.append((lineno, raw_val))
            else:
                output[key] = (_convert(key, raw_val, _OUTPUT_KEYS[key], lineno), lineno)

    if project_name is None:
        raise ConfigurationError("missing project block")
    if block != "done":
        raise ConfigurationError("unterminated block: expected 'end project'")

    def need(store, key, where):
        if key not in store:
            raise ConfigurationError(f"missing required key '{key}' in {where} block")
        return store[key][0]

    dim = need(top, "dimension", "project")
    if dim not in (1, 2):
        _fail(top["dimension"][1], "dimension must be 1 or 2")
    width = need(top, "width", "project")
    if len(width) != dim:
        _fail(top["width"][1], f"width needs {dim} components")
    if any(w <= 0 for w in width):
        _fail(top["width"][1], "width components must be positive")
    offset = top.get("offset", ((0.0,) * dim, 0))[0]
    if len(offset) != dim:
        _fail(top["offset"][1], f"offset needs {dim} components")
    end_time = need(top, "end-time", "project")
    if end_time < 0:
        _fail(top["end-time"][1], "end-time must be non-negative")

    cfg = SimulationConfig(
        project=project_name,
        dimension=dim,
        width=width,
        offset=offset,
        end_time=end_time,
    )

    def take(key, attr, check=None):
        if key in solver:
            val, ln = solver[key]
            if check is not None:
                check(val, ln)
            setattr(cfg, attr, val)

    take("kind", "solver_kind", lambda v, ln: v in SOLVER_KINDS or _fail(
        ln, f"kind must be one of {SOLVER_KINDS}"))
    take("order", "order", lambda v, ln: 0 <= v <= 9 or _fail(
        ln, "order must be between 0 and 9"))
    take("scenario", "scenario")
    take("system", "system")
    take("terms", "terms", lambda v, ln: all(t in TERM_NAMES for t in v) or _fail(
        ln, f"terms must be a subset of {TERM_NAMES}"))
    take("maximum-mesh-size", "maximum_mesh_size", lambda v, ln: v > 0 or _fail(
        ln, "maximum-mesh-size must be positive"))
    take("base-dims", "base_dims", lambda v, ln: (
        len(v) == dim and all(b >= 1 for b in v)) or _fail(
        ln, f"base-dims needs {dim} positive entries"))
    take("max-refinement-depth", "max_refinement_depth", lambda v, ln: v >= 0 or _fail(
        ln, "max-refinement-depth must be >= 0"))
    take("time-stepping", "time_stepping", lambda v, ln: v == "global" or _fail(
        ln, "only global time-stepping is supported"))
    take("cfl-factor", "cfl_factor", lambda v, ln: 0 < v <= 1 or _fail(
        ln, "cfl-factor must be in (0, 1]"))
    take("fv-scheme", "fv_scheme", lambda v, ln: v in FV_SCHEMES or _fail(
        ln, f"fv-scheme must be one of {FV_SCHEMES}"))
    take("dry-tolerance", "dry_tolerance")
    take("dmp-delta0", "dmp_delta0")
    take("dmp-epsilon", "dmp_epsilon")
    take("gravity", "gravity")
    take("gamma", "gamma")
    take("advection-velocity", "advection_velocity", lambda v, ln: len(v) == dim or _fail(
        ln, f"advection-velocity needs {dim} components"))
    take("cp", "cp")
    take("cs", "cs")
    take("rho", "rho")
    take("remesh-interval", "remesh_interval", lambda v, ln: v >= 1 or _fail(
        ln, "remesh-interval must be >= 1"))

    if "boundary" in solver:
        val, ln = solver["boundary"]
        if len(val) != 2 * dim:
            _fail(ln, f"boundary needs {2 * dim} entries (low/high per axis)")
        for b in val:
            if b not in BOUNDARY_KINDS:
                _fail(ln, f"boundary kind must be one of {BOUNDARY_KINDS}")
        for ax in range(dim):
            lo, hi = val[2 * ax], val[2 * ax + 1]
            if (lo == "periodic") != (hi == "periodic"):
                _fail(ln, f"unpaired periodic boundary on axis {ax}")
        cfg.boundary = val

    if "scenario" not in solver:
        raise ConfigurationError("missing required key 'scenario' in solver block")
    if cfg.maximum_mesh_size is None and cfg.base_dims is None:
        raise ConfigurationError(
            "solver block needs 'base-dims' or 'maximum-mesh-size'"
        )

    if "directory" in output:
        cfg.output_dir = output["directory"][0]
    if "vtk-every" in output:
        val, ln = output["vtk-every"]
        if val < 0:
            _fail(ln, "vtk-every must be >= 0")
        cfg.vtk_every = val

    for lineno, raw_val in probe_lines:
        parts = [p.strip() for p in raw_val.split(",")]
        if len(parts) < 1 + dim + 1:
            _fail(lineno, "probe needs: name, position, at least one variable")
        name = parts[0]
        try:
            pos = tuple(float(p) for p in parts[1:1 + dim])
        except ValueError:
            _fail(lineno, "probe position: expected floats")
        for x, o, w in zip(pos, offset, width):
            if not (o <= x <= o + w):
                _fail(lineno, f"probe '{name}' lies outside the domain")
        probes.append(ProbeSpec(name, pos, tuple(parts[1 + dim:])))
    cfg.probes = probes
    return cfg


def parse_config_file(path: str) -> SimulationConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
