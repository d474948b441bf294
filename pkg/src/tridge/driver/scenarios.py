"""Built-in simulation scenarios: system + initial data + extras.

Each scenario bundles a PDE system instance, pointwise initial values, an
optional analytical solution (used for exact boundaries, convergence tables
and acceptance errors), an optional cell-marking refinement rule, and
default boundary kinds.  Positions arrive as arrays of shape (..., dim).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigurationError
from ..pde import (
    PDESystem,
    advection_system,
    elastic_system,
    euler_system,
    lame_constants,
    swe_system,
)
from .config import SimulationConfig

REFINE, KEEP, COARSEN = 1, 0, -1


@dataclass
class Scenario:
    name: str
    system: PDESystem
    initial: Callable                     # initial(x) -> (..., nvars)
    material: Optional[Callable] = None   # material(x) -> (..., nparams)
    exact: Optional[Callable] = None      # exact(x, t) -> (..., nvars)
    refinement: Optional[Callable] = None  # (dof, level, status) -> marks
    default_boundary: tuple[str, ...] = ()


def _hat(x, cfg: SimulationConfig):
    """Coordinates scaled to [0, 1] per axis."""
    o = np.asarray(cfg.offset)
    w = np.asarray(cfg.width)
    return (x - o) / w


def _advection_sine(cfg: SimulationConfig) -> Scenario:
    vel = cfg.advection_velocity
    if vel is None:
        # Fast flow whose sine pattern drifts slowly: the profile phase moves
        # at a_x + a_y, keeping the relaxed DMP quiet on marginally resolved
        # grids while both flux sweeps still see an O(1) velocity.
        vel = (1.0,) if cfg.dimension == 1 else (1.0, -0.85)
    system = advection_system(vel, dim=cfg.dimension)

    def exact(x, t):
        o = np.asarray(cfg.offset)
        w = np.asarray(cfg.width)
        phase = np.zeros(x.shape[:-1])
        for a in range(cfg.dimension):
            phase += (x[..., a] - vel[a] * t - o[a]) / w[a]
        return np.sin(2.0 * np.pi * phase)[..., None]

    return Scenario(
        name="advection-sine",
        system=system,
        initial=lambda x: exact(x, 0.0),
        exact=exact,
        default_boundary=("periodic",) * (2 * cfg.dimension),
    )


def _euler_smooth(cfg: SimulationConfig) -> Scenario:
    system = euler_system(cfg.gamma)
    u0 = np.array([1.0, -0.5])
    p0 = 1.0

    def exact(x, t):
        xh = _hat(x - u0 * t, cfg)
        rho = 1.0 + 0.2 * np.sin(2.0 * np.pi * (xh[..., 0] + xh[..., 1]))
        out = np.empty(x.shape[:-1] + (4,))
        out[..., 0] = rho
        out[..., 1] = rho * u0[0]
        out[..., 2] = rho * u0[1]
        out[..., 3] = p0 / (cfg.gamma - 1.0) + 0.5 * rho * (u0 @ u0)
        return out

    return Scenario(
        name="euler-smooth",
        system=system,
        initial=lambda x: exact(x, 0.0),
        exact=exact,
        default_boundary=("periodic",) * 4,
    )


def _circular_explosion(cfg: SimulationConfig) -> Scenario:
    system = euler_system(cfg.gamma)
    center = np.asarray(cfg.offset) + 0.5 * np.asarray(cfg.width)
    radius = 0.25 * min(cfg.width)

    def initial(x):
        r2 = np.sum((x - center) ** 2, axis=-1)
        inside = r2 < radius * radius
        out = np.zeros(x.shape[:-1] + (4,))
        out[..., 0] = np.where(inside, 1.0, 0.125)
        out[..., 3] = np.where(inside, 1.0, 0.1)
        return out

    def refinement(dof, level, status):
        rho = dof[..., 0]
        variation = rho.max(axis=1) - rho.min(axis=1)
        marks = np.full(dof.shape[0], KEEP, dtype=np.int8)
        marks[variation > 0.05] = REFINE
        marks[variation < 0.01] = COARSEN
        return marks

    return Scenario(
        name="circular-explosion",
        system=system,
        initial=initial,
        refinement=refinement,
        default_boundary=("wall",) * 4,
    )


def _oscillating_lake(cfg: SimulationConfig) -> Scenario:
    system = swe_system(cfg.gravity, cfg.dry_tolerance)
    omega = np.sqrt(0.2 * cfg.gravity)
    eps = cfg.dry_tolerance

    def bath(x):
        return 0.1 * (x[..., 0] ** 2 + x[..., 1] ** 2)

    def exact(x, t):
        b = bath(x)
        surf = 0.1 * (
            x[..., 0] * np.cos(omega * t) + x[..., 1] * np.sin(omega * t) + 0.75
        )
        h = np.maximum(0.0, surf - b)
        u = -0.5 * omega * np.sin(omega * t)
        v = 0.5 * omega * np.cos(omega * t)
        out = np.empty(x.shape[:-1] + (4,))
        out[..., 0] = h
        out[..., 1] = h * u
        out[..., 2] = h * v
        out[..., 3] = b
        return out

    def refinement(dof, level, status):
        h = dof[..., 0]
        band = (h > eps) & (h < 0.05)
        marks = np.full(dof.shape[0], KEEP, dtype=np.int8)
        away = np.all((h > 0.07) | (h <= eps), axis=1)
        marks[away] = COARSEN
        marks[np.any(band, axis=1)] = REFINE
        return marks

    return Scenario(
        name="oscillating-lake",
        system=system,
        initial=lambda x: exact(x, 0.0),
        exact=exact,
        refinement=refinement,
        default_boundary=("wall",) * 4,
    )


def _lake_at_rest(cfg: SimulationConfig) -> Scenario:
    system = swe_system(cfg.gravity, cfg.dry_tolerance)
    center = np.asarray(cfg.offset) + 0.5 * np.asarray(cfg.width)
    surface = 1.0

    def exact(x, t):
        b = 0.1 * np.sum((x - center) ** 2, axis=-1)
        out = np.zeros(x.shape[:-1] + (4,))
        out[..., 0] = np.maximum(0.0, surface - b)
        out[..., 3] = b
        return out

    return Scenario(
        name="lake-at-rest",
        system=system,
        initial=lambda x: exact(x, 0.0),
        exact=exact,
        default_boundary=("wall",) * 4,
    )


def _elastic_plane_wave(cfg: SimulationConfig) -> Scenario:
    system = elastic_system()
    lam, mu = lame_constants(cfg.cp, cfg.cs, cfg.rho)
    rho = cfg.rho
    cp = cfg.cp
    k = 2.0 * np.pi / cfg.width[0]

    def material(x):
        out = np.empty(x.shape[:-1] + (3,))
        out[..., 0] = lam
        out[..., 1] = mu
        out[..., 2] = rho
        return out

    def exact(x, t):
        # Right-going P wave: velocity amplitude 1, stress follows impedance.
        phase = np.sin(k * (x[..., 0] - cfg.offset[0] - cp * t))
        out = np.zeros(x.shape[:-1] + (5,))
        out[..., 3] = phase
        out[..., 0] = -rho * cp * phase
        out[..., 1] = out[..., 0] * lam / (lam + 2.0 * mu)
        return out

    return Scenario(
        name="elastic-plane-wave",
        system=system,
        initial=lambda x: exact(x, 0.0),
        material=material,
        exact=exact,
        default_boundary=("periodic",) * 4,
    )


_FACTORIES = {
    "advection-sine": _advection_sine,
    "euler-smooth": _euler_smooth,
    "circular-explosion": _circular_explosion,
    "oscillating-lake": _oscillating_lake,
    "lake-at-rest": _lake_at_rest,
    "elastic-plane-wave": _elastic_plane_wave,
}

_MIN_DIM = {"advection-sine": 1}


def available_scenarios() -> tuple[str, ...]:
    return tuple(sorted(_FACTORIES))


def make_scenario(cfg: SimulationConfig) -> Scenario:
    """Instantiate the configured scenario and cross-check solver metadata."""
    if cfg.scenario not in _FACTORIES:
        raise ConfigurationError(
            f"unknown scenario '{cfg.scenario}'; available: "
            f"{', '.join(available_scenarios())}"
        )
    if cfg.dimension < _MIN_DIM.get(cfg.scenario, 2):
        raise ConfigurationError(
            f"scenario '{cfg.scenario}' requires dimension 2"
        )
    scn = _FACTORIES[cfg.scenario](cfg)
    if cfg.system and cfg.system != scn.system.name:
        raise ConfigurationError(
            f"scenario '{cfg.scenario}' uses system '{scn.system.name}', "
            f"config says '{cfg.system}'"
        )
    if cfg.terms is not None:
        declared = set(cfg.terms)
        actual = {
            name
            for name, flag in (
                ("flux", scn.system.has_flux),
                ("ncp", scn.system.has_ncp),
                ("source", scn.system.has_source),
            )
            if flag
        }
        if declared != actual:
            raise ConfigurationError(
                f"terms {sorted(declared)} do not match system "
                f"'{scn.system.name}' terms {sorted(actual)}"
            )
    return scn
