"""Pluggable hyperbolic-system descriptors and the four built-in systems.

A system is described by vectorised callbacks over trailing-axis state
vectors: every callback accepts ``q`` of shape (..., nvars) plus a matching
parameter array ``p`` of shape (..., nparams) and broadcasts over the leading
axes, so the same functions serve single states, whole cells and whole-mesh
batches.  Gradients are passed as (..., dim, nvars).

Sign convention: the engine integrates

    dq/dt + div F(q) + ncp(q, grad q) = source(q)

so ``ncp`` returns B(q) . grad q itself, not its negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class PDESystem:
    """Descriptor of one hyperbolic system plus its user callbacks."""

    name: str
    nvars: int
    dim: int
    nparams: int = 0
    has_flux: bool = False
    has_ncp: bool = False
    has_source: bool = False
    is_linear: bool = False
    variable_names: tuple[str, ...] = ()
    parameter_names: tuple[str, ...] = ()
    flux: Optional[Callable] = None          # flux(q, p, axis)
    ncp: Optional[Callable] = None           # ncp(q, grad, p)
    source: Optional[Callable] = None        # source(q, p)
    eigenvalues: Optional[Callable] = None   # eigenvalues(q, p, axis)
    is_admissible: Optional[Callable] = None  # -> bool array over points
    mirror_state: Optional[Callable] = None  # wall reflection (q, axis)
    riemann: Optional[Callable] = None       # optional face-solver override
    clamp_states: Optional[Callable] = None  # sanitise reconstructed states
    constants: dict = field(default_factory=dict)

    def max_abs_eigenvalue(self, q, p, axis):
        lam = self.eigenvalues(q, p, axis)
        return np.max(np.abs(lam), axis=-1)


def _default_admissible(q, p):
    return np.all(np.isfinite(q), axis=-1)


# ---------------------------------------------------------------------------
# Linear advection (oracle system for exactness tests)
# ---------------------------------------------------------------------------

def advection_system(velocity, dim: int | None = None) -> PDESystem:
    """Scalar advection with constant velocity vector."""
    a = np.atleast_1d(np.asarray(velocity, dtype=float))
    d = dim if dim is not None else len(a)

    def flux(q, p, axis):
        return a[axis] * q

    def eigenvalues(q, p, axis):
        return np.full_like(q, a[axis])

    return PDESystem(
        name="advection",
        nvars=1,
        dim=d,
        has_flux=True,
        is_linear=True,
        variable_names=("q",),
        flux=flux,
        eigenvalues=eigenvalues,
        is_admissible=_default_admissible,
        mirror_state=lambda q, axis: q,
        constants={"velocity": tuple(a)},
    )


# ---------------------------------------------------------------------------
# Compressible Euler, 2D
# ---------------------------------------------------------------------------

def euler_pressure(q, gamma: float):
    rho = q[..., 0]
    mom2 = q[..., 1] ** 2 + q[..., 2] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return (gamma - 1.0) * (q[..., 3] - 0.5 * mom2 / rho)


def euler_system(gamma: float = 1.4) -> PDESystem:
    """Inviscid compressible flow; variables (rho, jx, jy, E)."""

    def flux(q, p, axis):
        rho, e = q[..., 0], q[..., 3]
        jn = q[..., axis + 1]
        pr = euler_pressure(q, gamma)
        with np.errstate(divide="ignore", invalid="ignore"):
            un = jn / rho
        out = np.empty_like(q)
        out[..., 0] = jn
        out[..., 1] = q[..., 1] * un
        out[..., 2] = q[..., 2] * un
        out[..., axis + 1] += pr
        out[..., 3] = un * (e + pr)
        return out

    def eigenvalues(q, p, axis):
        rho = q[..., 0]
        pr = euler_pressure(q, gamma)
        with np.errstate(divide="ignore", invalid="ignore"):
            un = q[..., axis + 1] / rho
            c = np.sqrt(gamma * pr / rho)
        out = np.empty_like(q)
        out[..., 0] = un - c
        out[..., 1] = un
        out[..., 2] = un
        out[..., 3] = un + c
        return out

    def is_admissible(q, p):
        return (q[..., 0] > 0.0) & (euler_pressure(q, gamma) >= 0.0) & np.all(
            np.isfinite(q), axis=-1
        )

    def mirror_state(q, axis):
        out = q.copy()
        out[..., axis + 1] = -out[..., axis + 1]
        return out

    return PDESystem(
        name="euler",
        nvars=4,
        dim=2,
        has_flux=True,
        variable_names=("rho", "jx", "jy", "E"),
        flux=flux,
        eigenvalues=eigenvalues,
        is_admissible=is_admissible,
        mirror_state=mirror_state,
        constants={"gamma": gamma},
    )


# ---------------------------------------------------------------------------
# Shallow water with bathymetry, 2D
# ---------------------------------------------------------------------------

def swe_system(gravity: float = 9.81, dry_tolerance: float = 1e-8) -> PDESystem:
    """Shallow water (h, hu, hv, b); the full g h d(b+h) term sits in the
    non-conservative product, which keeps lake-at-rest balance exact.

    Below ``dry_tolerance`` velocities are zeroed before flux and eigenvalue
    evaluation to avoid amplifying tiny negative or near-zero depths.
    """
    g = gravity
    eps = dry_tolerance

    def velocities(q):
        h = q[..., 0]
        wet = h > eps
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(wet, q[..., 1] / np.where(wet, h, 1.0), 0.0)
            v = np.where(wet, q[..., 2] / np.where(wet, h, 1.0), 0.0)
        return u, v

    def flux(q, p, axis):
        u, v = velocities(q)
        un = u if axis == 0 else v
        out = np.empty_like(q)
        out[..., 0] = q[..., 0] * un
        out[..., 1] = q[..., 1] * un
        out[..., 2] = q[..., 2] * un
        out[..., 3] = 0.0
        return out

    def ncp(q, grad, p):
        h = np.maximum(q[..., 0], 0.0)
        out = np.zeros_like(q)
        for a in range(grad.shape[-2]):
            out[..., a + 1] = g * h * (grad[..., a, 3] + grad[..., a, 0])
        return out

    def eigenvalues(q, p, axis):
        u, v = velocities(q)
        un = u if axis == 0 else v
        c = np.sqrt(g * np.maximum(q[..., 0], 0.0))
        out = np.empty_like(q)
        out[..., 0] = un + c
        out[..., 1] = un - c
        out[..., 2] = un
        out[..., 3] = 0.0
        return out

    def is_admissible(q, p):
        return (q[..., 0] >= -eps) & np.all(np.isfinite(q), axis=-1)

    def mirror_state(q, axis):
        out = q.copy()
        out[..., axis + 1] = -out[..., axis + 1]
        return out

    def riemann(q_l, q_r, p_l, p_r, axis):
        return swe_wetdry_riemann(q_l, q_r, axis, g, eps)

    def clamp_states(q):
        # Reconstructed interface depths may undershoot at fronts; they are
        # flux inputs only, so flooring h keeps conservation intact.
        out = q.copy()
        out[..., 0] = np.maximum(out[..., 0], 0.0)
        return out

    return PDESystem(
        name="swe",
        nvars=4,
        dim=2,
        has_flux=True,
        has_ncp=True,
        variable_names=("h", "hu", "hv", "b"),
        flux=flux,
        ncp=ncp,
        eigenvalues=eigenvalues,
        is_admissible=is_admissible,
        mirror_state=mirror_state,
        riemann=riemann,
        constants={"gravity": g, "dry_tolerance": eps},
    )


def swe_wetdry_riemann(q_l, q_r, axis: int, g: float, eps: float):
    """Rusanov face solver on hydrostatically reconstructed wet/dry states.

    Returns (central_flux, ncp_jump): the minus-side cell consumes
    ``central_flux + ncp_jump`` on this face, the plus side
    ``central_flux - ncp_jump``.

    Both states are re-expressed above the higher of the two beds,
    h* = max(0, h + b - max(bL, bR)), and the flux (dissipation included)
    acts on the starred depths only: a lake at rest sees exactly zero flux
    over arbitrary bathymetry, outflow is bounded by the available starred
    depth (positivity-friendly), and a dry bed above the wet surface
    degenerates to h* = 0 on both sides.  That dry-wall case additionally
    reflects the wet state so arriving momentum feels the wall reaction.
    """
    q_l = np.asarray(q_l, dtype=float)
    q_r = np.asarray(q_r, dtype=float)
    h_l, h_r = q_l[..., 0], q_r[..., 0]
    b_l, b_r = q_l[..., 3], q_r[..., 3]
    eta_l, eta_r = h_l + b_l, h_r + b_r
    wet_l, wet_r = h_l > eps, h_r > eps

    # Dry-and-higher neighbours act as walls: reflect the wet state.
    wall_r = wet_l & ~wet_r & (b_r >= eta_l)
    wall_l = wet_r & ~wet_l & (b_l >= eta_r)

    def reflect(q, axis):
        out = q.copy()
        out[..., axis + 1] = -out[..., axis + 1]
        return out

    q_le = np.where(wall_l[..., None], reflect(q_r, axis), q_l)
    q_re = np.where(wall_r[..., None], reflect(q_l, axis), q_r)

    def prim(q):
        h = q[..., 0]
        wet = h > eps
        hd = np.where(wet, h, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(wet, q[..., 1] / hd, 0.0)
            v = np.where(wet, q[..., 2] / hd, 0.0)
        return h, u, v

    hl, ul, vl = prim(q_le)
    hr, ur, vr = prim(q_re)
    b_star = np.maximum(q_le[..., 3], q_re[..., 3])
    hs_l = np.maximum(0.0, hl + q_le[..., 3] - b_star)
    hs_r = np.maximum(0.0, hr + q_re[..., 3] - b_star)
    un_l = ul if axis == 0 else vl
    un_r = ur if axis == 0 else vr
    s = np.maximum(
        np.abs(un_l) + np.sqrt(g * hs_l), np.abs(un_r) + np.sqrt(g * hs_r)
    )

    def star_flux(hs, u, v, un):
        out = np.zeros(hs.shape + (4,))
        out[..., 0] = hs * un
        out[..., 1] = hs * u * un
        out[..., 2] = hs * v * un
        return out

    f_l = star_flux(hs_l, ul, vl, un_l)
    f_r = star_flux(hs_r, ur, vr, un_r)
    zeta = np.zeros_like(q_l)
    zeta[..., 0] = hs_r - hs_l
    zeta[..., 1] = hs_r * ur - hs_l * ul
    zeta[..., 2] = hs_r * vr - hs_l * vl

    flux = 0.5 * (f_l + f_r) - 0.5 * s[..., None] * zeta

    jump = np.zeros_like(q_l)
    jump[..., axis + 1] = 0.25 * g * (hs_l + hs_r) * (hs_r - hs_l)
    return flux, jump


# ---------------------------------------------------------------------------
# Linear elastic waves, 2D velocity-stress form
# ---------------------------------------------------------------------------

def elastic_system() -> PDESystem:
    """Isotropic elastodynamics (sxx, syy, sxy, vx, vy).

    The Lame constants and density travel as per-point material parameters
    (lam, mu, rho); the whole system is a non-conservative product with a
    state-independent coefficient matrix, so it is linear.
    """

    def ncp(q, grad, p):
        lam, mu, rho = p[..., 0], p[..., 1], p[..., 2]
        dx, dy = grad[..., 0, :], grad[..., 1, :]
        out = np.empty_like(q)
        out[..., 0] = -((lam + 2.0 * mu) * dx[..., 3] + lam * dy[..., 4])
        out[..., 1] = -(lam * dx[..., 3] + (lam + 2.0 * mu) * dy[..., 4])
        out[..., 2] = -mu * (dy[..., 3] + dx[..., 4])
        out[..., 3] = -(dx[..., 0] + dy[..., 2]) / rho
        out[..., 4] = -(dx[..., 2] + dy[..., 1]) / rho
        return out

    def eigenvalues(q, p, axis):
        lam, mu, rho = p[..., 0], p[..., 1], p[..., 2]
        cp = np.sqrt((lam + 2.0 * mu) / rho)
        cs = np.sqrt(mu / rho)
        out = np.empty_like(q)
        out[..., 0] = -cp
        out[..., 1] = -cs
        out[..., 2] = 0.0
        out[..., 3] = cs
        out[..., 4] = cp
        return out

    def mirror_state(q, axis):
        # Rigid wall: zero normal velocity, reflected shear traction.
        out = q.copy()
        out[..., 3 + axis] = -out[..., 3 + axis]
        out[..., 2] = -out[..., 2]
        return out

    return PDESystem(
        name="elastic",
        nvars=5,
        dim=2,
        nparams=3,
        has_ncp=True,
        is_linear=True,
        variable_names=("sxx", "syy", "sxy", "vx", "vy"),
        parameter_names=("lam", "mu", "rho"),
        ncp=ncp,
        eigenvalues=eigenvalues,
        is_admissible=_default_admissible,
        mirror_state=mirror_state,
    )


def lame_constants(cp: float, cs: float, rho: float) -> tuple[float, float]:
    """Invert wave speeds to the Lame constants (lam, mu)."""
    if cp <= 0 or cs <= 0 or rho <= 0:
        raise ConfigurationError("material wave speeds and density must be positive")
    mu = rho * cs * cs
    lam = rho * cp * cp - 2.0 * mu
    if lam <= 0:
        raise ConfigurationError(f"cp={cp}, cs={cs} give non-positive lambda")
    return lam, mu
