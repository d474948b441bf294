"""Patch-based finite volume schemes on (2N+1)^d subcells per cell.

Used standalone (pure FV solver) and as the robust fallback of the
a-posteriori limiter.  Working arrays are ghosted grids of shape
(npatch, ny, nx, nvars) in 2D or (npatch, nx, nvars) in 1D; the stored
flat layout (npatch, nsub**d, nvars) matches the DG convention of axis 0
fastest, so ``flat.reshape(np, nsub, nsub, nv)`` lands on the (y, x) grid.

Face fluxes follow the engine convention of aderdg.rusanov_flux: a face
yields (G, D) and the minus cell consumes G + D, the plus cell G - D.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aderdg import rusanov_flux
from .mesh import CellRef
from .pde import PDESystem

FV_CFL = 0.9


@dataclass
class FVPatch:
    """Single-cell view of a subcell patch (tests and probes)."""

    subcells: np.ndarray     # (nsub**d, nvars) flat averages
    params: np.ndarray
    cell: CellRef
    time: float
    ghost_depth: int = 1


def minmod(a, b):
    """Zero on sign disagreement, else the argument of smaller magnitude."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.where(a * b <= 0.0, 0.0, np.where(np.abs(a) < np.abs(b), a, b))


def to_grid(flat: np.ndarray, nsub: int, dim: int) -> np.ndarray:
    if dim == 1:
        return flat
    nc, _, nv = flat.shape
    return flat.reshape(nc, nsub, nsub, nv)


def from_grid(grid: np.ndarray, dim: int) -> np.ndarray:
    if dim == 1:
        return grid
    nc = grid.shape[0]
    return grid.reshape(nc, -1, grid.shape[-1])


def _arr_axis(pde_axis: int, dim: int) -> int:
    # grid layout (np, y, x, nv): pde axis 0 advances along array axis -2.
    return (dim - pde_axis) if dim == 2 else 1


def interior(u: np.ndarray, g: int, dim: int) -> np.ndarray:
    sl = (slice(None),) + (slice(g, -g),) * dim
    return u[sl]


def ghosted(flat: np.ndarray, nsub: int, dim: int, g: int) -> np.ndarray:
    """Allocate a ghosted working grid with the interior filled in."""
    grid = to_grid(flat, nsub, dim)
    shape = (grid.shape[0],) + tuple(n + 2 * g for n in grid.shape[1:-1]) + grid.shape[-1:]
    out = np.full(shape, np.nan)
    interior(out, g, dim)[...] = grid
    return out


def _face_states(u, g, dim, axis):
    """Adjacent (minus, plus) cell strips for every interface of the interior."""
    ax = _arr_axis(axis, dim)
    v = np.moveaxis(u, ax, -2)
    n = v.shape[-2]
    other = (slice(None),) + (slice(g, -g),) * (dim - 1)
    lo = v[other + (slice(g - 1, n - g),)]
    hi = v[other + (slice(g, n - g + 1),)]
    return lo, hi, ax


def godunov_step(u, g, dim, h, dt, system: PDESystem, prm=None):
    """First-order update of the interior of a ghosted patch batch.

    ``u``: ghosted grid batch; ``h`` subcell sizes, shape (np, dim);
    returns the updated interior grid (ghosts untouched).
    """
    out = interior(u, g, dim).copy()
    p = _param_like(u, prm, system)
    for axis in range(dim):
        flo, fhi, ax = _face_states(u, g, dim, axis)
        plo, phi, _ = _face_states(p, g, dim, axis)
        gflux, jump = rusanov_flux(flo, fhi, plo, phi, system, axis)
        dn = np.moveaxis(gflux, -2, ax)
        jn = np.moveaxis(jump, -2, ax)
        sl_lo = [slice(None)] * out.ndim
        sl_hi = [slice(None)] * out.ndim
        sl_lo[ax] = slice(0, -1)
        sl_hi[ax] = slice(1, None)
        ha = _h_bcast(h, axis, out.ndim)
        out -= dt / ha * (
            dn[tuple(sl_hi)] - dn[tuple(sl_lo)]
            + jn[tuple(sl_hi)] + jn[tuple(sl_lo)]
        )
    if system.has_source:
        out += dt * system.source(interior(u, g, dim), interior(p, g, dim))
    return out


def musclhancock_step(u, g, dim, h, dt, system: PDESystem, prm=None,
                      force_zero_slopes: bool = False):
    """Second-order TVD update: minmod slopes, half-step face evolution,
    Rusanov fluxes on the evolved interface states, midpoint NCP path terms.
    """
    assert g >= 2, "MUSCL-Hancock needs two ghost layers"
    p = _param_like(u, prm, system)
    core = _shrink(u, g - 1, dim)      # interior plus one ring
    pcore = _shrink(p, g - 1, dim)

    slopes = []
    for axis in range(dim):
        ax = _arr_axis(axis, dim)
        v = np.moveaxis(core, ax, -2)
        s = minmod(v[..., 1:-1, :] - v[..., :-2, :], v[..., 2:, :] - v[..., 1:-1, :])
        if force_zero_slopes:
            s = np.zeros_like(s)
        full = np.zeros_like(v)
        full[..., 1:-1, :] = s
        slopes.append(np.moveaxis(full, -2, ax))

    # Half-step predictor shared by all faces of a cell.
    incr = np.zeros_like(core)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for axis in range(dim):
            ha = _h_bcast(h, axis, core.ndim)
            if system.has_flux:
                f_minus = system.flux(core - 0.5 * slopes[axis], pcore, axis)
                f_plus = system.flux(core + 0.5 * slopes[axis], pcore, axis)
                incr -= 0.5 * dt / ha * (f_plus - f_minus)
        if system.has_ncp:
            grad = np.stack(
                [slopes[a] / _h_bcast(h, a, core.ndim) for a in range(dim)], axis=-2
            )
            incr -= 0.5 * dt * system.ncp(core, grad, pcore)
        if system.has_source:
            incr += 0.5 * dt * system.source(core, pcore)

    half = core + incr
    out = _shrink(core, 1, dim).copy()
    for axis in range(dim):
        ax = _arr_axis(axis, dim)
        vminus = np.moveaxis(half - 0.5 * slopes[axis], ax, -2)
        vplus = np.moveaxis(half + 0.5 * slopes[axis], ax, -2)
        pg = np.moveaxis(pcore, ax, -2)
        other = (slice(None),) + (slice(1, -1),) * (dim - 1)
        n = vminus.shape[-2]
        ql = vplus[other + (slice(0, n - 1),)]
        qr = vminus[other + (slice(1, n),)]
        pl = pg[other + (slice(0, n - 1),)]
        pr = pg[other + (slice(1, n),)]
        gflux, jump = rusanov_flux(ql, qr, pl, pr, system, axis)
        dn = np.moveaxis(gflux, -2, ax)
        jn = np.moveaxis(jump, -2, ax)
        sl_lo = [slice(None)] * out.ndim
        sl_hi = [slice(None)] * out.ndim
        sl_lo[ax] = slice(0, -1)
        sl_hi[ax] = slice(1, None)
        ha = _h_bcast(h, axis, out.ndim)
        out -= dt / ha * (
            dn[tuple(sl_hi)] - dn[tuple(sl_lo)]
            + jn[tuple(sl_hi)] + jn[tuple(sl_lo)]
        )
    hc = _shrink(half, 1, dim)
    pc = _shrink(pcore, 1, dim)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        if system.has_ncp:
            grad = np.stack(
                [
                    _shrink(slopes[a], 1, dim) / _h_bcast(h, a, out.ndim)
                    for a in range(dim)
                ],
                axis=-2,
            )
            out -= dt * system.ncp(hc, grad, pc)
        if system.has_source:
            out += dt * system.source(hc, pc)
    return out


def _shrink(u, k, dim):
    if k == 0:
        return u
    sl = (slice(None),) + (slice(k, -k),) * dim
    return u[sl]


def _h_bcast(h, axis, ndim):
    h = np.asarray(h, dtype=float)
    shape = (h.shape[0],) + (1,) * (ndim - 1)
    return h[:, axis].reshape(shape)


def _param_like(u, prm, system: PDESystem):
    if prm is not None:
        return prm
    return np.zeros(u.shape[:-1] + (system.nparams,))


# ---------------------------------------------------------------------------
# Ghost filling for a single patch (the driver uses batched index maps built
# from the same arithmetic; this entry point serves tests and simple runs).
# ---------------------------------------------------------------------------

def fill_ghosts(u, g, dim, axis, side, source, system: PDESystem | None = None):
    """Populate one ghost strip of a ghosted grid in place.

    ``source`` is one of
      ('copy', strip)      same-level neighbour data, strip of depth g
      ('coarse', strip)    coarse neighbour averages, depth g (piecewise-
                           constant prolongation onto the 3x finer ghosts)
      ('fine', strips)     list of 3 fine-neighbour interiors to restrict
      ('wall', None)       mirror of the adjacent interior with the normal
                           momentum reflected via system.mirror_state
      ('outflow', None)    copy of the adjacent interior strip
      ('values', strip)    externally prescribed states (exact boundary)
    """
    kind, data = source
    ax = _arr_axis(axis, dim)
    v = np.moveaxis(u, ax, -2)
    n = v.shape[-2]
    tgt = (slice(0, g),) if side == 0 else (slice(n - g, n),)
    own = (slice(g, 2 * g),) if side == 0 else (slice(n - 2 * g, n - g),)
    if kind == "copy" or kind == "values":
        v[(..., *tgt, slice(None))] = data
    elif kind == "wall":
        strip = v[(..., *own, slice(None))][..., ::-1, :]
        v[(..., *tgt, slice(None))] = system.mirror_state(strip, axis)
    elif kind == "outflow":
        edge = (slice(g, g + 1),) if side == 0 else (slice(n - g - 1, n - g),)
        v[(..., *tgt, slice(None))] = v[(..., *edge, slice(None))]
    elif kind == "coarse":
        # Each coarse subcell covers three fine ghost subcells.
        v[(..., *tgt, slice(None))] = data
    else:
        raise ValueError(f"unknown ghost source {kind}")
    return u


def restrict_strip(fine: np.ndarray, axis_tangential: int | None = None) -> np.ndarray:
    """Average triples of fine subcells onto coarse ones (1D strips)."""
    n = fine.shape[-2]
    assert n % 3 == 0
    return fine.reshape(fine.shape[:-2] + (n // 3, 3) + fine.shape[-1:]).mean(axis=-2)


def prolong_strip(coarse: np.ndarray) -> np.ndarray:
    """Piecewise-constant copy of coarse subcells onto the 3x finer grid."""
    return np.repeat(coarse, 3, axis=-2)
