"""A-posteriori MOOD primitives: detection, status stencil, projections.

Statuses order a cell's distance from trouble; they only escalate within a
single spreading pass:

    0  OK                 pure DG cell
    1  DG_TO_FV           computes DG, keeps an FV projection for neighbours
    2  FV_TO_DG           computes FV, projects the result onto DG
    3  TROUBLED           computes FV only

The hybrid step orchestration that consumes these primitives lives in the
driver loop; everything here is pure array work.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import build_operators
from .basis import lagrange_eval as _lag
from .pde import PDESystem

OK = 0
DG_TO_FV = 1
FV_TO_DG = 2
TROUBLED = 3

DMP_DELTA0 = 1e-4
DMP_EPS_REL = 1e-3


@lru_cache(maxsize=None)
def subcell_ops(order: int, dim: int) -> "SubcellOps":
    return SubcellOps(order, dim)


class SubcellOps:
    """Tensorised projection matrices between DG dof and subcell averages."""

    def __init__(self, order: int, dim: int):
        b = build_operators(order)
        self.order = order
        self.dim = dim
        self.nsub1 = b.n_subcells
        self.nsub = b.n_subcells**dim
        self.ndof = b.n_nodes**dim
        centers = (np.arange(b.n_subcells) + 0.5) / b.n_subcells
        sample1 = np.stack(
            [
                np.array([_lag(b.nodes, j, c) for c in centers])
                for j in range(b.n_nodes)
            ],
            axis=1,
        )
        if dim == 1:
            self.project = b.subcell_projection.copy()
            self.reconstruct = b.subcell_reconstruction.copy()
            self.sample = sample1
        else:
            self.project = np.kron(b.subcell_projection, b.subcell_projection)
            self.reconstruct = np.kron(
                b.subcell_reconstruction, b.subcell_reconstruction
            )
            self.sample = np.kron(sample1, sample1)


def project_dg_to_fv(dof: np.ndarray, ops: SubcellOps) -> np.ndarray:
    """Exact subcell averaging of the DG polynomial; (..., ndof, nv) in."""
    return np.einsum("sj,...jv->...sv", ops.project, dof)


def project_fv_to_dg(
    sub: np.ndarray, ops: SubcellOps, system: PDESystem | None = None
) -> np.ndarray:
    """Conservative reconstruction of DG dof from subcell averages.

    For shallow water the water level h+b is reconstructed first and the
    reconstructed bathymetry subtracted afterwards, so steep wet/dry data
    cannot excite spurious surface waves.
    """
    if system is not None and system.name == "swe":
        tmp = sub.copy()
        tmp[..., 0] += tmp[..., 3]
        out = np.einsum("js,...sv->...jv", ops.reconstruct, tmp)
        out[..., 0] -= out[..., 3]
        return out
    return np.einsum("js,...sv->...jv", ops.reconstruct, sub)


def subcell_minmax(sub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell per-variable extremes of the subcell representation."""
    return sub.min(axis=-2), sub.max(axis=-2)


def neighborhood_minmax(mn, mx, nbr_idx):
    """Reduce cell extremes over the Moore neighbourhood.

    nbr_idx: (nc, K) leaf slots, padded with the cell's own slot.
    """
    return mn[nbr_idx].min(axis=1), mx[nbr_idx].max(axis=1)


def dmp_check(
    cand_sub: np.ndarray,
    nbr_min: np.ndarray,
    nbr_max: np.ndarray,
    delta0: float = DMP_DELTA0,
    eps_rel: float = DMP_EPS_REL,
) -> np.ndarray:
    """Relaxed discrete maximum principle on subcell projections.

    Passes where, for every variable, all candidate subcell values stay in
    [min - delta, max + delta] with delta = max(delta0, eps_rel*(max - min))
    taken from the previous-step neighbourhood extremes.
    """
    delta = np.maximum(delta0, eps_rel * (nbr_max - nbr_min))
    lo = np.all(cand_sub >= (nbr_min - delta)[:, None, :], axis=(1, 2))
    hi = np.all(cand_sub <= (nbr_max + delta)[:, None, :], axis=(1, 2))
    return lo & hi & np.all(np.isfinite(cand_sub), axis=(1, 2))


def physical_admissibility(
    cand_sub: np.ndarray, prm_sub: np.ndarray, system: PDESystem
) -> np.ndarray:
    """PDE admissibility evaluated on every subcell average of each cell."""
    ok = system.is_admissible(cand_sub, prm_sub)
    return np.all(ok, axis=-1)


def spread_status(cand: np.ndarray, nbr_idx: np.ndarray) -> np.ndarray:
    """Impose the stencil rings: troubled cells are buffered by one
    FV_TO_DG layer and one DG_TO_FV layer; statuses only escalate."""
    s1 = cand.copy()
    near_troubled = np.any(cand[nbr_idx] == TROUBLED, axis=1)
    s1 = np.maximum(s1, np.where(near_troubled, FV_TO_DG, OK).astype(cand.dtype))
    s2 = s1.copy()
    near_fv = np.any(s1[nbr_idx] >= FV_TO_DG, axis=1)
    s2 = np.maximum(s2, np.where(near_fv, DG_TO_FV, OK).astype(cand.dtype))
    return s2


@dataclass
class CandidateCheck:
    """Outcome of the a-posteriori checks for one batch of candidates."""

    dmp_pass: np.ndarray
    pad_pass: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.dmp_pass & self.pad_pass


def check_candidates(
    cand_sub, prm_sub, nbr_min, nbr_max, system: PDESystem,
    delta0: float = DMP_DELTA0, eps_rel: float = DMP_EPS_REL,
) -> CandidateCheck:
    return CandidateCheck(
        dmp_pass=dmp_check(cand_sub, nbr_min, nbr_max, delta0, eps_rel),
        pad_pass=physical_admissibility(cand_sub, prm_sub, system),
    )
