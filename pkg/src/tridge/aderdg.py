"""The three-phase ADER-DG step on batched cell arrays.

Cell degrees of freedom are nodal tensor-product coefficients stored flat
with axis 0 fastest (2D index i = i0 + (N+1)*i1), batched over a leading
cells axis: dof has shape (ncells, ndof, nvars).  The space-time predictor
works on (ncells, ntime, ndof, nvars); for nonlinear systems it is the
discrete Picard fixed-point of the weak space-time system, for linear ones
a Cauchy-Kowalevsky time-Taylor expansion packaged identically.

Face fluxes are exchanged in plus-axis orientation.  A face solve returns
a central flux G and a non-conservative jump term D; the minus-side cell
consumes G + D on that face and the plus-side cell G - D, so the two sides'
updates differ by the path-consistent jump B(mid) (qR - qL).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import NodalBasis, build_operators
from .errors import ConfigurationError
from .mesh import CellRef
from .pde import PDESystem

PICARD_REL_TOL = 1e-12

# Stability factors per polynomial order (the CFL_N of the dt bound below),
# calibrated on 2D diagonal advection: a flat 0.9 is linearly unstable from
# order 3 up.  The driver uses these defaults unless cfl-factor is set.
DEFAULT_CFL = (0.9, 0.9, 0.8, 0.65, 0.55, 0.48, 0.45, 0.4, 0.33, 0.28)


@dataclass(frozen=True)
class CellSolution:
    """Per-cell view of the DG state (mostly for tests and probes)."""

    dof: np.ndarray          # (ndof, nvars)
    params: np.ndarray       # (ndof, nparams)
    cell: CellRef
    time: float


@dataclass
class Prediction:
    """Space-time predictor output, time-averaged for the corrector.

    face axis ordering: face id 2*axis + (0 for the minus side, 1 for plus).
    """

    st_dof: np.ndarray       # (nc, ntime, ndof, nvars)
    qbar: np.ndarray         # (nc, ndof, nvars) time-averaged state
    fbar: np.ndarray | None  # (nc, dim, ndof, nvars) time-averaged flux
    ncp_bar: np.ndarray | None   # (nc, ndof, nvars) time-averaged B.grad q
    src_bar: np.ndarray | None   # (nc, ndof, nvars) time-averaged source
    face_q: np.ndarray       # (nc, 2*dim, nface_nodes, nvars) state traces
    face_f: np.ndarray | None    # (nc, 2*dim, nface_nodes, nvars) flux traces
    trouble: np.ndarray      # (nc,) bool: non-finite predictor


@lru_cache(maxsize=None)
def space_time_ops(order: int, dim: int) -> "SpaceTimeOps":
    return SpaceTimeOps(order, dim)


class SpaceTimeOps:
    """Fixed matrices for one (order, dimension) pair."""

    def __init__(self, order: int, dim: int):
        if dim not in (1, 2):
            raise ConfigurationError("engine supports 1D and 2D only")
        self.order = order
        self.dim = dim
        self.basis: NodalBasis = build_operators(order)
        b = self.basis
        n = order + 1
        self.n1 = n
        self.ndof = n**dim
        self.nface = n ** (dim - 1)
        self.ntime = n

        eye = np.eye(n)
        kt1 = (b.diff_matrix.T * b.weights[None, :]) / b.weights[:, None]

        if dim == 1:
            self.deriv = [b.diff_matrix.copy()]
            self.stiff_t = [kt1]
            self.face_extract = [
                [b.left_eval.reshape(1, n), b.right_eval.reshape(1, n)]
            ]
            self.face_lift = [
                [
                    (b.left_eval / b.weights).reshape(n, 1),
                    (b.right_eval / b.weights).reshape(n, 1),
                ]
            ]
            self.face_weights = np.ones(1)
            self.hang_restrict = [np.ones((1, 1))] * 3
            self.hang_interp = [np.ones((1, 1))] * 3
        else:
            self.deriv = [np.kron(eye, b.diff_matrix), np.kron(b.diff_matrix, eye)]
            self.stiff_t = [np.kron(eye, kt1), np.kron(kt1, eye)]
            self.face_extract = [
                [np.kron(eye, b.left_eval.reshape(1, n)),
                 np.kron(eye, b.right_eval.reshape(1, n))],
                [np.kron(b.left_eval.reshape(1, n), eye),
                 np.kron(b.right_eval.reshape(1, n), eye)],
            ]
            lw = (b.left_eval / b.weights).reshape(n, 1)
            rw = (b.right_eval / b.weights).reshape(n, 1)
            self.face_lift = [
                [np.kron(eye, lw), np.kron(eye, rw)],
                [np.kron(lw, eye), np.kron(rw, eye)],
            ]
            self.face_weights = b.weights.copy()
            self.hang_restrict = [b.child_restriction[m] for m in range(3)]
            self.hang_interp = [b.child_projection[m] for m in range(3)]

        # Weak-in-time system: sum_l A[k,l] q_l = l_k(0) u0 - dt w_k L(q_k).
        r = b.right_eval
        self.time_matrix = np.outer(r, r) - b.diff_matrix.T * b.weights[None, :]
        self.time_matrix_inv = np.linalg.inv(self.time_matrix)
        self.time_start = b.left_eval.copy()
        self.time_weights = b.weights.copy()
        self.child_proj_1d = b.child_projection
        self.child_rest_1d = b.child_restriction

    # -- spatial operator -----------------------------------------------------

    def gradient(self, q: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Physical gradient at nodes; q (..., ndof, nv), h (nc, dim).

        Returns (..., ndof, dim, nv); h broadcasts over any mid axes.
        """
        hb = h.reshape(h.shape[0], *([1] * (q.ndim - 2)), h.shape[1])
        parts = [
            np.einsum("ij,...jv->...iv", self.deriv[a], q) / hb[..., a:a + 1]
            for a in range(self.dim)
        ]
        return np.stack(parts, axis=-2)

    def spatial_operator(self, q, prm, h, system: PDESystem) -> np.ndarray:
        """div F + B.grad q - S at the nodes, physical units."""
        out = np.zeros_like(q)
        hb = h.reshape(h.shape[0], *([1] * (q.ndim - 2)), h.shape[1])
        if system.has_flux:
            for a in range(self.dim):
                fa = system.flux(q, prm, a)
                out += np.einsum("ij,...jv->...iv", self.deriv[a], fa) / hb[..., a:a + 1]
        if system.has_ncp:
            grad = self.gradient(q, h)
            out += system.ncp(q, grad, prm)
        if system.has_source:
            out -= system.source(q, prm)
        return out

    # -- predictors -------------------------------------------------------------

    def predict_nonlinear(self, dof, prm, h, dt, system: PDESystem) -> Prediction:
        """Discrete Picard iteration for the space-time fixed point.

        Starts from the constant-in-time extension of the input state and
        stops on a 1e-12 relative update or after 2(order+1) sweeps.  NaNs
        never raise: affected cells are flagged for the limiter.
        """
        nc = dof.shape[0]
        q = np.broadcast_to(dof[:, None], (nc, self.ntime) + dof.shape[1:]).copy()
        prm_t = np.broadcast_to(prm[:, None], (nc, self.ntime) + prm.shape[1:])
        u0 = dof[:, None]
        w = self.time_weights.reshape(1, self.ntime, 1, 1)
        l0 = self.time_start.reshape(1, self.ntime, 1, 1)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            for _ in range(2 * (self.order + 1)):
                lq = self.spatial_operator(q, prm_t, h, system)
                rhs = l0 * u0 - dt * w * lq
                q_new = np.einsum("kl,clsv->cksv", self.time_matrix_inv, rhs)
                delta = np.nanmax(np.abs(q_new - q))
                scale = 1.0 + np.nanmax(np.abs(q_new))
                q = q_new
                if not np.isfinite(delta) or delta <= PICARD_REL_TOL * scale:
                    break
        return self._package(q, prm_t, h, system)

    def predict_linear_ck(self, dof, prm, h, dt, system: PDESystem) -> Prediction:
        """Cauchy-Kowalevsky predictor: dt^k terms from repeated -L."""
        if not system.is_linear:
            raise ConfigurationError(
                f"Cauchy-Kowalevsky predictor requires a linear system, got "
                f"'{system.name}'"
            )
        nc = dof.shape[0]
        taylor = [dof]
        term = dof
        for _ in range(self.order):
            term = -self.spatial_operator(term, prm, h, system)
            taylor.append(term)
        tau = self.basis.nodes * dt
        q = np.zeros((nc, self.ntime) + dof.shape[1:])
        fact = 1.0
        for k, tk in enumerate(taylor):
            if k > 0:
                fact *= k
            q += (tau**k / fact).reshape(1, self.ntime, 1, 1) * tk[:, None]
        prm_t = np.broadcast_to(prm[:, None], (nc, self.ntime) + prm.shape[1:])
        return self._package(q, prm_t, h, system)

    def _package(self, q, prm_t, h, system: PDESystem) -> Prediction:
        """Time-average fluxes/NCP/source and extrapolate face traces."""
        w = self.time_weights.reshape(1, self.ntime, 1, 1)
        qbar = np.einsum("k,cksv->csv", self.time_weights, q)
        nc, nv = q.shape[0], q.shape[-1]
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            fbar = None
            if system.has_flux:
                fbar = np.stack(
                    [
                        np.einsum("k,cksv->csv", self.time_weights,
                                  system.flux(q, prm_t, a))
                        for a in range(self.dim)
                    ],
                    axis=1,
                )
            ncp_bar = None
            if system.has_ncp:
                grad = self.gradient(q, h)
                ncp_bar = np.einsum(
                    "k,cksv->csv", self.time_weights, system.ncp(q, grad, prm_t)
                )
            src_bar = None
            if system.has_source:
                src_bar = np.einsum(
                    "k,cksv->csv", self.time_weights, system.source(q, prm_t)
                )
        face_q = np.empty((nc, 2 * self.dim, self.nface, nv))
        face_f = np.empty_like(face_q) if system.has_flux else None
        for a in range(self.dim):
            for s in (0, 1):
                ex = self.face_extract[a][s]
                face_q[:, 2 * a + s] = np.einsum("qj,cjv->cqv", ex, qbar)
                if fbar is not None:
                    face_f[:, 2 * a + s] = np.einsum("qj,cjv->cqv", ex, fbar[:, a])
        trouble = ~np.all(np.isfinite(q.reshape(nc, -1)), axis=1)
        return Prediction(q, qbar, fbar, ncp_bar, src_bar, face_q, face_f, trouble)

    # -- corrector ---------------------------------------------------------------

    def correct(self, dof, pred: Prediction, face_flux, dt, h) -> np.ndarray:
        """One-step update from volume terms and solved face fluxes.

        face_flux: (nc, 2*dim, nface_nodes, nvars) effective fluxes in
        plus-axis orientation with NCP jumps already folded in per side.
        """
        upd = np.zeros_like(dof)
        for a in range(self.dim):
            ha = h[:, a].reshape(-1, 1, 1)
            if pred.fbar is not None:
                upd += dt * np.einsum(
                    "ij,cjv->civ", self.stiff_t[a], pred.fbar[:, a]
                ) / ha
            upd -= dt * np.einsum(
                "iq,cqv->civ", self.face_lift[a][1], face_flux[:, 2 * a + 1]
            ) / ha
            upd += dt * np.einsum(
                "iq,cqv->civ", self.face_lift[a][0], face_flux[:, 2 * a]
            ) / ha
        if pred.ncp_bar is not None:
            upd -= dt * pred.ncp_bar
        if pred.src_bar is not None:
            upd += dt * pred.src_bar
        return dof + upd


def rusanov_flux(q_l, q_r, p_l, p_r, system: PDESystem, axis: int,
                 f_l=None, f_r=None):
    """Default face solver: local Lax-Friedrichs plus midpoint NCP jump.

    Returns (flux, jump); the minus-side cell consumes flux + jump, the
    plus side flux - jump (see module docstring).  The ADER corrector passes
    time-averaged flux traces as ``f_l``/``f_r``; when absent the physical
    flux is evaluated from the states.  Systems may override the whole solve
    via ``system.riemann`` (the shallow-water wet/dry solver does).
    """
    if system.riemann is not None:
        return system.riemann(q_l, q_r, p_l, p_r, axis)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        s = np.maximum(
            system.max_abs_eigenvalue(q_l, p_l, axis),
            system.max_abs_eigenvalue(q_r, p_r, axis),
        )[..., None]
        if system.has_flux:
            if f_l is None:
                f_l = system.flux(q_l, p_l, axis)
            if f_r is None:
                f_r = system.flux(q_r, p_r, axis)
            flux = 0.5 * (f_l + f_r) - 0.5 * s * (q_r - q_l)
        else:
            flux = -0.5 * s * (q_r - q_l)
        if system.has_ncp:
            q_m = 0.5 * (q_l + q_r)
            p_m = 0.5 * (p_l + p_r)
            grad = np.zeros(q_l.shape[:-1] + (system.dim, q_l.shape[-1]))
            grad[..., axis, :] = q_r - q_l
            jump = 0.5 * system.ncp(q_m, grad, p_m)
        else:
            jump = np.zeros_like(flux)
    return flux, jump


def stable_time_step(h_min, lam_max, order: int, dim: int, cfl: float = 0.9) -> float:
    """Global CFL bound: cfl/(d(2N+1)) * min_cells(h_min/lam_max)."""
    h_min = np.asarray(h_min, dtype=float)
    lam = np.asarray(lam_max, dtype=float)
    if h_min.size == 0:
        raise ConfigurationError("time step requested on an empty mesh")
    if not np.all(np.isfinite(lam)):
        raise ConfigurationError("non-finite wave speeds in time step computation")
    if np.max(lam) <= 0.0:
        raise ConfigurationError("static field, no stable dt")
    ratios = np.where(lam > 0, h_min / np.where(lam > 0, lam, 1.0), np.inf)
    return cfl / (dim * (2 * order + 1)) * float(np.min(ratios))
