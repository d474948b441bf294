"""Nodal polynomial machinery on the reference interval [0, 1].

Everything downstream (predictor, corrector, subcell limiter, AMR transfer)
is expressed through the fixed operator matrices assembled here once per
polynomial order: differentiation, boundary extrapolation, subcell averaging
and its conservative inverse, and the tripartition transfer operators.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError

MAX_ORDER = 9

_NEWTON_MAX_ITER = 100
_NEWTON_TOL = 1e-15
_SELF_CHECK_TOL = 1e-12


def _legendre_and_derivative(m: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate P_m and P'_m on [-1, 1] by the three-term recurrence."""
    p_prev = np.ones_like(x)
    if m == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for k in range(2, m + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = m * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the (order+1)-point Gauss-Legendre rule on [0, 1].

    Roots of the degree-(order+1) Legendre polynomial found by Newton
    iteration from Chebyshev initial guesses; the induced quadrature is exact
    for polynomials of degree <= 2*order + 1.
    """
    if not 0 <= order <= MAX_ORDER:
        raise ConfigurationError(
            f"polynomial order must be between 0 and {MAX_ORDER}, got {order}"
        )
    m = order + 1
    i = np.arange(m)
    x = np.cos(np.pi * (4 * i + 3) / (4 * m + 2))
    for _ in range(_NEWTON_MAX_ITER):
        p, dp = _legendre_and_derivative(m, x)
        dx = p / dp
        x -= dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    p, dp = _legendre_and_derivative(m, x)
    weights = 2.0 / ((1.0 - x * x) * dp * dp)
    idx = np.argsort(x)
    nodes = (x[idx] + 1.0) / 2.0
    return nodes, weights[idx] / 2.0


def lagrange_eval(nodes: np.ndarray, j: int, x) -> np.ndarray | float:
    """Value of the j-th Lagrange cardinal polynomial for ``nodes`` at x."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    for k, xk in enumerate(nodes):
        if k != j:
            out = out * (x - xk) / (nodes[j] - xk)
    return out if out.ndim else float(out)


def _vandermonde(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """V[i, j] = l_j(x_i) for the cardinal basis on ``nodes``."""
    n = len(nodes)
    return np.stack([lagrange_eval(nodes, j, x) for j in range(n)], axis=-1).reshape(
        len(x), n
    )


@dataclass(frozen=True)
class NodalBasis:
    """Immutable operator bundle for one polynomial order.

    All matrices act on nodal coefficient vectors of length order+1; the
    subcell operators connect them to the 2*order+1 uniform subcell averages
    used by the finite-volume limiter, and the child operators realise
    tripartition prolongation/restriction.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray
    diff_matrix: np.ndarray          # D[i, j] = l_j'(x_i)
    left_eval: np.ndarray            # l_j(0)
    right_eval: np.ndarray           # l_j(1)
    subcell_projection: np.ndarray   # (2N+1, N+1): exact subcell averages
    subcell_reconstruction: np.ndarray  # (N+1, 2N+1): conservative left inverse
    child_projection: np.ndarray     # (3, N+1, N+1): parent poly at child nodes
    child_restriction: np.ndarray    # (3, N+1, N+1): L2 gather from children

    @property
    def n_nodes(self) -> int:
        return self.order + 1

    @property
    def n_subcells(self) -> int:
        return 2 * self.order + 1


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def build_operators(order: int) -> NodalBasis:
    """Assemble (and self-check) all fixed matrices for one order."""
    nodes, weights = gauss_legendre(order)
    n = order + 1
    nsub = 2 * order + 1

    # Differentiation via barycentric weights; diagonal closes row sums to 0.
    lam = np.array([1.0 / np.prod(nodes[j] - np.delete(nodes, j)) for j in range(n)])
    diff = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                diff[i, j] = (lam[j] / lam[i]) / (nodes[i] - nodes[j])
        diff[i, i] = -np.sum(diff[i, np.arange(n) != i])

    left_eval = _vandermonde(nodes, np.array([0.0]))[0]
    right_eval = _vandermonde(nodes, np.array([1.0]))[0]

    # P[s, j] = average of l_j over subinterval s of width 1/(2N+1).
    proj = np.zeros((nsub, n))
    for s in range(nsub):
        pts = (s + nodes) / nsub
        proj[s] = weights @ _vandermonde(nodes, pts)

    rec = np.linalg.pinv(proj)
    # Rank-one correction: make the reconstructed cell mean match the mean of
    # the subcell averages exactly, without disturbing rec @ proj = identity.
    g = np.full(nsub, 1.0 / nsub) - weights @ rec
    rec = rec + np.outer(np.ones(n), g)

    child_proj = np.zeros((3, n, n))
    child_rest = np.zeros((3, n, n))
    for m in range(3):
        child_proj[m] = _vandermonde(nodes, (m + nodes) / 3.0)
        child_rest[m] = (child_proj[m] * weights[:, None]).T / (3.0 * weights[:, None])

    _self_check(nodes, weights, diff, proj, rec, child_proj, child_rest)

    return NodalBasis(
        order=order,
        nodes=_freeze(nodes),
        weights=_freeze(weights),
        diff_matrix=_freeze(diff),
        left_eval=_freeze(left_eval),
        right_eval=_freeze(right_eval),
        subcell_projection=_freeze(proj),
        subcell_reconstruction=_freeze(rec),
        child_projection=_freeze(child_proj),
        child_restriction=_freeze(child_rest),
    )


def _self_check(nodes, weights, diff, proj, rec, child_proj, child_rest) -> None:
    n = len(nodes)
    tol = _SELF_CHECK_TOL
    ok = (
        abs(weights.sum() - 1.0) < tol
        and np.all(np.diff(nodes) > 0)
        and np.max(np.abs(nodes + nodes[::-1] - 1.0)) < tol
        and np.max(np.abs(proj.sum(axis=1) - 1.0)) < tol
        and np.max(np.abs(rec @ proj - np.eye(n))) < tol
        and np.max(np.abs(sum(child_rest[m] @ child_proj[m] for m in range(3)) - np.eye(n))) < tol
    )
    # Differentiation must be exact on polynomials up to the basis degree.
    for k in range(1, n):
        ok = ok and np.max(np.abs(diff @ nodes**k - k * nodes ** (k - 1))) < tol * 10
    if not ok:
        raise RuntimeError(f"operator self-check failed for order {n - 1}")
