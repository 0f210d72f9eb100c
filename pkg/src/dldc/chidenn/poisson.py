"""Galerkin Poisson solver and error norms on C-HiDeNN spaces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..optim import ContractError
from .space import ChidennSpace, ElementGroup

CHUNK = 1500


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PoissonProblem:
    """``-lap u = b`` on a box with ``u = dirichlet_value`` on the boundary."""

    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    body_force: Callable[[np.ndarray], np.ndarray]
    exact: Callable[[np.ndarray], np.ndarray] | None = None
    exact_grad: Callable[[np.ndarray], np.ndarray] | None = None
    dirichlet_value: float = 0.0


# manufactured field on [0, 10]^2: u = c * sum_k alpha_k phi_k(x) phi_k(y),
# phi_k = (t^2 - 10 t) exp(-2 (t - t_k)^2)
_C = 1.0 / 625.0
_TERMS = ((2.0, 3.0), (1.0, 7.0))


def _phi(t, tk):
    g, dg = t * t - 10 * t, 2 * t - 10
    e = np.exp(-2 * (t - tk) ** 2)
    de = -4 * (t - tk) * e
    d2e = (16 * (t - tk) ** 2 - 4) * e
    return g * e, dg * e + g * de, 2 * e + 2 * dg * de + g * d2e


def manufactured_u(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    return _C * sum(al * _phi(x, tk)[0] * _phi(y, tk)[0] for al, tk in _TERMS)


def manufactured_grad(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    gx = gy = 0.0
    for al, tk in _TERMS:
        px, dpx, _ = _phi(x, tk)
        py, dpy, _ = _phi(y, tk)
        gx = gx + al * dpx * py
        gy = gy + al * px * dpy
    return _C * np.stack([gx, gy], axis=1)


def manufactured_laplacian(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    out = 0.0
    for al, tk in _TERMS:
        px, _, d2x = _phi(x, tk)
        py, _, d2y = _phi(y, tk)
        out = out + al * (d2x * py + px * d2y)
    return _C * out


def manufactured_problem() -> PoissonProblem:
    """Two Gaussian bumps times a boundary-vanishing quartic on ``[0, 10]^2``."""
    return PoissonProblem(2, (0.0, 0.0), (10.0, 10.0),
                          lambda pts: -manufactured_laplacian(pts),
                          manufactured_u, manufactured_grad)


def two_point_problem() -> PoissonProblem:
    """``-u'' = 2`` on ``(0, 1)``, exact ``u = x (1 - x)``."""
    return PoissonProblem(1, (0.0,), (1.0,),
                          lambda pts: np.full(pts.shape[0], 2.0),
                          lambda pts: pts[:, 0] * (1 - pts[:, 0]),
                          lambda pts: (1 - 2 * pts[:, 0])[:, None])


def _group_points(g: ElementGroup) -> np.ndarray:
    return (g.origin[:, None, :] + g.x_rel[None, :, :]).reshape(-1, g.origin.shape[1])


def assemble(space: ChidennSpace, problem: PoissonProblem, quad_order: int | None = None
             ) -> tuple[sp.csr_matrix, np.ndarray]:
    """Global stiffness ``K_kl = int grad N~_k . grad N~_l`` and load ``F_k = int N~_k b``."""
    n = space.n_dofs
    K = sp.csr_matrix((n, n))
    F = np.zeros(n)
    for g in space.groups(quad_order):
        Ke = g.stiffness()
        nk = Ke.shape[0]
        b = problem.body_force(_group_points(g)).reshape(g.ids.shape[0], -1)
        np.add.at(F, g.ids, (b * g.wdet) @ g.N)
        for s in range(0, g.ids.shape[0], CHUNK):
            ids = g.ids[s:s + CHUNK].astype(np.int32)
            E = ids.shape[0]
            rows = np.repeat(ids, nk, axis=1).ravel()
            cols = np.tile(ids, (1, nk)).ravel()
            data = np.tile(Ke.ravel(), E)
            K = K + sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return K.tocsr(), F


@dataclass
class PoissonSolution:
    u: np.ndarray
    K: sp.csr_matrix
    F: np.ndarray
    asymmetry: float
    free: np.ndarray

    @property
    def energy(self) -> float:
        """Discrete strain energy ``u^T K u / 2``."""
        return 0.5 * float(self.u @ (self.K @ self.u))


def assemble_and_solve(space: ChidennSpace, problem: PoissonProblem,
                       quad_order: int | None = None) -> PoissonSolution:
    """Galerkin solve with Dirichlet values imposed directly on boundary nodes."""
    if problem.dim != space.mesh.dim:
        raise ContractError("problem and mesh dimensions differ")
    K, F = assemble(space, problem, quad_order)
    kmax = abs(K).max()
    asym = float(abs(K - K.T).max() / kmax) if kmax > 0 else 0.0
    bnd = space.mesh.boundary_nodes()
    free = np.setdiff1d(np.arange(space.n_dofs), bnd)
    u = np.zeros(space.n_dofs)
    u[bnd] = problem.dirichlet_value
    if free.size:
        Kff = K[free][:, free].tocsc()
        rhs = F[free] - K[free][:, bnd] @ u[bnd]
        try:
            lu = spla.splu(Kff)
        except RuntimeError as exc:
            raise SolverError(f"stiffness matrix is singular: {exc}") from exc
        uf = lu.solve(rhs)
        if not np.all(np.isfinite(uf)):
            raise SolverError("linear solve produced non-finite values")
        u[free] = uf
    return PoissonSolution(u, K, F, asym, free)


def error_norms(space: ChidennSpace, u: np.ndarray, exact: Callable, exact_grad: Callable,
                quad_order: int | None = None) -> tuple[float, float]:
    """Relative L2 and H1 errors with doubled element quadrature by default."""
    order = quad_order or 2 * space.quad_order
    e0 = e1 = r0 = r1 = 0.0
    for g in space.groups(order):
        pts = _group_points(g)
        U = u[g.ids]
        uh = (U @ g.N.T).ravel()
        guh = np.einsum("ek,qkd->eqd", U, g.dN).reshape(-1, g.dN.shape[2])
        ue = exact(pts)
        ge = exact_grad(pts)
        w = np.tile(g.wdet, g.ids.shape[0])
        e0 += np.sum(w * (uh - ue) ** 2)
        e1 += np.sum(w * np.sum((guh - ge) ** 2, axis=1))
        r0 += np.sum(w * ue ** 2)
        r1 += np.sum(w * np.sum(ge ** 2, axis=1))
    if r0 == 0:
        raise ContractError("exact solution has zero norm")
    return float(np.sqrt(e0 / r0)), float(np.sqrt((e0 + e1) / (r0 + r1)))


def quadrature_energy_change(space: ChidennSpace, problem: PoissonProblem) -> float:
    """Relative change of the discrete energy when the quadrature order is doubled."""
    s1 = assemble_and_solve(space, problem, space.quad_order)
    s2 = assemble_and_solve(space, problem, 2 * space.quad_order)
    return abs(s2.energy - s1.energy) / abs(s1.energy)
