"""Standard Lagrange Q_p finite elements on uniform box meshes (comparison baseline)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..optim import ContractError
from .poisson import PoissonProblem, SolverError


def lagrange_1d(p: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Equispaced Lagrange basis on ``[-1, 1]``: values and derivatives ``(nq, p+1)``."""
    nodes = np.linspace(-1.0, 1.0, p + 1)
    L = np.ones((x.size, p + 1))
    dL = np.zeros((x.size, p + 1))
    for j in range(p + 1):
        others = [m for m in range(p + 1) if m != j]
        denom = np.prod([nodes[j] - nodes[m] for m in others])
        L[:, j] = np.prod([x - nodes[m] for m in others], axis=0) / denom if others else 1.0
        for k in others:
            rest = [m for m in others if m != k]
            term = np.prod([x - nodes[m] for m in rest], axis=0) if rest else np.ones_like(x)
            dL[:, j] += term / denom
    return L, dL


@dataclass
class FemSolution:
    p: int
    n_el: int
    dim: int
    lower: np.ndarray
    h: np.ndarray
    u: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.u.size


def _reference(p: int, dim: int, order: int):
    g, w = np.polynomial.legendre.leggauss(order)
    L, dL = lagrange_1d(p, g)
    if dim == 1:
        return L, dL[:, :, None], w, g[:, None]
    # local node (a, b) -> a + b (p+1); quadrature point (i, j) -> i + j * order
    N = np.einsum("ia,jb->jiba", L, L).reshape(order * order, -1)
    dNx = np.einsum("ia,jb->jiba", dL, L).reshape(order * order, -1)
    dNy = np.einsum("ia,jb->jiba", L, dL).reshape(order * order, -1)
    X, Y = np.meshgrid(g, g)   # row j is y_j
    W = np.outer(w, w)         # symmetric
    return N, np.stack([dNx, dNy], axis=2), W.ravel(), np.stack([X.ravel(), Y.ravel()], axis=1)


def _element_dofs(p: int, dim: int, n_el: int) -> tuple[np.ndarray, np.ndarray]:
    """Global dof ids ``(n_elements, (p+1)^dim)`` and element grid origins."""
    nn = p * n_el + 1
    loc = np.arange(p + 1)
    if dim == 1:
        e = np.arange(n_el)
        return (p * e)[:, None] + loc[None, :], e[:, None]
    a, b = np.meshgrid(loc, loc)               # b row, a column -> a + b (p+1)
    local = (a + b * nn).ravel()
    ei, ej = np.meshgrid(np.arange(n_el), np.arange(n_el))
    base = (p * ei + p * ej * nn).ravel()
    return base[:, None] + local[None, :], np.stack([ei.ravel(), ej.ravel()], axis=1)


def fem_solve(problem: PoissonProblem, n_el: int, p: int, quad_order: int = 6) -> FemSolution:
    """Galerkin Q_p solve on an ``n_el^dim`` uniform mesh with homogeneous-style Dirichlet data."""
    if p < 1:
        raise ContractError("p must be >= 1")
    dim = problem.dim
    lower = np.asarray(problem.lower, float)
    upper = np.asarray(problem.upper, float)
    h = (upper - lower) / n_el
    N, dN, w, xi = _reference(p, dim, quad_order)
    jac = h / 2
    dNx = dN / jac
    wdet = w * np.prod(jac)
    Ke = np.einsum("qkd,qld,q->kl", dNx, dNx, wdet)
    dofs, origin = _element_dofs(p, dim, n_el)
    nn = p * n_el + 1
    ndof = nn ** dim
    E, nk = dofs.shape
    rows = np.repeat(dofs, nk, axis=1).ravel()
    cols = np.tile(dofs, (1, nk)).ravel()
    K = sp.csr_matrix((np.tile(Ke.ravel(), E), (rows, cols)), shape=(ndof, ndof))
    pts = lower + origin[:, None, :] * h + (xi[None] + 1) * jac
    b = problem.body_force(pts.reshape(-1, dim)).reshape(E, -1)
    F = np.zeros(ndof)
    np.add.at(F, dofs, (b * wdet) @ N)
    grid = np.indices((nn,) * dim).reshape(dim, -1).T[:, ::-1] if dim == 2 else np.arange(nn)[:, None]
    bnd = np.nonzero(np.any((grid == 0) | (grid == nn - 1), axis=1))[0]
    free = np.setdiff1d(np.arange(ndof), bnd)
    u = np.zeros(ndof)
    u[bnd] = problem.dirichlet_value
    try:
        lu = spla.splu(K[free][:, free].tocsc())
    except RuntimeError as exc:
        raise SolverError(str(exc)) from exc
    u[free] = lu.solve(F[free] - K[free][:, bnd] @ u[bnd])
    return FemSolution(p, n_el, dim, lower, h, u)


def fem_nodes(sol: FemSolution) -> np.ndarray:
    nn = sol.p * sol.n_el + 1
    step = sol.h / sol.p
    if sol.dim == 1:
        return sol.lower + np.arange(nn)[:, None] * step
    i, j = np.meshgrid(np.arange(nn), np.arange(nn))
    return sol.lower + np.stack([i.ravel(), j.ravel()], axis=1) * step


def fem_error_norms(sol: FemSolution, exact, exact_grad, quad_order: int = 12) -> tuple[float, float]:
    dim = sol.dim
    N, dN, w, xi = _reference(sol.p, dim, quad_order)
    jac = sol.h / 2
    wdet = w * np.prod(jac)
    dofs, origin = _element_dofs(sol.p, dim, sol.n_el)
    pts = (sol.lower + origin[:, None, :] * sol.h + (xi[None] + 1) * jac).reshape(-1, dim)
    U = sol.u[dofs]
    uh = (U @ N.T).ravel()
    guh = np.einsum("ek,qkd->eqd", U, dN / jac).reshape(-1, dim)
    ue, ge = exact(pts), exact_grad(pts)
    ww = np.tile(wdet, dofs.shape[0])
    e0 = np.sum(ww * (uh - ue) ** 2)
    e1 = np.sum(ww * np.sum((guh - ge) ** 2, axis=1))
    r0 = np.sum(ww * ue ** 2)
    r1 = np.sum(ww * np.sum(ge ** 2, axis=1))
    return float(np.sqrt(e0 / r0)), float(np.sqrt((e0 + e1) / (r0 + r1)))
