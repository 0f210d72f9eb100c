"""Radial point interpolation (RPIM) convolution patch functions."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..optim import ContractError
from .mesh import Mesh, PatchTopology

log = logging.getLogger(__name__)

COND_RIDGE = 1e10
COND_LIMIT = 1e12


class IllConditionedPatchError(RuntimeError):
    pass


def cubic_spline_kernel(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Compactly supported cubic B-spline kernel and its derivative in ``z >= 0``."""
    z = np.abs(z)
    inner = z <= 0.5
    outer = (z > 0.5) & (z <= 1.0)
    R = np.where(inner, 2 / 3 - 4 * z**2 + 4 * z**3,
                 np.where(outer, 4 / 3 - 4 * z + 4 * z**2 - 4 / 3 * z**3, 0.0))
    dR = np.where(inner, -8 * z + 12 * z**2,
                  np.where(outer, -4 + 8 * z - 4 * z**2, 0.0))
    return R, dR


def gaussian_kernel(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    R = np.exp(-z * z)
    return R, -2 * z * R


KERNELS = {"cubic": cubic_spline_kernel, "gaussian": gaussian_kernel}


def monomial_exponents(p: int, dim: int) -> list[tuple[int, ...]]:
    """Exponents of all monomials of total degree <= p, graded order."""
    exps = [e for e in itertools.product(range(p + 1), repeat=dim) if sum(e) <= p]
    return sorted(exps, key=lambda e: (sum(e), tuple(-x for x in e)))


def monomials(pts: np.ndarray, exps) -> tuple[np.ndarray, np.ndarray]:
    """Monomial values ``(npts, m)`` and gradients ``(npts, m, dim)``."""
    npts, dim = pts.shape
    P = np.empty((npts, len(exps)))
    dP = np.zeros((npts, len(exps), dim))
    for k, e in enumerate(exps):
        P[:, k] = np.prod(pts ** np.array(e), axis=1)
        for d in range(dim):
            if e[d] == 0:
                continue
            ed = list(e)
            ed[d] -= 1
            dP[:, k, d] = e[d] * np.prod(pts ** np.array(ed), axis=1)
    return P, dP


@dataclass(frozen=True)
class PatchTemplate:
    """Moment-system solution for one patch geometry in local scaled coordinates.

    ``offsets`` are support-node positions relative to the centre, divided by
    ``h``.  ``lu`` factors the moment matrix; weights at a point solve
    ``G [W; lambda] = [R(x); P(x)]``.  Solving, rather than multiplying by an
    explicit inverse, keeps the delta property at round-off level.
    """

    offsets: np.ndarray
    p: int
    a: float
    kernel: str
    lu: tuple
    cond: float

    def evaluate(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Weights ``(nq, n)`` and d/dxi ``(nq, n, dim)`` at local points ``xi``."""
        dim = self.offsets.shape[1]
        diff = xi[:, None, :] - self.offsets[None, :, :]
        r = np.sqrt(np.sum(diff * diff, axis=2))
        R, dR = KERNELS[self.kernel](r / self.a)
        safe = np.where(r > 0, r, 1.0)
        dRdx = (dR / (self.a * safe))[:, :, None] * diff
        dRdx[r == 0] = 0.0
        exps = monomial_exponents(self.p, dim)
        P, dP = monomials(xi, exps)
        basis = np.concatenate([R, P], axis=1)          # (nq, n+m)
        dbasis = np.concatenate([dRdx, dP], axis=1)     # (nq, n+m, dim)
        n, nq = self.offsets.shape[0], xi.shape[0]
        rhs = np.concatenate([basis.T, dbasis.transpose(1, 0, 2).reshape(basis.shape[1], -1)], axis=1)
        sol = sla.lu_solve(self.lu, rhs)[:n]
        W = sol[:, :nq].T
        dW = sol[:, nq:].reshape(n, nq, dim).transpose(1, 0, 2)
        return W, dW


def build_template(offsets: np.ndarray, p: int, a: float, kernel: str = "cubic",
                   s: int | None = None) -> PatchTemplate:
    if kernel not in KERNELS:
        raise ContractError(f"unknown kernel {kernel!r}; choose from {sorted(KERNELS)}")
    n, dim = offsets.shape
    exps = monomial_exponents(p, dim)
    m = len(exps)
    diff = offsets[:, None, :] - offsets[None, :, :]
    R, _ = KERNELS[kernel](np.sqrt(np.sum(diff * diff, axis=2)) / a)
    P, _ = monomials(offsets, exps)
    G = np.block([[R, P], [P.T, np.zeros((m, m))]])
    cond = float(np.linalg.cond(G))
    if cond > COND_LIMIT:
        raise IllConditionedPatchError(
            f"RPIM moment matrix condition number {cond:.3g} > {COND_LIMIT:g} "
            f"(a={a}, s={s}, p={p}, kernel={kernel})")
    if cond > COND_RIDGE:
        G = G.copy()
        G[:n, :n] += 1e-12 * np.trace(R) * np.eye(n)
        log.info("ridge applied to patch moment matrix (cond %.3g, a=%s, p=%d)", cond, a, p)
    tpl = PatchTemplate(offsets.copy(), p, float(a), kernel, sla.lu_factor(G), cond)
    W, _ = tpl.evaluate(offsets)
    if np.max(np.abs(W - np.eye(n))) > 1e-8:
        raise IllConditionedPatchError(
            f"patch functions lost the Kronecker-delta property (a={a}, s={s}, p={p})")
    return tpl


def max_supported_order(offsets: np.ndarray, p: int) -> int:
    """Largest order <= p whose monomial matrix on the patch has full column rank."""
    dim = offsets.shape[1]
    while p > 0:
        P, _ = monomials(offsets, monomial_exponents(p, dim))
        if P.shape[1] <= P.shape[0] and np.linalg.matrix_rank(P) == P.shape[1]:
            return p
        p -= 1
    return 0


@dataclass(frozen=True)
class ConvPatchFunction:
    center_node: int
    a: float
    p: int
    support_nodes: np.ndarray
    h: float
    template: PatchTemplate

    def evaluate(self, x: np.ndarray, center_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``W_j(x)`` ``(nq, n)`` and physical gradients ``(nq, n, dim)``."""
        W, dW = self.template.evaluate((np.atleast_2d(x) - center_xy) / self.h)
        return W, dW / self.h


class TemplateCache:
    """Shares moment-system solutions between patches of identical geometry."""

    def __init__(self):
        self._store: dict = {}
        self.lowered: dict[int, int] = {}

    def get(self, offsets: np.ndarray, p: int, a: float, kernel: str, s: int) -> PatchTemplate:
        key = (np.round(offsets, 9).tobytes(), offsets.shape, p, float(a), kernel)
        tpl = self._store.get(key)
        if tpl is None:
            tpl = build_template(offsets, p, a, kernel, s)
            self._store[key] = tpl
        return tpl

    def __len__(self):
        return len(self._store)


def rpim_patch_function(center: int, topology: PatchTopology, mesh: Mesh, a: float, p: int,
                        kernel: str = "cubic", cache: TemplateCache | None = None
                        ) -> ConvPatchFunction:
    """RPIM patch function of node ``center`` with reproducing order ``p``.

    Boundary patches that cannot carry order ``p`` use the highest order they
    support (recorded in ``cache.lowered``).
    """
    s = topology.s
    if p < 0:
        raise ContractError("p must be >= 0")
    if s > 0 and s < p:
        raise ContractError(f"patch size s={s} must be >= p={p} for stable patch functions")
    support = topology.node_patches[center]
    h = float(np.max(mesh.spacing))
    offsets = (mesh.nodes[support] - mesh.nodes[center]) / h
    p_eff = max_supported_order(offsets, p)
    if p_eff < p:
        log.info("node %d: patch of %d nodes supports order %d < %d", center, support.size, p_eff, p)
        if cache is not None:
            cache.lowered[center] = p_eff
    tpl = (cache.get(offsets, p_eff, a, kernel, s) if cache is not None
           else build_template(offsets, p_eff, a, kernel, s))
    return ConvPatchFunction(int(center), float(a), p_eff, support, h, tpl)
