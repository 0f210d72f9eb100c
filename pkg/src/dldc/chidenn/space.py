"""C-HiDeNN interpolation space: FE shape functions composed with RPIM patch functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..optim import ContractError
from .mesh import Mesh, PatchTopology, UnsupportedMeshError, build_patch_topology
from .rpim import ConvPatchFunction, TemplateCache, rpim_patch_function


def gauss_points(order: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre points ``(nq, dim)`` and weights on ``[-1, 1]^dim``."""
    g, w = np.polynomial.legendre.leggauss(order)
    if dim == 1:
        return g[:, None], w
    X, Y = np.meshgrid(g, g, indexing="ij")
    WX, WY = np.meshgrid(w, w, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1), (WX * WY).ravel()


def fe_shape(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear/bilinear shape functions ``(nq, nn)`` and d/dxi ``(nq, nn, dim)``."""
    if xi.shape[1] == 1:
        x = xi[:, 0]
        N = np.stack([(1 - x) / 2, (1 + x) / 2], axis=1)
        dN = np.stack([-0.5 * np.ones_like(x), 0.5 * np.ones_like(x)], axis=1)[:, :, None]
        return N, dN
    x, y = xi[:, 0], xi[:, 1]
    sx = np.array([-1, 1, 1, -1.0])
    sy = np.array([-1, -1, 1, 1.0])
    N = 0.25 * (1 + x[:, None] * sx) * (1 + y[:, None] * sy)
    dN = np.stack([0.25 * sx * (1 + y[:, None] * sy),
                   0.25 * sy * (1 + x[:, None] * sx)], axis=2)
    return N, dN


def map_points(corners: np.ndarray, xi: np.ndarray):
    """Physical points, inverse-transposed Jacobians and determinants."""
    N, dN = fe_shape(xi)
    x = N @ corners
    J = np.einsum("qnd,ne->qde", dN, corners)   # J[d, e] = dx_e / dxi_d
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise ContractError("element map has a non-positive Jacobian")
    Jinv = np.linalg.inv(J)
    dNdx = np.einsum("qnd,qed->qne", dN, Jinv)
    return x, det, N, dNdx


@dataclass(frozen=True)
class Interpolants:
    """Combined interpolants of one element at a set of points."""

    ids: np.ndarray          # (nk,) global node ids, A^e_s
    N: np.ndarray            # (nq, nk)
    dN: np.ndarray           # (nq, nk, dim) physical gradients
    x: np.ndarray            # (nq, dim) physical points
    wdet: np.ndarray | None  # (nq,) quadrature weight times det J


@dataclass(frozen=True)
class ElementGroup:
    """Elements sharing one interpolant geometry (translates of each other)."""

    elements: np.ndarray     # (E,)
    ids: np.ndarray          # (E, nk)
    origin: np.ndarray       # (E, dim) first-corner coordinates
    N: np.ndarray
    dN: np.ndarray
    x_rel: np.ndarray        # (nq, dim) relative to the first corner
    wdet: np.ndarray

    def stiffness(self) -> np.ndarray:
        return np.einsum("qkd,qld,q->kl", self.dN, self.dN, self.wdet)


class ChidennSpace:
    """Convolution-enhanced interpolation space on a structured linear mesh.

    ``s = 0`` gives single-node patches, i.e. plain linear FEM.
    """

    def __init__(self, mesh: Mesh, s: int, a: float, p: int, kernel: str = "cubic",
                 quad_order: int = 16):
        if not mesh.structured:
            raise UnsupportedMeshError("C-HiDeNN spaces need a structured mesh")
        if s > 0 and s < p:
            raise ContractError(f"patch size s={s} must be >= p={p}")
        if a <= 0:
            raise ContractError("dilation a must be positive")
        self.mesh = mesh
        self.s, self.a, self.p, self.kernel = int(s), float(a), int(p), kernel
        self.quad_order = int(quad_order)
        self.topology: PatchTopology = build_patch_topology(mesh, s)
        self.cache = TemplateCache()
        self.patch_functions: list[ConvPatchFunction] = [
            rpim_patch_function(i, self.topology, mesh, a, p, kernel, self.cache)
            for i in range(mesh.n_nodes)]
        self._groups: dict[int, list[ElementGroup]] = {}

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_nodes

    @property
    def lowered_nodes(self) -> dict[int, int]:
        return dict(self.cache.lowered)

    def interpolants(self, element: int, xi: np.ndarray | None = None,
                     quad_order: int | None = None) -> Interpolants:
        mesh = self.mesh
        if xi is None:
            xi, w = gauss_points(quad_order or self.quad_order, mesh.dim)
        else:
            xi, w = np.atleast_2d(xi), None
        corners = mesh.elements[element]
        x, det, Nfe, dNfe = map_points(mesh.nodes[corners], xi)
        ids = self.topology.element_patches[element]
        col = {int(k): c for c, k in enumerate(ids)}
        Nt = np.zeros((xi.shape[0], ids.size))
        dNt = np.zeros((xi.shape[0], ids.size, mesh.dim))
        for li, i in enumerate(corners):
            pf = self.patch_functions[i] if i < len(self.patch_functions) else None
            if pf is None:
                raise ContractError(f"no patch function for node {i}")
            W, dW = pf.evaluate(x, mesh.nodes[i])
            cols = [col[int(k)] for k in pf.support_nodes]
            Nt[:, cols] += Nfe[:, li, None] * W
            dNt[:, cols, :] += dNfe[:, li, None, :] * W[:, :, None] + Nfe[:, li, None, None] * dW
        return Interpolants(ids, Nt, dNt, x, None if w is None else w * det)

    def groups(self, quad_order: int | None = None) -> list[ElementGroup]:
        order = quad_order or self.quad_order
        if order in self._groups:
            return self._groups[order]
        mesh = self.mesh
        buckets: dict = {}
        for e in range(mesh.n_elements):
            ids = self.topology.element_patches[e]
            c0 = mesh.elements[e, 0]
            key = ((ids - c0).tobytes(),
                   tuple(id(self.patch_functions[i].template) for i in mesh.elements[e]))
            buckets.setdefault(key, []).append(e)
        out = []
        for members in buckets.values():
            members = np.asarray(members)
            rep = self.interpolants(int(members[0]), quad_order=order)
            c0 = mesh.elements[members, 0]
            ids = np.stack([self.topology.element_patches[e] for e in members])
            origin = mesh.nodes[c0]
            out.append(ElementGroup(members, ids, origin, rep.N, rep.dN,
                                    rep.x - mesh.nodes[mesh.elements[members[0], 0]], rep.wdet))
        self._groups[order] = out
        return out


def combine_interpolants(space: ChidennSpace, element: int, xi: np.ndarray | None = None
                         ) -> Interpolants:
    """``N~_k = sum_i N_i W^{x_i}_k(x(xi))`` and gradients for one element."""
    if not 0 <= element < space.mesh.n_elements:
        raise ContractError(f"element {element} out of range")
    return space.interpolants(element, xi)


def interpolate(space: ChidennSpace, u: np.ndarray, element: int, xi: np.ndarray):
    it = space.interpolants(element, xi)
    return it.x, it.N @ u[it.ids], np.einsum("qkd,k->qd", it.dN, u[it.ids])
