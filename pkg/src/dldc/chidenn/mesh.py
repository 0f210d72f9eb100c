"""Structured 1-D / 2-D meshes of linear elements and nodal patch topology."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..optim import ContractError


class UnsupportedMeshError(ContractError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Linear segment (1-D) or bilinear quad (2-D) mesh.

    ``structured_index`` holds the integer grid coordinates of every node, or
    ``None`` for unstructured meshes.  Node ``(i, j)`` of an ``nx x ny`` element
    grid has id ``i + j * (nx + 1)``.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    structured_index: np.ndarray | None = None
    shape: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ContractError("dim must be 1 or 2")
        if self.nodes.ndim != 2 or self.nodes.shape[1] != self.dim:
            raise ContractError("nodes must be an (n_nodes, dim) array")
        if self.elements.shape[1] != 2 ** self.dim:
            raise ContractError("elements must have 2 (1-D) or 4 (2-D) nodes")
        if self.dim == 1:
            x = self.nodes[self.elements, 0]
            bad = np.nonzero(x[:, 1] - x[:, 0] <= 0)[0]
        else:
            # corner Jacobians bound the bilinear map's determinant from below
            xy = self.nodes[self.elements]
            dets = []
            for c in range(4):
                e1 = xy[:, (c + 1) % 4] - xy[:, c]
                e2 = xy[:, (c + 3) % 4] - xy[:, c]
                dets.append(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
            bad = np.nonzero(np.min(dets, axis=0) <= 0)[0]
        if bad.size:
            raise ContractError(f"element {int(bad[0])} has a non-positive Jacobian")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def structured(self) -> bool:
        return self.structured_index is not None

    @property
    def spacing(self) -> np.ndarray:
        """Uniform element size per axis (structured meshes)."""
        if not self.structured:
            raise UnsupportedMeshError("spacing is only defined for structured meshes")
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return (hi - lo) / np.asarray(self.shape, dtype=float)

    def boundary_nodes(self) -> np.ndarray:
        if not self.structured:
            raise UnsupportedMeshError("boundary detection needs a structured mesh")
        idx = self.structured_index
        on = np.zeros(self.n_nodes, dtype=bool)
        for d, n in enumerate(self.shape):
            on |= (idx[:, d] == 0) | (idx[:, d] == n)
        return np.nonzero(on)[0]


def structured_mesh_1d(x0: float, x1: float, n_el: int) -> Mesh:
    if n_el < 1 or not x1 > x0:
        raise ContractError("need n_el >= 1 and x1 > x0")
    x = np.linspace(x0, x1, n_el + 1)
    el = np.stack([np.arange(n_el), np.arange(1, n_el + 1)], axis=1)
    return Mesh(1, x[:, None], el, np.arange(n_el + 1)[:, None], (n_el,))


def structured_mesh_2d(lower, upper, nx: int, ny: int | None = None) -> Mesh:
    ny = nx if ny is None else ny
    if nx < 1 or ny < 1:
        raise ContractError("need at least one element per direction")
    xs = np.linspace(lower[0], upper[0], nx + 1)
    ys = np.linspace(lower[1], upper[1], ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j holds y_j
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    I, J = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    sidx = np.stack([I.ravel(), J.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (i + j * (nx + 1)).ravel()
    el = np.stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=1)
    return Mesh(2, nodes, el, sidx, (nx, ny))


@dataclass(frozen=True)
class PatchTopology:
    s: int
    node_patches: list[np.ndarray]
    element_patches: list[np.ndarray]


def node_id(mesh: Mesh, grid_idx: np.ndarray) -> np.ndarray:
    grid_idx = np.asarray(grid_idx)
    if mesh.dim == 1:
        return grid_idx[..., 0]
    return grid_idx[..., 0] + grid_idx[..., 1] * (mesh.shape[0] + 1)


def build_patch_topology(mesh: Mesh, s: int) -> PatchTopology:
    """Nodal patches of ``s`` element layers (Chebyshev distance in 2-D).

    Patches are truncated at the boundary; ids are sorted ascending.
    """
    if not mesh.structured:
        raise UnsupportedMeshError("patch topology requires a structured mesh")
    if s < 0:
        raise ContractError("patch size s must be >= 0")
    idx = mesh.structured_index
    lo = np.maximum(idx - s, 0)
    hi = np.minimum(idx + s, np.asarray(mesh.shape))
    node_patches = []
    for n in range(mesh.n_nodes):
        axes = [np.arange(lo[n, d], hi[n, d] + 1) for d in range(mesh.dim)]
        if mesh.dim == 1:
            ids = axes[0]
        else:
            ids = (axes[0][None, :] + axes[1][:, None] * (mesh.shape[0] + 1)).ravel()
        node_patches.append(np.sort(ids))
    element_patches = [np.unique(np.concatenate([node_patches[i] for i in el]))
                       for el in mesh.elements]
    return PatchTopology(int(s), node_patches, element_patches)
