"""Clustered Lippmann-Schwinger solve: partition, interaction tensor, cluster strains."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..optim import ContractError
from .clustering import kmeans
from .domain import MicroDomain, analytic_strain, elastic_precompute, green_apply

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterPartition:
    k: int
    labels: np.ndarray          # (n_points,) in [0, k)
    centroid_x: np.ndarray      # (k,) mean coordinate
    stiffness: np.ndarray       # (k,) mean stiffness C^I
    fractions: np.ndarray       # (k,) volume fractions c^I
    concentration: np.ndarray   # (n_points,) clustering feature
    objectives: tuple[float, ...] = ()

    def __post_init__(self):
        counts = np.bincount(self.labels, minlength=self.k)
        if counts.size != self.k or np.any(counts == 0):
            raise ContractError("every cluster must be non-empty and labels must lie in [0, k)")


def partition_from_labels(domain: MicroDomain, labels, concentration=None,
                          objectives=()) -> ClusterPartition:
    labels = np.asarray(labels, dtype=int)
    k = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=k).astype(float)
    cx = np.bincount(labels, domain.coords, minlength=k) / counts
    cs = np.bincount(labels, domain.stiffness, minlength=k) / counts
    conc = elastic_precompute(domain) if concentration is None else np.asarray(concentration)
    return ClusterPartition(k, labels, cx, cs, counts / labels.size, conc, tuple(objectives))


def kmeans_cluster(features, k: int, seed: int = 0, max_iter: int = 300,
                   domain: MicroDomain | None = None, n_init: int = 10) -> ClusterPartition:
    """k-means partition of per-point features; attributes come from ``domain``."""
    features = np.asarray(features, dtype=float)
    domain = domain or MicroDomain(n_points=features.shape[0])
    if features.shape[0] != domain.n_points:
        raise ContractError("one feature value per grid point required")
    res = kmeans(features, k, seed=seed, max_iter=max_iter, n_init=n_init)
    return partition_from_labels(domain, res.labels, features, res.objectives)


def cluster_domain(domain: MicroDomain, k: int, seed: int = 0, max_iter: int = 300) -> ClusterPartition:
    """Cluster on the elastic strain concentration."""
    return kmeans_cluster(elastic_precompute(domain), k, seed, max_iter, domain)


@dataclass(frozen=True)
class InteractionTensor:
    D: np.ndarray
    reference_stiffness: float


def interaction_tensor(partition: ClusterPartition, domain: MicroDomain,
                       C0: float | None = None) -> InteractionTensor:
    """``D^IJ``: cluster-``I`` average of the Green operator applied to ``chi^J``."""
    C0 = domain.reference_stiffness if C0 is None else float(C0)
    if C0 <= 0:
        raise ContractError("reference stiffness must be positive")
    k = partition.k
    chi = np.zeros((k, domain.n_points))
    chi[partition.labels, np.arange(domain.n_points)] = 1.0
    G = green_apply(chi, C0)                       # row J: Gamma chi^J
    counts = np.bincount(partition.labels, minlength=k)
    D = np.stack([np.bincount(partition.labels, G[J], minlength=k) / counts
                  for J in range(k)], axis=1)      # D[I, J]
    return InteractionTensor(D, C0)


def sca_solve(partition: ClusterPartition, domain: MicroDomain, tensor: InteractionTensor,
              eps_bar: float, tol: float = 1e-10, max_iter: int = 500,
              method: str = "auto") -> np.ndarray:
    """Cluster strains for a linear-elastic clustered material.

    Solves ``(I + D diag(C^I - C0)) y = 1`` and rescales so that the
    volume-weighted mean strain equals ``eps_bar``.  ``method="auto"`` tries the
    fixed point first and falls back to a dense solve.
    """
    del domain  # cluster attributes already live on the partition
    k = partition.k
    M = tensor.D * (partition.stiffness - tensor.reference_stiffness)[None, :]
    y = None
    if method in ("auto", "fixed_point"):
        y = np.ones(k)
        converged = False
        for _ in range(max_iter):
            new = 1.0 - M @ y
            if not np.all(np.abs(new) < 1e100):
                break
            res = np.linalg.norm(new + M @ new - 1.0) / np.sqrt(k)
            y = new
            if res < tol:
                converged = True
                break
        if not converged:
            if method == "fixed_point":
                raise ContractError("SCA fixed point did not converge")
            log.info("SCA fixed point did not converge for k=%d; using a direct solve", k)
            y = None
    if y is None:
        y = np.linalg.solve(np.eye(k) + M, np.ones(k))
    return eps_bar * y / float(partition.fractions @ y)


def constant_stress_strains(partition: ClusterPartition, eps_bar: float) -> np.ndarray:
    """Piecewise oracle on the clustered material: ``sigma / C^I``, ``sigma = eps_bar / sum c^I / C^I``."""
    sigma = eps_bar / float(partition.fractions @ (1.0 / partition.stiffness))
    return sigma / partition.stiffness


def cluster_average(partition: ClusterPartition, field: np.ndarray) -> np.ndarray:
    counts = np.bincount(partition.labels, minlength=partition.k)
    return np.bincount(partition.labels, field, minlength=partition.k) / counts


def analytic_cluster_strains(partition: ClusterPartition, domain: MicroDomain,
                             eps_bar: float) -> np.ndarray:
    """Cluster averages of the exact pointwise strain of the unclustered bar."""
    return cluster_average(partition, analytic_strain(domain, eps_bar))


def relative_l2(a, b, weights=None) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    w = np.ones_like(b) if weights is None else np.asarray(weights, float)
    return float(np.sqrt(np.sum(w * (a - b) ** 2) / np.sum(w * b ** 2)))


def oracle_discrepancy(partition: ClusterPartition, domain: MicroDomain, strains,
                       eps_bar: float) -> dict[str, float]:
    """Relative L2 errors of cluster strains against the three oracle views."""
    exact = analytic_strain(domain, eps_bar)
    return dict(
        cluster_average=relative_l2(strains, analytic_cluster_strains(partition, domain, eps_bar),
                                    partition.fractions),
        pointwise=relative_l2(np.asarray(strains)[partition.labels], exact),
        constant_stress=relative_l2(strains, constant_stress_strains(partition, eps_bar),
                                    partition.fractions),
    )


@dataclass(frozen=True)
class GraphSample:
    k: int
    eps_bar: float
    x: np.ndarray           # (k,) centroid coordinates
    stiffness: np.ndarray   # (k,)
    fractions: np.ndarray   # (k,)
    target: np.ndarray      # (k,) SCA cluster strains


def solve_partition(domain: MicroDomain, partition: ClusterPartition, eps_bar: float) -> np.ndarray:
    return sca_solve(partition, domain, interaction_tensor(partition, domain), eps_bar)


def build_dataset(k_list, strain_list, domain: MicroDomain | None = None,
                  seed: int = 0) -> list[GraphSample]:
    """One graph sample per ``(k, eps_bar)``; clustering and tensor are shared across strains."""
    domain = domain or MicroDomain()
    out = []
    for k in k_list:
        part = cluster_domain(domain, int(k), seed)
        tensor = interaction_tensor(part, domain)
        unit = sca_solve(part, domain, tensor, 1.0)
        for eb in strain_list:
            out.append(GraphSample(int(k), float(eb), part.centroid_x, part.stiffness,
                                   part.fractions, float(eb) * unit))
    return out
