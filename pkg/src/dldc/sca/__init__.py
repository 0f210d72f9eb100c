"""Self-consistent clustering analysis of a 1-D bar and a graph kernel network surrogate."""

from .clustering import KMeansResult, kmeans
from .domain import (MicroDomain, analytic_strain, default_stiffness, elastic_precompute,
                     green_apply, lippmann_schwinger_fft)
from .gkn import (Graph, GraphKernelNet, TrainResult, batch_loss, build_graph, extrapolate,
                  forward_graph, gkn_forward, gkn_train, make_batches, neighborhoods, nmse,
                  split_dataset)
from .solver import (ClusterPartition, GraphSample, InteractionTensor, analytic_cluster_strains,
                     build_dataset, cluster_average, cluster_domain, constant_stress_strains,
                     interaction_tensor, kmeans_cluster, oracle_discrepancy, partition_from_labels,
                     relative_l2, sca_solve, solve_partition)

__all__ = [n for n in dir() if not n.startswith("_")]
