"""Clustered Lippmann-Schwinger solve against the analytic oracle, and the graph kernel network."""

from __future__ import annotations

import time

import numpy as np

from ..sca import (GraphKernelNet, GraphSample, MicroDomain, build_dataset, cluster_domain,
                   extrapolate, gkn_train, interaction_tensor, oracle_discrepancy, sca_solve)
from ..sca.solver import analytic_cluster_strains, constant_stress_strains
from .common import RunContext, curve_is_monotone


def _net(p, seed):
    return GraphKernelNet(latent_width=p["width"], n_layers=p["layers"], radius=p["radius"],
                          hidden=p["kernel_hidden"], neighborhood=p["neighborhood"],
                          length_scale=p["length"], strain_scale=max(p["strain_list"]),
                          project_gain=p["project_gain"], seed=seed)


def run_sca(ctx: RunContext, p: dict) -> None:
    t0 = time.perf_counter()
    domain = MicroDomain(p["length"], p["n_points"])
    rows, summary = [], {}
    for k in sorted(set(p["oracle_k_list"]) | {p["oracle_k"]}):
        part = cluster_domain(domain, k, ctx.seed)
        eps = sca_solve(part, domain, interaction_tensor(part, domain), p["oracle_strain"])
        disc = oracle_discrepancy(part, domain, eps, p["oracle_strain"])
        summary[k] = dict(disc, mean_strain_defect=abs(float(part.fractions @ eps) - p["oracle_strain"]))
        rows.append((k, disc["cluster_average"], disc["pointwise"], disc["constant_stress"],
                     summary[k]["mean_strain_defect"]))
        exact = analytic_cluster_strains(part, domain, p["oracle_strain"])
        const = constant_stress_strains(part, p["oracle_strain"])
        ctx.write_csv(f"sca_oracle_k{k}.csv",
                      ["cluster", "x", "stiffness", "fraction", "sca_strain", "exact_cluster_mean",
                       "constant_stress_strain"],
                      zip(range(k), part.centroid_x, part.stiffness, part.fractions, eps, exact, const))
    ctx.write_csv("sca_oracle_summary.csv",
                  ["k", "rel_l2_cluster_mean", "rel_l2_pointwise", "rel_l2_constant_stress",
                   "mean_strain_defect"], rows)
    main = summary[p["oracle_k"]]
    ctx.check(12, f"SCA cluster strains match the analytic solution at k={p['oracle_k']}",
              main["cluster_average"] <= p["oracle_rtol"],
              dict(main, k=p["oracle_k"], eps_bar=p["oracle_strain"]),
              f"relative L2 {p['oracle_rtol']:g}", t0, 60.0)

    t1 = time.perf_counter()
    data = build_dataset(p["k_list"], p["strain_list"], domain, seed=ctx.seed)
    net = _net(p, ctx.seed)
    res = gkn_train(net, data, epochs=p["epochs"], lr=p["lr"], seed=ctx.seed,
                    lr_final=p["lr_final"], test_fraction=p["test_fraction"])
    tr = res.train_nmse
    ratio = tr[-1] / tr[0]
    ctx.check(13, "GKN training NMSE drops by the required factor",
              ratio <= p["train_reduction"] and not res.aborted,
              dict(initial_train_nmse=tr[0], final_train_nmse=tr[-1], ratio=ratio,
                   final_test_nmse=res.test_nmse[-1], test_over_train=res.test_nmse[-1] / tr[-1],
                   epochs=len(tr), lr_halvings=res.lr_halvings, aborted=res.aborted,
                   monotone=curve_is_monotone(tr), n_train=len(res.train_ids),
                   n_test=len(res.test_ids)),
              f"final / initial <= {p['train_reduction']:g}", t1, 900.0)
    ctx.write_csv("gkn_training.csv", ["epoch", "train_nmse", "test_nmse"],
                  zip(range(len(tr)), tr, res.test_nmse))
    ctx.write_csv("gkn_split.csv", ["sample", "k", "eps_bar", "split"],
                  ((i, data[i].k, data[i].eps_bar, "test" if i in set(res.test_ids) else "train")
                   for i in range(len(data))))

    t2 = time.perf_counter()
    ke, se = p["extrapolate_k"], p["extrapolate_strain"]
    part = cluster_domain(domain, ke, ctx.seed)
    eps = sca_solve(part, domain, interaction_tensor(part, domain), se)
    sample = GraphSample(ke, se, part.centroid_x, part.stiffness, part.fractions, eps)
    ext = extrapolate(net, sample)
    sca_disc = oracle_discrepancy(part, domain, eps, se)
    ctx.check(14, f"GKN matches SCA at k={ke}, eps_bar={se} (outside training)",
              ext["nmse"] < p["extrapolate_nmse"],
              dict(nmse=ext["nmse"], max_abs=ext["max_abs"], gkn_mean_strain=ext["mean_strain"],
                   gkn_mean_strain_rel_err=abs(ext["mean_strain"] - se) / se,
                   sca_vs_oracle=sca_disc["cluster_average"]),
              f"NMSE < {p['extrapolate_nmse']:g}", t2, 60.0)
    ctx.write_csv("gkn_extrapolation.csv", ["x", "stiffness", "sca_strain", "gkn_strain"],
                  zip(part.centroid_x, part.stiffness, eps, ext["gkn"]))
    ctx.write_json("sca_summary.json", dict(
        oracle=summary, gkn=dict(initial_train_nmse=tr[0], final_train_nmse=tr[-1],
                                 final_test_nmse=res.test_nmse[-1], epochs=len(tr)),
        extrapolation=dict(k=ke, eps_bar=se, nmse=ext["nmse"], max_abs=ext["max_abs"],
                           gkn_mean_strain=ext["mean_strain"],
                           sca_vs_oracle=sca_disc["cluster_average"])))

    def draw(fig):
        ax1, ax2 = fig.subplots(1, 2)
        ax1.semilogy(tr, label="train")
        ax1.semilogy(res.test_nmse, label="test")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("NMSE")
        ax1.legend()
        ax2.plot(part.centroid_x, eps, "k-", label="SCA")
        ax2.plot(part.centroid_x, ext["gkn"], ".", ms=3, label="GKN")
        ax2.set_xlabel("x")
        ax2.set_ylabel("cluster strain")
        ax2.legend()

    ctx.figure("sca_gkn.png", draw)
