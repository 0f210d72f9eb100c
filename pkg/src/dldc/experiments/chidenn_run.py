"""C-HiDeNN interpolation properties, s = 0 degeneration and convergence study."""

from __future__ import annotations

import time

import numpy as np

from ..chidenn import (ChidennSpace, assemble_and_solve, check_interpolation_properties,
                       convergence_study, dofs_for_error, fem_error_norms, fem_nodes, fem_solve,
                       fit_rate, manufactured_problem, quadrature_energy_change,
                       structured_mesh_2d)
from .common import RunContext


def run_chidenn(ctx: RunContext, p: dict) -> None:
    t0 = time.perf_counter()
    props = []
    for dim in (1, 2):
        for deg in p["p_list"]:
            r = check_interpolation_properties(dim, deg, p["s"], p["a"], n_el=p["property_n_el"],
                                               seed=ctx.seed, kernel=p["kernel"])
            props.append(dict(dim=dim, p=deg, **r))
    ok = all(r["delta"] <= p["delta_tol"] and r["partition"] <= p["partition_tol"]
             and r["reproduction"] <= p["reproduction_tol"] for r in props)
    worst = {k: max(r[k] for r in props) for k in ("delta", "partition", "grad_partition",
                                                   "reproduction")}
    ctx.check(5, "Kronecker delta, partition of unity and degree-p reproduction",
              ok, dict(worst=worst, cases=props),
              f"delta {p['delta_tol']:g}, partition {p['partition_tol']:g}, "
              f"reproduction {p['reproduction_tol']:g}", t0, 120.0)
    ctx.write_json("chidenn_properties.json", dict(s=p["s"], a=p["a"], kernel=p["kernel"], cases=props))

    t1 = time.perf_counter()
    prob = manufactured_problem()
    n0 = p["s0_n_el"]
    mesh = structured_mesh_2d((0.0, 0.0), (10.0, 10.0), n0)
    sol0 = assemble_and_solve(ChidennSpace(mesh, 0, p["a"], 1, kernel=p["kernel"],
                                           quad_order=p["quad_order"]), prob)
    fem1 = fem_solve(prob, n0, 1, quad_order=p["quad_order"])
    same_nodes = float(np.max(np.abs(fem_nodes(fem1) - mesh.nodes)))
    diff = float(np.max(np.abs(sol0.u - fem1.u)))
    ctx.check(6, "s = 0 reproduces independent linear FEM nodal values",
              diff <= p["s0_tol"] and same_nodes == 0.0,
              dict(max_nodal_difference=diff, n_el=n0, h=10.0 / n0),
              f"{p['s0_tol']:g}", t1, 60.0)

    t2 = time.perf_counter()
    table = convergence_study(tuple(p["mesh_sizes"]), tuple(p["p_list"]), p["s"], p["a"],
                              fem=True, quad_order=p["quad_order"], kernel=p["kernel"])
    # extra FEM points widen the equal-error interpolation range
    for deg in p["p_list"]:
        for n in p["fem_extra_mesh_sizes"]:
            if n in p["mesh_sizes"]:
                continue
            fs = fem_solve(prob, n, deg, quad_order=p["quad_order"])
            l2, h1 = fem_error_norms(fs, prob.exact, prob.exact_grad, 2 * p["quad_order"])
            table.rows.append(dict(method="fem", p=deg, n_el=n, h=10.0 / n, dofs=fs.n_dofs,
                                   L2=l2, H1=h1))
    rates = {}
    for deg in p["p_list"]:
        rates[f"chidenn_p{deg}"] = table.rates("chidenn", deg, "L2", last=p["rate_points"])
        rates[f"fem_p{deg}"] = table.rates("fem", deg, "L2", last=p["rate_points"])
    rate_ok = all(rates[f"chidenn_p{deg}"] >= deg + p["rate_margin"] for deg in p["rate_p_list"])

    ch1 = {r["n_el"]: r for r in table.select("chidenn", 1)}
    fe1 = {r["n_el"]: r for r in table.select("fem", 1)}
    ratios = {n: ch1[n]["L2"] / fe1[n]["L2"] for n in p["mesh_sizes"]}
    ratio_meshes = sorted(p["mesh_sizes"])[-p["ratio_finest"]:]
    ratio_ok = all(ratios[n] <= p["p1_error_ratio"] for n in ratio_meshes)

    fem3 = table.select("fem", 3)
    dof_ratio = {}
    for r in table.select("chidenn", 3):
        dof_ratio[r["n_el"]] = dofs_for_error(fem3, r["L2"]) / r["dofs"]
    dof_ok = all(v >= p["p3_dof_ratio"] for v in dof_ratio.values())

    # quadrature adequacy: doubling the order must leave the energy unchanged
    n_coarse = min(p["mesh_sizes"])
    coarse = structured_mesh_2d((0.0, 0.0), (10.0, 10.0), n_coarse)
    energy_change = {deg: quadrature_energy_change(
        ChidennSpace(coarse, p["s"], p["a"], deg, kernel=p["kernel"], quad_order=p["quad_order"]),
        prob) for deg in p["p_list"]}
    quad_ok = all(v < p["energy_tol"] for v in energy_change.values())
    ctx.check(7, "convergence rates, p = 1 accuracy gain and p = 3 DOF saving against FEM",
              rate_ok and ratio_ok and dof_ok and quad_ok,
              dict(rates=rates, rates_ok=rate_ok, p1_error_ratio=ratios,
                   p1_ratio_meshes=ratio_meshes, p1_ratio_ok=ratio_ok,
                   p1_ratio_all_meshes_ok=all(v <= p["p1_error_ratio"] for v in ratios.values()),
                   p3_fem_dof_ratio=dof_ratio, p3_dof_ok=dof_ok,
                   quad_order=p["quad_order"], energy_change_coarsest=energy_change,
                   quad_ok=quad_ok),
              f"rate >= p + {p['rate_margin']:g}; L2 ratio <= {p['p1_error_ratio']:g}; "
              f"DOF ratio >= {p['p3_dof_ratio']:g}; energy change < {p['energy_tol']:g}",
              t2, 600.0)

    rows = []
    for method in ("chidenn", "fem"):
        for deg in p["p_list"]:
            sel = table.select(method, deg)
            for i, r in enumerate(sel):
                if i == 0:
                    rl2 = rh1 = float("nan")
                else:
                    q = sel[i - 1]
                    rl2 = fit_rate([q["h"], r["h"]], [q["L2"], r["L2"]])
                    rh1 = fit_rate([q["h"], r["h"]], [q["H1"], r["H1"]])
                rows.append((method, deg, r["n_el"], r["h"], r["dofs"], r["L2"], r["H1"], rl2, rh1))
    ctx.write_csv("chidenn_convergence.csv",
                  ["method", "p", "n_el", "h", "dofs", "L2", "H1", "rate_L2", "rate_H1"], rows)
    ctx.write_json("chidenn_summary.json", dict(rates=rates, p1_error_ratio=ratios,
                                                p3_fem_dof_ratio=dof_ratio,
                                                s0_max_nodal_difference=diff))

    def draw(fig):
        ax1, ax2 = fig.subplots(1, 2)
        for method, mk in (("chidenn", "o-"), ("fem", "s--")):
            for deg in p["p_list"]:
                sel = table.select(method, deg)
                lab = f"{'C-HiDeNN' if method == 'chidenn' else 'FEM'} p={deg}"
                ax1.loglog([r["h"] for r in sel], [r["L2"] for r in sel], mk, ms=3, label=lab)
                ax2.loglog([r["dofs"] for r in sel], [r["L2"] for r in sel], mk, ms=3, label=lab)
        ax1.set_xlabel("h")
        ax1.set_ylabel("relative L2 error")
        ax2.set_xlabel("DOFs")
        ax1.legend(fontsize=6)

    ctx.figure("chidenn_convergence.png", draw)
