"""Space-time FEM identification on the spring-mass-damper and stepping checks."""

from __future__ import annotations

import time

import numpy as np

from .. import stfem as st
from ..optim import ParamStore, finite_diff_gradcheck
from .common import RunContext, curve_is_monotone

CASE_KEYS = ("u0", "v0", "f0", "omega")


def _cases(p):
    return [dict(zip(CASE_KEYS, c)) for c in p["validation_cases"]]


def _predict(tmpl, coeffs, case, p, n_elem):
    return st.predict_new_conditions(tmpl, coeffs, (case["u0"], case["v0"]),
                                     dict(f0=case["f0"], omega=case["omega"]), p["t_end"], n_elem)


def _gradcheck(system, obs, names, mode):
    ps = ParamStore()
    ps.add("theta", [system.coeffs[n] for n in names])

    def loss(params):
        return st.LOSSES[mode](system.with_coeffs(**dict(zip(names, params["theta"]))),
                               obs, names, want_grad=False)[0]

    _, g = st.LOSSES[mode](system, obs, names)
    ps.set_grad("theta", g)
    return finite_diff_gradcheck(loss, ps, h=1e-6)


def run_stfem(ctx: RunContext, p: dict) -> None:
    truth = dict(m=p["m"], c=p["c"], k=p["k"])
    init = dict(m=p["init_m"], c=p["init_c"], k=p["init_k"])
    names = list(p["trainable"])
    seeds = tuple(ctx.seed + s for s in range(p["n_seeds"]))

    # clean identification
    t0 = time.perf_counter()
    tmpl = st.assemble_smd(p["m"], p["c"], p["k"], p["f0"], p["omega"], p["t_end"], p["n_elem_clean"],
                           p["u0"], p["v0"])
    clean = st.direct_solve(tmpl)
    run = st.identify(tmpl.with_coeffs(**init), clean, names, epochs=p["epochs_clean"], lr=p["lr"],
                      lr_final=p["lr_final"], seeds=seeds, mode=p["mode_clean"])
    rel = st.relative_errors(run.coeffs, truth)
    tol = p["clean_rtol"]
    ctx.check(8, "clean-data identification of (m, c, k)", all(v <= tol for v in rel.values()),
              dict(coeffs=run.coeffs, rel_err=rel, seed=run.seed,
                   final_losses=run.all_final_losses,
                   monotone=curve_is_monotone(run.history.losses),
                   monotone_after_10pct=curve_is_monotone(run.history.losses, skip=0.1)),
              f"relative {tol:g}", t0, 300.0)
    ctx.write_csv("stfem_clean_history.csv", ["epoch", "loss", *names],
                  ([i, l, *v] for i, (l, v) in enumerate(zip(run.history.losses, run.history.values))))

    t1 = time.perf_counter()
    gen = {}
    for j, case in enumerate(_cases(p)):
        a = _predict(tmpl, run.coeffs, case, p, p["n_elem_clean"])
        b = _predict(tmpl, truth, case, p, p["n_elem_clean"])
        gen[j] = float(np.max(np.abs(a.values - b.values)) / np.max(np.abs(b.values)))
        ctx.write_csv(f"stfem_clean_case{j}.csv", ["t", "u_true", "u_pred"],
                      zip(b.times, b.values[:, 0], a.values[:, 0]))
    free = _predict(tmpl, run.coeffs, dict(u0=1.0, v0=0.0, f0=0.0, omega=0.0), p, p["n_elem_clean"])
    zeta, wn = st.fit_damping_ratio(free)
    zeta_true = p["c"] / (2 * np.sqrt(p["m"] * p["k"]))
    ctx.check(9, "identified coefficients predict new initial/load cases",
              all(v <= p["generalization_rtol"] for v in gen.values()),
              dict(max_rel_err=gen, damping_ratio=zeta, damping_ratio_true=zeta_true,
                   damping_ratio_rel_err=abs(zeta - zeta_true) / zeta_true),
              f"max relative {p['generalization_rtol']:g}", t1, 60.0)

    # noisy identification
    t2 = time.perf_counter()
    tmpl50 = st.assemble_smd(p["m"], p["c"], p["k"], p["f0"], p["omega"], p["t_end"],
                             p["n_elem_noisy"], p["u0"], p["v0"])
    noisy = st.add_noise(st.direct_solve(tmpl50), 0.0, p["noise_variance"], ctx.seed)
    nrun = st.identify(tmpl50.with_coeffs(**init), noisy, names, epochs=p["epochs_noisy"],
                       lr=p["lr"], lr_final=p["lr_final"], seeds=seeds, mode=p["mode_noisy"])
    nrel = st.relative_errors(nrun.coeffs, truth)
    nerr = {}
    for j, case in enumerate(_cases(p)):
        a = _predict(tmpl50, nrun.coeffs, case, p, p["n_elem_noisy"])
        b = _predict(tmpl50, truth, case, p, p["n_elem_noisy"])
        nerr[j] = float(np.max(np.abs(a.values - b.values)))
        ctx.write_csv(f"stfem_noisy_case{j}.csv", ["t", "u_true", "u_pred"],
                      zip(b.times, b.values[:, 0], a.values[:, 0]))
    ok = all(v <= p["noisy_rtol"] for v in nrel.values()) and all(
        v <= p["noisy_pred_atol"] for v in nerr.values())
    ctx.check(10, "noisy-data identification and prediction", ok,
              dict(coeffs=nrun.coeffs, rel_err=nrel, max_abs_pred_err=nerr, seed=nrun.seed,
                   final_losses=nrun.all_final_losses,
                   monotone=curve_is_monotone(nrun.history.losses)),
              f"coefficients {p['noisy_rtol']:g} relative; predictions {p['noisy_pred_atol']:g} absolute",
              t2, 300.0)
    ctx.write_csv("stfem_noisy_history.csv", ["epoch", "loss", *names],
                  ([i, l, *v] for i, (l, v) in enumerate(zip(nrun.history.losses, nrun.history.values))))
    ctx.write_csv("stfem_noisy_data.csv", ["t", "u_noisy"], zip(noisy.times, noisy.values[:, 0]))

    # stepping against the direct solve, and gradient checks
    t3 = time.perf_counter()
    step_err = {}
    for label, system in (("smd", tmpl), ("bar", _bar(p))):
        d = st.direct_solve(system)
        r = st.rollout(system, d.values[0], d.values[1])
        step_err[label] = float(np.max(np.abs(r.values - d.values)) / np.max(np.abs(d.values)))
    grad_err = {}
    # a non-proportional point: scaling (m, c, k) together leaves unforced rows
    # with exactly zero residual, a kink of the L1 loss
    off = tmpl.with_coeffs(m=0.8 * p["m"], c=1.3 * p["c"], k=0.9 * p["k"])
    for mode in ("teacher", "rollout"):
        grad_err[f"smd_{mode}"] = _gradcheck(off, clean.values, names, mode)
    bar = _bar(p)
    bar_obs = st.direct_solve(bar).values
    bar_off = bar.with_coeffs(E=0.8 * bar.coeffs["E"], rho=1.3 * bar.coeffs["rho"])
    for mode in ("teacher", "rollout"):
        grad_err[f"bar_{mode}"] = _gradcheck(bar_off, bar_obs, list(st.BAR_COEFFS), mode)
    ok = all(v <= p["step_rtol"] for v in step_err.values()) and all(
        v <= p["grad_rtol"] for v in grad_err.values())
    ctx.check(11, "autoregressive stepping equals the direct solve; gradients pass FD checks", ok,
              dict(step_rel_err=step_err, gradcheck=grad_err),
              f"stepping {p['step_rtol']:g}; gradients {p['grad_rtol']:g}", t3, 60.0)

    ctx.write_json("stfem_summary.json", dict(
        truth=truth, init=init, clean=dict(coeffs=run.coeffs, rel_err=rel, seed=run.seed),
        noisy=dict(coeffs=nrun.coeffs, rel_err=nrel, seed=nrun.seed),
        generalization_max_rel_err=gen, noisy_max_abs_pred_err=nerr, damping_ratio=zeta,
        natural_frequency=wn))

    def draw(fig):
        axs = fig.subplots(1, 2)
        h = np.array(run.history.values)
        for i, n in enumerate(names):
            axs[0].plot(h[:, i] / truth[n], label=n)
        axs[0].set_xlabel("epoch")
        axs[0].set_ylabel("coefficient / truth")
        axs[0].legend()
        axs[1].plot(noisy.times, noisy.values[:, 0], ".", ms=2, label="noisy data")
        b = st.direct_solve(tmpl50)
        axs[1].plot(b.times, b.values[:, 0], "k-", label="truth")
        axs[1].set_xlabel("t")
        axs[1].legend()

    ctx.figure("stfem_identification.png", draw)


def _bar(p):
    n = p["bar_nodes"]
    return st.assemble_bar(p["bar_E"], 1.0, p["bar_rho"], n, p["bar_time_steps"], 1.0 / (n - 1),
                           p["bar_dt"], traction=p["bar_traction"], omega=p["bar_omega"])
