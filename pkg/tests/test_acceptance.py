"""End-to-end acceptance run.

The whole suite runs once (twice, for the determinism criterion) at the
default configs.  Each criterion is then re-checked here from the recorded
measurements and resolved configs, at its own tolerance and runtime budget,
and one PASS/FAIL line per criterion is printed in the terminal summary.
"""

import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dldc.experiments import CRITERIA, reproduce_all

# seconds
BUDGET = {1: 30, 2: 30, 3: 30, 4: 120, 5: 120, 6: 60, 7: 600, 8: 300, 9: 60, 10: 300,
          11: 60, 12: 60, 13: 900, 14: 60}
SUITE_BUDGET = 45 * 60


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    table = reproduce_all(out, figures=False, repeat=True)
    elapsed = time.perf_counter() - t0
    checks, configs = {}, {}
    for name in {n for n, _ in CRITERIA.values()} - {"reproduce-all"}:
        man = out / name / "manifest.json"
        if man.exists():
            for c in json.loads(man.read_text())["checks"]:
                checks[c["criterion"]] = c
            configs[name] = json.loads((out / name / "resolved_config.json").read_text())
    return dict(table={r["criterion"]: r for r in table}, checks=checks, configs=configs,
                elapsed=elapsed)


def _stencil(m, cfg):
    return dict(rel_err_2pt=m["rel_err_2pt"] <= 1e-3, rel_err_3pt=m["rel_err_3pt"] <= 1e-3)


def _transfer(m, cfg):
    # max |d/dx cos| over whole degrees of [0, 360] is 1, attained at 90 degrees
    return dict(rmse=m["rmse_net"] <= m["rmse_forward_difference"] + 1e-3 * 1.0)


def _euler(m, cfg):
    dt = cfg["parameters"]["dt"]
    return dict(w_y=abs(m["w_y"] - 1) <= 1e-3, w_f=abs(m["w_f"] - dt) <= 1e-3 * dt,
                endpoint=abs(m["y_net_end"] - 9) <= abs(m["y_euler_end"] - 9) + 1e-6)


def _quadrature(m, cfg):
    err = {int(n): v for n, v in m["max_abs_err"].items()}
    return dict(orders=sorted(err) == [2, 3, 4], nodes_weights=max(err.values()) <= 1e-3)


def _properties(m, cfg):
    w = m["worst"]
    cover = {(c["dim"], c["p"]) for c in m["cases"]}
    return dict(delta=w["delta"] <= 1e-8, partition=w["partition"] <= 1e-10,
                reproduction=w["reproduction"] <= 1e-7,
                cases=cover >= {(d, p) for d in (1, 2) for p in (1, 2, 3)},
                s3_a30=cfg["parameters"]["s"] == 3 and cfg["parameters"]["a"] == 30.0)


def _s0(m, cfg):
    return dict(nodal=m["max_nodal_difference"] <= 1e-10, mesh=m["h"] == 0.5)


def _convergence(m, cfg):
    meshes = cfg["parameters"]["mesh_sizes"]
    ratio = {int(n): v for n, v in m["p1_error_ratio"].items()}
    dofs = {int(n): v for n, v in m["p3_fem_dof_ratio"].items()}
    return dict(meshes=sorted(meshes) == [10, 20, 40, 80],
                rate_p1=m["rates"]["chidenn_p1"] >= 1.7, rate_p2=m["rates"]["chidenn_p2"] >= 2.7,
                p1_ratio=sorted(ratio) == sorted(meshes) and max(ratio.values()) <= 0.1,
                p3_dofs=sorted(dofs) == sorted(meshes) and min(dofs.values()) >= 5.0)


def _clean_id(m, cfg):
    p = cfg["parameters"]
    return dict(coeffs=max(m["rel_err"].values()) <= 0.01,
                setup=p["n_elem_clean"] == 150 and p["t_end"] == 3.0,
                epochs=p["epochs_clean"] <= 20000)


def _generalise(m, cfg):
    return dict(cases=len(m["max_rel_err"]) == 3, error=max(m["max_rel_err"].values()) <= 0.01)


def _noisy_id(m, cfg):
    p = cfg["parameters"]
    return dict(coeffs=max(m["rel_err"].values()) <= 0.15,
                predictions=max(m["max_abs_pred_err"].values()) <= 0.05,
                setup=p["n_elem_noisy"] == 50 and p["noise_variance"] == 1e-3)


def _equivalence(m, cfg):
    return dict(stepping=max(m["step_rel_err"].values()) <= 1e-9,
                gradients=max(m["gradcheck"].values()) <= 1e-4)


def _sca(m, cfg):
    return dict(strains=m["cluster_average"] <= 0.01, setup=m["k"] == 33 and m["eps_bar"] == 0.2)


def _gkn_train(m, cfg):
    p = cfg["parameters"]
    return dict(reduction=m["final_train_nmse"] <= 0.1 * m["initial_train_nmse"],
                finished=not m["aborted"],
                dataset=(min(p["k_list"]), max(p["k_list"]), min(p["strain_list"]),
                         max(p["strain_list"])) == (2, 128, 0.05, 0.5),
                net=p["layers"] == 6 and p["radius"] == 2.0)


def _gkn_extrapolate(m, cfg):
    p = cfg["parameters"]
    outside = p["extrapolate_k"] > max(p["k_list"])
    return dict(nmse=m["nmse"] < 0.05, setup=p["extrapolate_k"] == 300
                and p["extrapolate_strain"] == 0.2 and outside)


RULES = {1: _stencil, 2: _transfer, 3: _euler, 4: _quadrature, 5: _properties, 6: _s0,
         7: _convergence, 8: _clean_id, 9: _generalise, 10: _noisy_id, 11: _equivalence,
         12: _sca, 13: _gkn_train, 14: _gkn_extrapolate}


def _report(request, crit, parts):
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    line = f"criterion {crit:2d} {'PASS' if ok else 'FAIL'}: {CRITERIA[crit][1]}"
    if failed:
        line += f"  [failed: {', '.join(failed)}]"
    request.config.stash[ACCEPTANCE_LINES].append(line)
    print(line)
    return ok, failed


@pytest.mark.parametrize("crit", sorted(RULES))
def test_criterion(suite, crit, request):
    name = CRITERIA[crit][0]
    check = suite["checks"].get(crit)
    if check is None:
        parts = dict(ran=False)
    else:
        parts = RULES[crit](check["measured"], suite["configs"][name])
        # the runner's own verdict must agree with the re-check
        parts["runner_agrees"] = check["passed"] == all(parts.values())
        parts["runtime"] = check["runtime_s"] < BUDGET[crit]
    ok, failed = _report(request, crit, parts)
    assert ok, f"criterion {crit} failed: {failed}; measured {check and check['measured']}"


def test_criterion_15_determinism(suite, request):
    row = suite["table"][15]
    parts = dict(byte_identical=row["status"] == "PASS" and row["n_csv"] > 0,
                 runtime=suite["elapsed"] < SUITE_BUDGET)
    ok, failed = _report(request, 15, parts)
    assert ok, f"criterion 15 failed: {failed}; {row}"


def test_every_check_recorded_once(suite):
    assert sorted(suite["checks"]) == sorted(RULES)
    assert np.all([suite["table"][c]["status"] in ("PASS", "FAIL") for c in RULES])


def test_gkn_extrapolated_mean_strain(suite):
    # the net is not constrained to the applied mean strain; soft check within 2%
    m = suite["checks"][14]["measured"]
    assert m["gkn_mean_strain_rel_err"] <= 0.02
