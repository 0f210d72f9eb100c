"""Interpolation property checks and convergence studies."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .fem import fem_error_norms, fem_solve
from .mesh import structured_mesh_1d, structured_mesh_2d
from .poisson import assemble_and_solve, error_norms, manufactured_problem
from .space import ChidennSpace

log = logging.getLogger(__name__)


def check_interpolation_properties(dim: int, p: int, s: int, a: float, n_el: int = 8,
                                   n_random: int = 20, seed: int = 0,
                                   kernel: str = "cubic") -> dict[str, float]:
    """Worst Kronecker-delta, partition-of-unity and reproduction defects over a mesh.

    Reproduction uses monomials of total degree <= p in the centred coordinate
    ``(x - 5) / 5`` on ``[0, 10]^dim``.
    """
    mesh = (structured_mesh_1d(0.0, 10.0, n_el) if dim == 1
            else structured_mesh_2d((0.0, 0.0), (10.0, 10.0), n_el))
    space = ChidennSpace(mesh, s, a, p, kernel=kernel)
    rng = np.random.default_rng(seed)
    exps = [e for e in itertools.product(range(p + 1), repeat=dim) if sum(e) <= p]
    out = dict(delta=0.0, partition=0.0, grad_partition=0.0, reproduction=0.0,
               lowered_nodes=float(len(space.lowered_nodes)))
    corners = np.array(list(itertools.product([-1.0, 1.0], repeat=dim)))
    for e in range(mesh.n_elements):
        it = space.interpolants(e, corners)
        target = np.array([[1.0 if k == l else 0.0 for k in it.ids] for l in _nearest(mesh.nodes, it.x)])
        out["delta"] = max(out["delta"], float(np.max(np.abs(it.N - target))))
        xi = rng.uniform(-1, 1, (n_random, dim))
        gq, _ = _gauss(space, dim)
        for pts in (xi, gq):
            it = space.interpolants(e, pts)
            out["partition"] = max(out["partition"], float(np.max(np.abs(it.N.sum(axis=1) - 1))))
            out["grad_partition"] = max(out["grad_partition"], float(np.max(np.abs(it.dN.sum(axis=1)))))
        it = space.interpolants(e, xi)
        zn = (mesh.nodes[it.ids] - 5.0) / 5.0
        zx = (it.x - 5.0) / 5.0
        for ex in exps:
            qn = np.prod(zn ** np.array(ex), axis=1)
            qx = np.prod(zx ** np.array(ex), axis=1)
            out["reproduction"] = max(out["reproduction"], float(np.max(np.abs(it.N @ qn - qx))))
    return out


def _gauss(space, dim):
    from .space import gauss_points
    return gauss_points(space.quad_order, dim)


def _nearest(nodes, pts):
    d = np.sum((nodes[None, :, :] - pts[:, None, :]) ** 2, axis=2)
    return np.argmin(d, axis=1)


def fit_rate(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class ConvergenceTable:
    rows: list[dict] = field(default_factory=list)

    def select(self, method: str, p: int) -> list[dict]:
        return sorted((r for r in self.rows if r["method"] == method and r["p"] == p),
                      key=lambda r: -r["h"])

    def rates(self, method: str, p: int, norm: str = "L2", last: int = 3) -> float:
        rs = self.select(method, p)[-last:]
        return fit_rate([r["h"] for r in rs], [r[norm] for r in rs])

    def finest_pair_rate(self, method: str, p: int, norm: str = "L2") -> float:
        return self.rates(method, p, norm, last=2)


def dofs_for_error(rows: list[dict], target: float, norm: str = "L2") -> float:
    """DOFs needed to reach ``target`` by log-log interpolation along a curve.

    Outside the sampled range the nearest segment is extrapolated.
    """
    d = np.log([r["dofs"] for r in rows])
    e = np.log([r[norm] for r in rows])
    order = np.argsort(d)
    d, e = d[order], e[order]
    t = np.log(target)
    for i in range(len(d) - 1):
        if min(e[i], e[i + 1]) <= t <= max(e[i], e[i + 1]):
            j = i
            break
    else:
        j = 0 if t > e[0] else len(d) - 2
    frac = (t - e[j]) / (e[j + 1] - e[j])
    return float(np.exp(d[j] + frac * (d[j + 1] - d[j])))


def convergence_study(mesh_sizes=(10, 20, 40, 80), p_list=(1, 2, 3), s: int = 3,
                      a: float = 30.0, fem: bool = True, quad_order: int = 16,
                      kernel: str = "cubic") -> ConvergenceTable:
    """C-HiDeNN and Q_p FEM errors on the two-bump manufactured problem over ``[0, 10]^2``."""
    prob = manufactured_problem()
    table = ConvergenceTable()
    for p in p_list:
        for n in mesh_sizes:
            mesh = structured_mesh_2d((0.0, 0.0), (10.0, 10.0), n)
            space = ChidennSpace(mesh, s, a, p, kernel=kernel, quad_order=quad_order)
            sol = assemble_and_solve(space, prob)
            l2, h1 = error_norms(space, sol.u, prob.exact, prob.exact_grad)
            table.rows.append(dict(method="chidenn", p=p, n_el=n, h=10.0 / n, dofs=space.n_dofs,
                                   L2=l2, H1=h1))
            log.info("chidenn p=%d n=%d L2=%.3e H1=%.3e", p, n, l2, h1)
            if fem:
                fs = fem_solve(prob, n, p, quad_order=quad_order)
                fl2, fh1 = fem_error_norms(fs, prob.exact, prob.exact_grad, 2 * quad_order)
                table.rows.append(dict(method="fem", p=p, n_el=n, h=10.0 / n, dofs=fs.n_dofs,
                                       L2=fl2, H1=fh1))
    return table
