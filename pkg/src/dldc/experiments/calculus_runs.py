"""Stencil, Euler and quadrature experiments."""

from __future__ import annotations

import time

import numpy as np

from .. import calculus as cal
from .common import RunContext, curve_is_monotone


def _history_rows(hist):
    return ([i, loss, *vals] for i, (loss, vals) in enumerate(zip(hist.losses, hist.values)))


def _stencil_opts(p: dict, lr: float) -> dict:
    return dict(epochs=p["epochs"], lr=lr, lr_final=p["lr_final_ratio"] * lr,
                patience=p["patience"], warmup=p["warmup"], loss_tol=p["loss_tol"],
                beta1=p["beta1"])


def run_stencil(ctx: RunContext, p: dict) -> None:
    t0 = time.perf_counter()
    h = np.deg2rad(p["spacing_deg"])
    n = int(round(360.0 / p["spacing_deg"]))
    xs = h * np.arange(n + 1)
    sine = cal.SampledFunction(xs, np.sin(xs), h)

    net2 = cal.StencilNet(p["offsets_2pt"], h, seed=ctx.seed)
    cal.train_stencil(net2, [(sine, np.cos(xs))], **_stencil_opts(p, p["lr_scale_2pt"] / h))
    ref2 = cal.classical_stencil_oracle(p["offsets_2pt"], h)
    err2 = float(np.max(np.abs(net2.weights - ref2) / np.abs(ref2)))

    data3 = cal.polynomial_stencil_dataset(h, len(p["offsets_3pt"]) - 1, p["n_poly_functions"],
                                           p["poly_half_width"], seed=ctx.seed)
    net3 = cal.StencilNet(p["offsets_3pt"], h, seed=ctx.seed)
    cal.train_stencil(net3, data3, **_stencil_opts(p, p["lr_scale_3pt"] / h))
    ref3 = cal.classical_stencil_oracle(p["offsets_3pt"], h)
    err3 = float(np.max(np.abs(net3.weights - ref3) / np.abs(ref3)))
    tol = p["weight_rtol"]
    ctx.check(1, "learned 2-point and 3-point stencils match the classical weights",
              err2 <= tol and err3 <= tol,
              dict(weights_2pt=net2.weights, oracle_2pt=ref2, rel_err_2pt=err2,
                   weights_3pt=net3.weights, oracle_3pt=ref3, rel_err_3pt=err3,
                   epochs_2pt=net2.history.epochs, epochs_3pt=net3.history.epochs,
                   monotone_2pt=curve_is_monotone(net2.history.losses),
                   monotone_3pt=curve_is_monotone(net3.history.losses)),
              f"relative {tol:g}", t0, 30.0)

    t1 = time.perf_counter()
    cosine = cal.SampledFunction(xs, np.cos(xs), h)
    idx, pred = cal.apply_stencil(net2, cosine)
    classical = cosine.ys[idx[:, None] + net2.offsets[None, :]] @ ref2
    exact = -np.sin(xs[idx])
    rmse_net = float(np.sqrt(np.mean((pred - exact) ** 2)))
    rmse_fd = float(np.sqrt(np.mean((classical - exact) ** 2)))
    bound = rmse_fd + p["transfer_tol"] * float(np.max(np.abs(exact)))
    ctx.check(2, "sine-trained stencil differentiates cosine as well as forward differences",
              rmse_net <= bound, dict(rmse_net=rmse_net, rmse_forward_difference=rmse_fd,
                                      bound=bound),
              f"RMSE <= RMSE_fd + {p['transfer_tol']:g} max|f'|", t1, 30.0)

    ctx.write_json("stencil_params.json", dict(
        spacing=h, weights_2pt=net2.weights, oracle_2pt=ref2,
        weights_3pt=net3.weights, oracle_3pt=ref3, degenerate=[net2.degenerate, net3.degenerate]))
    ctx.write_csv("stencil_2pt_history.csv", ["epoch", "loss", "w0", "w1"], _history_rows(net2.history))
    ctx.write_csv("stencil_3pt_history.csv", ["epoch", "loss", "w0", "w1", "w2"],
                  _history_rows(net3.history))
    rows = [(np.rad2deg(xs[i]), cosine.ys[i], exact[j], pred[j], classical[j])
            for j, i in enumerate(idx)]
    ctx.write_csv("stencil_prediction.csv",
                  ["x_deg", "f", "exact_derivative", "net_derivative", "classical_derivative"], rows)
    ctx.figure("stencil_prediction.png", lambda fig: _plot_stencil(fig, rows, net2.history))


def _plot_stencil(fig, rows, hist):
    r = np.array(rows, dtype=float)
    ax1, ax2 = fig.subplots(1, 2)
    ax1.plot(r[:, 0], r[:, 2], "k-", label="exact")
    ax1.plot(r[::15, 0], r[::15, 3], "o", ms=3, label="trained stencil")
    ax1.set_xlabel("x (deg)")
    ax1.set_ylabel("d cos / dx")
    ax1.legend()
    ax2.semilogy(hist.losses)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("MSE")


def run_euler(ctx: RunContext, p: dict) -> None:
    t0 = time.perf_counter()
    dt = p["dt"]

    def rhs(y, t):
        return 15.0 * t * t + 8.0 * t

    span = (0.0, p["t_end"])
    rows = cal.euler_dataset(rhs, p["y0"], span, dt)
    net = cal.EulerNet(dt, 0.0, seed=ctx.seed)
    cal.train_euler(net, rows, epochs=p["epochs"], lr=p["lr"], lr_final=p["lr_final"],
                    patience=p["patience"])
    wy, wf = net.weights
    err_y = abs(wy - 1.0)
    err_f = abs(wf - dt) / dt
    t, y_net = cal.integrate(net, rhs, p["y0"], span)
    _, y_eul = cal.classical_euler(rhs, p["y0"], span, dt)
    exact = 5 * t ** 3 + 4 * t ** 2 + p["y0"]
    e_net = abs(y_net[-1] - exact[-1])
    e_eul = abs(y_eul[-1] - exact[-1])
    tol = p["weight_tol"]
    ok = err_y <= tol and err_f <= tol and e_net <= e_eul + p["endpoint_slack"]
    ctx.check(3, "learned Euler weights recover (1, dt) and reproduce classical Euler",
              ok, dict(w_y=wy, w_f=wf, err_w_y=err_y, rel_err_w_f=err_f, y_net_end=y_net[-1],
                       y_euler_end=y_eul[-1], y_exact_end=exact[-1],
                       max_net_minus_euler=float(np.max(np.abs(y_net - y_eul))),
                       monotone=curve_is_monotone(net.history.losses)),
              f"weights {tol:g}; |y_net(1)-9| <= |y_euler(1)-9| + {p['endpoint_slack']:g}",
              t0, 30.0)
    ctx.write_json("euler_params.json", dict(dt=dt, w_y=wy, w_f=wf, classical=net.classical_weights()))
    ctx.write_csv("euler_history.csv", ["epoch", "loss", "w_y", "w_f"], _history_rows(net.history))
    table = list(zip(t, y_net, y_eul, exact))
    ctx.write_csv("euler_prediction.csv", ["t", "y_net", "y_euler", "y_exact"], table)

    def draw(fig):
        ax = fig.subplots()
        ax.plot(t, exact, "k-", label="analytic")
        ax.plot(t[::5], y_net[::5], "o", ms=3, label="trained net")
        ax.set_xlabel("t")
        ax.set_ylabel("y")
        ax.legend()

    ctx.figure("euler_prediction.png", draw)


def run_quadrature(ctx: RunContext, p: dict) -> None:
    t0 = time.perf_counter()
    rules, errs, mono = [], {}, {}
    rng = np.random.default_rng(ctx.seed + 1)
    integrals = []
    for n in p["n_points"]:
        net = cal.QuadratureNet(n, seed=ctx.seed)
        cal.train_quadrature(net, n_samples=p["n_samples"], epochs=p["epochs"], lr=p["lr"],
                             seed=ctx.seed, lr_final=p["lr_final"], patience=p["patience"],
                             loss_tol=p["loss_tol"])
        x, w = net.sorted_rule()
        gx, gw = cal.gauss_oracle(n)
        errs[n] = float(max(np.max(np.abs(x - gx)), np.max(np.abs(w - gw))))
        mono[n] = curve_is_monotone(net.history.losses)
        rules += [(n, i, x[i], w[i], gx[i], gw[i]) for i in range(n)]
        ctx.write_csv(f"quadrature_n{n}_history.csv", ["epoch", "loss", *net.params.scalar_labels()],
                      _history_rows(net.history))
        deg = 2 * n - 1
        for j in range(p["n_test_polys"]):
            a = rng.uniform(-1, 1, deg + 1)
            exact = float(a @ cal.poly_moments(deg))
            learned = float(net.forward(a[None, :])[0])
            integrals.append((n, j, learned, exact))
    tol = p["tol"]
    ctx.check(4, "learned n = 2, 3, 4 quadrature rules match Gauss-Legendre",
              all(e <= tol for e in errs.values()), dict(max_abs_err=errs, monotone=mono),
              f"absolute {tol:g}", t0, 120.0)
    ctx.write_csv("quadrature_rules.csv", ["n", "i", "node", "weight", "gauss_node", "gauss_weight"], rules)
    ctx.write_csv("quadrature_prediction.csv", ["n", "poly", "learned_integral", "exact_integral"],
                  integrals)
    ctx.write_json("quadrature_params.json", dict(
        rules={str(n): [r[2:4] for r in rules if r[0] == n] for n in p["n_points"]}, max_abs_err=errs))

    def draw(fig):
        ax = fig.subplots()
        r = np.array(rules, dtype=float)
        ax.plot(r[:, 4], r[:, 0], "ks", mfc="none", ms=8, label="Gauss-Legendre")
        ax.plot(r[:, 2], r[:, 0], "o", ms=4, label="learned")
        ax.set_xlabel("node")
        ax.set_ylabel("n")
        ax.legend()

    ctx.figure("quadrature_nodes.png", draw)
