"""Space-time finite elements, autoregressive stepping and coefficient identification.

The global space-time system has the block-banded form

    [ I                       ] [u^0]   [u0                ]
    [ B0  C                   ] [u^1]   [F^0 + V v0        ]
    [ A   B   C               ] [u^2] = [F^1               ]
    [     A   B   C           ] [...]   [...               ]

so row block ``t + 1`` predicts ``u^{t+1} = C^{-1}(F^t - A u^{t-1} - B u^t)``.
Every block is linear in the physical coefficients, which is what makes the
identification gradients closed-form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .optim import AdamState, ContractError, History, ParamStore, adam_step, fmt

log = logging.getLogger(__name__)

SMD_COEFFS = ("m", "c", "k")
BAR_COEFFS = ("E", "rho")
# residuals below this fraction of max|data| are treated as exact zeros of the L1 loss
ROUNDOFF = 1e-12


class SingularBlockError(ArithmeticError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, msg, last_state):
        super().__init__(msg)
        self.last_state = last_state


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray            # (n_times, N)
    noise_meta: tuple[float, float] | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.times.size:
            raise ContractError("one value row per time is required")
        d = np.diff(self.times)
        if np.any(d <= 0) or np.max(np.abs(d - d[0])) > 1e-9 * d[0]:
            raise ContractError("times must be strictly increasing and uniform")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass
class SpaceTimeSystem:
    """Block-banded space-time system with blocks linear in the coefficients.

    ``basis[name]`` holds the per-unit-coefficient blocks ``(A, B, C, B0, V)``;
    ``V`` multiplies the initial velocity in the first stepping row.
    """

    kind: str
    n_space: int
    n_time: int                      # number of time elements; n_time + 1 time nodes
    dt: float
    dx: float | None
    coeffs: dict[str, float]
    basis: dict[str, tuple[np.ndarray, ...]]
    force: np.ndarray                # (n_time + 1, N) consistent load per time node
    u0: np.ndarray
    v0: np.ndarray
    forcing: dict = field(default_factory=dict)

    def blocks(self, coeffs: dict[str, float] | None = None) -> tuple[np.ndarray, ...]:
        coeffs = self.coeffs if coeffs is None else coeffs
        N = self.n_space
        out = [np.zeros((N, N)) for _ in range(5)]
        for name, mats in self.basis.items():
            for o, M in zip(out, mats):
                o += coeffs[name] * M
        return tuple(out)

    @property
    def A(self):
        return self.blocks()[0]

    @property
    def B(self):
        return self.blocks()[1]

    @property
    def C(self):
        return self.blocks()[2]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_time + 1)

    def with_coeffs(self, **coeffs) -> "SpaceTimeSystem":
        new = dict(self.coeffs)
        new.update(coeffs)
        return SpaceTimeSystem(self.kind, self.n_space, self.n_time, self.dt, self.dx, new,
                               self.basis, self.force, self.u0, self.v0, self.forcing)


# --------------------------------------------------------------------------- assembly

def smd_element_matrices(m: float, c: float, k: float, dt: float):
    """Linear time-element matrices ``(M, C, K)``; the system matrix is ``-M + C + K``."""
    Me = m / dt * np.array([[1.0, -1.0], [-1.0, 1.0]])
    Ce = c * np.array([[-0.5, 0.5], [-0.5, 0.5]])
    Ke = k * dt * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    return Me, Ce, Ke


def sine_load(f0: float, omega: float, t0: float, t1: float) -> tuple[float, float]:
    """Closed-form ``int N_a f0 sin(w t) dt`` for the two linear shape functions."""
    h = t1 - t0
    if omega == 0.0:
        return 0.0, 0.0

    def I1(t):
        return -np.cos(omega * t) / omega

    def It(t):
        return -t * np.cos(omega * t) / omega + np.sin(omega * t) / omega**2

    S = I1(t1) - I1(t0)
    St = It(t1) - It(t0)
    return f0 * (t1 * S - St) / h, f0 * (St - t0 * S) / h


def _time_load(f0, omega, T_end, n_elem):
    t = np.linspace(0.0, T_end, n_elem + 1)
    F = np.zeros(n_elem + 1)
    for e in range(n_elem):
        a, b = sine_load(f0, omega, t[e], t[e + 1])
        F[e] += a
        F[e + 1] += b
    return F


def _smd_basis(dt: float) -> dict[str, tuple[np.ndarray, ...]]:
    # rows assembled from the element matrices: A couples t-1, B t, C t+1
    def blk(m, c, k):
        Me, Ce, Ke = smd_element_matrices(m, c, k, dt)
        S = -Me + Ce + Ke
        A = S[1, 0]
        B = S[1, 1] + S[0, 0]
        C = S[0, 1]
        B0 = S[0, 0]
        return tuple(np.array([[v]]) for v in (A, B, C, B0))

    return {"m": blk(1, 0, 0) + (np.array([[1.0]]),),
            "c": blk(0, 1, 0) + (np.zeros((1, 1)),),
            "k": blk(0, 0, 1) + (np.zeros((1, 1)),)}


def assemble_smd(m: float, c: float, k: float, f0: float, omega: float, T_end: float,
                 n_elem: int, u0: float = 0.0, v0: float = 0.0) -> SpaceTimeSystem:
    """Time-FE model of ``m u'' + c u' + k u = f0 sin(w t)`` with linear elements."""
    if n_elem < 2:
        raise ContractError("need at least two time elements")
    if m <= 0:
        raise ContractError(f"mass must be positive (m={m}); the C block would be singular")
    if T_end <= 0:
        raise ContractError("T_end must be positive")
    dt = T_end / n_elem
    F = _time_load(f0, omega, T_end, n_elem)[:, None]
    return SpaceTimeSystem("smd", 1, n_elem, dt, None, dict(m=m, c=c, k=k), _smd_basis(dt), F,
                           np.array([float(u0)]), np.array([float(v0)]),
                           dict(f0=f0, omega=omega))


def bar_spatial_matrices(n_nodes: int, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """Assembled 1-D linear stiffness ``sum int N'N'`` and consistent mass ``sum int NN``."""
    Kx = np.zeros((n_nodes, n_nodes))
    Mx = np.zeros((n_nodes, n_nodes))
    ke = np.array([[1.0, -1.0], [-1.0, 1.0]]) / dx
    me = dx * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    for e in range(n_nodes - 1):
        sl = slice(e, e + 2)
        Kx[sl, sl] += ke
        Mx[sl, sl] += me
    return Kx, Mx


def bar_element_matrices(E: float, A_cs: float, rho: float, dx: float, dt: float):
    """4x4 bilinear space-time element matrices, local order ``(x0,t0),(x1,t0),(x0,t1),(x1,t1)``.

    ``K = EA int N_x N_x``, ``M = rho A int N_t N_t``; the system matrix is ``K - M``.
    """
    kx = np.array([[1.0, -1.0], [-1.0, 1.0]]) / dx
    mx = dx * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    kt = np.array([[1.0, -1.0], [-1.0, 1.0]]) / dt
    mt = dt * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    K = E * A_cs * np.kron(mt, kx)
    M = rho * A_cs * np.kron(kt, mx)
    return K, M


def assemble_bar(E: float, A_cs: float, rho: float, n_nodes: int, n_time: int, dx: float,
                 dt: float, u0=None, v0=None, traction: float = 0.0, omega: float = 0.0,
                 body_force: float = 0.0, clamp_left: bool = True) -> SpaceTimeSystem:
    """Space-time model of the axial bar ``rho A u_tt = (E A u_x)_x + q``.

    Nodes are numbered through space within each time instant.  The right end
    carries ``traction * sin(omega t)`` (constant when ``omega == 0``); with
    ``clamp_left`` node 0 is fixed and eliminated.
    """
    if n_nodes < 2 or n_time < 3 or dx <= 0 or dt <= 0:
        raise ContractError("need N >= 2, T >= 3 and positive dx, dt")
    if E <= 0 or A_cs <= 0 or rho < 0:
        raise ContractError(f"need E > 0, A_cs > 0 and rho >= 0 (got E={E}, A={A_cs}, rho={rho})")
    Kx, Mx = bar_spatial_matrices(n_nodes, dx)
    qx = body_force * Mx.sum(axis=1)
    keep = np.arange(1, n_nodes) if clamp_left else np.arange(n_nodes)
    Kx, Mx, qx = Kx[np.ix_(keep, keep)], Mx[np.ix_(keep, keep)], qx[keep]
    N = keep.size
    # time coefficients of the assembled rows: stiffness uses int N_t N_t, mass int N_t' N_t'
    basis = {
        "E": (A_cs * dt / 6 * Kx, A_cs * 2 * dt / 3 * Kx, A_cs * dt / 6 * Kx,
              A_cs * dt / 3 * Kx, np.zeros((N, N))),
        "rho": (A_cs / dt * Mx, -2 * A_cs / dt * Mx, A_cs / dt * Mx,
                -A_cs / dt * Mx, A_cs * Mx),
    }
    T_end = n_time * dt
    if omega == 0.0:
        wt = np.full(n_time + 1, dt)
        wt[[0, -1]] = dt / 2
        tload = traction * wt
    else:
        tload = _time_load(traction, omega, T_end, n_time)
    wt_int = np.full(n_time + 1, dt)
    wt_int[[0, -1]] = dt / 2
    F = np.outer(wt_int, qx)
    F[:, -1] += tload
    u0 = np.zeros(N) if u0 is None else np.asarray(u0, dtype=float).reshape(-1)
    v0 = np.zeros(N) if v0 is None else np.asarray(v0, dtype=float).reshape(-1)
    if u0.size != N or v0.size != N:
        raise ContractError(f"initial conditions must have {N} entries")
    return SpaceTimeSystem("bar", N, n_time, dt, dx, dict(E=E, rho=rho), basis, F, u0, v0,
                           dict(traction=traction, omega=omega, body_force=body_force,
                                A_cs=A_cs, clamp_left=clamp_left))


def global_matrix(system: SpaceTimeSystem) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse global matrix and right-hand side in the block-row order above."""
    A, B, C, B0, V = system.blocks()
    N, T = system.n_space, system.n_time
    I = sp.identity(N, format="csr")
    rows = [[None] * (T + 1) for _ in range(T + 1)]
    rows[0][0] = I
    rows[1][0], rows[1][1] = sp.csr_matrix(B0), sp.csr_matrix(C)
    for t in range(1, T):
        rows[t + 1][t - 1] = sp.csr_matrix(A)
        rows[t + 1][t] = sp.csr_matrix(B)
        rows[t + 1][t + 1] = sp.csr_matrix(C)
    G = sp.bmat(rows, format="csr")
    rhs = np.concatenate([system.u0, system.force[0] + V @ system.v0, *system.force[1:T]])
    return G, rhs


def direct_solve(system: SpaceTimeSystem) -> TimeSeries:
    G, rhs = global_matrix(system)
    u = spla.spsolve(G.tocsc(), rhs)
    if not np.all(np.isfinite(u)):
        raise SingularBlockError("space-time system is singular")
    return TimeSeries(system.times, u.reshape(system.n_time + 1, system.n_space))


def _check_C(C, coeffs):
    if np.linalg.cond(C) > 1e14:
        raise SingularBlockError(f"C block is singular for coefficients {coeffs}")


def ar_step(system: SpaceTimeSystem, u_prev, u_curr, f_curr) -> np.ndarray:
    """``u^{t+1} = C^{-1} (f^t - A u^{t-1} - B u^t)``."""
    A, B, C, _, _ = system.blocks()
    _check_C(C, system.coeffs)
    rhs = np.asarray(f_curr, float) - A @ np.asarray(u_prev, float) - B @ np.asarray(u_curr, float)
    return np.linalg.solve(C, rhs)


def first_step(system: SpaceTimeSystem) -> np.ndarray:
    """``u^1`` from the initial-displacement and initial-velocity rows."""
    _, _, C, B0, V = system.blocks()
    _check_C(C, system.coeffs)
    return np.linalg.solve(C, system.force[0] + V @ system.v0 - B0 @ system.u0)


def rollout(system: SpaceTimeSystem, u0=None, u1=None) -> TimeSeries:
    """Iterate ``ar_step`` from ``(u^0, u^1)``; defaults bootstrap from the IC rows."""
    u = np.zeros((system.n_time + 1, system.n_space))
    u[0] = system.u0 if u0 is None else u0
    u[1] = first_step(system) if u1 is None else u1
    A, B, C, _, _ = system.blocks()
    _check_C(C, system.coeffs)
    Cinv = np.linalg.inv(C)
    for t in range(1, system.n_time):
        u[t + 1] = Cinv @ (system.force[t] - A @ u[t - 1] - B @ u[t])
    return TimeSeries(system.times, u)


# --------------------------------------------------------------------------- noise

def add_noise(series: TimeSeries, mean: float, variance: float, seed: int) -> TimeSeries:
    if variance < 0:
        raise ContractError("variance must be non-negative")
    rng = np.random.default_rng(seed)
    noise = rng.normal(mean, np.sqrt(variance), series.values.shape) if variance > 0 else mean
    return TimeSeries(series.times.copy(), series.values + noise, (float(mean), float(variance)))


# --------------------------------------------------------------------------- identification

def _l1_sign(r: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """Subgradient of ``|r|``; residuals at round-off level of the data count as zero."""
    sgn = np.sign(r)
    sgn[np.abs(r) <= ROUNDOFF * max(float(np.max(np.abs(obs))), 1e-300)] = 0.0
    return sgn


def teacher_forced_loss(system: SpaceTimeSystem, obs: np.ndarray, names, want_grad=True):
    """L1 one-step-ahead loss over interior rows and its gradient in ``names``."""
    A, B, C, _, _ = system.blocks()
    _check_C(C, system.coeffs)
    U0, U1, U2 = obs[:-2], obs[1:-1], obs[2:]
    F = system.force[1:-1]
    rhs = F - U0 @ A.T - U1 @ B.T
    pred = np.linalg.solve(C, rhs.T).T
    eps = U2 - pred
    loss = float(np.sum(np.abs(eps)))
    if not want_grad:
        return loss, None
    sgn = _l1_sign(eps, obs)
    grad = np.zeros(len(names))
    for i, n in enumerate(names):
        Ap, Bp, Cp = system.basis[n][:3]
        dpred = np.linalg.solve(C, (-(U0 @ Ap.T) - U1 @ Bp.T - pred @ Cp.T).T).T
        grad[i] = -np.sum(sgn * dpred)
    return loss, grad


def rollout_loss(system: SpaceTimeSystem, obs: np.ndarray, names, want_grad=True):
    """L1 output error of a free rollout from the known initial conditions.

    Gradients come from forward sensitivities of the block recursion.
    """
    A, B, C, B0, V = system.blocks()
    _check_C(C, system.coeffs)
    if system.n_space == 1:
        return _scalar_rollout_loss(system, obs, names, want_grad)
    Cinv = np.linalg.inv(C)
    T, N, P = system.n_time, system.n_space, len(names)
    u = np.zeros((T + 1, N))
    s = np.zeros((T + 1, P, N))
    u[0] = system.u0
    u[1] = Cinv @ (system.force[0] + V @ system.v0 - B0 @ system.u0)
    mats = [system.basis[n] for n in names]
    for i, (Ap, Bp, Cp, B0p, Vp) in enumerate(mats):
        s[1, i] = Cinv @ (Vp @ system.v0 - B0p @ system.u0 - Cp @ u[1])
    for t in range(1, T):
        u[t + 1] = Cinv @ (system.force[t] - A @ u[t - 1] - B @ u[t])
        if want_grad:
            for i, (Ap, Bp, Cp, _, _) in enumerate(mats):
                s[t + 1, i] = Cinv @ (-Ap @ u[t - 1] - A @ s[t - 1, i] - Bp @ u[t]
                                      - B @ s[t, i] - Cp @ u[t + 1])
    r = obs[1:] - u[1:]
    loss = float(np.sum(np.abs(r)))
    if not want_grad:
        return loss, None
    grad = -np.einsum("tn,tpn->p", _l1_sign(r, obs), s[1:])
    return loss, grad


def _scalar_rollout_loss(system, obs, names, want_grad):
    """Single-dof rollout: the block recursion is an IIR filter ``C y_j + B y_{j-1} + A y_{j-2} = x_j``."""
    from scipy.signal import lfilter, lfiltic

    A, B, C, B0, V = (float(M[0, 0]) for M in system.blocks())
    # lfiltic expects a normalised denominator
    a = [1.0, B / C, A / C]
    b = [1.0 / C]
    F = system.force[:, 0]
    u0, v0 = float(system.u0[0]), float(system.v0[0])
    u = np.empty(system.n_time + 1)
    u[0] = u0
    u[1] = (F[0] + V * v0 - B0 * u0) / C
    u[2:] = lfilter(b, a, F[1:-1], zi=lfiltic(b, a, [u[1], u[0]]))[0]
    r = obs[1:, 0] - u[1:]
    loss = float(np.sum(np.abs(r)))
    if not want_grad:
        return loss, None
    sgn = _l1_sign(r, obs)
    grad = np.zeros(len(names))
    for i, n in enumerate(names):
        Ap, Bp, Cp, B0p, Vp = (float(M[0, 0]) for M in system.basis[n])
        sens = np.empty(system.n_time + 1)
        sens[0] = 0.0
        sens[1] = (Vp * v0 - B0p * u0 - Cp * u[1]) / C
        x = -Ap * u[:-2] - Bp * u[1:-1] - Cp * u[2:]
        sens[2:] = lfilter(b, a, x, zi=lfiltic(b, a, [sens[1], sens[0]]))[0]
        grad[i] = -np.sum(sgn * sens[1:])
    return loss, grad


LOSSES = {"teacher": teacher_forced_loss, "rollout": rollout_loss}


@dataclass
class IdentificationRun:
    trainable: list[str]
    coeffs: dict[str, float]
    loss_kind: str
    mode: str
    history: History
    seed: int
    final_loss: float
    all_final_losses: dict[int, float] = field(default_factory=dict)

    def write_history(self, path) -> None:
        self.history.write_csv(path)


def _make_loss(template: SpaceTimeSystem, obs: np.ndarray, names, scale, mode):
    fn = LOSSES[mode]

    def loss_and_grad(params: ParamStore) -> float:
        phi = params["phi"]
        coeffs = dict(template.coeffs)
        coeffs.update({n: float(scale[i] * phi[i]) for i, n in enumerate(names)})
        loss, g = fn(template.with_coeffs(**coeffs), obs, names)
        params.set_grad("phi", g * scale)
        return loss

    return loss_and_grad


def identify(template: SpaceTimeSystem, observed: TimeSeries, trainable, epochs: int = 20000,
             lr: float = 1e-2, lr_final: float | None = 1e-4, init: dict | None = None,
             seeds=(0, 1, 2), jitter: float = 0.1, mode: str = "teacher",
             loss_tol: float = 0.0) -> IdentificationRun:
    """Fit the trainable coefficients to ``observed`` by Adam on an L1 loss.

    Coefficients are optimised in units of their initial guesses so that one
    learning rate suits coefficients of different magnitude.  Seed ``s > 0``
    multiplies the initial guesses by ``1 + jitter * U(-1, 1)``; the run with the
    smallest final loss is returned.  A run stops once its loss is at or below
    ``loss_tol``.
    """
    names = list(trainable)
    for n in names:
        if n not in template.basis:
            raise ContractError(f"unknown coefficient {n!r}; choose from {list(template.basis)}")
    if mode not in LOSSES:
        raise ContractError(f"mode must be one of {sorted(LOSSES)}")
    obs = observed.values
    if obs.shape[0] < 3 or obs.shape != (template.n_time + 1, template.n_space):
        raise ContractError(f"observed data must have shape {(template.n_time + 1, template.n_space)}")
    init = dict(template.coeffs if init is None else {**template.coeffs, **init})
    best: IdentificationRun | None = None
    finals = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        jit = np.ones(len(names)) if seed == 0 else 1 + jitter * rng.uniform(-1, 1, len(names))
        scale = np.array([init[n] for n in names], dtype=float) * jit
        if np.any(scale == 0):
            raise ContractError("initial guesses of trainable coefficients must be non-zero")
        params = ParamStore(seed)
        params.add("phi", np.ones(len(names)))
        loss_and_grad = _make_loss(template.with_coeffs(**init), obs, names, scale, mode)
        state = AdamState(lr=lr)
        hist = History(list(names))
        lr0 = lr
        for epoch in range(epochs):
            if lr_final is not None and epochs > 1:
                state.lr = lr0 * (lr_final / lr0) ** (epoch / (epochs - 1))
            last = scale * params["phi"]
            loss = loss_and_grad(params)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}",
                                      dict(zip(names, map(float, last))))
            hist.losses.append(loss)
            hist.values.append(scale * params["phi"])
            if loss <= loss_tol:
                hist.stopped_early = True
                break
            adam_step(params, state)
        coeffs = dict(init)
        coeffs.update({n: float(v) for n, v in zip(names, scale * params["phi"])})
        final = LOSSES[mode](template.with_coeffs(**coeffs), obs, names, want_grad=False)[0]
        finals[seed] = final
        log.info("identify seed=%d mode=%s final loss %.6g coeffs %s", seed, mode, final, coeffs)
        run = IdentificationRun(names, coeffs, "L1", mode, hist, seed, final)
        if best is None or final < best.final_loss:
            best = run
    best.all_final_losses = finals
    return best


def predict_new_conditions(template: SpaceTimeSystem, coeffs: dict[str, float], ic, forcing: dict,
                           T_end: float, n_elem: int) -> TimeSeries:
    """Direct space-time solve of the SMD model under new initial and load conditions."""
    if template.kind != "smd":
        raise ContractError("predict_new_conditions is defined for the spring-mass-damper model")
    u0, v0 = ic
    sysm = assemble_smd(coeffs["m"], coeffs["c"], coeffs["k"], forcing.get("f0", 0.0),
                        forcing.get("omega", 0.0), T_end, n_elem, u0, v0)
    return direct_solve(sysm)


def fit_damping_ratio(series: TimeSeries) -> tuple[float, float]:
    """Least-squares fit of a free underdamped response; returns ``(zeta, omega_n)``."""
    from scipy.optimize import curve_fit

    t = series.times
    y = series.values[:, 0]

    def model(t, zeta, wn, a, b):
        wd = wn * np.sqrt(max(1 - zeta * zeta, 1e-12))
        return np.exp(-zeta * wn * t) * (a * np.cos(wd * t) + b * np.sin(wd * t))

    p0 = (0.3, 2 * np.pi / max(t[-1] / 2, 1e-12), y[0], 0.0)
    popt, _ = curve_fit(model, t, y, p0=p0, bounds=([0, 0, -np.inf, -np.inf], [0.999, np.inf, np.inf, np.inf]),
                        maxfev=20000)
    return float(popt[0]), float(popt[1])


def relative_errors(found: dict[str, float], truth: dict[str, float]) -> dict[str, float]:
    return {n: abs(found[n] - truth[n]) / abs(truth[n]) for n in truth if n in found}


def history_rows(run: IdentificationRun):
    for i, (loss, vals) in enumerate(zip(run.history.losses, run.history.values)):
        yield [i, fmt(loss), *(fmt(v) for v in vals)]
