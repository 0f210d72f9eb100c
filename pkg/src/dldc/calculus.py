"""Finite-difference stencils, Euler stepping and Gauss quadrature as tiny linear nets.

Each network is a constrained linear map whose only free parameters are the
classical coefficients (stencil weights, Euler weights, quadrature nodes and
weights).  Training them on exact data recovers the textbook values.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .optim import AdamState, ContractError, History, ParamStore, train

log = logging.getLogger(__name__)

GRAM_COND_LIMIT = 1e10


class UnsupportedInputError(ContractError):
    pass


class SingularStencilError(ValueError):
    pass


class UnderdeterminedError(ValueError):
    """Training polynomials of too low degree cannot pin down a unique rule."""


class DegenerateDataWarning(UserWarning):
    pass


def uniform_spacing(xs, rtol: float = 1e-12) -> float | None:
    xs = np.asarray(xs, dtype=float)
    d = np.diff(xs)
    h = (xs[-1] - xs[0]) / (len(xs) - 1)
    if np.max(np.abs(d - h)) < rtol * abs(h) + 1e-15 * max(1.0, np.max(np.abs(xs))):
        return float(h)
    return None


@dataclass
class SampledFunction:
    xs: np.ndarray
    ys: np.ndarray
    spacing: float | None = None

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.xs.shape != self.ys.shape or self.xs.ndim != 1 or self.xs.size < 2:
            raise ContractError("xs and ys must be 1-D of equal length >= 2")
        if np.any(np.diff(self.xs) <= 0):
            raise ContractError("xs must be strictly increasing")
        if self.spacing is not None:
            d = np.diff(self.xs)
            if np.max(np.abs(d - self.spacing)) >= 1e-12 * self.spacing:
                raise ContractError("sample spacing deviates from the declared uniform spacing")

    @classmethod
    def sample(cls, f: Callable, xs) -> "SampledFunction":
        xs = np.asarray(xs, dtype=float)
        return cls(xs, f(xs), uniform_spacing(xs))


def _gram_condition(X: np.ndarray) -> float:
    G = X.T @ X
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] <= 0:
        return np.inf
    return float(s[0] / s[-1])


# --------------------------------------------------------------------------- stencils

class StencilNet:
    """Differential-quadrature layer: ``df/dx(x_i) ~ sum_j w_j f(x_{i+offset_j})``."""

    def __init__(self, offsets: Sequence[int], spacing: float, seed: int = 0):
        self.offsets = np.asarray(offsets, dtype=int)
        if self.offsets.ndim != 1 or self.offsets.size < 1:
            raise ContractError("offsets must be a non-empty 1-D integer sequence")
        if spacing <= 0:
            raise ContractError("spacing must be positive")
        self.spacing = float(spacing)
        self.params = ParamStore(seed)
        # weights live on the 1/dx scale of a first derivative
        self.params.add("w", self.params.rng.uniform(-0.5, 0.5, self.n_points) / self.spacing)
        self.history: History | None = None
        self.degenerate = False

    @property
    def n_points(self) -> int:
        return self.offsets.size

    @property
    def weights(self) -> np.ndarray:
        return self.params["w"]

    def valid_indices(self, n: int) -> np.ndarray:
        lo = -self.offsets.min()
        hi = n - self.offsets.max()
        if hi <= lo:
            raise IndexError(f"stencil offsets {self.offsets.tolist()} do not fit in {n} samples")
        return np.arange(max(lo, 0), min(hi, n))

    def features(self, f: SampledFunction) -> tuple[np.ndarray, np.ndarray]:
        if f.spacing is None:
            raise UnsupportedInputError("learned stencils need uniformly spaced samples")
        if abs(f.spacing - self.spacing) > 1e-12 * self.spacing:
            raise ContractError(f"sample spacing {f.spacing} differs from stencil spacing {self.spacing}")
        idx = self.valid_indices(f.xs.size)
        X = f.ys[idx[:, None] + self.offsets[None, :]]
        return idx, X


def apply_stencil(net: StencilNet, f: SampledFunction) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(indices, derivative)`` at every index where the stencil fits.

    Indices whose stencil would leave the sample are simply absent from
    ``indices``.
    """
    idx, X = net.features(f)
    return idx, X @ net.weights


def _stencil_design(net: StencilNet, dataset) -> tuple[np.ndarray, np.ndarray]:
    Xs, ys = [], []
    for f, deriv in dataset:
        idx, X = net.features(f)
        deriv = np.asarray(deriv, dtype=float)
        if deriv.size == f.xs.size:
            deriv = deriv[idx]
        elif deriv.size != idx.size:
            raise ContractError(
                f"derivative vector has {deriv.size} entries; expected {f.xs.size} or {idx.size}")
        Xs.append(X)
        ys.append(deriv)
    if not Xs:
        raise ContractError("empty dataset")
    return np.vstack(Xs), np.concatenate(ys)


def train_stencil(net: StencilNet, dataset, epochs: int = 20000, lr: float | None = None,
                  lr_final: float | None = None, patience: int = 100, warmup: int = 0,
                  loss_tol: float = 0.0, beta1: float = 0.9) -> StencilNet:
    """Fit the stencil weights by Adam on the mean squared derivative error.

    ``dataset`` is a list of ``(SampledFunction, exact_derivative)`` pairs.  The
    derivative may be given at every sample or only at the valid indices.
    ``lr`` defaults to ``0.5 / spacing`` since the weights scale like ``1/dx``.
    ``warmup``, ``loss_tol`` and ``beta1`` are passed on to the Adam loop.
    """
    X, y = _stencil_design(net, dataset)
    cond = _gram_condition(X)
    if cond > GRAM_COND_LIMIT:
        net.degenerate = True
        warnings.warn(f"stencil data Gram matrix condition number {cond:.3g} exceeds "
                      f"{GRAM_COND_LIMIT:g}; weights are not uniquely determined",
                      DegenerateDataWarning, stacklevel=2)
    n = y.size

    def loss_and_grad(params: ParamStore) -> float:
        r = X @ params["w"] - y
        params.set_grad("w", (2.0 / n) * (X.T @ r))
        return float(r @ r / n)

    lr = 0.5 / net.spacing if lr is None else lr
    lr_final = 1e-4 * lr if lr_final is None else lr_final
    net.history = train(net.params, loss_and_grad, epochs, AdamState(lr=lr, beta1=beta1),
                        lr_final=lr_final, patience=patience, warmup=warmup,
                        loss_tol=loss_tol)
    return net


def classical_stencil_oracle(offsets: Sequence[int], spacing: float) -> np.ndarray:
    """First-derivative weights exact for polynomials of degree ``n - 1``.

    Solves ``sum_j w_j (o_j dx)^m = delta_{m,1}`` for ``m = 0 .. n-1``.
    """
    o = np.asarray(offsets, dtype=float)
    if o.size < 2:
        raise ContractError("need at least two offsets")
    if np.unique(o).size != o.size:
        raise SingularStencilError(f"duplicate offsets {list(offsets)}")
    pos = o * spacing
    V = np.vander(pos, o.size, increasing=True).T  # row m holds pos**m
    rhs = np.zeros(o.size)
    rhs[1] = 1.0
    return np.linalg.solve(V, rhs)


# --------------------------------------------------------------------------- Euler

class EulerNet:
    """Generalised-alpha Euler update as a bias-free linear layer.

    Inputs are ``(y^n, f^n)`` for ``alpha = 0``, ``(y^n, f^{n+1})`` for
    ``alpha = 1`` and ``(y^n, f^n, f^{n+1})`` in between.
    """

    def __init__(self, dt: float, alpha: float = 0.0, seed: int = 0):
        if dt <= 0:
            raise ContractError("dt must be positive")
        if not 0.0 <= alpha <= 1.0:
            raise ContractError("alpha must lie in [0, 1]")
        self.dt = float(dt)
        self.alpha = float(alpha)
        n_in = 2 if alpha in (0.0, 1.0) else 3
        self.params = ParamStore(seed)
        self.params.add("w", size=n_in)
        self.history: History | None = None
        self.degenerate = False

    @property
    def weights(self) -> np.ndarray:
        return self.params["w"]

    def classical_weights(self) -> np.ndarray:
        a, dt = self.alpha, self.dt
        if a == 0.0:
            return np.array([1.0, dt])
        if a == 1.0:
            return np.array([1.0, dt])
        return np.array([1.0, (1 - a) * dt, a * dt])

    def design(self, trajectories) -> tuple[np.ndarray, np.ndarray]:
        T = np.atleast_2d(np.asarray(trajectories, dtype=float))
        if T.size == 0:
            raise ContractError("empty trajectory dataset")
        if self.alpha == 0.0:
            X = T[:, [0, 1]]
        else:
            if T.shape[1] < 4:
                raise ContractError("implicit/blended nets need (y^n, f^n, y^{n+1}, f^{n+1}) rows")
            X = T[:, [0, 3]] if self.alpha == 1.0 else T[:, [0, 1, 3]]
        return X, T[:, 2]


def euler_dataset(f: Callable[[float, float], float], y0: float, t_span, dt: float,
                  alpha: float = 0.0) -> np.ndarray:
    """Rows ``(y^n, f^n, y^{n+1}, f^{n+1})`` from the classical generalised-alpha scheme.

    ``f`` is called as ``f(y, t)``.  Implicit steps are solved with a secant
    iteration.
    """
    from scipy.optimize import newton

    t0, t1 = t_span
    n = int(round((t1 - t0) / dt))
    rows = []
    y = float(y0)
    for i in range(n):
        t = t0 + i * dt
        fn = f(y, t)
        if alpha == 0.0:
            y_next = y + dt * fn
        else:
            tn = t + dt

            def g(z, y=y, fn=fn, tn=tn):
                return z - y - dt * ((1 - alpha) * fn + alpha * f(z, tn))

            y_next = float(newton(g, y + dt * fn, tol=1e-14, maxiter=100))
        rows.append((y, fn, y_next, f(y_next, t + dt)))
        y = y_next
    return np.array(rows)


def classical_euler(f, y0: float, t_span, dt: float, alpha: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    rows = euler_dataset(f, y0, t_span, dt, alpha)
    t = t_span[0] + dt * np.arange(rows.shape[0] + 1)
    return t, np.concatenate([[y0], rows[:, 2]])


def train_euler(net: EulerNet, trajectories, epochs: int = 20000, lr: float = 0.05,
                lr_final: float | None = 1e-7, patience: int = 100) -> EulerNet:
    X, y = net.design(trajectories)
    cond = _gram_condition(X)
    if cond > GRAM_COND_LIMIT:
        net.degenerate = True
        warnings.warn(f"Euler data Gram condition number {cond:.3g}; forcing weights are "
                      "not identifiable from this dataset", DegenerateDataWarning, stacklevel=2)
    n = y.size

    def loss_and_grad(params: ParamStore) -> float:
        r = X @ params["w"] - y
        params.set_grad("w", (2.0 / n) * (X.T @ r))
        return float(r @ r / n)

    net.history = train(net.params, loss_and_grad, epochs, AdamState(lr=lr),
                        lr_final=lr_final, patience=patience)
    return net


def integrate(net: EulerNet, f: Callable[[float, float], float], y0: float, t_span,
              dt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """March ``y^{n+1} = w_y y^n + w_f f(y^n, t^n)`` with the learned weights."""
    if net.alpha != 0.0:
        raise ContractError("integrate() only drives explicit (alpha = 0) nets")
    dt = net.dt if dt is None else dt
    if dt <= 0:
        raise ContractError("dt must be positive")
    if abs(dt - net.dt) > 1e-12 * net.dt:
        raise ContractError(f"net was trained for dt={net.dt}, got dt={dt}")
    t0, t1 = t_span
    n = int(round((t1 - t0) / dt))
    wy, wf = net.weights
    t = t0 + dt * np.arange(n + 1)
    y = np.empty(n + 1)
    y[0] = y0
    for i in range(n):
        y[i + 1] = wy * y[i] + wf * f(y[i], t[i])
    return t, y


# --------------------------------------------------------------------------- Gauss quadrature

def poly_moments(degree: int) -> np.ndarray:
    """``int_{-1}^{1} x^m dx`` for ``m = 0..degree``."""
    m = np.arange(degree + 1)
    return np.where(m % 2 == 0, 2.0 / (m + 1), 0.0)


class QuadratureNet:
    """Learnable n-point rule ``F(a) = sum_i c_i sum_m a_m x_i^m`` on ``[-1, 1]``."""

    NODE_BOUND = 1.0 - 1e-12

    def __init__(self, n_points: int, poly_degree: int | None = None, seed: int = 0):
        if n_points < 1:
            raise ContractError("need at least one quadrature point")
        self.n_points = int(n_points)
        self.poly_degree = 2 * n_points - 1 if poly_degree is None else int(poly_degree)
        self.params = ParamStore(seed)
        # sorted nodes avoid starting on the permutation-symmetric ridge x_i == x_j
        self.params.add("nodes", np.sort(self.params.rng.uniform(-0.5, 0.5, n_points)))
        self.params.add("weights", np.full(n_points, 2.0 / n_points))
        self.history: History | None = None

    @property
    def nodes(self) -> np.ndarray:
        return self.params["nodes"]

    @property
    def weights(self) -> np.ndarray:
        return self.params["weights"]

    def sorted_rule(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.nodes, kind="stable")
        return self.nodes[order].copy(), self.weights[order].copy()

    def forward(self, coeffs: np.ndarray) -> np.ndarray:
        """Rule applied to the polynomials with coefficient rows ``coeffs``."""
        coeffs = np.atleast_2d(coeffs)
        m = np.arange(coeffs.shape[1])
        V = self.nodes[:, None] ** m[None, :]
        return (coeffs @ V.T) @ self.weights

    def loss_and_grad(self, coeffs: np.ndarray, target: np.ndarray) -> float:
        x, c = self.nodes, self.weights
        m = np.arange(coeffs.shape[1])
        V = x[:, None] ** m[None, :]
        dV = np.zeros_like(V)
        dV[:, 1:] = m[1:] * x[:, None] ** (m[1:] - 1)
        G = coeffs @ V.T          # g(x_i; a) per sample
        dG = coeffs @ dV.T        # g'(x_i; a)
        r = G @ c - target
        n = target.size
        self.params.set_grad("weights", (2.0 / n) * (G.T @ r))
        self.params.set_grad("nodes", (2.0 / n) * c * (dG.T @ r))
        return float(r @ r / n)

    def clamp(self, params: ParamStore | None = None) -> None:
        np.clip(self.params["nodes"], -self.NODE_BOUND, self.NODE_BOUND, out=self.params["nodes"])


def quadrature_training_set(n_samples: int, degree: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, (n_samples, degree + 1))
    return a, a @ poly_moments(degree)


def train_quadrature(net: QuadratureNet, n_samples: int = 200, epochs: int = 20000,
                     lr: float = 1e-2, seed: int = 0, lr_final: float | None = 1e-5,
                     patience: int = 100, loss_tol: float = 0.0) -> QuadratureNet:
    if net.poly_degree < 2 * net.n_points - 1:
        raise UnderdeterminedError(
            f"degree-{net.poly_degree} training polynomials do not determine a unique "
            f"{net.n_points}-point rule (need degree >= {2 * net.n_points - 1})")
    coeffs, target = quadrature_training_set(n_samples, net.poly_degree, seed)
    net.history = train(net.params, lambda p: net.loss_and_grad(coeffs, target), epochs,
                        AdamState(lr=lr), lr_final=lr_final, patience=patience,
                        loss_tol=loss_tol, project=net.clamp)
    return net


def gauss_oracle(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights by Newton iteration on ``P_n``."""
    if not 1 <= n <= 8:
        raise ContractError("gauss_oracle supports 1 <= n <= 8")
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(100):
        p0 = np.ones_like(x)
        p1 = x.copy()
        for j in range(2, n + 1):
            p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
        if n == 1:
            p0 = np.ones_like(x)
        dp = n * (x * p1 - p0) / (x * x - 1.0)
        dx = p1 / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    # one more evaluation for the derivative at the converged roots
    p0 = np.ones_like(x)
    p1 = x.copy()
    for j in range(2, n + 1):
        p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
    if n == 1:
        p0 = np.ones_like(x)
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    return x[order], w[order]


def integrate_interval(net: QuadratureNet, g: Callable, a: float, b: float) -> float:
    if not b > a:
        raise ContractError("need b > a")
    xm = 0.5 * (b - a) * net.nodes + 0.5 * (a + b)
    return float(0.5 * (b - a) * np.sum(net.weights * g(xm)))


def polynomial_stencil_dataset(spacing: float, degree: int, n_functions: int = 20,
                               half_width: int = 3, seed: int = 0):
    """Short windows of random polynomials in the scaled variable ``(x - x_c) / dx``.

    Working in the scaled variable keeps the data well conditioned for any
    spacing; ``degree = n - 1`` makes the classical n-point stencil the exact
    least-squares solution.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_functions):
        a = rng.uniform(-1.0, 1.0, degree + 1)
        xc = rng.uniform(0.0, 1.0)
        xs = xc + spacing * np.arange(-half_width, half_width + 1)
        xi = (xs - xc) / spacing
        f = SampledFunction(xs, np.polyval(a, xi), spacing)
        out.append((f, np.polyval(np.polyder(a), xi) / spacing))
    return out
