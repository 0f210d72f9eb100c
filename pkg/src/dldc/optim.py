"""Parameter storage, Adam, losses and finite-difference gradient checks.

Every learnable network in the package keeps its trainable arrays in a
:class:`ParamStore` and fills the gradient slots itself; there is no tape.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called with arguments violating its contract."""


class GradcheckError(RuntimeError):
    """Raised when the loss is not finite at a perturbed parameter value."""


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray | None = None
    trainable: bool = True

    @property
    def size(self) -> int:
        return self.value.size


class ParamStore:
    """Ordered, named collection of real vectors with gradient slots.

    Values are stored flat (1-D float64).  ``store["w"]`` returns the live array,
    so in-place updates are visible to the owner network.
    """

    def __init__(self, seed: int = 0):
        self.rng_seed = int(seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value=None, *, size: int | None = None,
            trainable: bool = True, low: float = -0.5, high: float = 0.5) -> np.ndarray:
        """Register a new entry.

        Without ``value`` the entry is drawn uniformly from ``[low, high)`` using
        the store's seeded generator, so creation order matters for determinism.
        """
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        if value is None:
            if size is None:
                raise ContractError("either value or size is required")
            value = self.rng.uniform(low, high, size)
        arr = np.array(value, dtype=float).reshape(-1).copy()
        self._entries[name] = Param(name, arr, None, bool(trainable))
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def __setitem__(self, name: str, value) -> None:
        p = self._entries[name]
        arr = np.asarray(value, dtype=float).reshape(-1)
        if arr.size != p.value.size:
            raise ContractError(f"{name}: expected {p.value.size} values, got {arr.size}")
        p.value[:] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[Param]:
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, name: str) -> Param:
        return self._entries[name]

    def names(self, trainable_only: bool = False) -> list[str]:
        return [p.name for p in self._entries.values() if p.trainable or not trainable_only]

    def set_trainable(self, name: str, flag: bool) -> None:
        self._entries[name].trainable = bool(flag)

    def grad(self, name: str) -> np.ndarray | None:
        return self._entries[name].grad

    def set_grad(self, name: str, g) -> None:
        p = self._entries[name]
        g = np.asarray(g, dtype=float).reshape(-1)
        if g.size != p.value.size:
            raise ContractError(f"{name}: gradient has {g.size} entries, value has {p.value.size}")
        p.grad = g.copy()

    def zero_grad(self) -> None:
        for p in self._entries.values():
            p.grad = np.zeros_like(p.value)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self._entries.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, v in snap.items():
            self[n] = v

    def scalar_labels(self, trainable_only: bool = False) -> list[str]:
        """Column labels for every scalar, e.g. ``w[0]``; size-1 entries keep their name."""
        out = []
        for p in self._entries.values():
            if trainable_only and not p.trainable:
                continue
            if p.size == 1:
                out.append(p.name)
            else:
                out.extend(f"{p.name}[{i}]" for i in range(p.size))
        return out

    def scalar_values(self, trainable_only: bool = False) -> np.ndarray:
        vals = [p.value for p in self._entries.values() if p.trainable or not trainable_only]
        return np.concatenate(vals) if vals else np.zeros(0)


@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    target = np.asarray(target, dtype=float).reshape(-1)
    if pred.size != target.size:
        raise ContractError(f"length mismatch: {pred.size} vs {target.size}")
    if pred.size == 0:
        raise ContractError("mse_loss needs at least one element")
    d = pred - target
    return float(np.mean(d * d))


def l1_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    target = np.asarray(target, dtype=float).reshape(-1)
    if pred.size != target.size:
        raise ContractError(f"length mismatch: {pred.size} vs {target.size}")
    return float(np.sum(np.abs(pred - target)))


def adam_step(params: ParamStore, state: AdamState) -> ParamStore:
    """One bias-corrected Adam update of every trainable entry.

    An entry whose gradient is identically zero keeps its value bit-for-bit;
    only its moments decay.
    """
    for p in params:
        if p.trainable and p.grad is None:
            raise ContractError(f"gradient of {p.name!r} is not initialised")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        if not p.trainable:
            continue
        g = p.grad
        m = state.first_moment.get(p.name)
        v = state.second_moment.get(p.name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[p.name] = m
        state.second_moment[p.name] = v
        if not np.any(g):
            continue
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def finite_diff_gradcheck(loss_fn: Callable[[ParamStore], float], params: ParamStore,
                          h: float = 1e-6) -> float:
    """Compare stored analytic gradients with central differences.

    ``params`` must already hold the analytic gradient at the current point;
    ``loss_fn`` is only evaluated, never asked for gradients.  The error per
    scalar is ``|g_a - g_fd| / |g_fd|``, or the absolute deviation when
    ``|g_a| < 1e-8``.  Returns the maximum over trainable scalars.
    """
    if h <= 0:
        raise ContractError("step h must be positive")
    stored = {}
    for p in params:
        if p.trainable and p.grad is None:
            raise ContractError(f"gradient of {p.name!r} is not initialised")
        stored[p.name] = None if p.grad is None else p.grad.copy()
    worst = 0.0
    for p in params:
        if not p.trainable:
            continue
        analytic = stored[p.name]
        for i in range(p.size):
            orig = p.value[i]
            p.value[i] = orig + h
            lp = loss_fn(params)
            p.value[i] = orig - h
            lm = loss_fn(params)
            p.value[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                label = p.name if p.size == 1 else f"{p.name}[{i}]"
                raise GradcheckError(f"non-finite loss while perturbing {label}")
            fd = (lp - lm) / (2.0 * h)
            ga = analytic[i]
            if abs(ga) < 1e-8:
                err = abs(ga - fd)
            else:
                err = abs(ga - fd) / max(abs(fd), 1e-300)
            worst = max(worst, err)
    for p in params:
        p.grad = stored[p.name]
    return worst


@dataclass
class History:
    """Per-epoch loss and trainable-scalar trajectory of one optimisation run."""

    labels: list[str]
    losses: list[float] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", *self.labels])
            for i, (loss, vals) in enumerate(zip(self.losses, self.values)):
                w.writerow([i, fmt(loss), *(fmt(v) for v in vals)])


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def train(params: ParamStore, loss_and_grad: Callable[[ParamStore], float], epochs: int,
          state: AdamState | None = None, *, lr_final: float | None = None,
          patience: int = 100, min_delta: float = 1e-12, loss_tol: float = 0.0,
          warmup: int = 0, project: Callable[[ParamStore], None] | None = None,
          record_values: bool = True) -> History:
    """Full-batch Adam loop.

    ``loss_and_grad`` returns the loss and fills ``params`` gradients.  With
    ``lr_final`` the learning rate decays geometrically from ``state.lr`` to it
    over the epoch budget.  ``warmup`` ramps the rate up linearly over the
    first epochs, which keeps the first Adam steps from overshooting.  Training stops early once the best loss improved by
    less than ``min_delta`` (relative to its value ``patience`` epochs ago)
    over the last ``patience`` epochs; ``patience=0`` disables the rule.  It also
    stops once the loss is at or below ``loss_tol`` (converged).  ``project`` is
    applied after every step (e.g. clamping).
    """
    state = state or AdamState()
    lr0 = state.lr
    hist = History(params.scalar_labels(trainable_only=True))
    best = []
    for epoch in range(epochs):
        if lr_final is not None and epochs > 1:
            state.lr = lr0 * (lr_final / lr0) ** (epoch / (epochs - 1))
        else:
            state.lr = lr0
        if epoch < warmup:
            state.lr *= (epoch + 1) / warmup
        loss = float(loss_and_grad(params))
        if not math.isfinite(loss):
            raise FloatingPointError(f"loss became {loss} at epoch {epoch}")
        hist.losses.append(loss)
        if record_values:
            hist.values.append(params.scalar_values(trainable_only=True).copy())
        best.append(min(loss, best[-1]) if best else loss)
        if loss <= loss_tol:
            hist.stopped_early = True
            break
        if patience and epoch >= patience:
            old = best[-1 - patience]
            if old - best[-1] <= min_delta * abs(old):
                hist.stopped_early = True
                break
        adam_step(params, state)
        if project is not None:
            project(params)
    state.lr = lr0
    return hist
