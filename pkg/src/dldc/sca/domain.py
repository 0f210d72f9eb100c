"""1-D heterogeneous bar: strain concentration and a spectral Lippmann-Schwinger solver."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..optim import ContractError

log = logging.getLogger(__name__)


def default_stiffness(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + x * x)


@dataclass(frozen=True)
class MicroDomain:
    """Periodic cell-centred grid ``x_i = (i + 1/2) L / n`` with pointwise stiffness."""

    length: float = 10.0
    n_points: int = 1000
    stiffness: np.ndarray | None = None

    def __post_init__(self):
        if self.n_points < 1 or self.length <= 0:
            raise ContractError("need n_points >= 1 and positive length")
        if self.stiffness is None:
            object.__setattr__(self, "stiffness", default_stiffness(self.coords))
        st = np.asarray(self.stiffness, dtype=float)
        if st.shape != (self.n_points,):
            raise ContractError("stiffness must have one value per grid point")
        if np.any(st <= 0):
            raise ContractError("stiffness must be strictly positive")
        object.__setattr__(self, "stiffness", st)

    @property
    def coords(self) -> np.ndarray:
        return (np.arange(self.n_points) + 0.5) * self.length / self.n_points

    @property
    def reference_stiffness(self) -> float:
        """Volume average of the stiffness."""
        return float(np.mean(self.stiffness))


def green_apply(field: np.ndarray, C0: float) -> np.ndarray:
    """Periodic 1-D Green operator: ``1/C0`` on non-zero frequencies, 0 on the mean.

    Works along the last axis.
    """
    hat = np.fft.rfft(field, axis=-1)
    hat[..., 0] = 0.0
    return np.fft.irfft(hat / C0, n=field.shape[-1], axis=-1)


def lippmann_schwinger_fft(domain: MicroDomain, eps_bar: float, tol: float = 1e-12,
                           max_iter: int = 10000) -> np.ndarray:
    """Basic fixed-point scheme ``eps <- eps_bar - Gamma0 (C - C0) eps``.

    ``C0 = (min C + max C) / 2`` makes the iteration contractive for any contrast.
    """
    C = domain.stiffness
    C0 = 0.5 * (C.min() + C.max())
    eps = np.full(domain.n_points, float(eps_bar))
    for it in range(max_iter):
        new = eps_bar - green_apply((C - C0) * eps, C0)
        if np.max(np.abs(new - eps)) <= tol * max(abs(eps_bar), 1e-300):
            return new
        eps = new
    log.warning("Lippmann-Schwinger iteration stopped after %d iterations", max_iter)
    return eps


def elastic_precompute(domain: MicroDomain, method: str = "closed") -> np.ndarray:
    """Strain concentration ``A(x) = eps(x) / eps_bar`` under a unit applied strain.

    In 1-D the stress is uniform, so ``A = (1/C) / <1/C>``; ``method="fft"``
    obtains the same field from the Lippmann-Schwinger iteration.
    """
    if method == "closed":
        inv = 1.0 / domain.stiffness
        return inv / np.mean(inv)
    if method == "fft":
        return lippmann_schwinger_fft(domain, 1.0)
    raise ContractError(f"unknown method {method!r}")


def analytic_strain(domain: MicroDomain, eps_bar: float) -> np.ndarray:
    """Pointwise exact strain ``eps_bar / (<1/C> C(x))``."""
    return eps_bar * elastic_precompute(domain)
