"""Rough Heston variance, equity prices and VA fund values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .frackernel import KernelSpec, SumOfExponentials, fractional_kernel
from .grid import TimeGrid
from .noise import NoiseBlock

__all__ = [
    "MarketParams",
    "simulate_variance_direct",
    "simulate_variance_fast",
    "simulate_equity",
    "fund_values",
]


def _rowdot(A, v):
    # einsum keeps each row's reduction independent of the row count (BLAS
    # blocking does not), so a path's value never depends on M
    return np.einsum("ij,j->i", A, v)


@dataclass(frozen=True)
class MarketParams:
    """Rough Heston inputs; ``V0`` and ``theta`` are variances.

    The published baseline lists 0.2720 for the initial level; it is read as
    a volatility, so the default variance is ``0.2720**2`` (close to
    ``theta``).  Pass ``V0=0.2720`` explicitly for the literal reading.
    """

    S0: float = 100.0
    V0: float = 0.2720**2
    gamma: float = 0.1206
    theta: float = 0.0721
    nu: float = 0.2897
    rho: float = -0.7445
    hurst: float = 0.0286
    r: float = 0.04

    def __post_init__(self):
        if self.S0 <= 0:
            raise InputError("S0 must be positive")
        if self.V0 < 0 or self.theta < 0 or self.nu < 0:
            raise InputError("V0, theta and nu must be non-negative")
        if abs(self.rho) > 1:
            raise InputError("|rho| must not exceed 1")
        if not 0.0 < self.hurst < 0.5:
            raise InputError(f"H_S must lie in (0, 1/2), got {self.hurst}")

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(self.hurst)


def _increments(params, v, dz, h):
    vp = np.maximum(v, 0.0)
    drift = params.gamma * (params.theta - vp) * h
    diffusion = params.nu * np.sqrt(vp) * dz
    return drift, diffusion


def simulate_variance_direct(params: MarketParams, grid: TimeGrid, noise: NoiseBlock, hurst=None) -> np.ndarray:
    """O(N^2) left-point Euler scheme with full truncation.

    ``V_n = V0 + sum_{k<n} K(t_n - t_k) [gamma (theta - V+_k) h + nu sqrt(V+_k) dZ_k]``.
    ``hurst`` overrides ``params.hurst`` (any value in (0, 1); used for the
    Markovian limit checks).
    """
    spec = KernelSpec(params.hurst if hurst is None else hurst)
    M, N, h = noise.n_paths, grid.N, grid.h
    kv = fractional_kernel(np.arange(1, N + 1) * h, spec)
    V = np.empty((M, N + 1))
    V[:, 0] = params.V0
    inc = np.empty((M, N))
    for n in range(1, N + 1):
        drift, diffusion = _increments(params, V[:, n - 1], noise.dZ[:, n - 1], h)
        inc[:, n - 1] = drift + diffusion
        # lags t_n - t_k for k = 0..n-1 are n*h .. h
        V[:, n] = params.V0 + _rowdot(inc[:, :n], kv[n - 1 :: -1])
    return V


def simulate_variance_fast(
    params: MarketParams, soe: SumOfExponentials, grid: TimeGrid, noise: NoiseBlock
) -> np.ndarray:
    """Sum-of-exponentials recursion, O(N * N_exp) per path.

    The most recent cell uses the exact kernel value ``K(h)``; all older cells
    are carried by the history states ``H_l`` (drift) and ``J_l`` (diffusion),
    each decaying by ``exp(-x_l h)`` per step.  Both schemes discretize the same
    left-point sum, so they differ only through the SOE error.
    """
    if abs(soe.hurst - params.hurst) > 1e-15:
        raise InputError("SOE was built for a different Hurst parameter")
    if soe.h > grid.h * (1 + 1e-12) or soe.T < grid.T * (1 - 1e-12):
        raise InputError("SOE domain must cover [h, T] of the grid")
    M, N, h = noise.n_paths, grid.N, grid.h
    spec = params.kernel
    k_local = fractional_kernel(h, spec)
    decay = np.exp(-soe.nodes * h)
    coef = soe.weights * decay / spec.normalizer

    V = np.empty((M, N + 1))
    V[:, 0] = params.V0
    H_hist = np.zeros((M, soe.n_exp))
    J_hist = np.zeros((M, soe.n_exp))
    for n in range(1, N + 1):
        drift, diffusion = _increments(params, V[:, n - 1], noise.dZ[:, n - 1], h)
        V[:, n] = params.V0 + k_local * (drift + diffusion) + _rowdot(H_hist + J_hist, coef)
        H_hist += drift[:, None]
        H_hist *= decay
        J_hist += diffusion[:, None]
        J_hist *= decay
    return V


def simulate_equity(params: MarketParams, V: np.ndarray, noise: NoiseBlock, grid: TimeGrid) -> np.ndarray:
    """Log-Euler price paths driven by ``dW`` and the left-point variance."""
    vp = np.maximum(V[:, :-1], 0.0)
    log_inc = (params.r - 0.5 * vp) * grid.h + np.sqrt(vp) * noise.dW
    log_s = np.empty_like(V)
    log_s[:, 0] = math.log(params.S0)
    np.cumsum(log_inc, axis=1, out=log_s[:, 1:])
    log_s[:, 1:] += math.log(params.S0)
    return np.exp(log_s)


def fund_values(S: np.ndarray, c: float, grid: TimeGrid) -> np.ndarray:
    if c < 0:
        raise InputError("fee rate must be non-negative")
    return S * np.exp(-c * grid.times)
