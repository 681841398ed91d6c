"""Joint simulation of equity, variance and mortality paths."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .equity import MarketParams, fund_values, simulate_equity, simulate_variance_direct, simulate_variance_fast
from .exceptions import InputError
from .frackernel import SumOfExponentials, build_soe
from .grid import TimeGrid
from .mortality import DEFAULT_SCHEME, MortalityParams, realized_survival, simulate_mortality
from .noise import NoiseBlock, draw_noise

__all__ = ["PathBundle", "simulate_bundle", "write_path_dump"]


@dataclass(frozen=True)
class PathBundle:
    """Per-path trajectories on ``grid``, arrays of shape ``(M, N+1)``.

    ``V`` and ``mu`` hold the truncated (non-negative) processes.  ``q`` has
    shape ``(M, N)``: ``q[:, n]`` is the realized survival over
    ``(t_n, t_{n+1}]`` and ``P[:, n+1] = P[:, n] * q[:, n]``.
    """

    S: np.ndarray
    V: np.ndarray
    mu: np.ndarray
    F: np.ndarray
    q: np.ndarray
    P: np.ndarray
    c: float
    r: float
    grid: TimeGrid
    noise: NoiseBlock | None = None

    @property
    def n_paths(self) -> int:
        return self.S.shape[0]

    def with_fee(self, c: float) -> "PathBundle":
        """Same paths with fund values recomputed for fee rate ``c``."""
        return replace(self, F=fund_values(self.S, c, self.grid), c=float(c))

    def subset(self, n_paths: int) -> "PathBundle":
        """First ``n_paths`` paths (identical to simulating with that count)."""
        if not 1 <= n_paths <= self.n_paths:
            raise InputError(f"cannot take {n_paths} of {self.n_paths} paths")
        sl = slice(0, n_paths)
        noise = self.noise
        if noise is not None:
            noise = replace(noise, dW=noise.dW[sl], dZ=noise.dZ[sl], dB=noise.dB[sl])
        return replace(
            self,
            S=self.S[sl],
            V=self.V[sl],
            mu=self.mu[sl],
            F=self.F[sl],
            q=self.q[sl],
            P=self.P[sl],
            noise=noise,
        )


def simulate_bundle(
    market: MarketParams,
    mortality: MortalityParams,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    c: float = 0.0,
    soe: SumOfExponentials | None = None,
    xi: float = 1e-3,
    variance_scheme: str = "fast",
    mortality_scheme: str = DEFAULT_SCHEME,
    keep_noise: bool = True,
) -> PathBundle:
    """Simulate ``n_paths`` joint paths driven by the streams of ``seed``.

    Parameters
    ----------
    soe : SumOfExponentials, optional
        Reused when given; otherwise built for ``market.hurst`` on
        ``[h, T]`` with tolerance ``xi``.
    variance_scheme : {"fast", "direct"}
        Sum-of-exponentials recursion or the O(N^2) Euler scheme.
    """
    noise = draw_noise(n_paths, grid, market.rho, seed)
    if variance_scheme == "fast":
        if soe is None:
            soe = build_soe(market.kernel, grid.h, grid.T, xi)
        V = simulate_variance_fast(market, soe, grid, noise)
    elif variance_scheme == "direct":
        V = simulate_variance_direct(market, grid, noise)
    else:
        raise InputError(f"unknown variance scheme {variance_scheme!r}")
    S = simulate_equity(market, V, noise, grid)
    mu = simulate_mortality(mortality, grid, noise, scheme=mortality_scheme)
    q, P = realized_survival(mu, grid)
    return PathBundle(
        S=S,
        V=np.maximum(V, 0.0),
        mu=np.maximum(mu, 0.0),
        F=fund_values(S, c, grid),
        q=q,
        P=P,
        c=float(c),
        r=market.r,
        grid=grid,
        noise=noise if keep_noise else None,
    )


def write_path_dump(bundle: PathBundle, path, max_paths: int = 16) -> None:
    """CSV with columns ``path, step, t, S, V, F`` for the first paths."""
    times = bundle.grid.times
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "step", "t", "S", "V", "F"])
        for i in range(min(max_paths, bundle.n_paths)):
            for n, t in enumerate(times):
                writer.writerow(
                    [i, n, f"{t:.10g}", f"{bundle.S[i, n]:.12g}", f"{bundle.V[i, n]:.12g}", f"{bundle.F[i, n]:.12g}"]
                )
