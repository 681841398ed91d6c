"""Fractional kernel and its sum-of-exponentials approximation.

The kernel is ``K(t) = t**(H - 1/2) / Gamma(H + 1/2)``.  For ``H < 1/2`` the
power ``t**(H - 1/2)`` is a Laplace transform,

    t**(H - 1/2) = 1/Gamma(1/2 - H) * int_0^inf exp(-t s) s**(-H - 1/2) ds,

which is split into ``[0, 2**-m]`` (Gauss-Jacobi, absorbing the singular
weight) and dyadic intervals ``[2**j, 2**(j+1)]`` (Gauss-Legendre).  The
resulting nodes are the decay rates of the exponentials.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import KernelDomainError, SOEConstructionError, UnsupportedKernelError

__all__ = [
    "KernelSpec",
    "SumOfExponentials",
    "fractional_kernel",
    "build_soe",
    "verification_grid",
]


@dataclass(frozen=True)
class KernelSpec:
    hurst: float

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise KernelDomainError(f"Hurst parameter must lie in (0, 1), got {self.hurst}")

    @property
    def exponent(self) -> float:
        return self.hurst - 0.5

    @property
    def normalizer(self) -> float:
        return math.gamma(self.hurst + 0.5)


def fractional_kernel(t, spec: KernelSpec):
    """Evaluate ``t**(H-1/2) / Gamma(H+1/2)``.

    Accepts scalars or arrays.  ``t = 0`` is allowed only when ``H >= 1/2``,
    where the kernel is bounded at the origin (it equals 0 for ``H > 1/2``).
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0):
        raise KernelDomainError("fractional kernel is undefined for negative lags")
    if spec.hurst < 0.5 and np.any(arr == 0.0):
        raise KernelDomainError("fractional kernel is singular at 0 for H < 1/2")
    out = np.power(arr, spec.exponent) / spec.normalizer
    if np.ndim(t) == 0:
        return float(out)
    return out


def verification_grid(h: float, T: float, n_points: int = 10_000) -> np.ndarray:
    """Dense check grid on ``[h, T]``: half geometric, half uniform."""
    n_geo = n_points // 2
    grid = np.concatenate([np.geomspace(h, T, n_geo), np.linspace(h, T, n_points - n_geo)])
    return np.unique(grid)


@dataclass(frozen=True)
class SumOfExponentials:
    """``t**(H-1/2) ~ sum_l weights[l] * exp(-nodes[l] * t)`` on ``[h, T]``.

    The approximation is of the bare power; divide by ``Gamma(H+1/2)`` (see
    :meth:`kernel`) to approximate the fractional kernel itself.
    """

    hurst: float
    nodes: np.ndarray
    weights: np.ndarray
    tolerance: float
    h: float
    T: float
    achieved_error: float = field(default=float("nan"))

    @property
    def n_exp(self) -> int:
        return int(self.nodes.size)

    def power(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.nodes)) @ self.weights

    def kernel(self, t):
        return self.power(t) / math.gamma(self.hurst + 0.5)

    def relative_error(self, n_points: int = 10_000) -> float:
        grid = verification_grid(self.h, self.T, n_points)
        exact = grid ** (self.hurst - 0.5)
        return float(np.max(np.abs(self.power(grid) - exact) / exact))

    def verify(self, n_points: int = 10_000) -> bool:
        return self.relative_error(n_points) <= self.tolerance

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "node", "weight"])
            for i, (x, w) in enumerate(zip(self.nodes, self.weights)):
                writer.writerow([i, repr(float(x)), repr(float(w))])


def _quadrature(H: float, h: float, T: float, xi: float, order: int):
    a = 0.5 - H
    g = -H - 0.5
    # e^{-ts} is smooth on the first interval when t*s <= 1 for all t <= T
    m_low = max(0, math.ceil(math.log2(T)))
    s0 = 2.0 ** (-m_low)
    # truncate the tail where its relative share at t = h is below xi/10
    s_max = special.gammainccinv(a, xi / 10.0) / h
    j_max = max(-m_low + 1, math.ceil(math.log2(s_max)))

    x, w = special.roots_jacobi(order, 0.0, g)
    nodes = [s0 * (1.0 + x) / 2.0]
    weights = [w * (s0 / 2.0) ** (g + 1.0)]

    xl, wl = special.roots_legendre(order)
    for j in range(-m_low, j_max):
        lo, hi = 2.0**j, 2.0 ** (j + 1)
        half, mid = (hi - lo) / 2.0, (hi + lo) / 2.0
        s = mid + half * xl
        nodes.append(s)
        weights.append(wl * half * s**g)

    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights) / math.gamma(a)
    perm = np.argsort(nodes)
    return nodes[perm], weights[perm]


def _sup_relative_error(nodes, weights, grid, exact):
    approx = np.exp(-np.multiply.outer(grid, nodes)) @ weights
    return float(np.max(np.abs(approx - exact) / exact))


def build_soe(
    spec: KernelSpec,
    h: float,
    T: float,
    xi: float,
    order: int = 2,
    max_order: int = 24,
    n_check: int = 10_000,
) -> SumOfExponentials:
    """Build and certify a sum-of-exponentials approximation of ``t**(H-1/2)``.

    Parameters
    ----------
    spec : KernelSpec
        Must have ``H < 1/2``.
    h, T : float
        Approximation domain ``[h, T]`` (one step up to the horizon).
    xi : float
        Target relative sup-error on the domain.
    order : int
        Gauss order per subinterval.  Raised one at a time until the
        certificate holds or ``max_order`` is exceeded.

    Raises
    ------
    UnsupportedKernelError
        For ``H >= 1/2`` (the Laplace representation diverges).
    SOEConstructionError
        If ``xi`` is not reached within ``max_order``.
    """
    H = spec.hurst
    if H >= 0.5:
        raise UnsupportedKernelError(
            f"sum-of-exponentials needs H < 1/2 (got {H}); use the direct scheme"
        )
    if not 0.0 < h < T:
        raise ValueError(f"need 0 < h < T, got h={h}, T={T}")
    if xi <= 0.0:
        raise ValueError("tolerance must be positive")

    grid = verification_grid(h, T, n_check)
    exact = grid ** (H - 0.5)
    best = math.inf
    for n in range(order, max_order + 1):
        nodes, weights = _quadrature(H, h, T, xi, n)
        err = _sup_relative_error(nodes, weights, grid, exact)
        best = min(best, err)
        if err <= xi:
            break
    else:
        raise SOEConstructionError(
            f"SOE for H={H} did not reach tolerance {xi:g} (best {best:.3g})", best
        )

    # prune exponentials whose largest relative contribution on [h, T] is negligible
    contrib = np.max(
        np.abs(weights) * np.exp(-np.multiply.outer(grid, nodes)) / exact[:, None], axis=0
    )
    keep = contrib >= xi / nodes.size
    if not np.all(keep):
        pruned_err = _sup_relative_error(nodes[keep], weights[keep], grid, exact)
        if pruned_err <= xi:
            nodes, weights, err = nodes[keep], weights[keep], pruned_err

    return SumOfExponentials(
        hurst=H,
        nodes=nodes,
        weights=weights,
        tolerance=xi,
        h=h,
        T=T,
        achieved_error=err,
    )
