"""Reproducible Gaussian drivers.

Every path owns a Philox stream keyed by ``(seed, path index)``; each noise
channel starts at its own counter block, and the step index is the position
inside that block.  Path ``i`` therefore sees the same increments whatever the
total path count, and any parallel split over paths reproduces the sequential
result bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .grid import TimeGrid

CHANNEL_W = 0
CHANNEL_W_PERP = 1
CHANNEL_B = 2

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseBlock:
    """Brownian increments, each array of shape ``(M, N)``.

    ``dW`` drives the equity, ``dZ`` the variance (correlation ``rho`` with
    ``dW``) and ``dB`` the force of mortality (independent of both).
    """

    dW: np.ndarray
    dZ: np.ndarray
    dB: np.ndarray
    rho: float
    seed: int
    grid: TimeGrid

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]


def path_normals(seed: int, path: int, channel: int, n: int) -> np.ndarray:
    """First ``n`` standard normals of one (seed, path, channel) stream."""
    bitgen = np.random.Philox(counter=[0, 0, 0, channel], key=[seed & _MASK64, path])
    return np.random.Generator(bitgen).standard_normal(n)


def draw_noise(n_paths: int, grid: TimeGrid, rho: float, seed: int, first_path: int = 0) -> NoiseBlock:
    """Draw correlated increments for paths ``first_path .. first_path+n_paths-1``."""
    if n_paths < 1:
        raise InputError("need at least one path")
    if not -1.0 <= rho <= 1.0:
        raise InputError(f"correlation must lie in [-1, 1], got {rho}")
    if seed < 0 or seed > _MASK64:
        raise InputError("seed must be a non-negative 64-bit integer")

    N = grid.N
    sqrt_h = np.sqrt(grid.h)
    w = np.empty((n_paths, N))
    w_perp = np.empty((n_paths, N))
    b = np.empty((n_paths, N))
    for row, i in enumerate(range(first_path, first_path + n_paths)):
        w[row] = path_normals(seed, i, CHANNEL_W, N)
        w_perp[row] = path_normals(seed, i, CHANNEL_W_PERP, N)
        b[row] = path_normals(seed, i, CHANNEL_B, N)

    dW = w * sqrt_h
    if rho == 1.0:
        dZ = dW.copy()
    elif rho == -1.0:
        dZ = -dW
    else:
        dZ = rho * dW + np.sqrt(1.0 - rho * rho) * (w_perp * sqrt_h)
    return NoiseBlock(dW=dW, dZ=dZ, dB=b * sqrt_h, rho=rho, seed=seed, grid=grid)
