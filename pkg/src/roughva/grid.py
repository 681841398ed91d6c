from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_n = n*h`` on ``[0, T]`` with ``N`` steps."""

    T: float
    N: int

    def __post_init__(self):
        if self.T <= 0 or self.N < 1:
            raise InputError(f"invalid grid T={self.T}, N={self.N}")

    @classmethod
    def monthly(cls, T: float) -> "TimeGrid":
        return cls(T=float(T), N=int(round(12 * T)))

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.N * factor)
