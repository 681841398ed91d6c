"""Volterra force of mortality: simulation, affine survival curve, calibration.

Model (one factor, ``H_m > 1/2``)::

    mu_t = mu_x + lam * int_0^t K(t-u) mu_u du + int_0^t K(t-u) sigma sqrt(mu_u) dB_u

Survival probabilities follow from the affine transform
``p(s) = E[exp(-int_0^s mu)] = exp(Y_0(s))`` with ``psi`` solving the
Riccati-Volterra equation ``psi = K * (-eta + lam psi + sigma^2 psi^2 / 2)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .exceptions import InputError, RiccatiConvergenceError
from .frackernel import KernelSpec, fractional_kernel
from .grid import TimeGrid
from .noise import NoiseBlock

log = logging.getLogger(__name__)

__all__ = [
    "MortalityParams",
    "LifeTable",
    "SurvivalCurve",
    "CalibrationResult",
    "solve_riccati_psi",
    "survival_probability",
    "survival_curve",
    "simulate_mortality",
    "realized_survival",
    "calibrate_mortality",
    "synthetic_life_table",
    "read_life_table",
    "model_survival_at_years",
    "convolution_weights",
    "SCHEMES",
    "DEFAULT_SCHEME",
]

CALIBRATION_BOUNDS = {"hurst": (0.5, 0.99), "lam": (0.0, 1.0), "sigma": (0.0, 0.5)}


def _rowdot(A, v):
    # einsum keeps each row's reduction independent of the row count (BLAS
    # blocking does not), so a path's value never depends on M
    return np.einsum("ij,j->i", A, v)


@dataclass(frozen=True)
class MortalityParams:
    mu_x: float = 0.018999
    lam: float = 0.047780
    sigma: float = 0.005023
    hurst: float = 0.703932
    x: float = 60.0

    def __post_init__(self):
        if self.mu_x <= 0:
            raise InputError("initial force of mortality must be positive")
        if self.sigma < 0:
            raise InputError("sigma must be non-negative")
        if not 0.5 < self.hurst < 1.0:
            raise InputError(f"H_m must lie in (1/2, 1), got {self.hurst}")

    @classmethod
    def calibrated_age30(cls) -> "MortalityParams":
        """Fitted cohort parameters with the age-30 initial intensity."""
        return cls(mu_x=0.002102, lam=0.047780, sigma=0.005023, hurst=0.703932, x=30.0)

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(self.hurst)

    def replace(self, **changes) -> "MortalityParams":
        values = {k: getattr(self, k) for k in ("mu_x", "lam", "sigma", "hurst", "x")}
        values.update(changes)
        return MortalityParams(**values)


SCHEMES = ("product", "trapezoid")
# simulation and transform must share a rule, otherwise the short end is biased
DEFAULT_SCHEME = "product"


def convolution_weights(hurst: float, grid: TimeGrid, scheme: str = DEFAULT_SCHEME):
    """Quadrature weights for ``int_0^{t_n} K(t_n - u) f(u) du``.

    Returns ``(first, lag, end)`` such that the integral is approximated by
    ``first[n] f_0 + sum_{k=1}^{n-1} lag[n-k] f_k + end f_n``.

    ``"trapezoid"`` applies the plain trapezoidal rule to ``K(t_n - u) f(u)``;
    its endpoint weight vanishes since ``K(0) = 0`` for ``H > 1/2``.
    ``"product"`` integrates the kernel exactly against the piecewise-linear
    interpolant of ``f``, which is second order and carries an implicit
    endpoint weight.  It is the default: the plain rule converges only at
    order ``H + 1/2`` in ``h``.
    """
    N, h = grid.N, grid.h
    n = np.arange(N + 1, dtype=float)
    if scheme == "trapezoid":
        kv = fractional_kernel(n * h, KernelSpec(hurst))
        return 0.5 * h * kv, h * kv, 0.5 * h * kv[0]
    if scheme == "product":
        a = hurst + 0.5
        c = h**a / math.gamma(a + 2.0)
        first = np.zeros(N + 1)
        first[1:] = c * ((n[1:] - 1.0) ** (a + 1.0) - (n[1:] - 1.0 - a) * n[1:] ** a)
        lag = np.zeros(N + 1)
        j = n[1:]
        lag[1:] = c * ((j + 1.0) ** (a + 1.0) - 2.0 * j ** (a + 1.0) + (j - 1.0) ** (a + 1.0))
        return first, lag, c
    raise InputError(f"unknown quadrature scheme {scheme!r}; choose from {SCHEMES}")


def solve_riccati_psi(
    params: MortalityParams,
    grid: TimeGrid,
    eta: float = 1.0,
    scheme: str = DEFAULT_SCHEME,
    tol: float = 1e-12,
    max_iter: int = 100,
    damping: float = 1.0,
) -> np.ndarray:
    """Solve ``psi = K * (-eta + lam psi + sigma^2 psi^2 / 2)`` step by step.

    Each step solves ``psi_n = E_n + w_end f(psi_n)`` by damped fixed-point
    iteration; under the trapezoidal rule ``w_end = 0`` and the first iterate
    is exact.
    """
    lam, s2 = params.lam, params.sigma**2
    N = grid.N
    first, lag, end = convolution_weights(params.hurst, grid, scheme)

    def f(psi):
        return -eta + lam * psi + 0.5 * s2 * psi * psi

    psi = np.zeros(N + 1)
    fv = np.empty(N + 1)
    fv[0] = f(0.0)
    for n in range(1, N + 1):
        explicit = first[n] * fv[0]
        if n > 1:
            explicit += fv[1:n] @ lag[n - 1 : 0 : -1]
        value = psi[n - 1]
        for _ in range(max_iter):
            update = explicit + end * f(value)
            step = update - value
            value += damping * step
            if abs(step) <= tol * max(1.0, abs(value)):
                break
        else:
            raise RiccatiConvergenceError(f"psi fixed point failed at step {n}", step=n)
        if not math.isfinite(value):
            raise RiccatiConvergenceError(f"psi became non-finite at step {n}", step=n)
        psi[n] = value
        fv[n] = f(value)
    return psi


@dataclass(frozen=True)
class SurvivalCurve:
    times: np.ndarray
    p: np.ndarray
    psi: np.ndarray
    Y: np.ndarray

    def at(self, s) -> np.ndarray:
        """Survival probability at times ``s`` (linear in ``Y`` between nodes)."""
        return np.exp(np.interp(s, self.times, self.Y))


def survival_probability(params: MortalityParams, psi: np.ndarray, grid: TimeGrid, eta: float = 1.0) -> SurvivalCurve:
    """``p(s) = exp(Y_0(s))`` with ``Y_0`` by cumulative trapezoid of
    ``mu_x (-eta + lam psi + sigma^2 psi^2 / 2)``."""
    if psi.shape != (grid.N + 1,):
        raise InputError("psi must be defined on the same grid")
    g = params.mu_x * (-eta + params.lam * psi + 0.5 * params.sigma**2 * psi**2)
    Y = np.zeros(grid.N + 1)
    np.cumsum(0.5 * grid.h * (g[:-1] + g[1:]), out=Y[1:])
    return SurvivalCurve(times=grid.times, p=np.exp(Y), psi=psi, Y=Y)


def survival_curve(params: MortalityParams, grid: TimeGrid, scheme: str = DEFAULT_SCHEME) -> SurvivalCurve:
    return survival_probability(params, solve_riccati_psi(params, grid, scheme=scheme), grid)


def simulate_mortality(
    params: MortalityParams, grid: TimeGrid, noise: NoiseBlock, scheme: str = DEFAULT_SCHEME
) -> np.ndarray:
    """Euler paths of the force of mortality, shape ``(M, N+1)``.

    The drift convolution of ``mu+ = max(mu, 0)`` uses the quadrature
    ``scheme`` (see :func:`convolution_weights`); the Ito integral uses left
    points.  Cost O(N^2) per path.
    """
    M, N = noise.n_paths, grid.N
    first, lag, end = convolution_weights(params.hurst, grid, scheme)
    kv = fractional_kernel(np.arange(N + 1) * grid.h, params.kernel)
    lam = params.lam
    if lam * end >= 1.0:
        raise InputError("implicit drift weight too large for this step size")
    mu = np.empty((M, N + 1))
    mu[:, 0] = params.mu_x
    mu_pos = np.empty((M, N + 1))
    mu_pos[:, 0] = params.mu_x
    shocks = np.empty((M, N))
    for n in range(1, N + 1):
        shocks[:, n - 1] = params.sigma * np.sqrt(mu_pos[:, n - 1]) * noise.dB[:, n - 1]
        drift = first[n] * mu_pos[:, 0]
        if n > 1:
            drift += _rowdot(mu_pos[:, 1:n], lag[n - 1 : 0 : -1])
        explicit = params.mu_x + lam * drift + _rowdot(shocks[:, :n], kv[n:0:-1])
        if end:
            # mu_n = E + lam*end*max(mu_n, 0) has the closed-form root below
            explicit = np.where(explicit > 0.0, explicit / (1.0 - lam * end), explicit)
        mu[:, n] = explicit
        np.maximum(explicit, 0.0, out=mu_pos[:, n])
    return mu


def realized_survival(mu: np.ndarray, grid: TimeGrid):
    """Per-step factors ``q[n] = exp(-h/2 (mu+_n + mu+_{n+1}))`` and their
    running product ``P`` with ``P[0] = 1``."""
    mp = np.maximum(mu, 0.0)
    q = np.exp(-0.5 * grid.h * (mp[..., :-1] + mp[..., 1:]))
    P = np.ones(mu.shape)
    np.cumprod(q, axis=-1, out=P[..., 1:])
    return q, P


# --------------------------------------------------------------------------
# life tables and calibration


@dataclass(frozen=True)
class LifeTable:
    ages: np.ndarray
    survivors: np.ndarray
    cohort: str = ""

    def __post_init__(self):
        ages = np.asarray(self.ages)
        l = np.asarray(self.survivors, dtype=float)
        if ages.shape != l.shape or ages.ndim != 1 or ages.size < 2:
            raise InputError("life table needs matching 1-d age and survivor columns")
        gaps = np.nonzero(np.diff(ages) != 1)[0]
        if gaps.size:
            raise InputError(f"ages must be consecutive integers (gap after age {ages[gaps[0]]})")
        if np.any(l <= 0):
            raise InputError(f"survivor counts must be positive (age {ages[np.argmax(l <= 0)]})")
        drops = np.nonzero(np.diff(l) > 0)[0]
        if drops.size:
            raise InputError(f"survivor counts increase at age {ages[drops[0] + 1]}")

    def survival_from(self, x: int, horizon: int) -> np.ndarray:
        """Observed ``l_{x+s} / l_x`` for ``s = 1..horizon``."""
        idx = int(x - self.ages[0])
        if idx < 0 or idx + horizon >= self.ages.size:
            raise InputError(f"table does not cover ages {x}..{x + horizon}")
        l = np.asarray(self.survivors, dtype=float)
        return l[idx + 1 : idx + horizon + 1] / l[idx]

    def initial_intensity(self, x: int) -> float:
        idx = int(x - self.ages[0])
        l = np.asarray(self.survivors, dtype=float)
        return -math.log(l[idx + 1] / l[idx])


def read_life_table(path, cohort: str = "") -> LifeTable:
    """Two-column CSV ``age,l`` with a header row."""
    ages, l = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["age", "l"]:
            raise InputError(f"{path}: expected header 'age,l'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise InputError(f"{path}: row {lineno} must have 2 columns, got {len(row)}")
            try:
                age = int(row[0])
                value = float(row[1])
            except ValueError:
                raise InputError(f"{path}: row {lineno} is not numeric: {row!r}") from None
            ages.append(age)
            l.append(value)
    try:
        return LifeTable(np.array(ages), np.array(l), cohort)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def synthetic_life_table(
    params: MortalityParams,
    horizon: int,
    steps_per_year: int = 12,
    radix: float = 1e5,
    scheme: str = DEFAULT_SCHEME,
) -> LifeTable:
    """Life table whose survival ratios are the model curve of ``params``."""
    grid = TimeGrid(float(horizon), horizon * steps_per_year)
    curve = survival_curve(params, grid, scheme)
    p = curve.p[:: steps_per_year]
    ages = int(params.x) + np.arange(horizon + 1)
    return LifeTable(ages, radix * p, cohort="synthetic")


@dataclass
class CalibrationResult:
    params: MortalityParams
    mse: float
    residuals: np.ndarray
    observed: np.ndarray
    model: np.ndarray
    ages: np.ndarray
    converged: bool
    n_evaluations: int
    warning: str = ""
    extra: dict = field(default_factory=dict)

    def report(self) -> dict:
        return {
            "hurst": self.params.hurst,
            "lam": self.params.lam,
            "sigma": self.params.sigma,
            "mu_x": self.params.mu_x,
            "x": self.params.x,
            "mse": self.mse,
            "converged": self.converged,
            "warning": self.warning,
            "n_evaluations": self.n_evaluations,
            "residuals": {int(a): float(r) for a, r in zip(self.ages, self.residuals)},
        }


def model_survival_at_years(
    params: MortalityParams, horizon: int, steps_per_year: int = 12, scheme: str = DEFAULT_SCHEME
) -> np.ndarray:
    grid = TimeGrid(float(horizon), horizon * steps_per_year)
    return survival_curve(params, grid, scheme).p[steps_per_year :: steps_per_year]


def calibrate_mortality(
    table: LifeTable,
    x: int,
    horizon: int,
    init: MortalityParams,
    mu_x: float | None = None,
    steps_per_year: int = 12,
    max_evaluations: int = 4000,
    xatol: float = 1e-9,
    fatol: float = 1e-20,
    scheme: str = DEFAULT_SCHEME,
) -> CalibrationResult:
    """Least-squares fit of ``(H_m, lam, sigma)`` to ``l_{x+s}/l_x``, ``s=1..horizon``.

    ``mu_x`` defaults to ``-ln(l_{x+1}/l_x)`` and is held fixed.  The search
    runs Nelder-Mead in coordinates scaled to the box
    ``H_m in (0.5, 0.99)``, ``lam in [0, 1]``, ``sigma in [0, 0.5]``, with
    trial points projected back into the box.
    """
    observed = table.survival_from(x, horizon)
    mu0 = table.initial_intensity(x) if mu_x is None else float(mu_x)
    names = ("hurst", "lam", "sigma")
    lo = np.array([CALIBRATION_BOUNDS[n][0] for n in names])
    hi = np.array([CALIBRATION_BOUNDS[n][1] for n in names])
    # keep H_m strictly above 1/2 so the kernel stays bounded at the origin
    lo_eff = lo + np.array([1e-6, 0.0, 0.0])
    scale = np.array([init.hurst, max(init.lam, 1e-3), max(init.sigma, 1e-4)])

    def unpack(z):
        theta = np.clip(z * scale, lo_eff, hi)
        return init.replace(hurst=theta[0], lam=theta[1], sigma=theta[2], mu_x=mu0, x=float(x))

    def objective(z):
        model = model_survival_at_years(unpack(z), horizon, steps_per_year, scheme)
        return float(np.mean((model - observed) ** 2))

    z0 = np.ones(3)
    res = optimize.minimize(
        objective,
        z0,
        method="Nelder-Mead",
        options={"maxfev": max_evaluations, "xatol": xatol, "fatol": fatol, "adaptive": False},
    )
    best = unpack(res.x)
    model = model_survival_at_years(best, horizon, steps_per_year, scheme)
    warning = ""
    if not res.success:
        warning = f"optimizer stopped early: {res.message}"
        log.warning("mortality calibration: %s", warning)
    return CalibrationResult(
        params=best,
        mse=float(np.mean((model - observed) ** 2)),
        residuals=model - observed,
        observed=observed,
        model=model,
        ages=x + np.arange(1, horizon + 1),
        converged=bool(res.success),
        n_evaluations=int(res.nfev),
        warning=warning,
    )
