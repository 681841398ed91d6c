"""Fair-fee search by bisection on the two-pass LSMC price.

All fee levels share the same simulated paths: only the fee factor on the
fund value changes, and the regressors are retrained for each level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import InputError, SolverError
from .lsmc import (
    ContractSpec,
    FeatureCache,
    backward_induction,
    evaluate_policy,
    no_surrender_price,
    signature_features,
)
from .mlp import NetConfig
from .paths import PathBundle

log = logging.getLogger(__name__)

__all__ = ["FeeSolveConfig", "FeeProblem", "FeePoint", "FeeSolveResult", "price_at_fee", "solve_fair_fee"]


@dataclass(frozen=True)
class FeeSolveConfig:
    """Bisection settings.

    ``max_expansions`` bounds how many times the upper fee is doubled when
    the initial bracket does not straddle the premium.
    """

    lower: float = 0.0
    upper: float = 0.03
    tol: float = 1e-4
    max_expansions: int = 3
    bracket_slack_se: float = 1.0
    monotone_slack_se: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.lower < self.upper:
            raise InputError(f"need 0 <= lower < upper, got [{self.lower}, {self.upper}]")
        if self.tol <= 0:
            raise InputError("tolerance must be positive")

    @property
    def max_iterations(self) -> int:
        return max(0, math.ceil(math.log2((self.upper - self.lower) / self.tol)))


@dataclass
class FeeProblem:
    """Everything a price evaluation needs apart from the fee.

    Feature caches are built lazily and kept, since the signature features
    do not depend on the fee.
    """

    train: PathBundle
    test: PathBundle
    contract: ContractSpec
    netcfg: NetConfig = field(default_factory=NetConfig)
    K: int = 3
    seed: int = 0
    surrender: bool = True
    death_timing: str = "end"
    train_features: FeatureCache | None = None
    test_features: FeatureCache | None = None

    def features(self):
        first = max(self.contract.n_min, 1)
        if self.train_features is None:
            self.train_features = signature_features(self.train, self.K, first=first)
        if self.test_features is None:
            self.test_features = signature_features(self.test, self.K, first=first)
        return self.train_features, self.test_features


@dataclass
class FeePoint:
    c: float
    price: float
    se: float
    train_price: float = float("nan")
    surrender_fraction: float = 0.0

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "price": self.price,
            "se": self.se,
            "train_price": self.train_price,
            "surrender_fraction": self.surrender_fraction,
        }


def price_at_fee(c: float, problem: FeeProblem) -> FeePoint:
    """Test-set price ``U_0(c)`` with its standard error."""
    if c < 0:
        raise InputError("fee rate must be non-negative")
    contract = problem.contract.with_fee(c)
    if not problem.surrender:
        res = no_surrender_price(problem.test, contract, problem.death_timing)
        return FeePoint(c, res.price, res.se)
    ftr, fte = problem.features()
    fit = backward_induction(
        problem.train, contract, problem.netcfg, problem.K, problem.seed, ftr, problem.death_timing
    )
    res = evaluate_policy(problem.test, fit.regressors, contract, fte, problem.death_timing)
    return FeePoint(c, res.price, res.se, fit.price, float(np.mean(res.record.surrendered())))


@dataclass
class FeeSolveResult:
    c_star: float
    bracket: tuple
    iterations: int
    trace: list
    monotone_violations: list
    bracket_warnings: list

    def to_dict(self) -> dict:
        return {
            "c_star": self.c_star,
            "bracket": list(self.bracket),
            "iterations": self.iterations,
            "trace": [p.to_dict() for p in self.trace],
            "monotone_violations": self.monotone_violations,
            "bracket_warnings": self.bracket_warnings,
        }


def _monotone_violations(trace, slack):
    pts = sorted(trace, key=lambda p: p.c)
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        excess = b.price - a.price
        band = slack * math.hypot(a.se, b.se)
        if b.c > a.c and excess > band:
            out.append({"c_low": a.c, "c_high": b.c, "increase": excess, "band": band})
    return out


def solve_fair_fee(
    cfg: FeeSolveConfig, pricer: Callable[[float], FeePoint], F0: float
) -> FeeSolveResult:
    """Bisection for ``U_0(c) = F0``.

    Parameters
    ----------
    pricer : callable
        Maps a fee to a :class:`FeePoint`; typically
        ``lambda c: price_at_fee(c, problem)``.

    Raises
    ------
    SolverError
        When no bracket with ``U_0(lower) >= F0 >= U_0(upper)`` is found.
    """
    trace = []

    def evaluate(c):
        p = pricer(c)
        trace.append(p)
        log.info("fee %.6f -> price %.4f (se %.4f)", c, p.price, p.se)
        return p

    lo, hi = cfg.lower, cfg.upper
    p_lo = evaluate(lo)
    if p_lo.price < F0:
        raise SolverError(
            f"price {p_lo.price:.4f} at the lowest fee {lo} is already below the premium",
            {lo: p_lo.price},
        )
    p_hi = evaluate(hi)
    expansions = 0
    while p_hi.price > F0:
        if expansions >= cfg.max_expansions:
            raise SolverError(
                f"price stays above the premium up to fee {hi}",
                {lo: p_lo.price, hi: p_hi.price},
            )
        lo, p_lo = hi, p_hi
        hi = 2.0 * hi
        p_hi = evaluate(hi)
        expansions += 1

    warnings = []
    iterations = 0
    budget = max(0, math.ceil(math.log2((hi - lo) / cfg.tol)))
    while hi - lo > cfg.tol:
        if iterations >= budget:
            raise SolverError("bisection exceeded its iteration budget", {lo: p_lo.price, hi: p_hi.price})
        mid = 0.5 * (lo + hi)
        p = evaluate(mid)
        iterations += 1
        if p.price >= F0:
            lo, p_lo = mid, p
        else:
            hi, p_hi = mid, p
        if p_lo.price < F0 - cfg.bracket_slack_se * p_lo.se or p_hi.price > F0 + cfg.bracket_slack_se * p_hi.se:
            warnings.append({"lower": lo, "upper": hi, "price_lower": p_lo.price, "price_upper": p_hi.price})

    violations = _monotone_violations(trace, cfg.monotone_slack_se)
    for v in violations:
        log.warning("price increases with fee beyond %.1f SE: %s", cfg.monotone_slack_se, v)
    return FeeSolveResult(0.5 * (lo + hi), (lo, hi), iterations, trace, violations, warnings)
