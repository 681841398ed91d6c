"""Deep-signature least-squares Monte Carlo for the surrender decision.

Pass one walks backwards over the training paths, fitting one network per
decision date to the realized continuation value.  Pass two applies the
frozen networks to independent test paths, so the reported price carries no
look-ahead bias.

Cash-flow convention: a death in ``(t_j, t_{j+1}]`` pays ``max(G, F)`` at
``t_{j+1}`` (``death_timing="end"``).  ``death_timing="start"`` pays
``max(G, F_{t_j})`` at ``t_j`` instead.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, TrainingError
from .mlp import NetConfig, NetParams, Regressor, Standardizer, fit_regressor
from .paths import PathBundle
from .signature import SignatureStream, path_signature, signature_length

log = logging.getLogger(__name__)

__all__ = [
    "ContractSpec",
    "FeatureCache",
    "RegressorSet",
    "DecisionRecord",
    "PriceResult",
    "surrender_payoff",
    "build_features",
    "signature_features",
    "backward_induction",
    "evaluate_policy",
    "no_surrender_price",
    "policy_payoffs",
]

DEATH_TIMINGS = ("end", "start")


@dataclass(frozen=True)
class ContractSpec:
    T: float = 20.0
    x: float = 60.0
    F0: float = 100.0
    G: float = 100.0
    kappa: float = 0.002
    c: float = 0.0
    n_min: int = 1

    def __post_init__(self):
        if self.T <= 0 or self.F0 <= 0:
            raise InputError("maturity and premium must be positive")
        if self.G < 0 or self.kappa < 0 or self.c < 0:
            raise InputError("guarantee, penalty rate and fee must be non-negative")
        if self.n_min < 0:
            raise InputError("first surrender index must be non-negative")

    def with_fee(self, c: float) -> "ContractSpec":
        return ContractSpec(self.T, self.x, self.F0, self.G, self.kappa, float(c), self.n_min)

    def check_grid(self, grid) -> None:
        if abs(grid.T - self.T) > 1e-12 * self.T:
            raise InputError(f"grid horizon {grid.T} differs from maturity {self.T}")
        if not 0 <= self.n_min < grid.N:
            raise InputError(f"n_min={self.n_min} must lie in [0, {grid.N})")


def surrender_payoff(F, t, contract: ContractSpec):
    """``exp(-kappa (T - t)) F`` before maturity, ``max(G, F)`` at ``t = T``."""
    F = np.asarray(F, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t > contract.T * (1 + 1e-12)):
        raise InputError("surrender time beyond maturity")
    at_maturity = np.abs(t - contract.T) <= 1e-12 * contract.T
    out = np.where(at_maturity, np.maximum(contract.G, F), np.exp(-contract.kappa * (contract.T - t)) * F)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# features


def _augmented(bundle: PathBundle, n: int) -> np.ndarray:
    """Points ``(t_n, V_n, mu_n)`` of all paths, shape ``(M, 3)``."""
    t = np.full(bundle.n_paths, bundle.grid.times[n])
    return np.stack([t, bundle.V[:, n], bundle.mu[:, n]], axis=1)


def build_features(bundle: PathBundle, n: int, K: int = 3) -> np.ndarray:
    """Rows ``[log S_n, Sig^{<=K}((t, V, mu) on [0, t_n])]`` for one date,
    computed from scratch."""
    if not 1 <= n <= bundle.grid.N:
        raise InputError(f"feature date must lie in 1..{bundle.grid.N}")
    pts = np.stack([_augmented(bundle, k) for k in range(n + 1)], axis=1)
    sig = path_signature(pts, K)
    return np.column_stack([np.log(bundle.S[:, n]), sig.coeffs])


@dataclass
class FeatureCache:
    """Feature matrices for a run of consecutive dates, stored compactly."""

    dates: np.ndarray
    values: np.ndarray  # (n_dates, M, width)
    K: int

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def at(self, n: int) -> np.ndarray:
        k = n - int(self.dates[0])
        if not 0 <= k < self.dates.size:
            raise InputError(f"no cached features for date {n}")
        return self.values[k]

    def to_csv(self, path, n: int, max_rows: int = 1000) -> None:
        X = self.at(n)[:max_rows]
        header = ",".join(["logS"] + [f"sig{j}" for j in range(X.shape[1] - 1)])
        np.savetxt(path, X, delimiter=",", header=header, comments="")


def signature_features(
    bundle: PathBundle, K: int = 3, first: int = 1, last: int | None = None, dtype=np.float32
) -> FeatureCache:
    """Stream signatures along the grid and keep the rows for dates
    ``first..last`` (default ``last = N - 1``).  O(N) per path."""
    N = bundle.grid.N
    last = N - 1 if last is None else last
    if not 1 <= first <= last <= N:
        raise InputError(f"invalid feature date range {first}..{last}")
    M = bundle.n_paths
    width = signature_length(3, K) + 1
    values = np.empty((last - first + 1, M, width), dtype=dtype)
    stream = SignatureStream(3, K, (M,))
    log_s = np.log(bundle.S)
    for n in range(last + 1):
        sig = stream.append(_augmented(bundle, n))
        if n >= first:
            row = values[n - first]
            row[:, 0] = log_s[:, n]
            row[:, 1:] = sig.coeffs
    return FeatureCache(np.arange(first, last + 1), values, K)


# --------------------------------------------------------------------------
# regressors and decisions


@dataclass
class ConstantRegressor:
    """Continuation estimate at inception, where every path has the same
    features: the training mean of the realized continuation value."""

    value: float

    def predict(self, X, dtype=np.float64) -> np.ndarray:
        return np.full(np.shape(X)[0], self.value)


def date_seed(seed: int, n: int) -> int:
    return int(np.random.SeedSequence([seed, n]).generate_state(1)[0])


@dataclass
class RegressorSet:
    """One fitted regressor per decision date plus run provenance."""

    regressors: dict
    n_min: int
    N: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [n for n in range(self.n_min, self.N) if n not in self.regressors]
        if missing:
            raise InputError(f"regressor set is missing dates {missing[:5]}")

    def __getitem__(self, n: int):
        try:
            return self.regressors[n]
        except KeyError:
            raise InputError(f"no regressor for date {n}") from None

    def save(self, path) -> None:
        """``.npz`` archive: one flat parameter vector and two transforms per
        date, with a JSON manifest describing the layout."""
        arrays = {}
        manifest = {"version": 1, "n_min": self.n_min, "N": self.N, "meta": self.meta, "dates": {}}
        for n, reg in sorted(self.regressors.items()):
            if isinstance(reg, ConstantRegressor):
                manifest["dates"][str(n)] = {"constant": reg.value}
                continue
            arrays[f"net_{n}"] = reg.params.flat()
            arrays[f"xmean_{n}"] = reg.x_std.mean
            arrays[f"xscale_{n}"] = reg.x_std.scale
            arrays[f"ymean_{n}"] = np.atleast_1d(reg.y_std.mean)
            arrays[f"yscale_{n}"] = np.atleast_1d(reg.y_std.scale)
            manifest["dates"][str(n)] = {
                "shapes": [list(s) for s in reg.params.shapes],
                "negative_slope": reg.negative_slope,
            }
        arrays["manifest"] = np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "RegressorSet":
        with np.load(path) as data:
            manifest = json.loads(bytes(data["manifest"]).decode())
            if manifest.get("version") != 1:
                raise InputError(f"unsupported regressor archive version {manifest.get('version')!r}")
            regs = {}
            for key, info in manifest["dates"].items():
                n = int(key)
                if "constant" in info:
                    regs[n] = ConstantRegressor(float(info["constant"]))
                    continue
                params = NetParams.from_flat([tuple(s) for s in info["shapes"]], data[f"net_{n}"])
                regs[n] = Regressor(
                    params,
                    Standardizer(data[f"xmean_{n}"], data[f"xscale_{n}"]),
                    Standardizer(data[f"ymean_{n}"][0], data[f"yscale_{n}"][0]),
                    info["negative_slope"],
                )
        return cls(regs, manifest["n_min"], manifest["N"], manifest["meta"])


@dataclass
class DecisionRecord:
    """Surrender decisions on a set of paths.

    ``exercise[i, n]`` is the decision rule evaluated at date ``n`` (false
    outside ``n_min..N-1``); ``tau[i]`` is the first date where it holds,
    or ``N`` when the contract is kept to maturity.
    """

    tau: np.ndarray
    exercise: np.ndarray
    n_min: int
    N: int
    h: float

    def recursive_tau(self) -> np.ndarray:
        """``tau_n = n`` on exercise, else ``tau_{n+1}``, from ``tau_N = N``."""
        tau = np.full(self.tau.shape, self.N)
        for n in range(self.N - 1, self.n_min - 1, -1):
            tau = np.where(self.exercise[:, n], n, tau)
        return tau

    def surrendered(self) -> np.ndarray:
        return self.tau < self.N

    def surrender_ratio_by_year(self) -> np.ndarray:
        """Fraction of all paths surrendering within each policy year
        ``(k-1, k]``."""
        years = int(math.ceil(self.N * self.h - 1e-9))
        t = self.tau * self.h
        out = np.zeros(years)
        s = self.surrendered()
        if np.any(s):
            idx = np.clip(np.ceil(t[s] - 1e-9).astype(int) - 1, 0, years - 1)
            np.add.at(out, idx, 1.0)
        return out / self.tau.size

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("path,tau_index,tau_years\n")
            for i, n in enumerate(self.tau):
                fh.write(f"{i},{int(n)},{n * self.h:.10g}\n")


@dataclass
class PriceResult:
    price: float
    se: float
    n_paths: int
    payoffs: np.ndarray = field(repr=False)
    record: DecisionRecord | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {"price": self.price, "se": self.se, "n_paths": self.n_paths}
        if self.record is not None:
            out["surrender_fraction"] = float(np.mean(self.record.surrendered()))
        return out


def _summary(payoffs, record=None):
    M = payoffs.size
    se = float(np.std(payoffs, ddof=1) / math.sqrt(M)) if M > 1 else float("nan")
    return PriceResult(float(np.mean(payoffs)), se, M, payoffs, record)


def policy_payoffs(bundle: PathBundle, tau: np.ndarray, contract: ContractSpec, death_timing: str = "end") -> np.ndarray:
    """Discounted cash flow per path for stopping dates ``tau``.

    Survival to ``tau`` earns the surrender (or maturity) payoff at
    ``t_tau``; each earlier period ``(t_j, t_{j+1}]`` contributes the death
    benefit weighted by ``P_j (1 - q_j)``.
    """
    if death_timing not in DEATH_TIMINGS:
        raise InputError(f"death_timing must be one of {DEATH_TIMINGS}")
    grid = bundle.grid
    N, r = grid.N, bundle.r
    t = grid.times
    tau = np.asarray(tau)
    D = np.maximum(contract.G, bundle.F)
    if death_timing == "end":
        death = bundle.P[:, :-1] * (1.0 - bundle.q) * np.exp(-r * t[1:]) * D[:, 1:]
    else:
        death = bundle.P[:, :-1] * (1.0 - bundle.q) * np.exp(-r * t[:-1]) * D[:, :-1]
    cum = np.zeros((bundle.n_paths, N + 1))
    np.cumsum(death, axis=1, out=cum[:, 1:])
    rows = np.arange(bundle.n_paths)
    g = np.exp(-contract.kappa * (contract.T - t[tau])) * bundle.F[rows, tau]
    g = np.where(tau == N, D[:, N], g)
    return cum[rows, tau] + bundle.P[rows, tau] * np.exp(-r * t[tau]) * g


def _prepare(bundle: PathBundle, contract: ContractSpec) -> PathBundle:
    contract.check_grid(bundle.grid)
    if bundle.c != contract.c:
        bundle = bundle.with_fee(contract.c)
    return bundle


def no_surrender_price(bundle: PathBundle, contract: ContractSpec, death_timing: str = "end") -> PriceResult:
    """Price with the contract held to maturity on every path."""
    bundle = _prepare(bundle, contract)
    tau = np.full(bundle.n_paths, bundle.grid.N)
    return _summary(policy_payoffs(bundle, tau, contract, death_timing))


@dataclass
class TrainingResult:
    regressors: RegressorSet
    price: float
    se: float
    record: DecisionRecord
    epochs: dict


def backward_induction(
    train: PathBundle,
    contract: ContractSpec,
    netcfg: NetConfig | None = None,
    K: int = 3,
    seed: int = 0,
    features: FeatureCache | None = None,
    death_timing: str = "end",
    initial: NetParams | None = None,
) -> TrainingResult:
    """Pass one on the training paths.

    Parameters
    ----------
    features : FeatureCache, optional
        Precomputed signature features for dates ``n_min..N-1``.  They do not
        depend on the fee, so a cache can serve every fee level.
    initial : NetParams, optional
        Starting weights for the last decision date; later (earlier in time)
        dates warm-start from their successor.

    Returns
    -------
    TrainingResult
        Regressors for every decision date and the in-sample price.
    """
    if death_timing not in DEATH_TIMINGS:
        raise InputError(f"death_timing must be one of {DEATH_TIMINGS}")
    bundle = _prepare(train, contract)
    grid = bundle.grid
    N, h, r = grid.N, grid.h, bundle.r
    n_min = contract.n_min
    if netcfg is None:
        netcfg = NetConfig(input_width=signature_length(3, K) + 1)
    if features is None:
        features = signature_features(bundle, K, first=max(n_min, 1))
    disc = math.exp(-r * h)
    D = np.maximum(contract.G, bundle.F)
    Pi = D[:, N].copy()
    exercise = np.zeros((bundle.n_paths, N), dtype=bool)
    tau = np.full(bundle.n_paths, N)
    regs, epochs = {}, {}
    warm = initial
    for n in range(N - 1, n_min - 1, -1):
        q = bundle.q[:, n]
        if death_timing == "end":
            C = disc * (q * Pi + (1.0 - q) * D[:, n + 1])
        else:
            C = disc * q * Pi + (1.0 - q) * D[:, n]
        if n == 0:
            reg = ConstantRegressor(float(C.mean()))
            regs[0] = reg
            cont = reg.predict(C[:, None])
        else:
            try:
                reg = fit_regressor(features.at(n), C, netcfg, date_seed(seed, n), warm_start=warm)
            except TrainingError as exc:
                raise TrainingError(f"training failed at date {n}: {exc}", date=n, diagnostics=exc.diagnostics) from exc
            warm = reg.params
            regs[n] = reg
            epochs[n] = reg.report.epochs
            cont = reg.predict(features.at(n), dtype=np.float32)
        g = math.exp(-contract.kappa * (contract.T - grid.times[n])) * bundle.F[:, n]
        ex = g >= cont
        exercise[:, n] = ex
        tau[ex] = n
        Pi = np.where(ex, g, C)
    for n in range(n_min - 1, -1, -1):
        q = bundle.q[:, n]
        if death_timing == "end":
            Pi = disc * (q * Pi + (1.0 - q) * D[:, n + 1])
        else:
            Pi = disc * q * Pi + (1.0 - q) * D[:, n]
    res = _summary(Pi)
    meta = {"seed": seed, "M": bundle.n_paths, "K": K, "N": N, "T": grid.T, "c": contract.c}
    record = DecisionRecord(tau, exercise, n_min, N, h)
    regset = RegressorSet(regs, n_min, N, meta)
    return TrainingResult(regset, res.price, res.se, record, epochs)


def evaluate_policy(
    test: PathBundle,
    regs: RegressorSet,
    contract: ContractSpec,
    features: FeatureCache | None = None,
    death_timing: str = "end",
    K: int | None = None,
) -> PriceResult:
    """Pass two: apply the frozen regressors to independent paths."""
    bundle = _prepare(test, contract)
    grid = bundle.grid
    N = grid.N
    if regs.N != N:
        raise InputError(f"regressors were fitted on N={regs.N}, paths have N={N}")
    first = contract.n_min
    if regs.n_min > first:
        raise InputError(f"missing regressor for date {first}")
    if features is None:
        K = regs.meta.get("K", 3) if K is None else K
        features = signature_features(bundle, K, first=max(first, 1))
    exercise = np.zeros((bundle.n_paths, N), dtype=bool)
    for n in range(first, N):
        g = math.exp(-contract.kappa * (contract.T - grid.times[n])) * bundle.F[:, n]
        X = features.at(n) if n > 0 else np.empty((bundle.n_paths, 0))
        exercise[:, n] = g >= regs[n].predict(X, dtype=np.float32)
    hit = exercise.any(axis=1)
    tau = np.where(hit, np.argmax(exercise, axis=1), N)
    record = DecisionRecord(tau, exercise, first, N, grid.h)
    return _summary(policy_payoffs(bundle, tau, contract, death_timing), record)
