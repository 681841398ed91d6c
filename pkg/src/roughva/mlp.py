"""Dense LeakyReLU regressor trained with Adam on mean squared error.

Everything is plain numpy: the network is small (41-64-64-64-64-1 by default)
and training is single-threaded per decision date, so a hand-written
backward pass keeps the results bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, TrainingError

__all__ = [
    "NetConfig",
    "NetParams",
    "Standardizer",
    "Regressor",
    "TrainReport",
    "init_params",
    "forward",
    "loss_and_grad",
    "train",
    "fit_regressor",
]

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    input_width: int = 41
    hidden_layers: int = 4
    hidden_width: int = 64
    negative_slope: float = 0.3
    batch_size: int = 4096
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.2
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("input_width", "hidden_layers", "hidden_width", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive")
        if self.negative_slope < 0 or self.learning_rate <= 0:
            raise InputError("negative slope must be >= 0 and learning rate > 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise InputError("validation fraction must lie in (0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise InputError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = [self.input_width] + [self.hidden_width] * self.hidden_layers + [1]
        return list(zip(widths[:-1], widths[1:]))


@dataclass
class NetParams:
    """Weights ``W[l]`` of shape ``(fan_in, fan_out)`` and biases ``b[l]``."""

    weights: list
    biases: list

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(w.shape) for w in self.weights]

    def copy(self) -> "NetParams":
        return NetParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "NetParams":
        return NetParams([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def flat(self) -> np.ndarray:
        """Row-major weights then bias, layer by layer."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts).astype(np.float64)

    @classmethod
    def from_flat(cls, shapes, vector) -> "NetParams":
        vector = np.asarray(vector, dtype=np.float64)
        expected = sum(a * b + b for a, b in shapes)
        if vector.size != expected:
            raise InputError(f"flat vector has {vector.size} entries, layout needs {expected}")
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in shapes:
            weights.append(vector[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
            biases.append(vector[pos : pos + fan_out].copy())
            pos += fan_out
        return cls(weights, biases)

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "layout": "row-major W (fan_in x fan_out) then b, per layer",
            "shapes": [list(s) for s in self.shapes],
            "values": self.flat().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetParams":
        if data.get("version") != MANIFEST_VERSION:
            raise InputError(f"unsupported network manifest version {data.get('version')!r}")
        return cls.from_flat([tuple(s) for s in data["shapes"]], data["values"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "NetParams":
        return cls.from_dict(json.loads(text))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.weights + self.biases)


def init_params(config: NetConfig, seed: int, warm_start: NetParams | None = None) -> NetParams:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``) and zero biases, or a
    verbatim copy of ``warm_start``."""
    if warm_start is not None:
        if warm_start.shapes != config.layer_shapes:
            raise InputError(f"warm start shapes {warm_start.shapes} do not match {config.layer_shapes}")
        return warm_start.copy()
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in config.layer_shapes:
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetParams(weights, biases)


def _leaky(z, slope):
    # elementwise max/min is much cheaper than np.where with a scalar branch
    return np.maximum(z, slope * z) if slope <= 1 else np.minimum(z, slope * z)


def _forward_cached(params, X, slope):
    acts = [X]
    masks = []
    a = X
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w
        z += b
        if l < last:
            masks.append(z > 0)
            a = _leaky(z, slope)
            acts.append(a)
        else:
            a = z
    return a[:, 0], acts, masks


def forward(params: NetParams, x, negative_slope: float = 0.3):
    """Network output for one feature vector or a batch of rows."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise InputError("network input contains non-finite values")
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != params.weights[0].shape[0]:
        raise InputError(f"input width {X.shape[1]} != {params.weights[0].shape[0]}")
    out, _, _ = _forward_cached(params, X, negative_slope)
    return float(out[0]) if single else out


def loss_and_grad(params: NetParams, X: np.ndarray, y: np.ndarray, negative_slope: float = 0.3):
    """Mean squared error and its gradient as ``(loss, dW list, db list)``."""
    out, acts, masks = _forward_cached(params, X, negative_slope)
    resid = out - y
    n = X.shape[0]
    loss = float(np.mean(resid.astype(np.float64) ** 2))
    delta = (2.0 / n) * resid[:, None]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for l in range(len(params.weights) - 1, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ params.weights[l].T
            # derivative is 1 on positive pre-activations, the slope elsewhere
            deriv = masks[l - 1] * delta.dtype.type(1.0 - negative_slope)
            deriv += delta.dtype.type(negative_slope)
            delta *= deriv
    return loss, gw, gb


@dataclass
class TrainReport:
    epochs: int
    best_epoch: int
    best_val_mse: float
    final_val_mse: float
    train_history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_mse,
            "final_val_mse": self.final_val_mse,
            "stopped_early": self.stopped_early,
        }


def split_indices(n_rows: int, fraction: float, seed: int):
    """Shuffled ``(train, validation)`` row indices."""
    perm = np.random.default_rng(seed).permutation(n_rows)
    n_val = max(1, int(round(fraction * n_rows)))
    if n_val >= n_rows:
        raise InputError("validation split leaves no training rows")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _mse(params, X, y, slope):
    out, _, _ = _forward_cached(params, X, slope)
    return float(np.mean((out - y).astype(np.float64) ** 2))


def train(
    params: NetParams,
    X: np.ndarray,
    y: np.ndarray,
    config: NetConfig,
    seed: int,
    split=None,
):
    """Adam on mini-batch MSE with early stopping.

    Parameters
    ----------
    params : NetParams
        Starting point; not modified.
    split : tuple of index arrays, optional
        ``(train_rows, validation_rows)``.  Drawn from ``seed`` when omitted.

    Returns
    -------
    best : NetParams
        Parameters with the lowest validation MSE seen, including the
        starting point.  Returned in float64.
    report : TrainReport
    """
    X = np.asarray(X)
    y = np.asarray(y)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise InputError("features must be (rows, width) with one target per row")
    if X.shape[1] != config.input_width:
        raise InputError(f"feature width {X.shape[1]} != configured {config.input_width}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError("training data contains non-finite values")
    if split is None:
        split = split_indices(X.shape[0], config.validation_fraction, seed)
    tr, va = split
    dtype = np.dtype(config.dtype)
    Xt, yt = X[tr].astype(dtype), y[tr].astype(dtype)
    Xv, yv = X[va].astype(dtype), y[va].astype(dtype)
    # a partial batch would otherwise never fill; fewer rows than the
    # configured batch means full-batch steps
    batch = min(config.batch_size, Xt.shape[0])
    slope = dtype.type(config.negative_slope)

    cur = params.astype(dtype)
    tensors = cur.weights + cur.biases
    m1 = [np.zeros_like(t) for t in tensors]
    m2 = [np.zeros_like(t) for t in tensors]
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.adam_eps
    rng = np.random.default_rng(seed + 1)

    best = cur.copy()
    best_val = _mse(cur, Xv, yv, slope)
    best_epoch = 0
    train_hist, val_hist = [], [best_val]
    step = 0
    since_best = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(Xt.shape[0])
        running = 0.0
        for start in range(0, Xt.shape[0], batch):
            rows = order[start : start + batch]
            loss, gw, gb = loss_and_grad(cur, Xt[rows], yt[rows], slope)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"training loss became non-finite in epoch {epoch}",
                    diagnostics={"epoch": epoch, "step": step, "train_history": train_hist, "val_history": val_hist},
                )
            running += loss * rows.size
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for t, g, a, v in zip(tensors, gw + gb, m1, m2):
                a *= b1
                a += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * (g * g)
                t -= (lr / c1) * a / (np.sqrt(v / c2) + eps)
        train_hist.append(running / Xt.shape[0])
        val = _mse(cur, Xv, yv, slope)
        if not math.isfinite(val):
            raise TrainingError(
                f"validation loss became non-finite in epoch {epoch}",
                diagnostics={"epoch": epoch, "train_history": train_hist, "val_history": val_hist},
            )
        val_hist.append(val)
        if val < best_val:
            best_val, best_epoch, best = val, epoch, cur.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    report = TrainReport(
        epochs=epoch,
        best_epoch=best_epoch,
        best_val_mse=best_val,
        final_val_mse=val_hist[-1],
        train_history=train_hist,
        val_history=val_hist,
        stopped_early=since_best >= config.patience,
    )
    return best.astype(np.float64), report


@dataclass
class Standardizer:
    """Affine map to zero mean and unit variance; constant columns keep scale 1."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        tiny = 1e-12 * np.maximum(1.0, np.abs(mean))
        scale = np.where(std > tiny, std, 1.0)
        return cls(mean, scale)

    def transform(self, X):
        return (np.asarray(X) - self.mean) / self.scale

    def inverse(self, Z):
        return np.asarray(Z) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": np.atleast_1d(self.mean).tolist(), "scale": np.atleast_1d(self.scale).tolist()}

    @classmethod
    def from_dict(cls, data) -> "Standardizer":
        return cls(np.asarray(data["mean"], dtype=float), np.asarray(data["scale"], dtype=float))


@dataclass
class Regressor:
    """A trained network together with its feature and target transforms."""

    params: NetParams
    x_std: Standardizer
    y_std: Standardizer
    negative_slope: float = 0.3
    report: TrainReport | None = None

    def predict(self, X, dtype=np.float64) -> np.ndarray:
        Z = self.x_std.transform(X).astype(dtype)
        p = self.params if dtype == np.float64 else self.params.astype(dtype)
        out, _, _ = _forward_cached(p, Z, dtype(self.negative_slope))
        return self.y_std.inverse(out.astype(np.float64))

    def to_dict(self) -> dict:
        return {
            "net": self.params.to_dict(),
            "x_std": self.x_std.to_dict(),
            "y_std": self.y_std.to_dict(),
            "negative_slope": self.negative_slope,
        }

    @classmethod
    def from_dict(cls, data) -> "Regressor":
        return cls(
            NetParams.from_dict(data["net"]),
            Standardizer.from_dict(data["x_std"]),
            Standardizer.from_dict(data["y_std"]),
            float(data["negative_slope"]),
        )


def fit_regressor(
    X: np.ndarray,
    y: np.ndarray,
    config: NetConfig,
    seed: int,
    warm_start: NetParams | None = None,
    x_std: Standardizer | None = None,
) -> Regressor:
    """Split rows, standardize on the training split, train.

    ``x_std`` may be supplied when the feature transform has been fitted
    beforehand on the same training rows.
    """
    tr, va = split_indices(X.shape[0], config.validation_fraction, seed)
    if x_std is None:
        x_std = Standardizer.fit(X[tr])
    y_std = Standardizer.fit(y[tr])
    Z = x_std.transform(X)
    t = y_std.transform(y)
    start = init_params(config, seed, warm_start)
    params, report = train(start, Z, t, config, seed, split=(tr, va))
    return Regressor(params, x_std, y_std, config.negative_slope, report)
