"""Truncated signatures of piecewise-linear paths.

Coefficients are stored flat: level 0 (the constant 1), then level 1 with
``d`` entries, level 2 with ``d**2`` entries and so on.  Inside a level the
words ``(i_1, ..., i_k)`` are in row-major lexicographic order, so word
``(i, j)`` sits at offset ``i * d + j`` of the level-2 block.  Words use
0-based letters.

Every function accepts leading batch axes; the signature axis is last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError

__all__ = [
    "TruncatedSignature",
    "signature_length",
    "segment_signature",
    "chen_concat",
    "path_signature",
    "SignatureStream",
]


def signature_length(d: int, K: int) -> int:
    """``1 + d + ... + d**K``."""
    return sum(d**k for k in range(K + 1))


def _offsets(d, K):
    out = [0]
    for k in range(K + 1):
        out.append(out[-1] + d**k)
    return out


@dataclass(frozen=True)
class TruncatedSignature:
    d: int
    K: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.d < 1 or self.K < 1:
            raise InputError("need d >= 1 and K >= 1")
        if self.coeffs.shape[-1] != signature_length(self.d, self.K):
            raise InputError(
                f"expected {signature_length(self.d, self.K)} coefficients, got {self.coeffs.shape[-1]}"
            )

    @classmethod
    def identity(cls, d: int, K: int, batch_shape=()) -> "TruncatedSignature":
        coeffs = np.zeros(tuple(batch_shape) + (signature_length(d, K),))
        coeffs[..., 0] = 1.0
        return cls(d, K, coeffs)

    @property
    def size(self) -> int:
        return signature_length(self.d, self.K)

    def level(self, k: int) -> np.ndarray:
        """Level-``k`` block, shape ``batch + (d,) * k``."""
        if not 0 <= k <= self.K:
            raise InputError(f"level {k} outside 0..{self.K}")
        off = _offsets(self.d, self.K)
        block = self.coeffs[..., off[k] : off[k + 1]]
        return block.reshape(self.coeffs.shape[:-1] + (self.d,) * k)

    def word_index(self, word) -> int:
        word = tuple(word)
        for letter in word:
            if not 0 <= letter < self.d:
                raise InputError(f"letter {letter} outside alphabet of size {self.d}")
        if len(word) > self.K:
            raise InputError(f"word longer than truncation level {self.K}")
        idx = 0
        for letter in word:
            idx = idx * self.d + letter
        return _offsets(self.d, self.K)[len(word)] + idx

    def __getitem__(self, word):
        return self.coeffs[..., self.word_index(word)]


def _levels(coeffs, d, K):
    off = _offsets(d, K)
    return [coeffs[..., off[k] : off[k + 1]] for k in range(K + 1)]


def _segment_levels(delta, K):
    batch = delta.shape[:-1]
    levels = [np.ones(batch + (1,))]
    for k in range(1, K + 1):
        prev = levels[-1]
        nxt = (prev[..., :, None] * delta[..., None, :]).reshape(batch + (-1,)) / k
        levels.append(nxt)
    return levels


def segment_signature(delta, K: int) -> TruncatedSignature:
    """Signature of the straight segment with increment ``delta``: level ``k``
    is ``delta**(tensor k) / k!``."""
    if K < 1:
        raise InputError("truncation level must be at least 1")
    delta = np.asarray(delta, dtype=float)
    if delta.ndim == 0:
        delta = delta[None]
    levels = _segment_levels(delta, K)
    return TruncatedSignature(delta.shape[-1], K, np.concatenate(levels, axis=-1))


def _product_levels(a, b, K):
    batch = np.broadcast_shapes(a[0].shape[:-1], b[0].shape[:-1])
    out = []
    for k in range(K + 1):
        acc = None
        for j in range(k + 1):
            x, y = a[j], b[k - j]
            term = (x[..., :, None] * y[..., None, :]).reshape(batch + (-1,))
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def chen_concat(a: TruncatedSignature, b: TruncatedSignature) -> TruncatedSignature:
    """Truncated tensor product ``a (x) b`` (signature of ``a`` followed by ``b``)."""
    if a.d != b.d or a.K != b.K:
        raise InputError(f"cannot concatenate signatures with (d, K) = {(a.d, a.K)} and {(b.d, b.K)}")
    levels = _product_levels(_levels(a.coeffs, a.d, a.K), _levels(b.coeffs, b.d, b.K), a.K)
    return TruncatedSignature(a.d, a.K, np.concatenate(levels, axis=-1))


def path_signature(points, K: int) -> TruncatedSignature:
    """Signature of the polyline through ``points`` (shape ``batch + (n+1, d)``)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim < 2 or pts.shape[-2] < 2:
        raise InputError("a path needs at least two points")
    increments = np.diff(pts, axis=-2)
    sig = segment_signature(increments[..., 0, :], K)
    for n in range(1, increments.shape[-2]):
        sig = chen_concat(sig, segment_signature(increments[..., n, :], K))
    return sig


class SignatureStream:
    """Running signature of a path that grows one point at a time.

    After points ``x_0, ..., x_n`` have been appended, :attr:`signature`
    equals ``path_signature([x_0, ..., x_n])`` bit for bit; the first point
    only fixes the origin and leaves the identity element.
    """

    def __init__(self, d: int, K: int, batch_shape=()):
        self.d = d
        self.K = K
        self.batch_shape = tuple(batch_shape)
        self.reset()

    def reset(self) -> None:
        self._sig = TruncatedSignature.identity(self.d, self.K, self.batch_shape)
        self._last = None
        self.n_points = 0

    def append(self, point) -> TruncatedSignature:
        point = np.asarray(point, dtype=float)
        if point.shape != self.batch_shape + (self.d,):
            raise InputError(f"point shape {point.shape} != {self.batch_shape + (self.d,)}")
        if self._last is None:
            self._last = point.copy()
        else:
            seg = segment_signature(point - self._last, self.K)
            if self.n_points == 1:
                self._sig = seg
            else:
                self._sig = chen_concat(self._sig, seg)
            self._last = point.copy()
        self.n_points += 1
        return self._sig

    @property
    def signature(self) -> TruncatedSignature:
        return self._sig
