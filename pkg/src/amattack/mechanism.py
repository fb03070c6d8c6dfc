"""Neural missingness mechanism P(R | Z; phi) over the masks of a masked set.

Masks vary only on the masked columns M; every other column is observed.
Output unit ``k`` of the network is the probability of the mask whose bits on
M (in the order of M, first bit most significant) spell ``k`` in binary, so the
all-observed mask is unit ``2**|M| - 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .data import MaskMatrix

MAX_MASKED = 10
FORMAT_VERSION = 1


def gamma(mask_bits) -> int:
    """Binary-to-decimal index of a mask restricted to M."""
    k = 0
    for b in mask_bits:
        b = int(b)
        if b not in (0, 1):
            raise ValueError("mask bits must be 0 or 1")
        k = 2 * k + b
    return k


def mask_bits(n_masked: int) -> np.ndarray:
    """(2**n_masked, n_masked) table; row k holds the bits with gamma(bits) = k."""
    k = np.arange(2**n_masked)[:, None]
    shifts = np.arange(n_masked - 1, -1, -1)[None, :]
    return ((k >> shifts) & 1).astype(np.int64)


@dataclass(frozen=True)
class MechanismNet:
    """One-hidden-layer tanh network followed by a softmax over 2**|M| masks.

    ``masked`` holds dataset column indices; ``input_dim`` is the width of the
    (standardized) rows fed to the network.
    """

    masked: tuple
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        if not self.masked:
            raise ValueError("masked set must be nonempty")
        if len(self.masked) > MAX_MASKED:
            raise ValueError(f"at most {MAX_MASKED} masked columns are supported")
        if len(set(self.masked)) != len(self.masked):
            raise ValueError("masked columns must be distinct")
        d_in, h = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape != (h, self.n_masks) or self.b2.shape != (self.n_masks,):
            raise ValueError("inconsistent layer shapes")

    @classmethod
    def init(cls, masked, input_dim: int, hidden_dim: int = 100, seed: int = 0) -> "MechanismNet":
        """Glorot-uniform weights, zero biases."""
        masked = tuple(int(j) for j in masked)
        K = 2 ** len(masked)
        rng = np.random.default_rng(seed)
        lim1 = np.sqrt(6.0 / (input_dim + hidden_dim))
        lim2 = np.sqrt(6.0 / (hidden_dim + K))
        return cls(
            masked,
            rng.uniform(-lim1, lim1, size=(input_dim, hidden_dim)),
            np.zeros(hidden_dim),
            rng.uniform(-lim2, lim2, size=(hidden_dim, K)),
            np.zeros(K),
        )

    @property
    def n_masks(self) -> int:
        return 2 ** len(self.masked)

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def n_params(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size

    def flat(self) -> np.ndarray:
        """Parameters as one vector in the order W1, b1, W2, b2 (row-major)."""
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def with_flat(self, vec) -> "MechanismNet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {vec.shape}")
        d_in, h = self.W1.shape
        K = self.n_masks
        i = 0
        W1 = vec[i:i + d_in * h].reshape(d_in, h)
        i += d_in * h
        b1 = vec[i:i + h]
        i += h
        W2 = vec[i:i + h * K].reshape(h, K)
        i += h * K
        b2 = vec[i:i + K]
        return MechanismNet(self.masked, W1.copy(), b1.copy(), W2.copy(), b2.copy())

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "masked": list(self.masked),
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "n_masks": self.n_masks,
            "W1": self.W1.ravel().tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.ravel().tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, doc) -> "MechanismNet":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported mechanism format version {doc.get('format_version')!r}")
        d_in, h, K = int(doc["input_dim"]), int(doc["hidden_dim"]), int(doc["n_masks"])
        return cls(
            tuple(int(j) for j in doc["masked"]),
            np.asarray(doc["W1"], dtype=np.float64).reshape(d_in, h),
            np.asarray(doc["b1"], dtype=np.float64),
            np.asarray(doc["W2"], dtype=np.float64).reshape(h, K),
            np.asarray(doc["b2"], dtype=np.float64),
        )

    def save(self, path, extra: dict | None = None) -> None:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path) -> "MechanismNet":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MaskDistribution:
    """Row-wise mask probabilities, shape (N, 2**|M|)."""

    probs: np.ndarray
    masked: tuple

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != 2 ** len(self.masked):
            raise ValueError("probability matrix must have 2**|M| columns")
        object.__setattr__(self, "probs", probs)

    @property
    def n_rows(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def constant(cls, marginal, n_rows: int, masked) -> "MaskDistribution":
        """Row-independent (MCAR) distribution repeating one mask marginal."""
        marginal = np.asarray(marginal, dtype=np.float64)
        return cls(np.tile(marginal, (n_rows, 1)), tuple(masked))

    @classmethod
    def always_observe(cls, n_rows: int, masked) -> "MaskDistribution":
        K = 2 ** len(masked)
        marginal = np.zeros(K)
        marginal[K - 1] = 1.0
        return cls.constant(marginal, n_rows, masked)


def _forward(net: MechanismNet, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != net.input_dim:
        raise ValueError(f"mechanism expects {net.input_dim} input columns, got {inputs.shape}")
    hidden = np.tanh(inputs @ net.W1 + net.b1)
    logits = hidden @ net.W2 + net.b2
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite activations in the mechanism network")
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    return hidden, probs


def mechanism_forward(net: MechanismNet, inputs) -> MaskDistribution:
    """softmax(W2^T tanh(W1^T z + b1) + b2) for every row z of ``inputs``."""
    return MaskDistribution(_forward(net, inputs)[1], net.masked)


def mechanism_backward(net: MechanismNet, inputs, upstream) -> np.ndarray:
    """Gradient w.r.t. ``net.flat()`` of sum(upstream * probs)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    hidden, probs = _forward(net, inputs)
    if upstream.shape != probs.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match {probs.shape}")
    if not np.all(np.isfinite(upstream)):
        raise ValueError("upstream gradient must be finite")
    # softmax Jacobian-vector product
    dlogits = probs * (upstream - np.sum(upstream * probs, axis=1, keepdims=True))
    dW2 = hidden.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dpre = (dlogits @ net.W2.T) * (1.0 - hidden * hidden)
    dW1 = inputs.T @ dpre
    db1 = dpre.sum(axis=0)
    return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])


def sample_masks(dist: MaskDistribution, d: int, seed=None, rng=None) -> MaskMatrix:
    """Draw one mask per row by inverse CDF; unmasked columns are all ones."""
    if rng is None:
        rng = np.random.default_rng(seed)
    u = 1.0 - rng.random(dist.n_rows)  # (0, 1]: zero-probability masks are never drawn
    idx = _kernels.sample_categorical(dist.probs, u)
    bits = np.ones((dist.n_rows, d), dtype=np.uint8)
    table = mask_bits(len(dist.masked))
    bits[:, list(dist.masked)] = table[idx]
    return MaskMatrix(bits)


def mcar_baseline(dist: MaskDistribution) -> np.ndarray:
    """Marginal mask distribution N^-1 sum_i P(r | z_i)."""
    return dist.probs.mean(axis=0)


def hidden_counts(n_masked: int) -> np.ndarray:
    """Number of hidden columns for each mask index."""
    return n_masked - mask_bits(n_masked).sum(axis=1)


def expected_missing_fraction(dist: MaskDistribution, d: int) -> float:
    """Expected share of hidden cells per row, averaged over rows."""
    return float(np.mean(dist.probs @ hidden_counts(len(dist.masked))) / d)


def expected_missing_fraction_grad(dist: MaskDistribution, d: int) -> np.ndarray:
    """Gradient of ``expected_missing_fraction`` w.r.t. the probability matrix."""
    counts = hidden_counts(len(dist.masked)).astype(np.float64)
    return np.tile(counts / (d * dist.n_rows), (dist.n_rows, 1))
