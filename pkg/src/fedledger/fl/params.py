"""Model parameter vectors and their canonical byte encoding.

Two architectures, both operating on flat float64 vectors so that ledger
payloads, checkpoints, and gradients share one representation:

- "logistic": multiclass logistic regression. Layout: W (C x D) row-major,
  then b (C). Zero-initialised, so training is deterministic without an
  init seed.
- "mlp": one hidden layer with tanh. Layout: W1 (H x D), b1 (H),
  W2 (C x H), b2 (C). Initialised from a seeded Gaussian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..codec import CodecError


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    n_features: int
    n_classes: int
    hidden: int = 0

    def __post_init__(self):
        if self.arch not in ("logistic", "mlp"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.arch == "mlp" and self.hidden <= 0:
            raise ValueError("mlp needs hidden > 0")
        if self.n_features <= 0 or self.n_classes < 2:
            raise ValueError("need n_features > 0 and n_classes >= 2")

    @property
    def dim(self) -> int:
        d, c, h = self.n_features, self.n_classes, self.hidden
        if self.arch == "logistic":
            return c * d + c
        return h * d + h + c * h + c

    def slices(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        """Offset and shape of each weight matrix inside the flat vector."""
        d, c, h = self.n_features, self.n_classes, self.hidden
        if self.arch == "logistic":
            return {"W": (0, (c, d)), "b": (c * d, (c,))}
        off = 0
        out = {}
        for name, shape in (("W1", (h, d)), ("b1", (h,)), ("W2", (c, h)), ("b2", (c,))):
            out[name] = (off, shape)
            off += int(np.prod(shape))
        return out

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        views = {}
        for name, (off, shape) in self.slices().items():
            size = int(np.prod(shape))
            views[name] = theta[off : off + size].reshape(shape)
        return views


def init_params(spec: ModelSpec, seed: int = 0) -> np.ndarray:
    """Initial parameter vector. Logistic starts at zero; the MLP draws
    scaled Gaussians from the given seed so hidden units differ."""
    if spec.arch == "logistic":
        return np.zeros(spec.dim, dtype=np.float64)
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.dim, dtype=np.float64)
    views = spec.unpack(theta)
    views["W1"][:] = rng.normal(0.0, 1.0, views["W1"].shape) / np.sqrt(spec.n_features)
    views["W2"][:] = rng.normal(0.0, 1.0, views["W2"].shape) / np.sqrt(spec.hidden)
    return theta


def params_to_bytes(theta: np.ndarray) -> bytes:
    """u64 length followed by little-endian float64s. Bit-exact roundtrip."""
    vec = np.ascontiguousarray(theta, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError("parameter vector must be one-dimensional")
    return struct.pack("<Q", vec.size) + vec.astype("<f8").tobytes()


def params_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise CodecError("truncated parameter vector")
    (n,) = struct.unpack_from("<Q", data, 0)
    expected = 8 + 8 * n
    if len(data) != expected:
        raise CodecError(f"parameter vector length {len(data)}, expected {expected}")
    return np.frombuffer(data, dtype="<f8", count=n, offset=8).astype(np.float64)
