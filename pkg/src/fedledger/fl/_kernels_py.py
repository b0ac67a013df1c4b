"""Pure-numpy forward/backward kernels.

Fallback for environments without the compiled extension. Same call
signatures and semantics as the compiled module; results agree to
floating-point tolerance (summation order differs), and each backend is
individually deterministic.

Loss is mean cross-entropy over the batch; softmax is computed with the
per-row max subtracted for stability. Gradients are returned per weight
matrix, in the arrays' own shapes.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def logistic_logits(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ W.T + b


def logistic_forward_backward(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    n = X.shape[0]
    probs = _softmax(logistic_logits(W, b, X))
    loss = -np.log(probs[np.arange(n), y] + 1e-300).mean()
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return float(loss), delta.T @ X, delta.sum(axis=0)


def mlp_logits(
    W1: np.ndarray, b1: np.ndarray, W2: np.ndarray, b2: np.ndarray, X: np.ndarray
) -> np.ndarray:
    hidden = np.tanh(X @ W1.T + b1)
    return hidden @ W2.T + b2


def mlp_forward_backward(
    W1: np.ndarray,
    b1: np.ndarray,
    W2: np.ndarray,
    b2: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n = X.shape[0]
    hidden = np.tanh(X @ W1.T + b1)
    probs = _softmax(hidden @ W2.T + b2)
    loss = -np.log(probs[np.arange(n), y] + 1e-300).mean()
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gW2 = delta.T @ hidden
    gb2 = delta.sum(axis=0)
    dhidden = (delta @ W2) * (1.0 - hidden * hidden)
    gW1 = dhidden.T @ X
    gb1 = dhidden.sum(axis=0)
    return float(loss), gW1, gb1, gW2, gb2
