"""Stateless activation, loss and dropout helpers.

All functions take a leading batch axis where one makes sense.
"""
import numpy as np

from ..errors import IndexOutOfRange

PROB_FLOOR = 1e-12


def sigmoid(z):
    # tanh form is exact and never overflows
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    # subgradient 0 at x == 0
    return grad_out * (x > 0)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probabilities, true_class):
    """Categorical cross-entropy of one or more probability rows.

    ``probabilities`` is (K,) with an int class, or (N, K) with an int array.
    Returns a scalar or an (N,) array of per-example losses.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(true_class)
    k = p.shape[-1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise IndexOutOfRange(f"class index outside 0..{k - 1}")
    if p.ndim == 1:
        return float(-np.log(max(p[int(labels)], PROB_FLOOR)))
    picked = p[np.arange(len(p)), labels]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def one_hot(labels, k):
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def softmax_cross_entropy(logits, labels):
    """Mean loss over the batch, probabilities, and gradient w.r.t. the logits."""
    p = softmax(logits)
    losses = cross_entropy(p, labels)
    grad = (p - one_hot(labels, p.shape[1])) / len(p)
    return float(losses.mean()), p, grad


def dropout_mask(shape, rate, rng):
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape, dtype=np.float32) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate, mode, rng=None):
    if mode == "infer" or rate == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return x * dropout_mask(np.shape(x), rate, rng)
