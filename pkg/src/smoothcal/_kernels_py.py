"""Pure-numpy kernels: forward pass and fused loss/gradient for the MLP.

Same call signatures as the compiled extension (`smoothcal._kernels`); the
backend module picks one of the two at import time. Weight matrices are
(fan_in, fan_out), activations are row-per-instance, all float64.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

PROB_FLOOR = 1e-12


def _affine(a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ w + b


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(weights, biases, x, temperature=1.0):
    """Probabilities for every row of ``x``; hidden layers are ReLU."""
    a = np.asarray(x, dtype=np.float64)
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.maximum(_affine(a, w, b), 0.0)
    logits = _affine(a, weights[-1], biases[-1])
    return _softmax_rows(logits / temperature)


def loss_and_grads(weights, biases, x, targets, temperature=1.0, weight_decay=0.0):
    """Mean soft cross-entropy plus L2 penalty, with gradients per layer.

    The penalty is 0.5 * weight_decay * sum(W^2) over weight matrices only;
    gradients include the matching weight_decay * W term.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    n = x.shape[0]
    n_layers = len(weights)

    acts = [x]
    pre = []
    a = x
    for li in range(n_layers - 1):
        z = _affine(a, weights[li], biases[li])
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    logits = _affine(a, weights[-1], biases[-1])
    probs = _softmax_rows(logits / temperature)

    loss = float(-np.mean(np.sum(y * np.log(np.clip(probs, PROB_FLOOR, None)), axis=1)))
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in weights)

    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    delta = (probs - y) / (n * temperature)
    for li in range(n_layers - 1, -1, -1):
        grads_w[li] = acts[li].T @ delta
        if weight_decay:
            grads_w[li] += weight_decay * weights[li]
        grads_b[li] = delta.sum(axis=0)
        if li > 0:
            delta = (delta @ weights[li].T) * (pre[li - 1] > 0.0)

    return loss, grads_w, grads_b
