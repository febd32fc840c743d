"""Minimal dense-network trainer.

A small fully-connected ReLU classifier with exact analytic gradients,
plain SGD (optional momentum), per-sample cross-entropy losses with an
optional class mask, byte-exact checkpoints and seeded Gaussian feature
jitter. Everything is float64 so gradient checks and checkpoint
round-trips are unambiguous.
"""

import math
import struct

import numpy as np

from .errors import InputError, NumericalError

CHECKPOINT_MAGIC = b"AERCKPT1"


class MLP:
    """Fully-connected ReLU network trained with SGD.

    ``hidden`` gives the hidden-layer widths; an empty tuple yields a bare
    linear classifier. ``seen_classes`` is bookkeeping for masked-loss
    training and only ever grows.

    :param in_dim: feature dimensionality
    :param num_classes: size of the output layer
    :param hidden: hidden layer widths, default two layers of 64
    :param lr: SGD learning rate (> 0)
    :param momentum: SGD momentum coefficient, default 0
    :param seed: int or sequence of ints for the init generator
    """

    def __init__(self, in_dim, num_classes, hidden=(64, 64), lr=0.03,
                 momentum=0.0, seed=0):
        if in_dim < 1:
            raise InputError(f"in_dim must be >= 1, got {in_dim}")
        if num_classes < 2:
            raise InputError(f"num_classes must be >= 2, got {num_classes}")
        if lr < 0:
            raise InputError(f"lr must be >= 0, got {lr}")
        rng = np.random.default_rng(seed)
        sizes = [int(in_dim), *[int(h) for h in hidden], int(num_classes)]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))
        self.velocity_w = [np.zeros_like(w) for w in self.weights]
        self.velocity_b = [np.zeros_like(b) for b in self.biases]
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.seen_classes = set()

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def num_classes(self):
        return self.weights[-1].shape[1]

    @property
    def num_layers(self):
        return len(self.weights)

    def forward(self, features, cache=False):
        """Compute logits for a batch; optionally return the backprop cache."""
        a = np.asarray(features, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.in_dim:
            raise InputError(
                f"expected features of shape (n, {self.in_dim}), got {a.shape}")
        inputs = []
        relu_masks = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ w + b
            if i < self.num_layers - 1:
                mask = z > 0
                relu_masks.append(mask)
                a = np.where(mask, z, 0.0)
            else:
                a = z
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite logits in forward pass")
        if cache:
            return a, (inputs, relu_masks)
        return a

    def penultimate(self, features):
        """Activations feeding the output layer (the input itself for a linear net)."""
        a = np.asarray(features, dtype=np.float64)
        for i, (w, b) in enumerate(zip(self.weights[:-1], self.biases[:-1])):
            a = np.maximum(a @ w + b, 0.0)
        return a

    def predict(self, features):
        return np.argmax(self.forward(features), axis=1)

    def backward(self, cache, dlogits):
        """Backpropagate d(loss)/d(logits) into a flat parameter-gradient list.

        Returns ``[dW0, db0, dW1, db1, ...]`` matching the layer order.
        """
        inputs, relu_masks = cache
        grads = [None] * (2 * self.num_layers)
        delta = np.asarray(dlogits, dtype=np.float64)
        for i in reversed(range(self.num_layers)):
            grads[2 * i] = inputs[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * relu_masks[i - 1]
        return grads

    def apply_step(self, grads, lr=None):
        """SGD update from a flat gradient list; mean reduction is the caller's."""
        step = self.lr if lr is None else float(lr)
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericalError(
                    f"non-finite gradient (max abs {np.max(np.abs(g))!r})")
        for i in range(self.num_layers):
            self.velocity_w[i] = self.momentum * self.velocity_w[i] + grads[2 * i]
            self.velocity_b[i] = self.momentum * self.velocity_b[i] + grads[2 * i + 1]
            self.weights[i] -= step * self.velocity_w[i]
            self.biases[i] -= step * self.velocity_b[i]
        for w in self.weights:
            if not np.all(np.isfinite(w)):
                raise NumericalError("non-finite parameters after SGD step")

    def train_step(self, features, labels, class_mask=None, lr=None):
        """Forward, per-sample CE, backward and SGD step; returns the losses."""
        logits, cache = self.forward(features, cache=True)
        losses = per_sample_ce(logits, labels, class_mask)
        grads = self.backward(cache, ce_gradient(logits, labels, class_mask))
        self.apply_step(grads, lr=lr)
        return losses


def _mask_columns(logits, class_mask):
    if class_mask is None:
        return np.arange(logits.shape[1])
    cols = np.array(sorted(int(c) for c in class_mask), dtype=np.intp)
    if cols.size == 0:
        raise InputError("class_mask must be non-empty")
    if cols[0] < 0 or cols[-1] >= logits.shape[1]:
        raise InputError(f"class_mask {cols.tolist()} outside 0..{logits.shape[1] - 1}")
    return cols


def per_sample_ce(logits, labels, class_mask=None):
    """Per-sample cross-entropy, optionally restricted to a class mask.

    With a mask, the softmax runs over the masked classes only and the
    loss is undefined (an error) for labels outside the mask. Losses are
    clamped at 0 to absorb float cancellation.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.ndim != 1 or len(labels) != len(logits):
        raise InputError("logits must be (n, C) and labels (n,)")
    cols = _mask_columns(logits, class_mask)
    if class_mask is not None:
        allowed = np.isin(labels, cols)
        if not np.all(allowed):
            bad = labels[~allowed][0]
            raise InputError(f"label {bad} outside class mask {cols.tolist()}")
    elif labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise InputError("label outside 0..C-1")
    sub = logits[:, cols]
    peak = sub.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(sub - peak).sum(axis=1))
    return np.maximum(lse - logits[np.arange(len(labels)), labels], 0.0)


def ce_gradient(logits, labels, class_mask=None):
    """Gradient of the batch-mean CE w.r.t. logits; exactly 0 outside the mask."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    cols = _mask_columns(logits, class_mask)
    sub = logits[:, cols]
    peak = sub.max(axis=1, keepdims=True)
    expd = np.exp(sub - peak)
    probs = expd / expd.sum(axis=1, keepdims=True)
    grad = np.zeros_like(logits)
    grad[:, cols] = probs
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    peak = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - peak)
    return expd / expd.sum(axis=1, keepdims=True)


def soft_cross_entropy(logits, targets):
    """Per-sample CE against probability-vector targets."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    peak = logits.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=1))
    return lse - (targets * logits).sum(axis=1)


def soft_ce_gradient(logits, targets):
    """Gradient of batch-mean soft-target CE w.r.t. logits."""
    return (softmax(logits) - np.asarray(targets, dtype=np.float64)) / len(logits)


def prob_mse(logits, targets):
    """Per-sample squared error between softmax outputs and target probabilities.

    Normalised by the class count, matching the usual consistency-loss
    convention for semi-supervised mixing.
    """
    p = softmax(logits)
    diff = p - np.asarray(targets, dtype=np.float64)
    return (diff ** 2).sum(axis=1) / logits.shape[1]


def prob_mse_gradient(logits, targets):
    """Gradient of batch-mean ``prob_mse`` w.r.t. logits (softmax Jacobian applied)."""
    logits = np.asarray(logits, dtype=np.float64)
    n, c = logits.shape
    p = softmax(logits)
    r = 2.0 * (p - np.asarray(targets, dtype=np.float64)) / (n * c)
    return p * (r - (r * p).sum(axis=1, keepdims=True))


def augment(features, seed, strength):
    """Seeded Gaussian jitter of the given per-coordinate strength.

    ``strength`` 0 returns an unmodified copy. ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    if strength < 0:
        raise InputError(f"strength must be >= 0, got {strength}")
    x = np.asarray(features, dtype=np.float64)
    if strength == 0:
        return x.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return x + rng.standard_normal(x.shape) * float(strength)


class Checkpoint:
    """Serialized parameter snapshot; restores bitwise."""

    __slots__ = ("data", "epoch")

    def __init__(self, data, epoch=0):
        self.data = bytes(data)
        self.epoch = int(epoch)


def save_checkpoint(model, epoch=0):
    """Serialize parameters and momentum buffers.

    Byte layout: magic ``AERCKPT1``, little-endian u32 layer count, then per
    layer u32 rows, u32 cols, row-major f64 weights and f64 biases; momentum
    buffers follow in the same per-layer order.
    """
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", model.num_layers)]
    for w, b in zip(model.weights, model.biases):
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    for vw, vb in zip(model.velocity_w, model.velocity_b):
        parts.append(np.ascontiguousarray(vw, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(vb, dtype="<f8").tobytes())
    return Checkpoint(b"".join(parts), epoch)


def restore_checkpoint(model, checkpoint):
    """Restore parameters from a checkpoint into a matching architecture."""
    data = checkpoint.data
    if data[:8] != CHECKPOINT_MAGIC:
        raise InputError("not a checkpoint (bad magic)")
    offset = 8
    (layer_count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if layer_count != model.num_layers:
        raise InputError(
            f"architecture mismatch: checkpoint has {layer_count} layers, "
            f"model has {model.num_layers}")
    weights, biases = [], []
    for w in model.weights:
        rows, cols = struct.unpack_from("<II", data, offset)
        offset += 8
        if (rows, cols) != w.shape:
            raise InputError(
                f"architecture mismatch: checkpoint layer is {rows}x{cols}, "
                f"model layer is {w.shape[0]}x{w.shape[1]}")
        weights.append(np.frombuffer(data, "<f8", rows * cols, offset).reshape(rows, cols).copy())
        offset += 8 * rows * cols
        biases.append(np.frombuffer(data, "<f8", cols, offset).copy())
        offset += 8 * cols
    vel_w, vel_b = [], []
    for w in model.weights:
        rows, cols = w.shape
        vel_w.append(np.frombuffer(data, "<f8", rows * cols, offset).reshape(rows, cols).copy())
        offset += 8 * rows * cols
        vel_b.append(np.frombuffer(data, "<f8", cols, offset).copy())
        offset += 8 * cols
    if offset != len(data):
        raise InputError("corrupt checkpoint: trailing bytes")
    model.weights = weights
    model.biases = biases
    model.velocity_w = vel_w
    model.velocity_b = vel_b
    return model
