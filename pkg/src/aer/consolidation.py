"""End-of-task buffer consolidation.

Either a plain supervised pass over the buffer (``buffer_fit``) or the
semi-supervised refinement: fit a two-component Gaussian mixture on the
buffer losses, split entries into pure and uncertain sets by the low-mean
posterior, co-refine uncertain labels from augmented model predictions,
then train on mixup-combined batches with a supervised term plus a
weighted consistency term.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .mlp import (augment, per_sample_ce, prob_mse_gradient, soft_ce_gradient,
                  softmax)

VARIANCE_FLOOR = 1e-6


@dataclass
class GmmFit:
    """Two components ordered by mean; ``posterior_low`` is per-sample
    membership of the low-mean (clean-looking) component."""
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    posterior_low: np.ndarray
    log_likelihoods: list = field(default_factory=list)


def _log_normal_pdf(x, mean, var):
    return -0.5 * (np.log(2.0 * math.pi * var) + (x - mean) ** 2 / var)


def _responsibilities(x, means, variances, weights):
    logp = np.stack([np.log(weights[k]) + _log_normal_pdf(x, means[k], variances[k])
                     for k in range(2)], axis=1)
    peak = logp.max(axis=1, keepdims=True)
    norm = peak[:, 0] + np.log(np.exp(logp - peak).sum(axis=1))
    return np.exp(logp - norm[:, None]), float(norm.sum())


def fit_gmm_em(losses, max_iter=200, tol=1e-6):
    """Fit a two-component 1-D Gaussian mixture by EM.

    Initialised from a median split (lower half vs upper half); stops when
    the log-likelihood improvement drops below ``tol``. Variances are
    floored at 1e-6 with a warning; components come back ordered by mean.
    """
    x = np.asarray(losses, dtype=np.float64)
    if x.ndim != 1 or len(x) < 4:
        raise InputError(f"need a flat vector of >= 4 losses, got shape {x.shape}")
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise InputError("losses must be finite and >= 0")
    order = np.argsort(x, kind="stable")
    half = len(x) // 2
    lo, hi = x[order[:half]], x[order[half:]]
    means = np.array([lo.mean(), hi.mean()])
    variances = np.array([lo.var(), hi.var()])
    weights = np.array([len(lo) / len(x), len(hi) / len(x)])
    floored = variances < VARIANCE_FLOOR
    if np.any(floored):
        warnings.warn("near-zero mixture variance floored at 1e-6")
    variances = np.maximum(variances, VARIANCE_FLOOR)

    ll_trace = []
    prev = None
    for _ in range(max_iter):
        resp, ll = _responsibilities(x, means, variances, weights)
        ll_trace.append(ll)
        if prev is not None and ll - prev < tol:
            break
        prev = ll
        mass = resp.sum(axis=0)
        for k in range(2):
            if mass[k] < 1e-12:
                continue
            means[k] = (resp[:, k] * x).sum() / mass[k]
            var_k = (resp[:, k] * (x - means[k]) ** 2).sum() / mass[k]
            if var_k < VARIANCE_FLOOR:
                warnings.warn("near-zero mixture variance floored at 1e-6")
            variances[k] = max(var_k, VARIANCE_FLOOR)
        weights = mass / len(x)

    if means[0] > means[1]:
        means, variances, weights = means[::-1], variances[::-1], weights[::-1]
    resp, _ = _responsibilities(x, means, variances, weights)
    return GmmFit(means.copy(), variances.copy(), weights.copy(),
                  resp[:, 0].copy(), ll_trace)


def split_pure_uncertain(fit, threshold):
    """Index sets (pure, uncertain) from thresholding the low-mean posterior."""
    if not 0.0 < threshold < 1.0:
        raise InputError(f"threshold must be in (0, 1), got {threshold}")
    pure = np.flatnonzero(fit.posterior_low >= threshold)
    uncertain = np.flatnonzero(fit.posterior_low < threshold)
    return pure, uncertain


def sharpen(probs, temperature):
    """Raise probabilities to 1/temperature and renormalise rows."""
    if temperature <= 0:
        raise InputError(f"temperature must be > 0, got {temperature}")
    p = np.asarray(probs, dtype=np.float64) ** (1.0 / temperature)
    return p / p.sum(axis=1, keepdims=True)


def corefine_labels(model, features, noisy_labels, posterior_low, num_classes,
                    num_augments=3, augment_strength=0.1, rng=None):
    """Blend stored one-hot labels with averaged augmented predictions.

    Each refined row is u * onehot(label) + (1 - u) * mean over
    ``num_augments`` jittered forward passes of the softmax output.
    """
    if num_augments < 1:
        raise InputError(f"num_augments must be >= 1, got {num_augments}")
    rng = rng if rng is not None else np.random.default_rng(0)
    features = np.asarray(features, dtype=np.float64)
    u = np.asarray(posterior_low, dtype=np.float64)[:, None]
    onehot = np.eye(num_classes)[np.asarray(noisy_labels, dtype=np.intp)]
    avg = np.zeros((len(features), num_classes))
    for _ in range(num_augments):
        avg += softmax(model.forward(augment(features, rng, augment_strength)))
    avg /= num_augments
    return u * onehot + (1.0 - u) * avg


def _cosine_lr(base, step, total):
    return base * 0.5 * (1.0 + math.cos(math.pi * step / max(total, 1)))


def buffer_fit(model, buffer, epochs, lr, batch_size=64, rng=None):
    """Plain supervised fine-tuning on the buffer with cosine-decayed lr."""
    if len(buffer) == 0:
        warnings.warn("buffer_fit on an empty buffer is a no-op")
        return model
    rng = rng if rng is not None else np.random.default_rng(0)
    x = buffer.features[:buffer.size]
    y = buffer.labels[:buffer.size]
    for epoch in range(epochs):
        lr_e = _cosine_lr(lr, epoch, epochs)
        order = rng.permutation(buffer.size)
        for start in range(0, buffer.size, batch_size):
            sel = order[start:start + batch_size]
            model.train_step(x[sel], y[sel], lr=lr_e)
    return model


def _mixmatch_step(model, mixed_x, mixed_t, n_labeled, lambda_u, lr):
    """One SGD step on L_s (soft CE, labeled rows) + lambda_u * L_u (consistency)."""
    logits, cache = model.forward(mixed_x, cache=True)
    dlogits = np.zeros_like(logits)
    if n_labeled:
        dlogits[:n_labeled] = soft_ce_gradient(logits[:n_labeled], mixed_t[:n_labeled])
    if n_labeled < len(mixed_x):
        dlogits[n_labeled:] = lambda_u * prob_mse_gradient(
            logits[n_labeled:], mixed_t[n_labeled:])
    model.apply_step(model.backward(cache, dlogits), lr=lr)


def _buffer_accuracy(model, buffer):
    pred = model.predict(buffer.features[:buffer.size])
    return {
        "stored_label_accuracy": float((pred == buffer.labels[:buffer.size]).mean()),
        "true_label_accuracy": float((pred == buffer.true_labels[:buffer.size]).mean()),
    }


def mixmatch_consolidate(model, buffer, cfg, rng=None):
    """Semi-supervised consolidation on the buffer; returns a report dict.

    Losses are recomputed with a fresh forward pass, split by a
    two-component mixture fit, uncertain labels co-refined and sharpened,
    then the model trains on mixup batches of pure + refined targets. Falls
    back to ``buffer_fit`` when the pure set comes out empty (or the buffer
    is too small to fit a mixture). Never reads true labels for training.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    report = {"kind": "mixmatch", "fallback": None}
    if len(buffer) == 0:
        warnings.warn("consolidation skipped: empty buffer")
        report["fallback"] = "empty_buffer"
        return report
    report["pre"] = _buffer_accuracy(model, buffer)
    x = buffer.features[:buffer.size].copy()
    y = buffer.labels[:buffer.size].copy()
    c = model.num_classes
    if buffer.size < 4:
        warnings.warn("buffer too small for a mixture fit; falling back to buffer_fit")
        buffer_fit(model, buffer, cfg.consolidation_epochs, cfg.consolidation_lr,
                   cfg.consolidation_batch, rng)
        report["fallback"] = "buffer_fit"
        report["post"] = _buffer_accuracy(model, buffer)
        return report
    losses = per_sample_ce(model.forward(x), y)
    fit = fit_gmm_em(losses)
    pure, uncertain = split_pure_uncertain(fit, cfg.gmm_threshold)
    report["gmm"] = {
        "means": fit.means.tolist(),
        "variances": fit.variances.tolist(),
        "weights": fit.weights.tolist(),
    }
    report["n_pure"] = int(len(pure))
    report["n_uncertain"] = int(len(uncertain))
    if len(pure) == 0:
        warnings.warn("empty pure set; falling back to buffer_fit")
        buffer_fit(model, buffer, cfg.consolidation_epochs, cfg.consolidation_lr,
                   cfg.consolidation_batch, rng)
        report["fallback"] = "buffer_fit"
        report["post"] = _buffer_accuracy(model, buffer)
        return report

    targets = np.zeros((buffer.size, c))
    targets[pure] = np.eye(c)[y[pure]]
    if len(uncertain):
        refined = corefine_labels(model, x[uncertain], y[uncertain],
                                  fit.posterior_low[uncertain], c,
                                  cfg.num_augments, cfg.augment_strength, rng)
        targets[uncertain] = sharpen(refined, cfg.temperature)

    batch = cfg.consolidation_batch
    for epoch in range(cfg.consolidation_epochs):
        lr_e = _cosine_lr(cfg.consolidation_lr, epoch, cfg.consolidation_epochs)
        order = rng.permutation(pure)
        uorder = rng.permutation(uncertain) if len(uncertain) else None
        upos = 0
        for start in range(0, len(order), batch):
            lsel = order[start:start + batch]
            if uorder is not None and len(uorder):
                usel = np.array([uorder[(upos + i) % len(uorder)]
                                 for i in range(len(lsel))])
                upos += len(lsel)
                allx = np.vstack([x[lsel], x[usel]])
                allt = np.vstack([targets[lsel], targets[usel]])
            else:
                allx, allt = x[lsel], targets[lsel]
            widx = rng.permutation(len(allx))
            lam = rng.beta(cfg.mixup_alpha, cfg.mixup_alpha, size=(len(allx), 1))
            lam = np.maximum(lam, 1.0 - lam)
            mixed_x = lam * allx + (1.0 - lam) * allx[widx]
            mixed_t = lam * allt + (1.0 - lam) * allt[widx]
            _mixmatch_step(model, mixed_x, mixed_t, len(lsel), cfg.lambda_u, lr_e)
    report["post"] = _buffer_accuracy(model, buffer)
    return report


def consolidate(model, buffer, cfg, rng=None):
    """Dispatch on ``cfg.consolidation``; returns the report dict."""
    if cfg.consolidation == "buffer_fit":
        report = {"kind": "buffer_fit", "fallback": None}
        if len(buffer):
            report["pre"] = _buffer_accuracy(model, buffer)
        buffer_fit(model, buffer, cfg.consolidation_epochs, cfg.consolidation_lr,
                   cfg.consolidation_batch, rng)
        if len(buffer):
            report["post"] = _buffer_accuracy(model, buffer)
        return report
    if cfg.consolidation == "mixmatch":
        return mixmatch_consolidate(model, buffer, cfg, rng)
    raise InputError(f"unknown consolidation mode {cfg.consolidation!r}")
