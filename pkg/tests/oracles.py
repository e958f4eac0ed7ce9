"""Brute-force reference computations used to freeze and cross-check expected values."""
import itertools
import math

import numpy as np


def brute_min_cut(n_nodes, source, sink, edges):
    """Minimum s-t cut by enumerating every assignment of the non-terminal nodes."""
    inner = [v for v in range(n_nodes) if v not in (source, sink)]
    best = math.inf
    for bits in itertools.product((0, 1), repeat=len(inner)):
        side = {source: 1, sink: 0}
        side.update(zip(inner, bits))
        cost = sum(c for u, v, c in edges if side[u] == 1 and side[v] == 0)
        best = min(best, cost)
    return best


def best_two_partition_means(samples):
    """Means of the 2-partition with least within-group squared error (exhaustive)."""
    x = np.asarray(samples, dtype=float)
    best, best_means = math.inf, None
    for bits in itertools.product((0, 1), repeat=len(x)):
        bits = np.array(bits, dtype=bool)
        if bits.all() or not bits.any():
            continue
        a, b = x[bits], x[~bits]
        sse = ((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()
        if sse < best:
            best, best_means = sse, sorted((a.mean(), b.mean()))
    return best_means


def naive_counts(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def naive_avd(pred, gt):
    """Averaged Hausdorff distance from the full pairwise distance matrix, O(|P| |G|)."""
    a = np.argwhere(pred).astype(float)
    b = np.argwhere(gt).astype(float)
    dist = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return max(dist.min(axis=1).mean(), dist.min(axis=0).mean())


def naive_ratios(pred, gt):
    """Recall, precision, Dice and VS from literal pixel counts (empty conventions included)."""
    tp, fp, fn, _ = naive_counts(pred, gt)
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0, 1.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    prec = tp / (tp + fp) if tp + fp else 0.0
    dsc = 2 * tp / (2 * tp + fp + fn)
    vs = 1 - abs(fp - fn) / (2 * tp + fp + fn)
    return rec, prec, dsc, vs


def central_difference_check(loss_fn, params, n_checks=20, h=1e-5, seed=0):
    """Compare autograd gradients with central differences on random entries.

    ``params`` is a list of double-precision tensors with ``requires_grad``.
    Returns a list of ``(analytic, numeric, rel_err)``.
    """
    import torch

    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    results = []
    for _ in range(n_checks):
        k = rng.choice(len(params), p=sizes / sizes.sum())
        j = int(rng.integers(params[k].numel()))
        analytic = 0.0 if grads[k] is None else float(grads[k].reshape(-1)[j])
        flat = params[k].data.view(-1)
        orig = float(flat[j])
        with torch.no_grad():
            flat[j] = orig + h
            up = float(loss_fn())
            flat[j] = orig - h
            down = float(loss_fn())
            flat[j] = orig
        numeric = (up - down) / (2 * h)
        scale = max(abs(analytic), abs(numeric))
        rel = 0.0 if scale == 0 else abs(analytic - numeric) / scale
        results.append((analytic, numeric, rel))
    return results
