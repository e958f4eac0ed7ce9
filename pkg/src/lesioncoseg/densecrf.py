"""Fully-connected two-label CRF refinement by mean-field inference.

Pairwise messages are summed exactly over all pixel pairs. The compiled path
(:func:`pairwise_messages`) is used by default; :func:`pairwise_messages_dense`
builds the full kernel matrix and is only practical for small images.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import ConfigError, DataError

PROB_CLAMP = 1e-8


@dataclass(frozen=True)
class CrfParams:
    w_appearance: float = 10.0
    theta_alpha: float = 20.0
    theta_beta: float = 0.1
    w_smooth: float = 3.0
    theta_gamma: float = 3.0
    iterations: int = 10

    def __post_init__(self):
        if min(self.theta_alpha, self.theta_beta, self.theta_gamma) <= 0:
            raise ConfigError("CRF kernel widths must be positive")
        if self.w_appearance < 0 or self.w_smooth < 0:
            raise ConfigError("CRF kernel weights must be non-negative")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


@numba.njit(cache=True, fastmath=True)
def _messages(image, planes, wa, ta, tb, ws, tg):
    # planes: (L, H, W) label-major copy of Q so the inner loops are contiguous
    nl, h, w = planes.shape
    ia = -0.5 / (ta * ta)
    ib = -0.5 / (tb * tb)
    ig = -0.5 / (tg * tg)
    span = max(h, w)
    ga = np.empty(span)
    gs = np.empty(span)
    for d in range(span):
        ga[d] = np.exp(ia * d * d)
        gs[d] = np.exp(ig * d * d)
    out = np.zeros((nl, h, w))
    row_a = np.empty(w)
    row_s = np.empty(w)
    kern = np.empty(w)
    for ri in range(h):
        for ci in range(w):
            zi = image[ri, ci]
            for c in range(w):
                row_a[c] = wa * ga[abs(ci - c)]
                row_s[c] = ws * gs[abs(ci - c)]
            for rj in range(h):
                gar = ga[abs(ri - rj)]
                gsr = gs[abs(ri - rj)]
                zrow = image[rj]
                for cj in range(w):
                    dz = zi - zrow[cj]
                    kern[cj] = gar * row_a[cj] * np.exp(ib * dz * dz) + gsr * row_s[cj]
                for l in range(nl):
                    qrow = planes[l, rj]
                    acc = 0.0
                    for cj in range(w):
                        acc += kern[cj] * qrow[cj]
                    out[l, ri, ci] += acc
            # drop the j == i term, k(i, i) = wa + ws
            for l in range(nl):
                out[l, ri, ci] -= (wa + ws) * planes[l, ri, ci]
    return out


def pairwise_messages(Q: np.ndarray, image: np.ndarray, params: CrfParams) -> np.ndarray:
    """``m_i(l) = sum_{j != i} k(i, j) Q_j(l)`` for ``Q`` of shape (H, W, L)."""
    planes = np.ascontiguousarray(np.moveaxis(np.asarray(Q, dtype=np.float64), -1, 0))
    out = _messages(
        np.ascontiguousarray(image, dtype=np.float64), planes,
        params.w_appearance, params.theta_alpha, params.theta_beta, params.w_smooth, params.theta_gamma,
    )
    return np.moveaxis(out, 0, -1)


def kernel_matrix(image: np.ndarray, params: CrfParams) -> np.ndarray:
    """Dense (N, N) pairwise kernel with a zero diagonal."""
    h, w = image.shape
    rr, cc = np.mgrid[0:h, 0:w]
    pos = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    z = np.asarray(image, dtype=np.float64).ravel()
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    dz2 = (z[:, None] - z[None, :]) ** 2
    k = params.w_appearance * np.exp(-d2 / (2 * params.theta_alpha**2) - dz2 / (2 * params.theta_beta**2))
    k += params.w_smooth * np.exp(-d2 / (2 * params.theta_gamma**2))
    np.fill_diagonal(k, 0.0)
    return k


def pairwise_messages_dense(Q: np.ndarray, image: np.ndarray, params: CrfParams) -> np.ndarray:
    h, w, nl = Q.shape
    return (kernel_matrix(image, params) @ Q.reshape(h * w, nl)).reshape(Q.shape)


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mean_field_step(Q: np.ndarray, unary: np.ndarray, image: np.ndarray, params: CrfParams,
                    messages=pairwise_messages) -> np.ndarray:
    """One Potts mean-field update.

    ``Q`` and ``unary`` are (H, W, L); returns the renormalised
    ``Q'_i(l) ~ exp(-unary_i(l) - sum_{l' != l} m_i(l'))``.
    """
    Q = np.asarray(Q, dtype=np.float64)
    unary = np.asarray(unary, dtype=np.float64)
    if Q.shape != unary.shape or Q.shape[:2] != np.shape(image):
        raise DataError(f"shape mismatch: Q {Q.shape}, unary {unary.shape}, image {np.shape(image)}")
    if not np.allclose(Q.sum(axis=-1), 1.0, atol=1e-6):
        raise DataError("Q rows must sum to 1")
    if params.w_appearance == 0 and params.w_smooth == 0:
        return _softmax(-unary)
    m = messages(Q, image, params)
    # Potts: penalty for label l is the message mass on every other label
    penalty = m.sum(axis=-1, keepdims=True) - m
    return _softmax(-unary - penalty)


def unary_from_prob(prob: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(prob, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    return np.stack([-np.log1p(-p), -np.log(p)], axis=-1)


def refine(prob: np.ndarray, image: np.ndarray, params: CrfParams = CrfParams(),
           messages=pairwise_messages) -> np.ndarray:
    """Refined lesion-probability map (class-1 marginal) after ``params.iterations`` steps."""
    prob = np.asarray(prob, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if prob.shape != image.shape:
        raise DataError(f"probability map {prob.shape} and image {image.shape} differ in shape")
    if prob.size and (prob.min() < 0 or prob.max() > 1):
        raise DataError("probabilities must lie in [0, 1]")
    unary = unary_from_prob(prob)
    Q = _softmax(-unary)
    for _ in range(params.iterations):
        Q = mean_field_step(Q, unary, image, params, messages=messages)
    return Q[..., 1]
