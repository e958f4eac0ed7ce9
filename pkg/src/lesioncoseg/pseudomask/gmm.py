"""One-dimensional Gaussian mixtures fitted by EM."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANCE_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: list[float] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_logpdf(self, x) -> np.ndarray:
        """(n, K) array of ``log(w_k) + log N(x | mu_k, var_k)``."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return (
            logw
            - 0.5 * (_LOG_2PI + np.log(self.variances))
            - 0.5 * (x - self.means) ** 2 / self.variances
        )

    def logpdf(self, x) -> np.ndarray:
        return _logsumexp_rows(self.component_logpdf(x))

    def copy(self) -> "GmmModel":
        return GmmModel(self.weights.copy(), self.means.copy(), self.variances.copy())


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1)
    top = np.where(np.isfinite(top), top, 0.0)
    return top + np.log(np.exp(a - top[:, None]).sum(axis=1))


def _kmeanspp_centres(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centres = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centres)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centres.append(centres[-1])
            continue
        centres.append(x[rng.choice(len(x), p=d2 / total)])
    return np.sort(np.array(centres))


def init_gmm(x: np.ndarray, k: int, rng: np.random.Generator,
             variance_floor: float = VARIANCE_FLOOR) -> GmmModel:
    """Hard assignment to k-means++ centres, then per-group moments."""
    centres = _kmeanspp_centres(x, k, rng)
    assign = np.argmin((x[:, None] - centres[None, :]) ** 2, axis=1)
    weights = np.empty(k)
    means = np.empty(k)
    variances = np.empty(k)
    for j in range(k):
        xs = x[assign == j]
        if len(xs) == 0:
            weights[j], means[j], variances[j] = 0.0, centres[j], variance_floor
            continue
        weights[j] = len(xs) / len(x)
        means[j] = xs.mean()
        variances[j] = max(xs.var(), variance_floor)
    return GmmModel(weights, means, variances)


def em_refine(x: np.ndarray, model: GmmModel, max_iter: int = 100, tol: float = 1e-7,
              variance_floor: float = VARIANCE_FLOOR) -> GmmModel:
    """Run EM from ``model``; the data log-likelihood never decreases.

    Components with vanishing responsibility keep their mean and variance
    (weight goes to zero), which is still a valid M-step.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    m = model.copy()
    history = []
    for _ in range(max_iter + 1):
        comp = m.component_logpdf(x)
        norm = _logsumexp_rows(comp)
        history.append(float(norm.sum()))
        if len(history) > max_iter or (
            len(history) > 1 and history[-1] - history[-2] <= tol * max(1.0, abs(history[-2]))
        ):
            break
        resp = np.exp(comp - norm[:, None])
        nk = resp.sum(axis=0)
        live = nk > 1e-10 * len(x)
        weights = nk / len(x)
        means = m.means.copy()
        variances = m.variances.copy()
        means[live] = (resp[:, live] * x[:, None]).sum(axis=0) / nk[live]
        var = (resp[:, live] * (x[:, None] - means[live]) ** 2).sum(axis=0) / nk[live]
        variances[live] = np.maximum(var, variance_floor)
        m = GmmModel(weights / weights.sum(), means, variances)
    m.loglik_history = history
    return m


def fit_gmm(samples, k: int = 5, rng_seed: int = 0, *, init: GmmModel | None = None,
            max_iter: int = 100, variance_floor: float = VARIANCE_FLOOR) -> GmmModel:
    """Fit a K-component 1-D mixture; K shrinks to the sample count when needed.

    ``init`` warm-starts EM from an existing model of matching size instead of
    the seeded k-means++ initialisation.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot fit a mixture to an empty sample")
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, x.size)
    if init is not None and init.n_components == k:
        start = init
    else:
        start = init_gmm(x, k, np.random.default_rng(rng_seed), variance_floor)
    return em_refine(x, start, max_iter=max_iter, variance_floor=variance_floor)
