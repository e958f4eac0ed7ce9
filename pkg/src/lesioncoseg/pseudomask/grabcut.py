"""RECIST-seeded GrabCut on single-channel images."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..dataset import (
    LesionRecord, PreprocessConfig, RecistAnnotation, preprocess, read_image, resolve_image_path,
)
from ..exceptions import ConfigError, DataError
from .gmm import GmmModel, fit_gmm
from .maxflow import FlowNetwork, max_flow

log = logging.getLogger(__name__)

DEF_BG, DEF_FG, PROB_BG, PROB_FG = 0, 1, 2, 3


@dataclass(frozen=True)
class GrabcutParams:
    gmm_components: int = 5
    gamma: float = 50.0
    neighborhood: int = 8
    max_iters: int = 5
    convergence_tol: float = 0.001
    seed_radius: float = 2.0
    bbox_expand: float = 0.5
    border: int = 2
    em_iters: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        if self.gmm_components < 1:
            raise ConfigError("gmm_components must be >= 1")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.neighborhood not in (4, 8):
            raise ConfigError("neighborhood must be 4 or 8")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.bbox_expand <= 0:
            raise ConfigError("bbox_expand must be positive")
        if self.seed_radius < 0 or self.border < 0:
            raise ConfigError("seed_radius and border must be non-negative")


def _segment_distance(xx, yy, p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q - p
    denom = float(d @ d)
    if denom == 0.0:
        return np.hypot(xx - p[0], yy - p[1])
    t = np.clip(((xx - p[0]) * d[0] + (yy - p[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(xx - (p[0] + t * d[0]), yy - (p[1] + t * d[1]))


def build_trimap(recist: RecistAnnotation, shape, params: GrabcutParams = GrabcutParams()) -> np.ndarray:
    """Seed labels from the two RECIST diameters.

    Pixels within ``seed_radius`` of either diameter are definite foreground.
    The endpoint bounding box is probable foreground; the box grown by
    ``bbox_expand`` times its extent on every side is probable background;
    everything else, plus a ``border``-pixel frame, is definite background.
    """
    h, w = shape
    pts = recist.points()
    if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > w - 1) or np.any(pts[:, 1] < 0) or np.any(pts[:, 1] > h - 1):
        raise DataError(f"RECIST endpoints {pts.tolist()} fall outside image of shape {shape}")
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    x0, y0, x1, y1 = recist.bbox()
    ex, ey = params.bbox_expand * (x1 - x0), params.bbox_expand * (y1 - y0)
    in_box = (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
    in_grown = (xx >= x0 - ex) & (xx <= x1 + ex) & (yy >= y0 - ey) & (yy <= y1 + ey)

    trimap = np.full(shape, DEF_BG, dtype=np.uint8)
    trimap[in_grown] = PROB_BG
    trimap[in_box] = PROB_FG
    if params.border:
        b = params.border
        frame = np.ones(shape, dtype=bool)
        frame[b:h - b, b:w - b] = False
        trimap[frame] = DEF_BG
    seeds = np.minimum(
        _segment_distance(xx, yy, *recist.long_axis), _segment_distance(xx, yy, *recist.short_axis)
    ) <= params.seed_radius
    if not seeds.any():
        # sub-pixel radius: seed the pixel nearest the long-axis midpoint
        cx, cy = np.rint(np.mean(recist.long_axis, axis=0)).astype(int)
        seeds[cy, cx] = True
    trimap[seeds] = DEF_FG
    if not (trimap == DEF_BG).any():
        raise DataError("trimap has no definite background pixel")
    return trimap


# ---------------------------------------------------------------------------

def _neighbor_offsets(neighborhood: int):
    offs = [(0, 1), (1, 0)]
    if neighborhood == 8:
        offs += [(1, 1), (1, -1)]
    return offs


def _pair_views(shape, dr, dc):
    h, w = shape
    r0, r1 = slice(0, h - dr), slice(dr, h)
    if dc >= 0:
        c0, c1 = slice(0, w - dc), slice(dc, w)
    else:
        c0, c1 = slice(-dc, w), slice(0, w + dc)
    return (r0, c0), (r1, c1)


def pairwise_weights(image: np.ndarray, gamma: float, neighborhood: int = 8):
    """List of ``(offset, weights)`` for each neighbour direction.

    ``weights = gamma * exp(-beta * dz^2) / dist`` with
    ``beta = 1 / (2 <dz^2>)`` averaged over all neighbour pairs.
    """
    diffs = []
    for dr, dc in _neighbor_offsets(neighborhood):
        a, b = _pair_views(image.shape, dr, dc)
        diffs.append(((dr, dc), (image[a] - image[b]) ** 2))
    total = sum(d.sum() for _, d in diffs)
    count = sum(d.size for _, d in diffs)
    mean_sq = total / count if count else 0.0
    beta = 1.0 / (2.0 * mean_sq) if mean_sq > 0 else 0.0
    return [((dr, dc), gamma * np.exp(-beta * d) / np.hypot(dr, dc)) for (dr, dc), d in diffs]


def grabcut_energy(labels, unary_fg, unary_bg, pairs) -> float:
    """Sum of unary costs for the labelling plus pairwise costs across label changes."""
    e = float(np.where(labels, unary_fg, unary_bg).sum())
    for (dr, dc), wts in pairs:
        a, b = _pair_views(labels.shape, dr, dc)
        e += float(wts[labels[a] != labels[b]].sum())
    return e


def _min_cut(shape, unary_fg, unary_bg, pairs, hard_fg, hard_bg) -> np.ndarray:
    h, w = shape
    n = h * w
    src, snk = n, n + 1
    idx = np.arange(n).reshape(shape)
    net = FlowNetwork(n + 2, src, snk)
    pair_total = 0.0
    for (dr, dc), wts in pairs:
        a, b = _pair_views(shape, dr, dc)
        net.add_edges(idx[a], idx[b], wts, wts)
        pair_total += float(wts.sum())
    base = np.minimum(unary_fg, unary_bg)
    to_src = unary_bg - base  # paid when the pixel ends up background
    to_snk = unary_fg - base  # paid when the pixel ends up foreground
    big = pair_total + float(np.maximum(to_src, to_snk).sum()) + 1.0
    to_src = np.where(hard_fg, big, np.where(hard_bg, 0.0, to_src))
    to_snk = np.where(hard_bg, big, np.where(hard_fg, 0.0, to_snk))
    net.add_edges(np.full(n, src), idx.ravel(), to_src.ravel())
    net.add_edges(idx.ravel(), np.full(n, snk), to_snk.ravel())
    _, side = max_flow(net)
    return side[:n].reshape(shape)


@dataclass
class GrabcutResult:
    mask: np.ndarray
    energies: list[float] = field(default_factory=list)
    changed: list[float] = field(default_factory=list)
    fg_model: GmmModel | None = None
    bg_model: GmmModel | None = None


def grabcut_run(image: np.ndarray, trimap: np.ndarray, params: GrabcutParams = GrabcutParams()) -> GrabcutResult:
    """Alternate mixture refits and graph cuts; see :func:`grabcut_iterate`."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != trimap.shape:
        raise DataError(f"image {image.shape} and trimap {trimap.shape} differ in shape")
    hard_fg = trimap == DEF_FG
    hard_bg = trimap == DEF_BG
    if not hard_fg.any() or not hard_bg.any():
        raise DataError("trimap needs at least one definite foreground and background pixel")
    unknown = ~(hard_fg | hard_bg)
    if not unknown.any():
        return GrabcutResult(mask=hard_fg.copy())

    pairs = pairwise_weights(image, params.gamma, params.neighborhood)
    labels = (trimap == DEF_FG) | (trimap == PROB_FG)
    fg_model = bg_model = None
    result = GrabcutResult(mask=labels)
    z = image.ravel()
    for it in range(params.max_iters):
        # warm-started EM keeps the per-class likelihood from dropping
        fg_model = fit_gmm(z[labels.ravel()], params.gmm_components, params.rng_seed,
                           init=fg_model, max_iter=params.em_iters)
        bg_model = fit_gmm(z[~labels.ravel()], params.gmm_components, params.rng_seed,
                           init=bg_model, max_iter=params.em_iters)
        unary_fg = -fg_model.logpdf(z).reshape(image.shape)
        unary_bg = -bg_model.logpdf(z).reshape(image.shape)
        new = _min_cut(image.shape, unary_fg, unary_bg, pairs, hard_fg, hard_bg)
        if it == 0 and (trimap == PROB_FG).any() and not new[trimap == PROB_FG].any():
            warnings.warn("every probable-foreground pixel fell to background; returning the seed mask")
            return GrabcutResult(mask=hard_fg.copy(), fg_model=fg_model, bg_model=bg_model)
        frac = float(np.mean(new != labels))
        labels = new
        result.energies.append(grabcut_energy(labels, unary_fg, unary_bg, pairs))
        result.changed.append(frac)
        log.debug("grabcut iter %d: energy %.6g, changed %.5f", it, result.energies[-1], frac)
        if frac < params.convergence_tol:
            break
    result.mask = labels
    result.fg_model, result.bg_model = fg_model, bg_model
    return result


def grabcut_iterate(image: np.ndarray, trimap: np.ndarray, params: GrabcutParams = GrabcutParams()) -> np.ndarray:
    """Boolean foreground mask from GrabCut.

    Each round refits a foreground and a background intensity mixture on the
    current labelling, then takes the minimum cut of the graph whose unary
    terms are mixture negative log-likelihoods and whose pairwise terms are
    contrast-sensitive Potts weights. Definite seeds never change label.
    """
    return grabcut_run(image, trimap, params).mask


def generate_pseudo_mask(record: LesionRecord, cfg: PreprocessConfig = PreprocessConfig(),
                         params: GrabcutParams = GrabcutParams(), *, base_dir=None,
                         image: np.ndarray | None = None) -> np.ndarray:
    """0/255 uint8 pseudo-mask at ``cfg.target_size`` for one lesion record."""
    if image is None:
        image = read_image(resolve_image_path(record, base_dir))
    pre, tf = preprocess(image, cfg)
    recist = record.recist.map(tf.forward)
    trimap = build_trimap(recist, pre.shape, params)
    mask = grabcut_iterate(pre, trimap, params)
    return np.where(mask, 255, 0).astype(np.uint8)
