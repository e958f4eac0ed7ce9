"""Synthetic CT-like lesion phantoms with analytic ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import LesionRecord, RecistAnnotation, save_records, write_mask, write_png16


@dataclass(frozen=True)
class ClusterStyle:
    lesion_hu: float
    semi_major: tuple[float, float]
    aspect: tuple[float, float]


# four lesion families: bright/dark, round/elongated
DEFAULT_STYLES = (
    ClusterStyle(170.0, (10.0, 16.0), (0.85, 1.0)),
    ClusterStyle(-60.0, (12.0, 20.0), (0.8, 1.0)),
    ClusterStyle(130.0, (14.0, 24.0), (0.5, 0.75)),
    ClusterStyle(-90.0, (8.0, 14.0), (0.6, 0.9)),
)


def ellipse_mask(shape, center, semi_major, semi_minor, angle) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    dx, dy = xx - center[0], yy - center[1]
    c, s = math.cos(angle), math.sin(angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / semi_major) ** 2 + (v / semi_minor) ** 2 <= 1.0


def ellipse_recist(center, semi_major, semi_minor, angle) -> RecistAnnotation:
    """Diameters along the ellipse axes, pulled 0.5 px inside the boundary."""
    c, s = math.cos(angle), math.sin(angle)
    a = max(semi_major - 0.5, 0.0)
    b = max(semi_minor - 0.5, 0.0)
    cx, cy = center
    return RecistAnnotation(
        long_axis=((cx - a * c, cy - a * s), (cx + a * c, cy + a * s)),
        short_axis=((cx + b * s, cy - b * c), (cx - b * s, cy + b * c)),
    )


def shape_phantom(rng: np.random.Generator, size: int = 128, fg: float = 200.0, bg: float = 50.0,
                  noise: float = 10.0, kind: str | None = None):
    """Random disk or ellipse on a flat background with Gaussian noise.

    Returns ``(image, mask, recist)``; the default levels give the 15:1
    contrast-to-noise setting used for the GrabCut checks.
    """
    if kind is None:
        kind = "disk" if rng.random() < 0.5 else "ellipse"
    if kind == "disk":
        a = b = 20.0
        angle = 0.0
    else:
        a = rng.uniform(16.0, 26.0)
        b = a * rng.uniform(0.5, 0.9)
        angle = rng.uniform(0.0, math.pi)
    center = (size / 2 + rng.uniform(-8, 8), size / 2 + rng.uniform(-8, 8))
    mask = ellipse_mask((size, size), center, a, b, angle)
    image = np.where(mask, fg, bg) + rng.normal(0.0, noise, (size, size))
    return image, mask, ellipse_recist(center, a, b, angle)


def disk_phantom(size: int = 128, radius: float = 20.0, fg: float = 200.0, bg: float = 50.0,
                 noise: float = 10.0, rng_seed: int = 0):
    rng = np.random.default_rng(rng_seed)
    center = (size / 2, size / 2)
    mask = ellipse_mask((size, size), center, radius, radius, 0.0)
    image = np.where(mask, fg, bg) + rng.normal(0.0, noise, (size, size))
    return image, mask, ellipse_recist(center, radius, radius, 0.0)


def ct_lesion(rng: np.random.Generator, style: ClusterStyle, size: int = 128,
              background_hu: float = 40.0, noise_hu: float = 12.0):
    """One CT-like slice in HU: textured soft tissue plus an elliptical lesion."""
    a = rng.uniform(*style.semi_major)
    b = a * rng.uniform(*style.aspect)
    angle = rng.uniform(0.0, math.pi)
    center = (size / 2 + rng.uniform(-8, 8), size / 2 + rng.uniform(-8, 8))
    mask = ellipse_mask((size, size), center, a, b, angle)
    texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (size, size)), 12.0)
    texture *= 20.0 / max(texture.std(), 1e-12)
    image = background_hu + texture
    image = np.where(mask, style.lesion_hu + 0.3 * texture, image)
    image += rng.normal(0.0, noise_hu, (size, size))
    return image, mask, ellipse_recist(center, a, b, angle)


def write_phantom_dataset(out_dir, n_lesions: int = 200, n_clusters: int = 4, rng_seed: int = 0,
                          size: int = 128, noise_hu: float = 12.0, lesions_per_patient: int = 1,
                          styles=DEFAULT_STYLES) -> list[LesionRecord]:
    """Write ``dataset.csv``, ``images/*.png`` (HU PNG) and ``gt/*.png`` masks.

    Lesions are dealt round-robin to clusters; each cluster uses one lesion
    style (styles repeat when there are more clusters than styles).
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(rng_seed)
    records = []
    for i in range(n_lesions):
        cluster = i % n_clusters
        image, mask, recist = ct_lesion(rng, styles[cluster % len(styles)], size, noise_hu=noise_hu)
        lesion_id = f"L{i:04d}"
        img_rel = f"images/{lesion_id}.png"
        write_png16(out / img_rel, image)
        write_mask(out / "gt" / f"{lesion_id}.png", mask)
        patient = (i // n_clusters) // lesions_per_patient * n_clusters + cluster
        records.append(LesionRecord(
            lesion_id=lesion_id, patient_id=f"P{patient:04d}", image_path=img_rel,
            recist=recist, cluster_id=cluster,
        ))
    save_records(records, out / "dataset.csv")
    return records
