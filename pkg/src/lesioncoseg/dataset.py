"""Lesion records, image containers, preprocessing and dataset splitting.

Coordinates are ``(x, y)`` pixel positions with pixel centres on integers,
``x`` running along columns and ``y`` along rows.
"""
from __future__ import annotations

import csv
import math
import struct
import warnings
from collections import defaultdict
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .exceptions import ConfigError, DataError


CSV_FIELDS = (
    "lesion_id", "patient_id", "image_path", "cluster_id",
    "lx1", "ly1", "lx2", "ly2", "sx1", "sy1", "sx2", "sy2",
)
SPLITS = ("train", "val", "test", "unassigned")
HU_OFFSET = 32768
LSEG_MAGIC = b"LSEG1"


@dataclass(frozen=True)
class RecistAnnotation:
    long_axis: tuple[tuple[float, float], tuple[float, float]]
    short_axis: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        pts = self.points()
        if not np.all(np.isfinite(pts)):
            raise DataError("RECIST endpoints must be finite")
        if self.long_length + 1e-9 < self.short_length:
            raise DataError(
                f"long axis ({self.long_length:.3f}) shorter than short axis ({self.short_length:.3f})"
            )

    def points(self) -> np.ndarray:
        """The four endpoints as a (4, 2) array of (x, y)."""
        return np.array([*self.long_axis, *self.short_axis], dtype=float)

    @property
    def long_length(self) -> float:
        (x1, y1), (x2, y2) = self.long_axis
        return math.hypot(x2 - x1, y2 - y1)

    @property
    def short_length(self) -> float:
        (x1, y1), (x2, y2) = self.short_axis
        return math.hypot(x2 - x1, y2 - y1)

    def bbox(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) bounding box of the endpoints."""
        p = self.points()
        return p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max()

    def map(self, fn) -> "RecistAnnotation":
        """Apply a point transform ``fn((n, 2) array) -> (n, 2) array``."""
        p = fn(self.points())
        return RecistAnnotation(
            long_axis=(tuple(p[0]), tuple(p[1])), short_axis=(tuple(p[2]), tuple(p[3]))
        )


@dataclass(frozen=True)
class LesionRecord:
    lesion_id: str
    patient_id: str
    image_path: str
    recist: RecistAnnotation
    cluster_id: int = 0
    split: str = "unassigned"


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 128
    hu_window: tuple[float, float] = (-175.0, 275.0)
    pad_value: float = 0.0

    def __post_init__(self):
        if self.target_size <= 0:
            raise ConfigError("target_size must be positive")
        low, high = self.hu_window
        if not low < high:
            raise ConfigError(f"degenerate HU window {self.hu_window}")


@dataclass(frozen=True)
class DatasetConfig:
    num_clusters: int = 200
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    pairing_cap: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_clusters < 1:
            raise ConfigError("num_clusters must be >= 1")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions {self.split_fractions} do not sum to 1")
        if any(f < 0 for f in self.split_fractions):
            raise ConfigError("split fractions must be non-negative")
        if self.pairing_cap is not None and self.pairing_cap < 1:
            raise ConfigError("pairing_cap must be >= 1 or None")


# ---------------------------------------------------------------------------
# CSV records

def load_records(csv_path) -> list[LesionRecord]:
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: missing header row") from None
        if tuple(h.strip() for h in header) != CSV_FIELDS:
            raise DataError(f"{csv_path}: header {header} does not match {list(CSV_FIELDS)}")
        records = []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            records.append(_parse_row(row, rowno, csv_path))
    return records


def _parse_row(row, rowno, csv_path) -> LesionRecord:
    if len(row) != len(CSV_FIELDS):
        missing = CSV_FIELDS[len(row)] if len(row) < len(CSV_FIELDS) else "<extra column>"
        raise DataError(
            f"{csv_path}: row {rowno}: expected {len(CSV_FIELDS)} fields, got {len(row)} "
            f"(field {missing!r})"
        )
    values = dict(zip(CSV_FIELDS, (c.strip() for c in row)))
    for name in ("lesion_id", "patient_id", "image_path"):
        if not values[name]:
            raise DataError(f"{csv_path}: row {rowno}: field {name!r} is empty")
    try:
        cluster_id = int(values["cluster_id"])
    except ValueError:
        raise DataError(f"{csv_path}: row {rowno}: field 'cluster_id' is not an integer") from None
    coords = {}
    for name in CSV_FIELDS[4:]:
        try:
            coords[name] = float(values[name])
        except ValueError:
            raise DataError(f"{csv_path}: row {rowno}: field {name!r} is not a number") from None
        if not math.isfinite(coords[name]):
            raise DataError(f"{csv_path}: row {rowno}: field {name!r} is not finite")
    try:
        recist = RecistAnnotation(
            long_axis=((coords["lx1"], coords["ly1"]), (coords["lx2"], coords["ly2"])),
            short_axis=((coords["sx1"], coords["sy1"]), (coords["sx2"], coords["sy2"])),
        )
    except DataError as exc:
        raise DataError(f"{csv_path}: row {rowno}: field 'sx1..sy2': {exc}") from None
    return LesionRecord(
        lesion_id=values["lesion_id"],
        patient_id=values["patient_id"],
        image_path=values["image_path"],
        recist=recist,
        cluster_id=cluster_id,
    )


def save_records(records, csv_path) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for r in records:
            (lx1, ly1), (lx2, ly2) = r.recist.long_axis
            (sx1, sy1), (sx2, sy2) = r.recist.short_axis
            writer.writerow([
                r.lesion_id, r.patient_id, r.image_path, r.cluster_id,
                *(repr(float(v)) for v in (lx1, ly1, lx2, ly2, sx1, sy1, sx2, sy2)),
            ])


def resolve_image_path(record: LesionRecord, base_dir=None) -> Path:
    p = Path(record.image_path)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


# ---------------------------------------------------------------------------
# Image containers

def read_image(path) -> np.ndarray:
    """Read a CT slice in Hounsfield units from a 16-bit PNG or an LSEG1 file."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(LSEG_MAGIC))
    if head == LSEG_MAGIC:
        return read_lseg(path).astype(np.float64)
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise DataError(f"{path}: expected a single-channel image, got shape {arr.shape}")
    return arr.astype(np.float64) - HU_OFFSET


def write_png16(path, hu: np.ndarray) -> None:
    encoded = np.clip(np.rint(hu + HU_OFFSET), 0, 65535).astype(np.uint16)
    Image.fromarray(encoded).save(path)


def write_lseg(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype="<f4")
    if array.ndim != 2:
        raise DataError("LSEG1 containers hold 2-D arrays only")
    h, w = array.shape
    with open(path, "wb") as fh:
        fh.write(LSEG_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(array).tobytes())


def read_lseg(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(LSEG_MAGIC)] != LSEG_MAGIC:
        raise DataError(f"{path}: bad magic, not an LSEG1 container")
    h, w = struct.unpack_from("<II", data, len(LSEG_MAGIC))
    payload = data[len(LSEG_MAGIC) + 8:]
    if len(payload) != 4 * h * w:
        raise DataError(f"{path}: expected {4 * h * w} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).copy()


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise DataError(f"{path}: mask must be single-channel")
    bad = ~np.isin(arr, (0, 255))
    if bad.any():
        raise DataError(f"{path}: mask values must be 0 or 255")
    return arr == 255


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


# ---------------------------------------------------------------------------
# Preprocessing

@dataclass(frozen=True)
class GeometricTransform:
    """Pad-to-square followed by a resize; maps native pixel coords to output coords."""

    in_shape: tuple[int, int]
    pad_top: int
    pad_left: int
    side: int
    target_size: int

    @property
    def scale(self) -> float:
        return self.target_size / self.side

    def forward(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        offset = np.array([self.pad_left, self.pad_top], dtype=float)
        return (pts + offset + 0.5) * self.scale - 0.5

    def inverse(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        offset = np.array([self.pad_left, self.pad_top], dtype=float)
        return (pts + 0.5) / self.scale - 0.5 - offset

    def apply(self, image: np.ndarray, pad_value: float = 0.0, order: int = 1) -> np.ndarray:
        """Warp a native-resolution array into the output frame."""
        if image.shape != self.in_shape:
            raise DataError(f"image shape {image.shape} does not match transform {self.in_shape}")
        h, w = self.in_shape
        padded = np.full((self.side, self.side), pad_value, dtype=np.float64)
        padded[self.pad_top:self.pad_top + h, self.pad_left:self.pad_left + w] = image
        if self.side == self.target_size:
            return padded
        src = (np.arange(self.target_size) + 0.5) / self.scale - 0.5
        rr, cc = np.meshgrid(src, src, indexing="ij")
        return ndimage.map_coordinates(padded, [rr, cc], order=order, mode="nearest")

    def apply_mask(self, mask: np.ndarray) -> np.ndarray:
        return self.apply(np.asarray(mask, dtype=np.float64)) >= 0.5


def make_transform(shape, target_size: int) -> GeometricTransform:
    h, w = shape
    side = max(h, w)
    return GeometricTransform(
        in_shape=(h, w), pad_top=(side - h) // 2, pad_left=(side - w) // 2,
        side=side, target_size=target_size,
    )


def normalize_window(image: np.ndarray, hu_window) -> np.ndarray:
    low, high = hu_window
    if not low < high:
        raise ConfigError(f"degenerate HU window {hu_window}")
    return (np.clip(image, low, high) - low) / (high - low)


def preprocess(image: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()):
    """Window, pad to square and resize.

    Returns the ``target_size x target_size`` array in [0, 1] and the
    :class:`GeometricTransform` that maps native coordinates into it.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise DataError(f"expected a non-empty 2-D image, got shape {image.shape}")
    norm = normalize_window(image, cfg.hu_window)
    tf = make_transform(image.shape, cfg.target_size)
    out = tf.apply(norm, pad_value=cfg.pad_value)
    return np.clip(out, 0.0, 1.0), tf


# ---------------------------------------------------------------------------
# Splits and pairs

def _split_targets(n: int, fractions) -> dict[str, int]:
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    return {"train": n - n_val - n_test, "val": n_val, "test": n_test}


def stratified_split(records, cfg: DatasetConfig = DatasetConfig()) -> list[LesionRecord]:
    """Assign train/val/test per cluster at patient granularity.

    Patients are never split; a patient already placed by an earlier cluster
    keeps that split. Clusters with fewer than three patients go entirely to
    train.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    by_cluster: dict[int, list[int]] = defaultdict(list)
    for i, r in enumerate(records):
        by_cluster[r.cluster_id].append(i)

    patient_split: dict[str, str] = {}
    for cid in sorted(by_cluster):
        idx = by_cluster[cid]
        patients: dict[str, int] = defaultdict(int)
        for i in idx:
            patients[records[i].patient_id] += 1
        if len(patients) < 3:
            warnings.warn(f"cluster {cid} has {len(patients)} patient(s); assigned to train")
            for pid in patients:
                patient_split.setdefault(pid, "train")
            continue
        targets = _split_targets(len(idx), cfg.split_fractions)
        counts = dict.fromkeys(targets, 0)
        free = []
        for pid in sorted(patients):
            if pid in patient_split:
                counts[patient_split[pid]] += patients[pid]
            else:
                free.append(pid)
        order = rng.permutation(len(free))
        for k in order:
            pid = free[k]
            # largest remaining deficit wins; ties prefer the smaller splits
            split = max(("test", "val", "train"), key=lambda s: targets[s] - counts[s])
            patient_split[pid] = split
            counts[split] += patients[pid]
    return [replace(r, split=patient_split[r.patient_id]) for r in records]


def build_pairs(records, split: str, cfg: DatasetConfig = DatasetConfig()) -> list[tuple[str, str]]:
    """Unordered within-cluster pairs for one split, canonically ordered.

    Exhaustive unless ``cfg.pairing_cap`` limits how many pairs a single
    lesion may join; capped pairs are drawn in a seeded random order.
    """
    by_cluster: dict[int, list[str]] = defaultdict(list)
    for r in records:
        if r.split == split:
            by_cluster[r.cluster_id].append(r.lesion_id)
    rng = np.random.default_rng(cfg.rng_seed)
    pairs = []
    for cid in sorted(by_cluster):
        ids = sorted(set(by_cluster[cid]))
        candidates = list(combinations(ids, 2))
        cap = cfg.pairing_cap
        if cap is None or len(ids) - 1 <= cap:
            pairs.extend(candidates)
            continue
        used: dict[str, int] = defaultdict(int)
        chosen = []
        for k in rng.permutation(len(candidates)):
            a, b = candidates[k]
            if used[a] < cap and used[b] < cap:
                chosen.append((a, b))
                used[a] += 1
                used[b] += 1
        pairs.extend(sorted(chosen))
    return pairs


# ---------------------------------------------------------------------------
# Fallback clustering

def lesion_descriptor(record: LesionRecord, image: np.ndarray) -> np.ndarray:
    """Crop mean intensity, long and short diameter, and short/long aspect ratio."""
    x0, y0, x1, y1 = record.recist.bbox()
    h, w = image.shape
    r0, r1 = max(int(math.floor(y0)), 0), min(int(math.ceil(y1)) + 1, h)
    c0, c1 = max(int(math.floor(x0)), 0), min(int(math.ceil(x1)) + 1, w)
    crop = image[r0:r1, c0:c1]
    mean = float(crop.mean()) if crop.size else float(image.mean())
    long_len, short_len = record.recist.long_length, record.recist.short_length
    aspect = short_len / long_len if long_len > 0 else 1.0
    return np.array([mean, long_len, short_len, aspect])


def cluster_descriptors(descriptors: np.ndarray, num_clusters: int, rng_seed: int = 0) -> np.ndarray:
    from sklearn.cluster import KMeans
    from sklearn.exceptions import ConvergenceWarning

    x = np.asarray(descriptors, dtype=np.float64)
    n = len(x)
    if n == 0:
        return np.zeros(0, dtype=int)
    k = num_clusters
    if n < k:
        warnings.warn(f"only {n} records for {k} clusters; reducing k to {n}")
        k = n
    if k == 1:
        return np.zeros(n, dtype=int)
    std = x.std(axis=0)
    x = (x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=k, n_init=10, random_state=rng_seed).fit(x)
    return km.labels_.astype(int)


def fallback_cluster(records, num_clusters: int, rng_seed: int = 0, *, base_dir=None,
                     loader=read_image) -> np.ndarray:
    """k-means cluster ids for records lacking precomputed lesion clusters."""
    desc = np.array([
        lesion_descriptor(r, loader(resolve_image_path(r, base_dir))) for r in records
    ]).reshape(len(records), 4)
    return cluster_descriptors(desc, num_clusters, rng_seed)
