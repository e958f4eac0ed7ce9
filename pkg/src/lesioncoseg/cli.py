"""Command-line entry point: ``lesioncoseg <subcommand> [options]``.

Every subcommand reads an optional JSON config (``--config``) with one
section per module; explicit flags override the file. Exit status is 0 on
success, 1 when some records or cases failed and 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import __version__
from .dataset import (
    DatasetConfig, LesionRecord, PreprocessConfig, build_pairs, fallback_cluster, load_records,
    make_transform, normalize_window, preprocess, read_image, read_lseg, read_mask,
    resolve_image_path, stratified_split, write_lseg, write_mask,
)
from .densecrf import CrfParams, refine
from .exceptions import ConfigError, DataError
from .metrics import evaluate_set
from .training import set_threads

log = logging.getLogger("lesioncoseg")

SECTIONS = ("preprocess", "dataset", "grabcut", "crf", "model", "optimizer", "train")


# ---------------------------------------------------------------------------
# config handling

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    """Build every section once so a bad key fails before any work starts."""
    from .cosegnet import ModelConfig
    from .pseudomask import GrabcutParams
    from .training import OptimizerConfig, TrainConfig

    classes = {"preprocess": PreprocessConfig, "dataset": DatasetConfig, "grabcut": GrabcutParams,
               "crf": CrfParams, "optimizer": OptimizerConfig, "train": TrainConfig}
    for name, cls in classes.items():
        if name in cfg:
            build(cls, cfg[name])
    if "model" in cfg:
        ModelConfig.from_dict(cfg["model"])


def _tupled(value):
    return tuple(_tupled(v) for v in value) if isinstance(value, list) else value


def build(cls, section: dict | None, **overrides):
    """Instantiate a config dataclass from a JSON section plus non-None overrides."""
    section = dict(section or {})
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    kwargs = {k: _tupled(v) for k, v in section.items()}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from None


def _read_pairs(path) -> list[tuple[str, str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["lesion_a", "lesion_b"]:
        raise DataError(f"{path}: expected header lesion_a,lesion_b")
    return [(a, b) for a, b in rows[1:]]


def _write_pairs(path, pairs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("lesion_a", "lesion_b"))
        w.writerows(pairs)


def _records_by_id(csv_path) -> tuple[list[LesionRecord], dict[str, LesionRecord], Path]:
    records = load_records(csv_path)
    return records, {r.lesion_id: r for r in records}, Path(csv_path).parent


# ---------------------------------------------------------------------------
# phantom

def cmd_phantom(args, cfg) -> int:
    from .phantom import write_phantom_dataset

    pre = build(PreprocessConfig, cfg.get("preprocess"))
    records = write_phantom_dataset(
        args.out, n_lesions=args.n_lesions, n_clusters=args.clusters, rng_seed=args.seed,
        size=args.size or pre.target_size, noise_hu=args.noise, lesions_per_patient=args.lesions_per_patient,
    )
    print(f"wrote {len(records)} phantom lesions to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# gen-masks

def _mask_job(job):
    record, base_dir, pre, params = job
    from .pseudomask import generate_pseudo_mask

    try:
        return record.lesion_id, generate_pseudo_mask(record, pre, params, base_dir=base_dir), None
    except (DataError, OSError, ValueError) as exc:
        return record.lesion_id, None, f"{type(exc).__name__}: {exc}"


def cmd_gen_masks(args, cfg) -> int:
    from .pseudomask import GrabcutParams

    pre = build(PreprocessConfig, cfg.get("preprocess"))
    params = build(GrabcutParams, cfg.get("grabcut"), rng_seed=args.seed)
    records, _, base = _records_by_id(args.dataset)
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    jobs = [(r, base, pre, params) for r in records]
    workers = set_threads()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_mask_job, jobs))
    else:
        results = [_mask_job(j) for j in jobs]
    failures = []
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("lesion_id", "mask_path"))
        for lesion_id, mask, err in results:
            if err is not None:
                log.error("lesion %s: %s", lesion_id, err)
                failures.append((lesion_id, err))
                continue
            rel = f"masks/{lesion_id}.png"
            Image.fromarray(mask).save(out / rel)
            w.writerow((lesion_id, rel))
    print(f"pseudo-masks: {len(results) - len(failures)} written, {len(failures)} failed")
    for lesion_id, err in failures:
        print(f"  FAILED {lesion_id}: {err}")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# train

def _model_config(cfg):
    from .cosegnet import ModelConfig

    return ModelConfig.from_dict(cfg.get("model", {}))


def _load_manifest(path) -> dict[str, Path]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"mask manifest {path} not found; run `lesioncoseg gen-masks` first")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {r["lesion_id"]: path.parent / r["mask_path"] for r in rows}


def _preprocessed(records, base, pre) -> np.ndarray:
    return np.array([preprocess(read_image(resolve_image_path(r, base)), pre)[0] for r in records])


def cmd_train(args, cfg) -> int:
    from .training import OptimizerConfig, TrainConfig, mean_dice, predict, train

    pre = build(PreprocessConfig, cfg.get("preprocess"))
    dcfg = build(DatasetConfig, cfg.get("dataset"), rng_seed=args.seed)
    model_cfg = _model_config(cfg)
    opt = build(OptimizerConfig, cfg.get("optimizer"))
    tc = build(TrainConfig, cfg.get("train"), rng_seed=args.seed, batch_size=args.batch_size,
               epochs=args.epochs, iters_per_epoch=args.iters_per_epoch)
    set_threads()

    records, _, base = _records_by_id(args.dataset)
    if any(r.cluster_id < 0 for r in records):
        log.info("clustering %d records with the fallback descriptor", len(records))
        labels = fallback_cluster(records, dcfg.num_clusters, dcfg.rng_seed, base_dir=base)
        records = [LesionRecord(r.lesion_id, r.patient_id, r.image_path, r.recist, int(c))
                   for r, c in zip(records, labels)]
    records = stratified_split(records, dcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "splits.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("lesion_id", "cluster_id", "split"))
        w.writerows((r.lesion_id, r.cluster_id, r.split) for r in records)
    pairs = {s: build_pairs(records, s, dcfg) for s in ("train", "val", "test")}
    for s, p in pairs.items():
        _write_pairs(out / f"pairs_{s}.csv", p)
    if not pairs["train"]:
        raise DataError("no training pairs; check cluster ids and split fractions")

    manifest = _load_manifest(args.manifest)
    used = sorted({x for s in ("train", "val") for p in pairs[s] for x in p})
    missing = [lid for lid in used if lid not in manifest or not manifest[lid].exists()]
    if missing:
        raise DataError(
            f"{len(missing)} pseudo-masks missing (e.g. {missing[:3]}); rerun `lesioncoseg gen-masks`"
        )
    by_id = {r.lesion_id: r for r in records}
    index = {lid: i for i, lid in enumerate(used)}
    images = _preprocessed([by_id[lid] for lid in used], base, pre)
    masks = np.array([read_mask(manifest[lid]) for lid in used])
    if masks.shape != images.shape:
        raise DataError(f"mask stack {masks.shape} does not match preprocessed images {images.shape}")

    train_idx = [(index[a], index[b]) for a, b in pairs["train"]]
    result = train(images, masks, train_idx, model_cfg, opt, tc, out_dir=out, resume=args.resume,
                   max_iters=args.iters, meta={"preprocess": asdict(pre)})
    if result.log:
        print(f"trained iterations {result.log[0][0]}..{result.log[-1][0]}, last loss {result.log[-1][2]:.5f}")
    if pairs["val"]:
        val_idx = np.array([(index[a], index[b]) for a, b in pairs["val"]])
        pa, pb = predict(result.model, images, val_idx)
        d = mean_dice(np.concatenate([pa, pb]), np.concatenate([masks[val_idx[:, 0]], masks[val_idx[:, 1]]]))
        print(f"validation Dice vs pseudo-masks: {d:.4f}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


# ---------------------------------------------------------------------------
# infer / refine

def _crf_params(cfg, zero=False) -> CrfParams:
    overrides = {"w_appearance": 0.0, "w_smooth": 0.0} if zero else {}
    return build(CrfParams, cfg.get("crf"), **overrides)


def cmd_infer(args, cfg) -> int:
    from .cosegnet import load_model
    from .training import predict

    set_threads()
    model, ckpt_cfg, _ = load_model(args.checkpoint)
    pre = build(PreprocessConfig, cfg.get("preprocess") or ckpt_cfg.get("preprocess"))
    records, by_id, base = _records_by_id(args.dataset)
    pairs = _read_pairs(args.pairs)
    unknown = sorted({x for p in pairs for x in p} - set(by_id))
    if unknown:
        raise DataError(f"pairs reference lesions missing from the dataset: {unknown[:5]}")
    ids = sorted({x for p in pairs for x in p})
    index = {lid: i for i, lid in enumerate(ids)}
    images = _preprocessed([by_id[lid] for lid in ids], base, pre)
    pa, pb = predict(model, images, [(index[a], index[b]) for a, b in pairs])
    crf = _crf_params(cfg) if args.crf else None

    out = Path(args.out)
    (out / "probs").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    count = 0
    for (a, b), prob_a, prob_b in zip(pairs, pa, pb):
        for me, other, prob in ((a, b, prob_a), (b, a, prob_b)):
            prob = np.asarray(prob, dtype=np.float64)
            if crf is not None:
                prob = refine(prob, images[index[me]], crf)
            stem = f"{me}@{other}"
            write_lseg(out / "probs" / f"{stem}.lseg", prob)
            write_mask(out / "masks" / f"{stem}.png", prob >= 0.5)
            count += 1
    print(f"wrote {count} probability maps and masks to {out}")
    return 0


def cmd_refine(args, cfg) -> int:
    set_threads()
    pre = build(PreprocessConfig, cfg.get("preprocess"))
    crf = _crf_params(cfg)
    _, by_id, base = _records_by_id(args.dataset)
    out = Path(args.out)
    (out / "probs").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    failures = []
    files = sorted(Path(args.probs).glob("*.lseg"))
    for path in files:
        lesion_id = path.stem.split("@", 1)[0]
        if lesion_id not in by_id:
            failures.append(path.name)
            log.error("%s: lesion %s not in dataset", path.name, lesion_id)
            continue
        image, _ = preprocess(read_image(resolve_image_path(by_id[lesion_id], base)), pre)
        refined = refine(read_lseg(path), image, crf)
        write_lseg(out / "probs" / path.name, refined)
        write_mask(out / "masks" / f"{path.stem}.png", refined >= 0.5)
    print(f"refined {len(files) - len(failures)} maps, {len(failures)} failed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# evaluate

def cmd_evaluate(args, cfg) -> int:
    pred_files = sorted(Path(args.pred).glob("*.png"))
    if not pred_files:
        raise DataError(f"no predicted masks in {args.pred}")
    gt_dir = Path(args.gt)
    cases, ids, unmatched = [], [], []
    for path in pred_files:
        case_id = path.stem
        gt_path = gt_dir / f"{case_id.split('@', 1)[0]}.png"
        if not gt_path.exists():
            unmatched.append(case_id)
            continue
        pred = read_mask(path)
        gt = read_mask(gt_path)
        if gt.shape != pred.shape:
            if pred.shape[0] != pred.shape[1]:
                raise DataError(f"{path}: cannot map ground truth {gt.shape} onto {pred.shape}")
            gt = make_transform(gt.shape, pred.shape[0]).apply_mask(gt)
        cases.append((pred, gt))
        ids.append(case_id)
    for case_id in unmatched:
        print(f"  UNMATCHED {case_id}: no ground truth")
    if not cases:
        raise DataError("no prediction matched a ground-truth mask")
    report = evaluate_set(cases, ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.csv", out / "report.json")
    print("       | Rec.         | Prec.        | Dice         | AVD          | VS")
    print(report.format_row(args.label))
    return 1 if unmatched else 0


# ---------------------------------------------------------------------------
# overlay

PRED_RGB = (255, 0, 0)
GT_RGB = (0, 255, 0)


def contour(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask (image edge counts as outside)."""
    inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    return mask & ~inner


def render_overlay(gray: np.ndarray, pred=None, gt=None) -> np.ndarray:
    """RGB uint8 image; ground-truth contour drawn over the prediction contour."""
    rgb = np.repeat(np.asarray(gray, dtype=np.uint8)[..., None], 3, axis=-1)
    for mask, color in ((pred, PRED_RGB), (gt, GT_RGB)):
        if mask is None:
            continue
        if mask.shape != rgb.shape[:2]:
            raise DataError(f"mask shape {mask.shape} does not match image {rgb.shape[:2]}")
        rgb[contour(mask)] = color
    return rgb


def cmd_overlay(args, cfg) -> int:
    pre = build(PreprocessConfig, cfg.get("preprocess"))
    image = read_image(args.image)
    if args.preprocess:
        image, _ = preprocess(image, pre)
    else:
        image = normalize_window(image, pre.hu_window)
    gray = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    pred = read_mask(args.pred) if args.pred else None
    gt = read_mask(args.gt) if args.gt else None
    Image.fromarray(render_overlay(gray, pred, gt)).save(args.out)
    print(f"overlay written to {args.out}")
    return 0


# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lesioncoseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config with per-module sections")
        p.set_defaults(func=func)
        return p

    p = add("phantom", cmd_phantom, "write a synthetic lesion dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-lesions", type=int, default=200)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=12.0, help="noise sigma in HU")
    p.add_argument("--size", type=int)
    p.add_argument("--lesions-per-patient", type=int, default=1)

    p = add("gen-masks", cmd_gen_masks, "RECIST-seeded GrabCut pseudo-masks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = add("train", cmd_train, "train the co-segmentation network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--manifest", required=True, help="manifest.csv written by gen-masks")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int, help="stop after this iteration (schedule unchanged)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--iters-per-epoch", type=int)
    p.add_argument("--batch-size", type=int, help="pairs per batch")
    p.add_argument("--resume", action="store_true")

    p = add("infer", cmd_infer, "predict masks for image pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--pairs", required=True, help="CSV with lesion_a,lesion_b")
    p.add_argument("--out", required=True)
    p.add_argument("--crf", action="store_true", help="dense CRF refinement before thresholding")

    p = add("refine", cmd_refine, "dense CRF refinement of saved probability maps")
    p.add_argument("--probs", required=True, help="directory of <a>@<b>.lseg maps")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "metric report for predicted masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="")

    p = add("overlay", cmd_overlay, "draw prediction and ground-truth contours")
    p.add_argument("--image", required=True)
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--out", required=True)
    p.add_argument("--preprocess", action="store_true", help="resize the image to the model frame first")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
