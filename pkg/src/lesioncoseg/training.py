"""Optimisers, learning-rate policy and the pair training loop."""
from __future__ import annotations

import csv
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cosegnet import CoSegNet, ModelConfig
from .cosegnet.checkpoint import load_state, read_container, save_model
from .exceptions import ConfigError, DataError

log = logging.getLogger(__name__)

LOSS_EPS = 1e-7
CHECKPOINT_NAME = "checkpoint.csgw"
LOSS_LOG_NAME = "loss_log.csv"


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "SGD"
    adam_lr: float = 1e-5
    sgd_lr0: float = 0.01
    momentum: float = 0.99
    weight_decay: float = 0.0005
    poly_power: float = 0.9
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        if self.kind not in ("SGD", "Adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if self.adam_lr <= 0 or self.sgd_lr0 <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 10
    epochs: int = 2
    iters_per_epoch: int = 12000
    rng_seed: int = 0
    checkpoint_every: int = 1000
    loss: str = "bce"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1 or self.iters_per_epoch < 1:
            raise ConfigError("epochs and iters_per_epoch must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.loss not in ("bce", "dice"):
            raise ConfigError(f"unknown loss {self.loss!r}")

    @property
    def total_iters(self) -> int:
        return self.epochs * self.iters_per_epoch


@dataclass(frozen=True)
class PolySchedule:
    lr0: float
    power: float = 0.9
    total_iters: int = 24000

    def __post_init__(self):
        if self.total_iters < 1:
            raise ConfigError("total_iters must be >= 1")


def poly_lr(sched: PolySchedule, it: int) -> float:
    """``lr0 * (1 - it / total_iters) ** power``; zero past the end."""
    if it > sched.total_iters:
        warnings.warn(f"iteration {it} beyond schedule end {sched.total_iters}; lr clamped to 0")
        return 0.0
    if it < 0:
        raise ValueError("iteration must be non-negative")
    return sched.lr0 * (1.0 - it / sched.total_iters) ** sched.power


def _check_mask(mask, name):
    if not torch.all((mask == 0) | (mask == 1)):
        raise DataError(f"{name} must be binary")


def pair_loss(pred_a, pred_b, mask_a, mask_b):
    """Mean binary cross-entropy over every pixel of both images."""
    if pred_a.shape != mask_a.shape or pred_b.shape != mask_b.shape:
        raise DataError("prediction and mask shapes differ")
    _check_mask(mask_a, "mask_a")
    _check_mask(mask_b, "mask_b")
    pred = torch.cat([pred_a.reshape(-1), pred_b.reshape(-1)]).clamp(LOSS_EPS, 1 - LOSS_EPS)
    target = torch.cat([mask_a.reshape(-1), mask_b.reshape(-1)]).to(pred.dtype)
    return -(target * torch.log(pred) + (1 - target) * torch.log1p(-pred)).mean()


def pair_dice_loss(pred_a, pred_b, mask_a, mask_b, smooth=1.0):
    if pred_a.shape != mask_a.shape or pred_b.shape != mask_b.shape:
        raise DataError("prediction and mask shapes differ")
    pred = torch.cat([pred_a.flatten(1), pred_b.flatten(1)])
    target = torch.cat([mask_a.flatten(1), mask_b.flatten(1)]).to(pred.dtype)
    inter = (pred * target).sum(1)
    return (1 - (2 * inter + smooth) / (pred.sum(1) + target.sum(1) + smooth)).mean()


def _check_finite(grads):
    for i, g in enumerate(grads):
        if g is not None and not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter #{i}; step aborted")


@torch.no_grad()
def sgd_step(params, grads, lr, cfg: OptimizerConfig, velocity):
    """Momentum SGD with L2 decay: ``v = mu v + (g + wd p)``, ``p -= lr v``.

    ``velocity`` is a list of buffers updated in place; params are updated in
    place and returned.
    """
    _check_finite(grads)
    for p, g, v in zip(params, grads, velocity):
        if g is None:
            continue
        v.mul_(cfg.momentum).add_(g + cfg.weight_decay * p)
        p.sub_(lr * v)
    return params


@torch.no_grad()
def adam_step(params, grads, lr, cfg: OptimizerConfig, t, m_buf, v_buf):
    """Adam with bias correction; weight decay enters the gradient."""
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    _check_finite(grads)
    b1, b2 = cfg.adam_betas
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for p, g, m, v in zip(params, grads, m_buf, v_buf):
        if g is None:
            continue
        g = g + cfg.weight_decay * p
        m.mul_(b1).add_((1 - b1) * g)
        v.mul_(b2).add_((1 - b2) * g * g)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + cfg.adam_eps))
    return params


class Optimizer:
    """Holds state for :func:`sgd_step` / :func:`adam_step` over named parameters."""

    def __init__(self, named_params, cfg: OptimizerConfig, tc: TrainConfig):
        self.cfg = cfg
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.schedule = PolySchedule(cfg.sgd_lr0, cfg.poly_power, tc.total_iters)
        self.t = 0
        zeros = lambda: [torch.zeros_like(p) for p in self.params]  # noqa: E731
        if cfg.kind == "SGD":
            self.state = {"velocity": zeros()}
        else:
            self.state = {"m": zeros(), "v": zeros()}

    def lr(self, it: int) -> float:
        return poly_lr(self.schedule, it) if self.cfg.kind == "SGD" else self.cfg.adam_lr

    def step(self, it: int) -> float:
        lr = self.lr(it)
        grads = [p.grad for p in self.params]
        self.t += 1
        if self.cfg.kind == "SGD":
            sgd_step(self.params, grads, lr, self.cfg, self.state["velocity"])
        else:
            adam_step(self.params, grads, lr, self.cfg, self.t, self.state["m"], self.state["v"])
        return lr

    def state_tensors(self) -> dict:
        out = {}
        for key, bufs in self.state.items():
            for name, buf in zip(self.names, bufs):
                out[f"optim.{key}.{name}"] = buf
        return out

    def load_state_tensors(self, tensors: dict, t: int) -> None:
        self.t = t
        for key, bufs in self.state.items():
            for name, buf in zip(self.names, bufs):
                src = tensors.get(f"optim.{key}.{name}")
                if src is None:
                    raise DataError(f"checkpoint lacks optimizer state optim.{key}.{name}")
                buf.copy_(torch.as_tensor(src, dtype=buf.dtype))


@dataclass
class TrainResult:
    model: CoSegNet
    log: list[tuple[int, float, float]] = field(default_factory=list)
    checkpoint: Path | None = None


def _pair_order(n_pairs: int, seed: int, start: int, count: int) -> np.ndarray:
    """Positions ``start .. start+count`` of the concatenated per-pass shuffles."""
    out = np.empty(count, dtype=np.int64)
    for k in range(count):
        pos = start + k
        epoch, offset = divmod(pos, n_pairs)
        if k == 0 or offset == 0:
            perm = np.random.default_rng([seed, epoch]).permutation(n_pairs)
        out[k] = perm[offset]
    return out


def init_model(model_cfg: ModelConfig, seed: int) -> CoSegNet:
    torch.manual_seed(seed)
    model = CoSegNet(model_cfg)
    head = model.decoder.head
    with torch.no_grad():
        head.weight.normal_(0.0, 0.01)
        head.bias.zero_()
    return model


def train(images, masks, pairs, model_cfg: ModelConfig, opt: OptimizerConfig, tc: TrainConfig,
          out_dir=None, resume: bool = False, max_iters: int | None = None,
          meta: dict | None = None) -> TrainResult:
    """Fit a :class:`CoSegNet` on image pairs.

    ``images`` and ``masks`` are ``(N, H, W)`` arrays, ``pairs`` a sequence of
    ``(i, j)`` index pairs. With ``out_dir`` set, a loss log
    (``iter,lr,loss``) and a ``CSGW1`` checkpoint holding weights and
    optimiser state are written; ``resume`` continues from that checkpoint.
    ``max_iters`` stops early without changing the learning-rate schedule.
    ``meta`` is stored verbatim in the checkpoint config block.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise DataError("training needs at least one pair")
    imgs = torch.as_tensor(np.asarray(images, dtype=np.float32)).unsqueeze(1)
    tgts = torch.as_tensor(np.asarray(masks, dtype=np.float32)).unsqueeze(1)
    if imgs.shape != tgts.shape:
        raise DataError(f"images {tuple(imgs.shape)} and masks {tuple(tgts.shape)} differ")
    if pairs.min() < 0 or pairs.max() >= len(imgs):
        raise DataError("pair index out of range")

    model = init_model(model_cfg, tc.rng_seed)
    optim = Optimizer(list(model.named_parameters()), opt, tc)
    start = 0
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = out_dir / CHECKPOINT_NAME if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if resume and ckpt_path.exists():
            config, tensors = read_container(ckpt_path)
            if ModelConfig.from_dict(config["model"]) != model_cfg:
                raise ConfigError("checkpoint model config differs from the requested one")
            load_state(model, tensors)
            start = int(config["train"]["iteration"])
            optim.load_state_tensors(tensors, int(config["train"]["optimizer_t"]))
            log.info("resuming at iteration %d", start)
        else:
            with open(out_dir / LOSS_LOG_NAME, "w", newline="") as fh:
                csv.writer(fh).writerow(("iter", "lr", "loss"))

    loss_fn = pair_loss if tc.loss == "bce" else pair_dice_loss
    stop = tc.total_iters if max_iters is None else min(tc.total_iters, max_iters)
    result = TrainResult(model=model, checkpoint=ckpt_path)
    pending = []

    def flush(it_next):
        if out_dir is None:
            return
        with open(out_dir / LOSS_LOG_NAME, "a", newline="") as fh:
            w = csv.writer(fh)
            for row in pending:
                w.writerow((row[0], repr(row[1]), repr(row[2])))
        pending.clear()
        extra = dict(meta or {})
        extra["train"] = {"iteration": it_next, "optimizer_t": optim.t, "optimizer": asdict(opt),
                          "train": asdict(tc)}
        save_model(ckpt_path, model, extra_config=extra, extra_tensors=optim.state_tensors())

    model.train()
    for it in range(start, stop):
        idx = pairs[_pair_order(len(pairs), tc.rng_seed, it * tc.batch_size, tc.batch_size)]
        a, b = idx[:, 0], idx[:, 1]
        model.zero_grad(set_to_none=True)
        pa, pb = model(imgs[a], imgs[b])
        loss = loss_fn(pa, pb, tgts[a], tgts[b])
        loss.backward()
        lr = optim.step(it)
        row = (it, float(lr), float(loss.detach()))
        result.log.append(row)
        pending.append(row)
        if (it + 1) % tc.checkpoint_every == 0:
            flush(it + 1)
    if pending or (out_dir is not None and stop > start):
        flush(stop)
    model.eval()
    return result


def predict(model: CoSegNet, images, pairs, batch_size: int = 8):
    """Probability maps ``(P_a, P_b)`` as ``(len(pairs), H, W)`` arrays."""
    imgs = torch.as_tensor(np.asarray(images, dtype=np.float32)).unsqueeze(1)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    out_a, out_b = [], []
    model.eval()
    with torch.no_grad():
        for s in range(0, len(pairs), batch_size):
            chunk = pairs[s:s + batch_size]
            pa, pb = model(imgs[chunk[:, 0]], imgs[chunk[:, 1]])
            out_a.append(pa[:, 0].numpy())
            out_b.append(pb[:, 0].numpy())
    if not out_a:
        h, w = imgs.shape[-2:]
        return np.zeros((0, h, w)), np.zeros((0, h, w))
    return np.concatenate(out_a), np.concatenate(out_b)


def mean_dice(prob, masks, threshold: float = 0.5) -> float:
    pred = np.asarray(prob) >= threshold
    gt = np.asarray(masks, dtype=bool)
    inter = (pred & gt).sum(axis=(1, 2))
    den = pred.sum(axis=(1, 2)) + gt.sum(axis=(1, 2))
    return float(np.mean(np.where(den > 0, 2 * inter / np.maximum(den, 1), 1.0)))


def set_threads() -> int:
    """Apply ``LSEG_THREADS`` (default 1) to torch's intra-op pool; returns the worker cap."""
    try:
        n = max(int(os.environ.get("LSEG_THREADS", "1")), 1)
    except ValueError:
        raise ConfigError("LSEG_THREADS must be an integer") from None
    torch.set_num_threads(n)
    return n
