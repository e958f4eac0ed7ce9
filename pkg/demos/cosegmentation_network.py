"""
Segmenting two lesions at once
==============================

The co-segmentation network reads a pair of slices through one shared
encoder, lets each feature map attend to the other, and decodes a mask for
both. This demo builds a small variant, checks that swapping the inputs
swaps the outputs, and fits it to a handful of synthetic pairs.
"""
# %%
# Building a small model
# ----------------------
import numpy as np
import torch

from lesioncoseg.cosegnet import AttentionConfig, CoSegNet, DecoderConfig, EncoderConfig, ModelConfig
from lesioncoseg.dataset import preprocess
from lesioncoseg.phantom import DEFAULT_STYLES, ct_lesion
from lesioncoseg.training import OptimizerConfig, TrainConfig, mean_dice, predict, train

torch.manual_seed(0)
cfg = ModelConfig(encoder=EncoderConfig(stage_channels=(8, 16, 32, 64), units_per_stage=1),
                  attention=AttentionConfig(channel="SE", spatial="MSA", se_reduction=4),
                  decoder=DecoderConfig(variant="D2"))
model = CoSegNet(cfg).eval()
print(sum(p.numel() for p in model.parameters()), "parameters")

# %%
# Order does not matter
# ---------------------
# Channel and spatial gates are shared by the two branches, so feeding
# ``(b, a)`` gives the same two maps as ``(a, b)``, just swapped.
a, b = torch.rand(1, 1, 128, 128), torch.rand(1, 1, 128, 128)
with torch.no_grad():
    pa, pb = model(a, b)
    qb, qa = model(b, a)
print("output shape", tuple(pa.shape), "swap error", float((pa - qa).abs().max()))

# %%
# Fitting ten pairs
# -----------------
# Pairs are drawn from the same appearance style, which is how real pairs
# are formed after clustering. A few hundred iterations are enough for the
# small model to fit them.
rng = np.random.default_rng(1)
images, masks = [], []
for i in range(20):
    img, mask, _ = ct_lesion(rng, DEFAULT_STYLES[(i // 2) % len(DEFAULT_STYLES)])
    images.append(preprocess(img)[0])
    masks.append(mask)
images, masks = np.array(images), np.array(masks)
pairs = [(2 * k, 2 * k + 1) for k in range(10)]

res = train(images, masks, pairs, cfg, OptimizerConfig(),
            TrainConfig(batch_size=10, epochs=1, iters_per_epoch=2000), max_iters=400)
pa, pb = predict(res.model, images, pairs)
print("training Dice:", round(mean_dice(np.concatenate([pa, pb]), np.concatenate([masks[0::2], masks[1::2]])), 3))
